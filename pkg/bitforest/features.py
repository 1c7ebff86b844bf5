# bitforest/features.py
from dataclasses import dataclass
from typing import Dict, Optional, Union

from .errors import ParameterError, SchemaError
from .records import TEXT_DIMENSIONS, TransactionRecord, known_dimension

Keyword = Union[str, int]


@dataclass(frozen=True)
class KeywordMatch:
    """Equality against one dimension value."""
    keyword: Keyword

    def __call__(self, value) -> bool:
        return value == self.keyword


@dataclass(frozen=True)
class RangeCondition:
    """Half-open numeric range ``[minimum, maximum)``; either bound may be open."""
    minimum: Optional[int] = None
    maximum: Optional[int] = None

    def __post_init__(self):
        if self.minimum is None and self.maximum is None:
            raise ParameterError("a range condition needs --min, --max or both")
        if self.minimum is not None and self.maximum is not None and self.minimum >= self.maximum:
            raise ParameterError(f"empty range [{self.minimum}, {self.maximum})")

    def __call__(self, value) -> bool:
        if self.minimum is not None and value < self.minimum:
            return False
        if self.maximum is not None and value >= self.maximum:
            return False
        return True

    def describe(self) -> str:
        if self.maximum is None:
            return f">={self.minimum}"
        if self.minimum is None:
            return f"<{self.maximum}"
        return f"[{self.minimum},{self.maximum})"


Matcher = Union[KeywordMatch, RangeCondition]


@dataclass(frozen=True)
class FeatureSpec:
    feature_id: int
    name: str
    dimension: str
    matcher: Matcher

    @property
    def is_custom(self) -> bool:
        return isinstance(self.matcher, RangeCondition)

    @property
    def mapping_key(self) -> str:
        """Key under which the mapping table stores this feature."""
        if self.is_custom:
            return self.name
        return keyword_key(self.matcher.keyword)

    def matches(self, record: TransactionRecord) -> bool:
        return self.matcher(record.get(self.dimension))

    def to_json(self) -> Dict[str, object]:
        data = {"id": self.feature_id, "name": self.name, "dimension": self.dimension}
        if self.is_custom:
            data.update(kind="range", min=self.matcher.minimum, max=self.matcher.maximum)
        else:
            data.update(kind="keyword", keyword=self.matcher.keyword)
        return data

    @classmethod
    def from_json(cls, data: Dict[str, object]) -> "FeatureSpec":
        if data["kind"] == "range":
            matcher = RangeCondition(data.get("min"), data.get("max"))
        else:
            matcher = KeywordMatch(data["keyword"])
        return cls(int(data["id"]), str(data["name"]), str(data["dimension"]), matcher)


def keyword_key(keyword: Keyword) -> str:
    # ints and strings never collide: a text dimension only ever holds strings
    return keyword if isinstance(keyword, str) else str(int(keyword))


def keyword_feature_name(dimension: str, keyword: Keyword) -> str:
    return f"{dimension}={keyword}"


def check_dimension(dimension: str, matcher: Matcher) -> None:
    if not known_dimension(dimension):
        raise SchemaError(f"unknown dimension {dimension!r}")
    if isinstance(matcher, RangeCondition) and dimension in TEXT_DIMENSIONS:
        raise SchemaError(f"range conditions need an integer dimension, {dimension!r} is text")
