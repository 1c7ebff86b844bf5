# bitforest/records.py
"""Transaction records (the 14 dimensions of an Ethereum transfer) and their
canonical byte form.
"""
import hashlib
import json
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple

import pandas as pd

from .errors import IngestionError, SchemaError

# dimension order; also the canonical serialization order and the CSV header
DIMENSIONS: Tuple[str, ...] = (
    "from", "to", "toCreate", "fromIsContract", "toIsContract", "value",
    "gasLimit", "gasPrice", "gasUsed", "callingFunction", "isError",
    "eip2718type", "maxFeePerGas", "maxPriorityFeePerGas",
)
TEXT_DIMENSIONS = frozenset({"from", "to", "callingFunction"})
BOOLEAN_DIMENSIONS = frozenset({"fromIsContract", "toIsContract", "isError"})
# never auto-indexed as keywords; reachable through custom range features
VALUE_DIMENSION = "value"
KEYWORD_DIMENSIONS: Tuple[str, ...] = tuple(d for d in DIMENSIONS if d != VALUE_DIMENSION)

FIELD_SEPARATOR = b"\x1f"
_SEPARATOR_CHAR = FIELD_SEPARATOR.decode("ascii")

_ATTRIBUTES = {
    "from": "from_address",
    "to": "to_address",
    "toCreate": "to_create",
    "fromIsContract": "from_is_contract",
    "toIsContract": "to_is_contract",
    "value": "value",
    "gasLimit": "gas_limit",
    "gasPrice": "gas_price",
    "gasUsed": "gas_used",
    "callingFunction": "calling_function",
    "isError": "is_error",
    "eip2718type": "eip2718_type",
    "maxFeePerGas": "max_fee_per_gas",
    "maxPriorityFeePerGas": "max_priority_fee_per_gas",
}


@dataclass(frozen=True)
class TransactionRecord:
    from_address: str
    to_address: str
    to_create: int
    from_is_contract: int
    to_is_contract: int
    value: int
    gas_limit: int
    gas_price: int
    gas_used: int
    calling_function: str
    is_error: int
    eip2718_type: int
    max_fee_per_gas: int
    max_priority_fee_per_gas: int

    def __post_init__(self):
        for dimension in DIMENSIONS:
            value = getattr(self, _ATTRIBUTES[dimension])
            if dimension in TEXT_DIMENSIONS:
                if not isinstance(value, str):
                    raise SchemaError(f"{dimension} must be text, got {type(value).__name__}")
                if _SEPARATOR_CHAR in value:
                    raise SchemaError(f"{dimension} must not contain the field separator 0x1f")
                continue
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"{dimension} must be an integer, got {value!r}")
            if value < 0:
                raise SchemaError(f"{dimension} must be non-negative, got {value}")
            if dimension in BOOLEAN_DIMENSIONS and value not in (0, 1):
                raise SchemaError(f"{dimension} must be 0 or 1, got {value}")

    def get(self, dimension: str):
        try:
            return getattr(self, _ATTRIBUTES[dimension])
        except KeyError:
            raise SchemaError(f"unknown dimension {dimension!r}") from None

    def keywords(self) -> List[Tuple[str, object]]:
        """(dimension, value) pairs monitored for automatic keyword features."""
        return [(d, getattr(self, _ATTRIBUTES[d])) for d in KEYWORD_DIMENSIONS]

    def to_dict(self) -> Dict[str, object]:
        return {d: getattr(self, _ATTRIBUTES[d]) for d in DIMENSIONS}

    @classmethod
    def from_dict(cls, data: Mapping[str, object], coerce: bool = False) -> "TransactionRecord":
        """Build a record from a mapping keyed by dimension name.

        With ``coerce`` the integer dimensions may arrive as decimal strings
        (CSV input).
        """
        missing = [d for d in DIMENSIONS if d not in data]
        if missing:
            raise SchemaError(f"missing dimensions: {', '.join(missing)}")
        extra = [k for k in data if k not in _ATTRIBUTES]
        if extra:
            raise SchemaError(f"unknown dimensions: {', '.join(map(str, extra))}")
        kwargs = {}
        for dimension in DIMENSIONS:
            value = data[dimension]
            if coerce and dimension not in TEXT_DIMENSIONS and isinstance(value, str):
                try:
                    value = int(value.strip())
                except ValueError:
                    raise SchemaError(f"{dimension} must be an integer, got {value!r}") from None
            kwargs[_ATTRIBUTES[dimension]] = value
        return cls(**kwargs)

    def canonical_bytes(self) -> bytes:
        """Dimension order, UTF-8 text, decimal integers, 0x1f between fields."""
        parts = []
        for dimension in DIMENSIONS:
            value = getattr(self, _ATTRIBUTES[dimension])
            parts.append(value.encode("utf-8") if isinstance(value, str) else str(value).encode("ascii"))
        return FIELD_SEPARATOR.join(parts)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)


def digest(record: TransactionRecord) -> bytes:
    """SHA-256 of the canonical serialization (32 bytes)."""
    return hashlib.sha256(record.canonical_bytes()).digest()


def known_dimension(dimension: str) -> bool:
    return dimension in _ATTRIBUTES


def read_jsonl(path: str) -> Iterator[TransactionRecord]:
    """Yield records from line-delimited UTF-8 JSON; blank lines are skipped."""
    with open(path, "rb") as f:
        for number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
                if not line.strip():
                    continue
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise SchemaError("expected a JSON object")
                yield TransactionRecord.from_dict(data)
            except UnicodeDecodeError as e:
                raise IngestionError(f"not valid UTF-8: {e.reason}", line=number) from e
            except (json.JSONDecodeError, SchemaError) as e:
                raise IngestionError(str(e), line=number) from e


def _blank_row(row: Mapping[str, object]) -> bool:
    return all(pd.isna(v) or not str(v).strip() for v in row.values())


def read_csv(path: str) -> Iterator[TransactionRecord]:
    """Yield records from a headered CSV with the 14 dimension columns.

    Blank lines are skipped but still counted for error line numbers.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False,
                            encoding="utf-8")
    except pd.errors.EmptyDataError:
        return
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestionError(f"malformed CSV: {e}") from e
    for position, row in enumerate(frame.to_dict(orient="records")):
        if _blank_row(row):
            continue
        try:
            yield TransactionRecord.from_dict(row, coerce=True)
        except SchemaError as e:
            # header is line 1
            raise IngestionError(str(e), line=position + 2) from e


def read_records(path: str, fmt: str) -> Iterator[TransactionRecord]:
    if fmt == "jsonl":
        return read_jsonl(path)
    if fmt == "csv":
        return read_csv(path)
    raise IngestionError(f"unsupported format {fmt!r} (expected jsonl or csv)")


def write_jsonl(path: str, records) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.to_json() + "\n")
            count += 1
    return count


def write_csv(path: str, records) -> int:
    frame = pd.DataFrame([r.to_dict() for r in records], columns=list(DIMENSIONS))
    frame.to_csv(path, index=False)
    return len(frame)
