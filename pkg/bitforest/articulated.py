# bitforest/articulated.py
"""Resumable queries.

A token is one 64-bit word: the top 24 bits name the queried feature set and
the low 40 bits hold the cursor, the record count at the moment the token was
issued. Resuming a query scans only the records appended after the cursor.
"""
import hashlib
from bisect import insort
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .compressed import CompressedForest
from .errors import EncodingError, ParameterError, TokenError
from .forest import QueryStats

FEATURE_SET_BITS = 24
CURSOR_BITS = 40
TOKEN_BITS = FEATURE_SET_BITS + CURSOR_BITS
MAX_FEATURE_SET_ID = (1 << FEATURE_SET_BITS) - 1
MAX_CURSOR = (1 << CURSOR_BITS) - 1
HEX_WIDTH = TOKEN_BITS // 4


def encode_token(feature_set_id: int, cursor: int) -> int:
    if not 0 <= feature_set_id <= MAX_FEATURE_SET_ID:
        raise EncodingError(f"feature set id {feature_set_id} does not fit in {FEATURE_SET_BITS} bits")
    if not 0 <= cursor <= MAX_CURSOR:
        raise EncodingError(f"cursor {cursor} does not fit in {CURSOR_BITS} bits")
    return (feature_set_id << CURSOR_BITS) | cursor


def decode_token(word: int) -> Tuple[int, int]:
    if not 0 <= word < 1 << TOKEN_BITS:
        raise EncodingError(f"token word {word!r} is not a 64-bit unsigned value")
    return word >> CURSOR_BITS, word & MAX_CURSOR


@dataclass(frozen=True, order=True)
class Token:
    feature_set_id: int
    cursor: int

    def __post_init__(self):
        # validates both fields
        encode_token(self.feature_set_id, self.cursor)

    @property
    def word(self) -> int:
        return encode_token(self.feature_set_id, self.cursor)

    def to_hex(self) -> str:
        return f"{self.word:0{HEX_WIDTH}x}"

    @classmethod
    def from_word(cls, word: int) -> "Token":
        return cls(*decode_token(word))

    @classmethod
    def from_hex(cls, text: str) -> "Token":
        text = text.strip()
        if len(text) != HEX_WIDTH:
            raise EncodingError(f"a token is {HEX_WIDTH} hex digits, got {len(text)}")
        try:
            word = int(text, 16)
        except ValueError:
            raise EncodingError(f"not a hex token: {text!r}") from None
        return cls.from_word(word)

    def __str__(self) -> str:
        return self.to_hex()


def canonical_feature_ids(feature_ids: Iterable[int]) -> List[int]:
    ids = sorted(set(feature_ids))
    if not ids:
        raise ParameterError("a feature set needs at least one feature")
    return ids


def feature_set_id(feature_ids: Iterable[int]) -> int:
    """24-bit id of a feature conjunction; independent of the order of ``feature_ids``."""
    ids = canonical_feature_ids(feature_ids)
    if len(ids) == 1 and ids[0] <= MAX_FEATURE_SET_ID:
        return ids[0]
    text = ",".join(str(i) for i in ids).encode("ascii")
    return int.from_bytes(hashlib.sha256(text).digest()[-3:], "big")


def run_query(forest: CompressedForest, feature_ids: Sequence[int],
              token: Optional[Token] = None, exclude: Sequence[int] = (),
              stats: Optional[QueryStats] = None) -> Tuple[List[int], Token]:
    """Query ``forest``, resuming from ``token`` when given.

    Returns the matching indices and a fresh token whose cursor is the
    forest's current record count.
    """
    set_id = feature_set_id(feature_ids)
    cursor = 0
    if token is not None:
        if token.feature_set_id != set_id:
            raise TokenError(f"token mismatch: token is for feature set {token.feature_set_id}, "
                             f"query is feature set {set_id}")
        if token.cursor > forest.record_count:
            raise TokenError(f"token cursor {token.cursor} is past the ledger end {forest.record_count}")
        cursor = token.cursor
    # the count is read before the scan so the cursor never passes unscanned records
    issued_at = forest.record_count
    results = [i for i in forest.query(canonical_feature_ids(feature_ids), cursor, exclude, stats)
               if i < issued_at]
    return results, Token(set_id, issued_at)


class TokenVersionTable:
    """Client-side record of every token received, ordered by feature set id."""

    def __init__(self):
        self._ids: List[int] = []
        self._tokens: Dict[int, List[Token]] = {}

    def record(self, token: Token) -> None:
        history = self._tokens.get(token.feature_set_id)
        if history is None:
            insort(self._ids, token.feature_set_id)
            history = self._tokens[token.feature_set_id] = []
        elif token.cursor < history[-1].cursor:
            raise TokenError(f"token cursor {token.cursor} precedes the latest "
                             f"{history[-1].cursor} for feature set {token.feature_set_id}")
        history.append(token)

    def latest(self, feature_set: int) -> Optional[Token]:
        history = self._tokens.get(feature_set)
        return history[-1] if history else None

    def history(self, feature_set: int) -> List[Token]:
        return list(self._tokens.get(feature_set, ()))

    def feature_set_ids(self) -> List[int]:
        return list(self._ids)

    def __len__(self) -> int:
        return sum(len(h) for h in self._tokens.values())

    def __contains__(self, feature_set: int) -> bool:
        return feature_set in self._tokens
