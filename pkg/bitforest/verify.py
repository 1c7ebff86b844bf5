# bitforest/verify.py
"""Result verification with a variable-width, user-seeded CRC.

The chain side maps every correct result digest to a k-bit checksum whose
polynomial is taken from a random 128-bit seed chosen by the user, and ships
the checksums as the verification object (VO). The user recomputes checksums
over the records the provider returned and matches the two multisets.
"""
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ParameterError
from .records import TransactionRecord, digest

logger = logging.getLogger(__name__)

SEED_BITS = 128
SEED_MASK = (1 << SEED_BITS) - 1
# bits 31, 35, ..., 127: the top bit of every admissible width is always set
SEED_CONSTANT = sum(1 << (4 * k - 1) for k in range(8, 33))
ADMISSIBLE_K = tuple(range(32, SEED_BITS + 1, 4))
MIN_K, MAX_K = 8, SEED_BITS
# exact product below this many terms, approximations above
EXACT_BETA_TERMS = 1 << 22
SERIES_RATIO = 1e-3

MAPPED, RAW_HASH = "mapped", "raw-hash"
OK, B1, B2, B3 = "OK", "B1", "B2", "B3"

Probability = Union[float, Fraction]


@dataclass(frozen=True)
class VerificationSeed:
    r: int

    def polynomial(self, k: int) -> int:
        return self.r & ((1 << k) - 1)

    def to_hex(self) -> str:
        return f"{self.r:032x}"


def make_seed(r_prime: int) -> VerificationSeed:
    if not 0 <= r_prime <= SEED_MASK:
        raise ParameterError("r' must be a 128-bit unsigned value")
    return VerificationSeed(r_prime | SEED_CONSTANT)


def random_seed(rng: np.random.Generator) -> VerificationSeed:
    high, low = (int(x) for x in rng.integers(0, 1 << 64, size=2, dtype=np.uint64))
    return make_seed((high << 64) | low)


def _check_k(k: int) -> None:
    if not MIN_K <= k <= MAX_K:
        raise ParameterError(f"checksum width must be in [{MIN_K}, {MAX_K}], got {k}")


@lru_cache(maxsize=256)
def crc_table(k: int, polynomial: int) -> Tuple[int, ...]:
    """Per-byte lookup table of the reflected shift register."""
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ polynomial if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


def improved_crc(data: bytes, k: int, seed: Union[VerificationSeed, int]) -> int:
    """k-bit CRC of ``data``; the polynomial is the low k bits of the seed."""
    _check_k(k)
    r = seed.r if isinstance(seed, VerificationSeed) else seed
    full = (1 << k) - 1
    table = crc_table(k, r & full)
    crc = full
    for byte in data:
        crc = table[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ full


def log_beta(n_h: int, k: int) -> float:
    """Natural log of the chance that ``n_h`` checksums of width k are pairwise distinct."""
    if n_h <= 1:
        return 0.0
    space = 1 << k
    terms = n_h - 1
    if terms >= space:
        return -math.inf
    if terms <= EXACT_BETA_TERMS:
        j = np.arange(1, n_h, dtype=np.float64)
        return float(np.log1p(-j / float(space)).sum())
    if terms / space < SERIES_RATIO:
        # -sum_j sum_m (j/N)^m / m, with the power sums of 1..n-1 in closed form
        n = terms
        s1 = n * (n + 1) / 2
        s2 = n * (n + 1) * (2 * n + 1) / 6
        s3 = s1 * s1
        x = float(space)
        return -(s1 / x + s2 / (2 * x * x) + s3 / (3 * x ** 3))
    x = float(space)
    return math.lgamma(x + 1) - math.lgamma(x - n_h + 1) - n_h * math.log(x)


def alpha_holds(n_h: int, k: int, alpha: Probability) -> bool:
    return Fraction(n_h, 1 << k) < 1 - Fraction(alpha)


def _check_probability(name: str, value: Probability) -> None:
    if not 0 < value < 1:
        raise ParameterError(f"{name} must lie strictly between 0 and 1, got {value}")


def select_k(n_h: int, alpha: Probability, beta: Probability) -> Optional[int]:
    """Smallest admissible width meeting both bounds; None selects raw digests."""
    if n_h < 0:
        raise ParameterError("n_h must be non-negative")
    _check_probability("alpha", alpha)
    _check_probability("beta", beta)
    beta_floor = math.log(float(beta))
    for k in ADMISSIBLE_K:
        if alpha_holds(n_h, k, alpha) and log_beta(n_h, k) > beta_floor:
            return k
    return None


@dataclass
class VerificationObject:
    mode: str
    k: Optional[int]
    items: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def item_bytes(self) -> int:
        return 32 if self.mode == RAW_HASH else (self.k + 7) // 8

    def to_bytes(self) -> bytes:
        if self.mode == RAW_HASH:
            head = bytes([1]) + struct.pack("<I", len(self.items))
            return head + b"".join(self.items)
        head = bytes([0, self.k]) + struct.pack("<I", len(self.items))
        return head + b"".join(c.to_bytes(self.item_bytes, "little") for c in self.items)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VerificationObject":
        if not data:
            raise ParameterError("empty VO")
        if data[0] == 1:
            (count,) = struct.unpack_from("<I", data, 1)
            body = data[5:]
            if len(body) != 32 * count:
                raise ParameterError("VO digest section has the wrong length")
            return cls(RAW_HASH, None, [body[i:i + 32] for i in range(0, len(body), 32)])
        if data[0] != 0 or len(data) < 6:
            raise ParameterError(f"unknown VO mode byte {data[0]}")
        k = data[1]
        _check_k(k)
        (count,) = struct.unpack_from("<I", data, 2)
        width = (k + 7) // 8
        body = data[6:]
        if len(body) != width * count:
            raise ParameterError("VO checksum section has the wrong length")
        return cls(MAPPED, k, [int.from_bytes(body[i:i + width], "little")
                               for i in range(0, len(body), width)])

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())


def build_vo(digests: Sequence[bytes], seed: VerificationSeed, alpha: Probability,
             beta: Probability) -> VerificationObject:
    k = select_k(len(digests), alpha, beta)
    if k is None:
        logger.info("⚠ No checksum width fits %d digests, sending raw digests", len(digests))
        return VerificationObject(RAW_HASH, None, list(digests))
    return VerificationObject(MAPPED, k, [improved_crc(d, k, seed) for d in digests])


def fingerprint(record: TransactionRecord, k: Optional[int], seed: VerificationSeed):
    """What the user compares against the VO for one record."""
    value = digest(record)
    return value if k is None else improved_crc(value, k, seed)


@dataclass
class Verdict:
    kind: str
    accepted: List[TransactionRecord] = field(default_factory=list)
    fabricated: List[TransactionRecord] = field(default_factory=list)
    unmatched_checksums: list = field(default_factory=list)
    n_h: int = 0
    n_r: int = 0
    n_acc: int = 0


def _match(records: Sequence[TransactionRecord], expected: Counter, k: Optional[int],
           seed: VerificationSeed) -> Tuple[List[TransactionRecord], List[TransactionRecord]]:
    matched, unmatched = [], []
    for record in records:
        value = fingerprint(record, k, seed)
        if expected[value] > 0:
            expected[value] -= 1
            matched.append(record)
        else:
            unmatched.append(record)
    return matched, unmatched


def _leftovers(expected: Counter) -> list:
    return sorted(expected.elements())


def verify_results(results: Sequence[TransactionRecord], vo: VerificationObject,
                   seed: VerificationSeed, gamma: Probability) -> Verdict:
    _check_probability("gamma", gamma)
    k = None if vo.mode == RAW_HASH else vo.k
    expected = Counter(vo.items)
    accepted, fabricated = _match(results, expected, k, seed)
    verdict = Verdict(OK, n_h=len(vo), n_r=len(results), n_acc=len(accepted))
    if results and Fraction(len(accepted), len(results)) < Fraction(gamma):
        verdict.kind = B3
        verdict.fabricated = list(results)
        logger.info("Verdict B3: %d of %d results matched, rejecting all", len(accepted), len(results))
        return verdict
    verdict.accepted = accepted
    verdict.fabricated = fabricated
    verdict.unmatched_checksums = _leftovers(expected)
    if fabricated:
        verdict.kind = B1
    elif verdict.unmatched_checksums:
        verdict.kind = B2
    logger.info("Verdict %s: accepted %d, fabricated %d, withheld %d", verdict.kind,
                len(accepted), len(fabricated), len(verdict.unmatched_checksums))
    return verdict


def local_reverify(new_results: Sequence[TransactionRecord], unmatched_checksums: Sequence,
                   k: Optional[int], seed: VerificationSeed) -> Tuple[List[TransactionRecord], list]:
    """Match late results against the checksums left over by ``verify_results``.

    ``k`` is None for a raw-hash VO. Needs no further VO from the chain.
    """
    expected = Counter(unmatched_checksums)
    matched, _ = _match(new_results, expected, k, seed)
    return matched, _leftovers(expected)
