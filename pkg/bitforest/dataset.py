# bitforest/dataset.py
"""Synthetic transaction ledgers shaped like a real Ethereum extract.

Every dimension draws its values from a Zipf-like distribution over
``cardinality`` distinct values, so a few values are dense (a busy account)
and the long tail is sparse (one-off counterparties, large transfers).
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import ParameterError, SchemaError
from .records import BOOLEAN_DIMENSIONS, DIMENSIONS, TransactionRecord

# distinct values per dimension observed on ~7.3M mainnet transfers
MAINNET_CARDINALITIES: Dict[str, int] = {
    "from": 348726,
    "to": 336980,
    "toCreate": 56474,
    "fromIsContract": 2,
    "toIsContract": 2,
    "value": 1689,
    "gasLimit": 35179,
    "gasPrice": 204560,
    "gasUsed": 39505,
    "callingFunction": 42871,
    "isError": 2,
    "eip2718type": 2,
    "maxFeePerGas": 2,
    "maxPriorityFeePerGas": 2,
}

DEFAULT_SKEW = 1.1
VALUE_UNIT = 10_000
LARGE_TRANSACTION = 5_000_000

_ADDRESS_SALT = {"from": 0xF, "to": 0x7}


@dataclass(frozen=True)
class PlantedKeyword:
    """Force ``dimension == keyword`` on a ``frequency`` share of the records."""
    dimension: str
    keyword: object
    frequency: float


def zipf_weights(cardinality: int, skew: float = DEFAULT_SKEW) -> np.ndarray:
    ranks = np.arange(1, cardinality + 1, dtype=np.float64)
    weights = ranks ** -skew
    return weights / weights.sum()


def value_of(dimension: str, index: int):
    """Concrete dimension value for the ``index``-th most frequent value."""
    if dimension in ("from", "to"):
        return f"0x{(_ADDRESS_SALT[dimension] << 156) | index:040x}"
    if dimension == "callingFunction":
        return "" if index == 0 else f"0x{index:08x}"
    if dimension == "value":
        return index * VALUE_UNIT
    if dimension == "gasLimit":
        return 21000 + index * 1000
    if dimension == "gasPrice":
        return 1_000_000_000 + index
    if dimension == "gasUsed":
        return 21000 + index
    return index


def _check_cardinalities(cardinalities: Mapping[str, int]) -> Dict[str, int]:
    merged = dict(MAINNET_CARDINALITIES)
    for dimension, cardinality in cardinalities.items():
        if dimension not in merged:
            raise SchemaError(f"unknown dimension {dimension!r}")
        if cardinality < 1:
            raise ParameterError(f"cardinality of {dimension} must be at least 1")
        merged[dimension] = int(cardinality)
    for dimension in BOOLEAN_DIMENSIONS:
        merged[dimension] = min(merged[dimension], 2)
    return merged


def generate_dataset(record_count: int, cardinalities: Optional[Mapping[str, int]] = None,
                     seed: int = 0, planted: Sequence[PlantedKeyword] = (),
                     skew: float = DEFAULT_SKEW) -> List[TransactionRecord]:
    """Deterministic synthetic ledger of ``record_count`` records."""
    if record_count < 0:
        raise ParameterError("record_count must be non-negative")
    cards = _check_cardinalities(cardinalities or {})
    rng = np.random.default_rng(seed)
    columns = {}
    for dimension in DIMENSIONS:
        cardinality = cards[dimension]
        if cardinality == 1:
            drawn = np.zeros(record_count, dtype=np.int64)
        else:
            drawn = rng.choice(cardinality, size=record_count, p=zipf_weights(cardinality, skew))
        columns[dimension] = [value_of(dimension, int(i)) for i in drawn]
    for plant in planted:
        if plant.dimension not in columns:
            raise SchemaError(f"unknown dimension {plant.dimension!r}")
        if not 0 <= plant.frequency <= 1:
            raise ParameterError("planted frequency must lie in [0, 1]")
        hits = np.flatnonzero(rng.random(record_count) < plant.frequency)
        for i in hits:
            columns[plant.dimension][i] = plant.keyword
    return [TransactionRecord.from_dict({d: columns[d][i] for d in DIMENSIONS})
            for i in range(record_count)]


def fabricate_record(rng: np.random.Generator) -> TransactionRecord:
    """A schema-valid record with fresh random values, absent from any ledger w.h.p."""
    def address() -> str:
        return "0x" + bytes(rng.integers(0, 256, size=20, dtype=np.uint8)).hex()

    def number(high: int) -> int:
        return int(rng.integers(0, high))

    data = {d: number(2) for d in BOOLEAN_DIMENSIONS}
    data.update({
        "from": address(),
        "to": address(),
        "toCreate": number(1 << 32),
        "value": number(1 << 62),
        "gasLimit": number(1 << 32),
        "gasPrice": number(1 << 40),
        "gasUsed": number(1 << 32),
        "callingFunction": "0x" + bytes(rng.integers(0, 256, size=4, dtype=np.uint8)).hex(),
        "eip2718type": number(3),
        "maxFeePerGas": number(1 << 40),
        "maxPriorityFeePerGas": number(1 << 40),
    })
    return TransactionRecord.from_dict(data)


def scan(records: Sequence[TransactionRecord], predicates) -> List[int]:
    """Indices of the records satisfying every predicate (linear reference)."""
    return [i for i, r in enumerate(records) if all(p(r) for p in predicates)]
