# bitforest/hsb.py
"""In-process hybrid-storage simulation.

The data owner sends every record to the service provider (SP) and its
digest to a single authoritative chain node; both run the same index. A data
user queries the SP, asks the chain for a verification object over the same
query and classifies what the SP returned.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .articulated import Token, TokenVersionTable, feature_set_id
from .config import EngineSettings
from .dataset import fabricate_record
from .engine import DIGEST_PAYLOAD, RECORD_PAYLOAD, BpiEngine
from .errors import ParameterError, StateError
from .features import FeatureSpec
from .records import TransactionRecord, digest
from .verify import (B2, RAW_HASH, Probability, VerificationObject, VerificationSeed, Verdict,
                     build_vo, local_reverify, random_seed, verify_results)

logger = logging.getLogger(__name__)

HONEST, FABRICATE, OMIT, MALICIOUS = "honest", "fabricate", "omit", "malicious"
# command-line names of the behaviours
BEHAVIOR_NAMES = {"honest": HONEST, "b1": FABRICATE, "b2": OMIT, "b3": MALICIOUS}


@dataclass(frozen=True)
class SpBehavior:
    kind: str = HONEST
    count: int = 1

    def __post_init__(self):
        if self.kind not in (HONEST, FABRICATE, OMIT, MALICIOUS):
            raise ParameterError(f"unknown SP behaviour {self.kind!r}")
        if self.count < 1:
            raise ParameterError("behaviour counts must be at least 1")

    @classmethod
    def honest(cls) -> "SpBehavior":
        return cls(HONEST)

    @classmethod
    def inject_fabricated(cls, count: int) -> "SpBehavior":
        return cls(FABRICATE, count)

    @classmethod
    def omit(cls, count: int) -> "SpBehavior":
        return cls(OMIT, count)

    @classmethod
    def fully_malicious(cls) -> "SpBehavior":
        return cls(MALICIOUS)

    @classmethod
    def from_name(cls, name: str, count: int = 1) -> "SpBehavior":
        try:
            return cls(BEHAVIOR_NAMES[name.lower()], count)
        except KeyError:
            raise ParameterError(f"unknown behaviour {name!r} (expected honest, b1, b2 or b3)") from None


class ServiceProvider:
    def __init__(self, engine: BpiEngine, rng: np.random.Generator):
        self.engine = engine
        self.rng = rng

    def query(self, feature_ids: Sequence[int], behavior: SpBehavior = SpBehavior(),
              token: Optional[Token] = None) -> Tuple[List[TransactionRecord], Token]:
        result = self.engine.query(feature_ids, token=token, with_payloads=True)
        records = list(result.payloads)
        if behavior.kind == FABRICATE:
            records += [fabricate_record(self.rng) for _ in range(behavior.count)]
        elif behavior.kind == OMIT:
            drop = set(self.rng.choice(len(records), size=min(behavior.count, len(records)),
                                       replace=False).tolist()) if records else set()
            records = [r for i, r in enumerate(records) if i not in drop]
        elif behavior.kind == MALICIOUS:
            records = [fabricate_record(self.rng) for _ in range(max(len(records), 1))]
        return records, result.token


class ChainNode:
    def __init__(self, engine: BpiEngine):
        self.engine = engine
        self.requests = 0

    def verify(self, feature_ids: Sequence[int], seed: VerificationSeed, alpha: Probability,
               beta: Probability, token: Optional[Token] = None) -> Tuple[VerificationObject, Token]:
        self.requests += 1
        result = self.engine.query(feature_ids, token=token, with_payloads=True)
        return build_vo(result.payloads, seed, alpha, beta), result.token


class DataOwner:
    def __init__(self, sp: ServiceProvider, chain: ChainNode):
        self.sp = sp
        self.chain = chain
        self.records: List[TransactionRecord] = []

    def outsource(self, record: TransactionRecord) -> int:
        self.records.append(record)
        index = self.sp.engine.insert(record)
        chain_index = self.chain.engine.insert(record, payload=digest(record))
        if index != chain_index or len(self.sp.engine.mapping) != len(self.chain.engine.mapping):
            raise StateError(f"provider and chain indexes diverged at record {index}")
        return index

    def outsource_all(self, records: Sequence[TransactionRecord]) -> int:
        for record in records:
            self.outsource(record)
        return len(records)

    def add_feature(self, name: Optional[str], dimension: str, keyword=None,
                    minimum: Optional[int] = None, maximum: Optional[int] = None) -> FeatureSpec:
        spec = self.sp.engine.add_feature(name, dimension, keyword, minimum, maximum)
        twin = self.chain.engine.add_feature(name, dimension, keyword, minimum, maximum)
        if twin.feature_id != spec.feature_id:
            raise StateError(f"feature {spec.name} got id {spec.feature_id} at the provider "
                             f"and {twin.feature_id} on chain")
        return spec


@dataclass
class QueryOutcome:
    results: List[TransactionRecord]
    verdict: Verdict
    token: Token
    vo_round_trips: int = 1
    k: Optional[int] = None
    vo_bytes: int = 0
    recovered: List[TransactionRecord] = field(default_factory=list)
    remaining_checksums: list = field(default_factory=list)


def _without(records: Sequence[TransactionRecord], taken: Sequence[TransactionRecord]) -> List[TransactionRecord]:
    """``records`` minus the multiset ``taken``."""
    left = Counter(digest(r) for r in taken)
    rest = []
    for record in records:
        key = digest(record)
        if left[key]:
            left[key] -= 1
        else:
            rest.append(record)
    return rest


class DataUser:
    def __init__(self, sp: ServiceProvider, chain: ChainNode, settings: EngineSettings,
                 rng: np.random.Generator):
        self.sp = sp
        self.chain = chain
        self.security = settings.security
        self.rng = rng
        self.tvt = TokenVersionTable()
        self.seed = random_seed(rng)

    def rotate_seed(self) -> VerificationSeed:
        """Expire the current r; checksums left over from it can no longer be used."""
        self.seed = random_seed(self.rng)
        return self.seed

    def round_trip(self, feature_ids: Sequence[int], behavior: SpBehavior = SpBehavior(),
                   gamma: Optional[Probability] = None, alpha: Optional[Probability] = None,
                   beta: Optional[Probability] = None, refetch: bool = True,
                   resume: bool = False) -> QueryOutcome:
        """Query the SP, verify against one chain VO and, after withheld results,
        re-fetch from the SP and check the late records locally.

        With ``resume`` the query continues from the latest token kept for
        this feature set.
        """
        gamma = self.security.gamma if gamma is None else gamma
        alpha = self.security.alpha if alpha is None else alpha
        beta = self.security.beta if beta is None else beta
        token = self.tvt.latest(feature_set_id(feature_ids)) if resume else None
        seed = self.rotate_seed()
        before = self.chain.requests
        results, _ = self.sp.query(feature_ids, behavior, token)
        vo, chain_token = self.chain.verify(feature_ids, seed, alpha, beta, token)
        verdict = verify_results(results, vo, seed, gamma)
        outcome = QueryOutcome(list(verdict.accepted), verdict, chain_token,
                               k=vo.k, vo_bytes=vo.size_bytes)
        outcome.remaining_checksums = list(verdict.unmatched_checksums)
        if verdict.kind == B2 and refetch:
            again, _ = self.sp.query(feature_ids, SpBehavior.honest(), token)
            k = None if vo.mode == RAW_HASH else vo.k
            recovered, remaining = local_reverify(_without(again, verdict.accepted),
                                                  verdict.unmatched_checksums, k, seed)
            outcome.recovered = recovered
            outcome.remaining_checksums = remaining
            outcome.results = _sorted_like(again, verdict.accepted + recovered)
            logger.info("Recovered %d withheld results locally, %d checksums left",
                        len(recovered), len(remaining))
        outcome.vo_round_trips = self.chain.requests - before
        self.tvt.record(chain_token)
        return outcome


def _sorted_like(reference: Sequence[TransactionRecord], chosen: Sequence[TransactionRecord]) -> List[TransactionRecord]:
    """``chosen`` in the order the records appear in ``reference``."""
    wanted = Counter(digest(r) for r in chosen)
    ordered = []
    for record in reference:
        key = digest(record)
        if wanted[key]:
            wanted[key] -= 1
            ordered.append(record)
    return ordered


@dataclass
class Network:
    owner: DataOwner
    sp: ServiceProvider
    chain: ChainNode
    user: DataUser


def build_network(settings: Optional[EngineSettings] = None, seed: Optional[int] = None) -> Network:
    """Owner, SP, chain node and user wired together, deterministic under ``seed``."""
    settings = settings or EngineSettings()
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    sp_engine = BpiEngine(settings, RECORD_PAYLOAD)
    sp = ServiceProvider(sp_engine, rng)
    chain = ChainNode(BpiEngine(settings, DIGEST_PAYLOAD))
    owner = DataOwner(sp, chain)
    # chain-side custom conditions are evaluated over the owner's records
    chain.engine.scan_source = lambda: owner.records
    user = DataUser(sp, chain, settings, rng)
    return Network(owner, sp, chain, user)
