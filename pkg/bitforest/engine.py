# bitforest/engine.py
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from .articulated import Token, run_query
from .compressed import CompressedForest, SizeReport
from .config import EngineSettings, load_settings
from .errors import ConfigError, FeatureLookupError, ParameterError
from .features import FeatureSpec, KeywordMatch, Matcher, RangeCondition
from .forest import QueryStats
from .pcm import AUTO, MANUAL, LoadedState, MappingTable, PersistenceManager, restore_forest
from .records import VALUE_DIMENSION, TransactionRecord, digest

logger = logging.getLogger(__name__)

RECORD_PAYLOAD = "record"
DIGEST_PAYLOAD = "digest"


def _encode_record(record: TransactionRecord) -> str:
    return record.to_json()


def _decode_record(line: str) -> TransactionRecord:
    return TransactionRecord.from_dict(json.loads(line))


_CODECS = {
    RECORD_PAYLOAD: (_encode_record, _decode_record),
    DIGEST_PAYLOAD: (bytes.hex, bytes.fromhex),
}


@dataclass
class QueryResult:
    indices: List[int]
    token: Token
    stats: Optional[QueryStats] = None
    payloads: list = field(default_factory=list)


class BpiEngine:
    """One keyword index: mapping table, compressed forest, ledger payloads and,
    optionally, the on-disk state behind them.

    ``payload_kind`` decides what the ledger keeps per record: the record
    itself (provider side) or its SHA-256 digest (chain side). A digest
    ledger cannot evaluate custom conditions over past records, so it takes
    a ``scan_source`` returning the records the conditions run over.
    """

    def __init__(self, settings: Optional[EngineSettings] = None, payload_kind: str = RECORD_PAYLOAD,
                 persistence: Optional[PersistenceManager] = None,
                 scan_source: Optional[Callable[[], Sequence[TransactionRecord]]] = None):
        if payload_kind not in _CODECS:
            raise ParameterError(f"unknown payload kind {payload_kind!r}")
        self.settings = settings or EngineSettings()
        self.config = self.settings.forest
        self.payload_kind = payload_kind
        self.mapping = MappingTable()
        self.forest = CompressedForest(self.config)
        self.forest.on_tree_complete = self._on_tree_complete
        self.payloads: list = []
        self.pending: List[FeatureSpec] = []
        # specs evaluated against every new record besides the monitored keywords
        self.evaluated: List[FeatureSpec] = []
        self.pcm = persistence
        if scan_source is None and payload_kind == RECORD_PAYLOAD:
            scan_source = lambda: self.payloads
        self.scan_source = scan_source

    # ------------------------- lifecycle -------------------------
    @classmethod
    def open(cls, data_dir: Optional[str] = None, payload_kind: str = RECORD_PAYLOAD,
             **overrides) -> "BpiEngine":
        """Open (or create) a data directory; holds its writer lock until ``close``."""
        settings = load_settings(data_dir, **overrides)
        if not settings.data_dir:
            raise ConfigError("no data directory given and BITFOREST_DATA_DIR is unset")
        stored = load_settings(settings.data_dir)
        pcm = PersistenceManager(settings.data_dir, settings.forest).open()
        try:
            state = pcm.load()
            if not state.empty and stored.forest != settings.forest:
                raise ConfigError(f"{settings.data_dir} holds data built with {stored.forest}; "
                                  "the forest shape cannot change")
            pcm.write_config(settings)
            engine = cls(settings, payload_kind, pcm)
            engine._restore(state)
        except Exception:
            pcm.close()
            raise
        return engine

    def close(self) -> None:
        if self.pcm is not None:
            self.pcm.close()

    def __enter__(self) -> "BpiEngine":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def _restore(self, state: LoadedState) -> None:
        for spec in state.specs:
            self.mapping.add(spec)
            if self._needs_scan(spec):
                self.evaluated.append(spec)
        self.forest = restore_forest(state, self.config)
        self.forest.on_tree_complete = self._on_tree_complete
        decode = _CODECS[self.payload_kind][1]
        self.payloads = [decode(line) for line in state.payloads]

    # ------------------------- features -------------------------
    @staticmethod
    def _needs_scan(spec: FeatureSpec) -> bool:
        # the value dimension is not monitored, so its features need the full ledger scan
        return spec.is_custom or spec.dimension == VALUE_DIMENSION

    def register_keyword(self, dimension: str, keyword) -> FeatureSpec:
        spec = self.mapping.register_keyword(dimension, keyword)
        self.forest.register(spec.feature_id)
        return spec

    def add_feature(self, name: Optional[str], dimension: str, keyword=None,
                    minimum: Optional[int] = None, maximum: Optional[int] = None) -> FeatureSpec:
        """Register a keyword or range feature.

        Keywords on monitored dimensions skip all prior records (none of them
        can match, or the keyword would already be registered). Range
        conditions and value keywords are queued and built in one ledger scan
        per batch.
        """
        if keyword is not None and (minimum is not None or maximum is not None):
            raise ParameterError("give either a keyword or a range, not both")
        matcher: Matcher = KeywordMatch(keyword) if keyword is not None else RangeCondition(minimum, maximum)
        if name is None:
            if keyword is None:
                raise ParameterError("range features need a name")
            name = f"{dimension}={keyword}"
        spec = self.mapping.register(name, dimension, matcher)
        if not self._needs_scan(spec):
            self.forest.register(spec.feature_id)
            logger.info("✓ Registered keyword feature %d (%s)", spec.feature_id, spec.name)
            return spec
        self.pending.append(spec)
        logger.info("Queued feature %d (%s), %d pending", spec.feature_id, spec.name, len(self.pending))
        if len(self.pending) >= self.config.create_batch_threshold:
            self.flush_pending()
        return spec

    def flush_pending(self) -> int:
        """Build every queued feature now; returns how many were built."""
        if not self.pending:
            return 0
        if self.scan_source is None:
            raise ParameterError("this engine has no record source for building features")
        batch, self.pending = self.pending, []
        self.forest.create_features(batch, self.scan_source(), force=True)
        self.evaluated.extend(batch)
        return len(batch)

    def resolve(self, names: Iterable[str]) -> List[int]:
        """Feature ids for names such as ``from=0xab..`` or ``Large Transactions``, or raw ids."""
        ids = []
        for name in names:
            name = name.strip()
            feature_id = self.mapping.by_name(name)
            if feature_id is None and name.isdigit() and int(name) in self.mapping:
                feature_id = int(name)
            if feature_id is None:
                raise FeatureLookupError(f"no feature named {name!r}")
            ids.append(feature_id)
        return ids

    def feature_ids_of(self, record: TransactionRecord) -> List[int]:
        ids = []
        for dimension, value in record.keywords():
            feature_id = self.mapping.keyword_id(dimension, value)
            if feature_id is None:
                feature_id = self.register_keyword(dimension, value).feature_id
            ids.append(feature_id)
        ids.extend(s.feature_id for s in self.evaluated if s.matches(record))
        return ids

    # ------------------------- ingestion -------------------------
    @property
    def record_count(self) -> int:
        return self.forest.record_count

    def insert(self, record: TransactionRecord, payload=None) -> int:
        ids = self.feature_ids_of(record)
        if payload is None:
            payload = record if self.payload_kind == RECORD_PAYLOAD else digest(record)
        self.payloads.append(payload)
        return self.forest.insert(ids)

    def ingest(self, records: Iterable[TransactionRecord]) -> int:
        count = 0
        for record in records:
            self.insert(record)
            count += 1
        return count

    def _on_tree_complete(self, tree_id: int, segments) -> None:
        if self.pcm is not None:
            self.persist(AUTO)

    # ------------------------- query -------------------------
    def query(self, feature_ids: Sequence[int], token: Optional[Token] = None,
              exclude: Sequence[int] = (), stats: Optional[QueryStats] = None,
              with_payloads: bool = False) -> QueryResult:
        needed = set(feature_ids) | set(exclude)
        if any(s.feature_id in needed for s in self.pending):
            self.flush_pending()
        indices, new_token = run_query(self.forest, feature_ids, token, exclude, stats)
        result = QueryResult(indices, new_token, stats)
        if with_payloads:
            result.payloads = [self.payloads[i] for i in indices]
        return result

    def resume(self, token: Token, feature_ids: Sequence[int], **kwargs) -> QueryResult:
        return self.query(feature_ids, token=token, **kwargs)

    # ------------------------- persistence -------------------------
    def persist(self, kind: str = MANUAL) -> bool:
        if self.pcm is None:
            raise ParameterError("engine has no data directory")
        self.flush_pending()
        return self.pcm.persist(self.forest, self.mapping, self.payloads, kind,
                                encode=_CODECS[self.payload_kind][0])

    def measured_size(self) -> SizeReport:
        return self.forest.measured_size(s.feature_id for s in self.evaluated)

    def stats(self) -> Dict[str, object]:
        report = {
            "record_count": self.record_count,
            "tree_count": self.forest.tree_count,
            "completed_trees": self.forest.completed_trees,
            "feature_count": len(self.mapping),
            "pending_features": len(self.pending),
            "ebf_length": self.forest.ebf_length(),
        }
        if self.pcm is not None:
            report.update({f"{name}_bytes": size for name, size in self.pcm.file_sizes().items()})
            report["last_commit"] = self.pcm.seq
            report["last_commit_kind"] = self.pcm.last_kind or "-"
        return report
