# bitforest/pcm.py
"""Persistence and configuration manager.

Directory layout::

    root.masks  middle.masks  leaf.masks   32-bit little-endian mask words
    records.jsonl                          one ledger payload per line
    manifest                               commit records
    config                                 key=value settings
    LOCK                                   exclusive writer lock

Each persistence event appends the new compressed words of every touched
(tree, feature) pair to the level files, grouped by feature, and then
appends one commit record to the manifest. A commit record is
``b"BFM1" | version:u8 | length:u32 | JSON payload | crc32:u32``. Only
committed bytes are trusted on load; anything past the committed lengths is
a torn tail and is cut off.

While a tree is still growing its last word per level may gain bits after a
flush. The next flush overwrites that single word in place with the OR of
both values, and the commit record carries the committed value of every last
word so a crash between the overwrite and the commit can be undone.
"""
import fcntl
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .compressed import CompressedForest, check_segment
from .config import CONFIG_FILE, EngineSettings, ForestConfig, write_config_file
from .errors import (IntegrityError, ParameterError, PersistenceError, RegistrationError,
                     StateError)
from .features import (FeatureSpec, Keyword, KeywordMatch, Matcher, check_dimension,
                       keyword_feature_name, keyword_key)
from .forest import LEVELS, TreeSegment

logger = logging.getLogger(__name__)

LEVEL_FILES = {level: f"{level}.masks" for level in LEVELS}
RECORDS_FILE = "records.jsonl"
MANIFEST_FILE = "manifest"
LOCK_FILE = "LOCK"

MANIFEST_MAGIC = b"BFM1"
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sBI")
_CRC = struct.Struct("<I")
_WORD = struct.Struct("<I")
WORD_DTYPE = np.dtype("<u4")

AUTO, MANUAL = "auto", "manual"


class MappingTable:
    """Feature name and (dimension, keyword) to feature id; ids are dense and never reused."""

    def __init__(self):
        self._specs: List[FeatureSpec] = []
        self._by_key: Dict[Tuple[str, str], int] = {}
        self._by_name: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._specs)

    def __iter__(self) -> Iterator[FeatureSpec]:
        return iter(self._specs)

    def __contains__(self, feature_id: int) -> bool:
        return 0 <= feature_id < len(self._specs)

    def register(self, name: str, dimension: str, matcher: Matcher) -> FeatureSpec:
        check_dimension(dimension, matcher)
        spec = FeatureSpec(len(self._specs), name, dimension, matcher)
        self.add(spec)
        return spec

    def register_keyword(self, dimension: str, keyword: Keyword) -> FeatureSpec:
        return self.register(keyword_feature_name(dimension, keyword), dimension, KeywordMatch(keyword))

    def add(self, spec: FeatureSpec) -> None:
        if spec.feature_id != len(self._specs):
            raise RegistrationError(f"feature id {spec.feature_id} breaks the id sequence "
                                    f"(next is {len(self._specs)})")
        key = (spec.dimension, spec.mapping_key)
        if key in self._by_key:
            raise RegistrationError(f"{spec.dimension}:{spec.mapping_key} is already feature "
                                    f"{self._by_key[key]}")
        if spec.name in self._by_name:
            raise RegistrationError(f"feature name {spec.name!r} is already registered")
        self._specs.append(spec)
        self._by_key[key] = spec.feature_id
        self._by_name[spec.name] = spec.feature_id

    def keyword_id(self, dimension: str, keyword: Keyword) -> Optional[int]:
        return self._by_key.get((dimension, keyword_key(keyword)))

    def by_name(self, name: str) -> Optional[int]:
        return self._by_name.get(name)

    def get(self, feature_id: int) -> FeatureSpec:
        return self._specs[feature_id]

    def specs_since(self, count: int) -> List[FeatureSpec]:
        return self._specs[count:]

    def custom_specs(self) -> List[FeatureSpec]:
        return [s for s in self._specs if s.is_custom]


def encode_commit(payload: Dict[str, object]) -> bytes:
    body = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return _HEADER.pack(MANIFEST_MAGIC, MANIFEST_VERSION, len(body)) + body + _CRC.pack(zlib.crc32(body))


def read_commits(data: bytes) -> Tuple[List[Dict[str, object]], int]:
    """Decode every commit record in ``data``.

    Returns the payloads and the byte length they occupy. The final record is
    an interrupted commit and is left out when its header or body runs past
    the end of ``data`` or its checksum fails. A bad header, or a bad checksum
    with more records after it, raises :class:`IntegrityError`.
    """
    commits, position = [], 0
    while position < len(data):
        if position + _HEADER.size > len(data):
            break
        magic, version, length = _HEADER.unpack_from(data, position)
        if magic != MANIFEST_MAGIC or version != MANIFEST_VERSION:
            raise IntegrityError(f"manifest record at byte {position} has a bad header")
        end = position + _HEADER.size + length + _CRC.size
        if end > len(data):
            break
        body = data[position + _HEADER.size:end - _CRC.size]
        (crc,) = _CRC.unpack_from(data, end - _CRC.size)
        if zlib.crc32(body) != crc:
            if end == len(data):
                break
            raise IntegrityError(f"manifest record at byte {position} fails its checksum")
        try:
            commits.append(json.loads(body.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise IntegrityError(f"manifest record at byte {position} is not readable: {e}") from e
        position = end
    return commits, position


@dataclass
class LevelCursor:
    """Durable position of one feature's last word at one level of the growing tree."""
    count: int = 0
    position: int = -1
    value: int = 0


@dataclass
class LoadedState:
    specs: List[FeatureSpec] = field(default_factory=list)
    trees: Dict[int, Dict[int, TreeSegment]] = field(default_factory=dict)
    completed_trees: int = 0
    record_count: int = 0
    payloads: List[str] = field(default_factory=list)
    seq: int = 0
    last_kind: Optional[str] = None

    @property
    def empty(self) -> bool:
        return self.seq == 0


Hook = Optional[Callable[[], None]]


class PersistenceManager:
    def __init__(self, data_dir: str, config: Optional[ForestConfig] = None,
                 post_records_hook: Hook = None, post_pages_hook: Hook = None,
                 post_commit_hook: Hook = None):
        self.data_dir = data_dir
        self.config = config or ForestConfig()
        # crash injection points, in write order
        self.post_records_hook = post_records_hook
        self.post_pages_hook = post_pages_hook
        self.post_commit_hook = post_commit_hook
        self._lock_fd: Optional[int] = None
        self.seq = 0
        self.last_kind: Optional[str] = None
        self.record_count = 0
        self.durable_features = 0
        self.durable_trees = 0
        self.lengths: Dict[str, int] = {level: 0 for level in LEVELS}
        self.records_bytes = 0
        self.durable_ebf: Dict[int, int] = {}
        # tree id -> feature -> per-level cursor, for trees flushed while growing
        self.partial: Dict[int, Dict[int, List[LevelCursor]]] = {}

    # ------------------------- files -------------------------
    def path(self, name: str) -> str:
        return os.path.join(self.data_dir, name)

    def open(self) -> "PersistenceManager":
        os.makedirs(self.data_dir, exist_ok=True)
        fd = os.open(self.path(LOCK_FILE), os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(fd)
            raise PersistenceError(f"{self.data_dir} is locked by another writer") from None
        self._lock_fd = fd
        for name in list(LEVEL_FILES.values()) + [RECORDS_FILE, MANIFEST_FILE]:
            if not os.path.exists(self.path(name)):
                open(self.path(name), "ab").close()
        return self

    def close(self) -> None:
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self) -> "PersistenceManager":
        return self.open()

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def write_config(self, settings: EngineSettings) -> None:
        if not os.path.exists(self.path(CONFIG_FILE)):
            write_config_file(self.data_dir, settings)

    def read_words(self, level: str, start: int = 0, count: Optional[int] = None) -> List[int]:
        words = np.fromfile(self.path(LEVEL_FILES[level]), dtype=WORD_DTYPE)
        stop = len(words) if count is None else start + count
        return [int(w) for w in words[start:stop]]

    def file_sizes(self) -> Dict[str, int]:
        names = dict(LEVEL_FILES, records=RECORDS_FILE, manifest=MANIFEST_FILE)
        return {key: os.path.getsize(self.path(name)) if os.path.exists(self.path(name)) else 0
                for key, name in names.items()}

    # ------------------------- word writes -------------------------
    def append_merge(self, level: str, position: int, old: int, new: int) -> int:
        """OR ``new`` into the flushed word at ``position``; the file must hold ``old`` there."""
        with open(self.path(LEVEL_FILES[level]), "r+b") as f:
            f.seek(position * _WORD.size)
            raw = f.read(_WORD.size)
            if len(raw) != _WORD.size or _WORD.unpack(raw)[0] != old:
                raise PersistenceError(f"{level} word {position} does not hold the flushed mask "
                                       f"0x{old:08x}")
            merged = old | new
            if merged != old:
                f.seek(position * _WORD.size)
                f.write(_WORD.pack(merged))
                f.flush()
                os.fsync(f.fileno())
        return merged

    def _append_words(self, level: str, words: Sequence[int]) -> None:
        if not words:
            return
        with open(self.path(LEVEL_FILES[level]), "ab") as f:
            f.write(np.asarray(words, dtype=WORD_DTYPE).tobytes())

    # ------------------------- persistence events -------------------------
    def persist(self, forest: CompressedForest, mapping: MappingTable, payloads: Sequence,
                kind: str = MANUAL, encode: Callable[[object], str] = str) -> bool:
        """Make the engine state durable; returns False when nothing changed.

        ``auto`` flushes completed trees only; ``manual`` also flushes the
        growing tree.
        """
        if kind not in (AUTO, MANUAL):
            raise ParameterError(f"unknown persistence kind {kind!r}")
        if len(payloads) != forest.record_count:
            raise StateError(f"{len(payloads)} payloads for {forest.record_count} records")
        record_count = forest.record_count if kind == MANUAL \
            else forest.completed_trees * self.config.tree_capacity
        record_count = max(record_count, self.record_count)
        work = self._pending_segments(forest, kind)
        new_specs = mapping.specs_since(self.durable_features)
        if not work and not new_specs and record_count == self.record_count:
            return False

        self._append_payloads([encode(p) for p in payloads[self.record_count:record_count]])
        if self.post_records_hook:
            self.post_records_hook()
        groups = []
        partial_updates: Dict[int, Dict[int, List[LevelCursor]]] = {}
        for tree, feature_id, segment in work:
            groups.append(self._write_group(tree, feature_id, segment, partial_updates))
        if self.post_pages_hook:
            self.post_pages_hook()

        payload = {
            "seq": self.seq + 1,
            "kind": kind,
            "record_count": record_count,
            "completed_trees": forest.completed_trees,
            "lengths": dict(self.lengths, records=self.records_bytes),
            "features": [s.to_json() for s in new_specs],
            "groups": groups,
        }
        with open(self.path(MANIFEST_FILE), "ab") as f:
            f.write(encode_commit(payload))
            f.flush()
            os.fsync(f.fileno())

        self.seq += 1
        self.last_kind = kind
        self.record_count = record_count
        self.durable_features = len(mapping)
        self.durable_trees = forest.completed_trees
        for tree, feature_id, _ in work:
            if tree < forest.completed_trees:
                self.durable_ebf[feature_id] = self.durable_ebf.get(feature_id, 0) | (1 << tree)
        for tree, cursors in partial_updates.items():
            self.partial.setdefault(tree, {}).update(cursors)
        for tree in [t for t in self.partial if t < forest.completed_trees]:
            del self.partial[tree]
        logger.info("✓ Committed %s persist #%d: %d records, %d groups, %d new features",
                    kind, self.seq, record_count, len(groups), len(new_specs))
        if self.post_commit_hook:
            self.post_commit_hook()
        return True

    def _pending_segments(self, forest: CompressedForest, kind: str) -> List[Tuple[int, int, TreeSegment]]:
        work = []
        for feature_id in sorted(forest.ebf):
            missing = forest.ebf[feature_id] & ~self.durable_ebf.get(feature_id, 0)
            tree = 0
            while missing:
                if missing & 1:
                    work.append((tree, feature_id, forest.segment(feature_id, tree)))
                missing >>= 1
                tree += 1
        if kind == MANUAL and forest.tail.local_count:
            tree = forest.completed_trees
            durable = self.partial.get(tree, {})
            for feature_id, segment in forest.tail.compressed_words(0).items():
                cursors = durable.get(feature_id)
                if cursors and all(c.count == len(words) and c.value == words[-1]
                                   for c, words in zip(cursors, segment)):
                    continue
                work.append((tree, feature_id, segment))
        work.sort(key=lambda item: (item[0], item[1]))
        return work

    def _write_group(self, tree: int, feature_id: int, segment: TreeSegment,
                     partial_updates: Dict[int, Dict[int, List[LevelCursor]]]) -> list:
        cursors = self.partial.get(tree, {}).get(feature_id) or [LevelCursor() for _ in LEVELS]
        merged_flags = 0
        counts, lasts, updated = [], [], []
        for bit, (level, words, cursor) in enumerate(zip(LEVELS, segment, cursors)):
            words = list(words)
            if cursor.count:
                if cursor.count > len(words) or words[cursor.count - 1] & cursor.value != cursor.value:
                    raise PersistenceError(f"{level} mask of feature {feature_id} in tree {tree} "
                                           "lost bits since the last flush")
                if words[cursor.count - 1] != cursor.value:
                    self.append_merge(level, cursor.position, cursor.value, words[cursor.count - 1])
                    merged_flags |= 1 << bit
            fresh = words[cursor.count:]
            self._append_words(level, fresh)
            position = self.lengths[level] + len(fresh) - 1 if fresh else cursor.position
            self.lengths[level] += len(fresh)
            counts.append(len(fresh))
            lasts.append(words[-1])
            updated.append(LevelCursor(len(words), position, words[-1]))
        partial_updates.setdefault(tree, {})[feature_id] = updated
        return [tree, feature_id, *counts, merged_flags, lasts]

    def _append_payloads(self, payloads: Sequence[str]) -> None:
        if not payloads:
            return
        data = "".join(p + "\n" for p in payloads).encode("utf-8")
        with open(self.path(RECORDS_FILE), "ab") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        self.records_bytes += len(data)

    # ------------------------- recovery -------------------------
    def load(self) -> LoadedState:
        """Rebuild the committed state and cut every file back to it.

        FIT and EBF are not stored; they are rebuilt by replaying every commit
        record, so a load reads the whole manifest and every committed mask word
        once. Cost grows with the number of persistence events and the index
        size, not with the number of records.
        """
        with open(self.path(MANIFEST_FILE), "rb") as f:
            data = f.read()
        commits, valid = read_commits(data)
        if valid < len(data):
            logger.warning("⚠ Discarding %d bytes of torn manifest tail", len(data) - valid)
            self._truncate(MANIFEST_FILE, valid)
        state = LoadedState()
        if not commits:
            self._truncate_all({level: 0 for level in LEVELS}, 0)
            return state

        last = commits[-1]
        lengths = last["lengths"]
        self._truncate_all({level: lengths[level] for level in LEVELS}, lengths["records"])
        files = {level: np.fromfile(self.path(LEVEL_FILES[level]), dtype=WORD_DTYPE) for level in LEVELS}
        offsets = {level: 0 for level in LEVELS}
        words: Dict[Tuple[int, int], List[List[int]]] = {}
        cursors: Dict[Tuple[int, int], List[LevelCursor]] = {}

        for commit in commits:
            for data_spec in commit["features"]:
                state.specs.append(FeatureSpec.from_json(data_spec))
            for tree, feature_id, n_root, n_middle, n_leaf, _merged, lasts in commit["groups"]:
                key = (tree, feature_id)
                levels = words.setdefault(key, [[], [], []])
                previous = cursors.get(key) or [LevelCursor() for _ in LEVELS]
                updated = []
                for i, (level, count) in enumerate(zip(LEVELS, (n_root, n_middle, n_leaf))):
                    start = offsets[level]
                    if start + count > len(files[level]):
                        raise IntegrityError(f"{level} file ends before committed word {start + count}")
                    if levels[i] and previous[i].position >= 0:
                        # the word stopped being last here, so the file holds its final value
                        levels[i][-1] = int(files[level][previous[i].position])
                    levels[i].extend(int(w) for w in files[level][start:start + count])
                    offsets[level] = start + count
                    if not levels[i]:
                        raise IntegrityError(f"feature {feature_id} has no {level} words in tree {tree}")
                    # a later flush may have OR-merged into this word; keep the committed value
                    levels[i][-1] = int(lasts[i])
                    position = start + count - 1 if count else previous[i].position
                    updated.append(LevelCursor(len(levels[i]), position, int(lasts[i])))
                cursors[key] = updated

        state.seq = int(last["seq"])
        state.last_kind = last["kind"]
        state.record_count = int(last["record_count"])
        state.completed_trees = int(last["completed_trees"])
        if state.record_count >= (state.completed_trees + 1) * self.config.tree_capacity \
                or state.record_count < state.completed_trees * self.config.tree_capacity:
            raise IntegrityError(f"record count {state.record_count} does not fit "
                                 f"{state.completed_trees} completed trees")
        for (tree, feature_id), levels in words.items():
            if tree > state.completed_trees:
                raise IntegrityError(f"words committed for tree {tree} beyond the growing tree")
            segment = (levels[0], levels[1], levels[2])
            try:
                check_segment(segment)
            except ParameterError as e:
                raise IntegrityError(f"tree {tree}, feature {feature_id}: {e}") from e
            state.trees.setdefault(tree, {})[feature_id] = segment
        state.payloads = self._read_payloads()
        if len(state.payloads) != state.record_count:
            raise IntegrityError(f"ledger file holds {len(state.payloads)} records, "
                                 f"manifest commits {state.record_count}")

        self.seq = state.seq
        self.last_kind = state.last_kind
        self.record_count = state.record_count
        self.durable_features = len(state.specs)
        self.durable_trees = state.completed_trees
        self.lengths = {level: lengths[level] for level in LEVELS}
        self.records_bytes = lengths["records"]
        self.durable_ebf = {}
        self.partial = {}
        for (tree, feature_id), levels in cursors.items():
            if tree < state.completed_trees:
                self.durable_ebf[feature_id] = self.durable_ebf.get(feature_id, 0) | (1 << tree)
            else:
                self.partial.setdefault(tree, {})[feature_id] = levels
        self._repair_partial_words(files)
        logger.info("✓ Loaded %s: %d records, %d trees, %d features (commit #%d)",
                    self.data_dir, state.record_count, state.completed_trees,
                    len(state.specs), state.seq)
        return state

    def _repair_partial_words(self, files: Dict[str, np.ndarray]) -> None:
        """Write back committed last words that an uncommitted merge overwrote."""
        for cursors in self.partial.values():
            for per_level in cursors.values():
                for level, cursor in zip(LEVELS, per_level):
                    if cursor.position >= 0 and int(files[level][cursor.position]) != cursor.value:
                        logger.warning("⚠ Restoring %s word %d to its committed value", level, cursor.position)
                        with open(self.path(LEVEL_FILES[level]), "r+b") as f:
                            f.seek(cursor.position * _WORD.size)
                            f.write(_WORD.pack(cursor.value))

    def _truncate_all(self, levels: Dict[str, int], records_bytes: int) -> None:
        for level, count in levels.items():
            self._truncate(LEVEL_FILES[level], count * _WORD.size)
        self._truncate(RECORDS_FILE, records_bytes)

    def _truncate(self, name: str, size: int) -> None:
        path = self.path(name)
        actual = os.path.getsize(path) if os.path.exists(path) else 0
        if actual < size:
            raise IntegrityError(f"{name} holds {actual} bytes, {size} are committed")
        if actual > size:
            logger.warning("⚠ Cutting uncommitted tail of %s (%d bytes)", name, actual - size)
            with open(path, "r+b") as f:
                f.truncate(size)

    def _read_payloads(self) -> List[str]:
        with open(self.path(RECORDS_FILE), "r", encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f if line.strip()]


def restore_forest(state: LoadedState, config: ForestConfig) -> CompressedForest:
    """Build a compressed forest from a loaded state."""
    forest = CompressedForest(config)
    for spec in state.specs:
        forest.register(spec.feature_id)
    try:
        for tree in range(state.completed_trees):
            forest.install_tree(state.trees.get(tree, {}))
        forest.restore_tail(state.trees.get(state.completed_trees, {}), state.record_count)
    except (ParameterError, StateError) as e:
        raise IntegrityError(f"committed masks are inconsistent: {e}") from e
    for feature_id in forest.known_features:
        if feature_id >= len(state.specs):
            raise IntegrityError(f"masks stored for unregistered feature {feature_id}")
    return forest

