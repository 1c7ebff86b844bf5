# bitforest/compressed.py
"""Compressed bitmap forest.

Completed trees are stored with every zero mask removed. Per feature, the
nonzero words of all completed trees sit back to back in three lists (root,
middle, leaf) ordered by tree. Two side tables make them addressable again:

* the empty-tree filter (EBF): bit ``t`` of ``ebf[f]`` is set iff tree ``t``
  contains feature ``f``; the rank of bit ``t`` is the feature's entry number
  for that tree and the index of its root word;
* the first-node index table (FIT): for entry ``n`` the index of the
  feature's first middle word and first leaf word of that tree.

Inside a tree a word is reached by rank: the middle word under root slot
``j`` is ``middle_start + rank(root, j)``, and the leaf word under middle
slot ``k`` adds the popcounts of the earlier middle words of the tree to
``leaf_start``. The growing tree stays uncompressed in a :class:`BmfForest`
tail until it fills up.
"""
import logging
from array import array
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set

from .bitmask import conjoin, find_all_bit_on, has_slot, popcount, rank
from .config import ForestConfig
from .errors import FeatureLookupError, ParameterError, RegistrationError, StateError
from .features import FeatureSpec, check_dimension
from .forest import (BmfForest, QueryStats, TreeSegment, aggregate, build_leaf_buffer,
                     compress_tree, new_mask_list)
from .records import TransactionRecord

logger = logging.getLogger(__name__)

WORD_BYTES = 4


def _index_list() -> array:
    return array("Q")


def ebf_rank(vector: int, tree: int) -> int:
    """Number of set bits of ``vector`` below bit ``tree``."""
    return (vector & ((1 << tree) - 1)).bit_count()


def iter_bits(vector: int, start: int = 0, stop: Optional[int] = None):
    """Ascending positions of the set bits of an integer bit-vector."""
    vector &= ~((1 << start) - 1)
    while vector:
        low = vector & -vector
        position = low.bit_length() - 1
        if stop is not None and position >= stop:
            return
        yield position
        vector ^= low


def check_segment(segment: TreeSegment) -> None:
    """Structural checks on one compressed tree segment."""
    roots, middles, leaves = segment
    if len(roots) != 1 or roots[0] == 0:
        raise ParameterError("a tree segment needs exactly one nonzero root word")
    if any(w == 0 for w in middles) or any(w == 0 for w in leaves):
        raise ParameterError("compressed segments must not contain zero words")
    if popcount(roots[0]) != len(middles):
        raise ParameterError(f"root has {popcount(roots[0])} slots but {len(middles)} middle words")
    if sum(popcount(w) for w in middles) != len(leaves):
        raise ParameterError("middle popcounts do not match the leaf word count")


@dataclass
class SizeReport:
    root_bytes: int = 0
    middle_bytes: int = 0
    leaf_bytes: int = 0
    define_bytes: int = 0
    tail_bytes: int = 0
    fit_bytes: int = 0
    ebf_bits: int = 0
    record_count: int = 0
    tree_count: int = 0
    uncompressed_bytes: int = 0
    tree_bits: List[int] = field(default_factory=list)

    @property
    def general_bytes(self) -> int:
        return self.root_bytes + self.middle_bytes + self.leaf_bytes

    @property
    def total_bytes(self) -> int:
        return self.general_bytes + self.define_bytes

    @property
    def bits_per_entry(self) -> float:
        return self.general_bytes * 8 / self.record_count if self.record_count else 0.0


def tree_size_bound_bits(config: ForestConfig, dim_size: int) -> int:
    """Upper bound on the stored bits of one completed tree: 3 * B^4 * DimSize."""
    return 3 * config.branching ** 4 * dim_size


def entry_size_bound_bits(config: ForestConfig, dim_size: int) -> int:
    return 3 * config.branching * dim_size


class CompressedForest:
    def __init__(self, config: Optional[ForestConfig] = None):
        self.config = config or ForestConfig()
        self.known_features: Set[int] = set()
        self.roots: Dict[int, array] = {}
        self.middles: Dict[int, array] = {}
        self.leaves: Dict[int, array] = {}
        self.fit_middle: Dict[int, array] = {}
        self.fit_leaf: Dict[int, array] = {}
        self.ebf: Dict[int, int] = {}
        self.completed_trees = 0
        self.tail = BmfForest(self.config, origin=0, known_features=self.known_features)
        # called with (tree_id, segments) after each tree is compressed
        self.on_tree_complete: Optional[Callable[[int, Dict[int, TreeSegment]], None]] = None

    # ------------------------- state -------------------------
    @property
    def record_count(self) -> int:
        return self.tail.record_count

    @property
    def tree_count(self) -> int:
        """Completed trees plus the growing one, if it holds any record."""
        return self.completed_trees + (1 if self.tail.local_count else 0)

    def ebf_vector(self, feature_id: int) -> int:
        vector = self.ebf.get(feature_id, 0)
        if self.tail.local_count and self.tail.mask_at("root", feature_id, 0):
            vector |= 1 << self.completed_trees
        return vector

    def ebf_length(self) -> int:
        return self.tree_count

    def fit_entries(self, feature_id: int) -> List[tuple]:
        return list(zip(self.fit_middle.get(feature_id, ()), self.fit_leaf.get(feature_id, ())))

    def register(self, feature_id: int) -> None:
        self.known_features.add(feature_id)

    def _check_known(self, feature_ids: Iterable[int]) -> None:
        for feature_id in feature_ids:
            if feature_id not in self.known_features:
                raise FeatureLookupError(f"feature {feature_id} is not registered")

    # ------------------------- growth -------------------------
    def insert(self, feature_ids: Iterable[int]) -> int:
        index = self.tail.insert(feature_ids)
        if self.tail.local_count == self.config.tree_capacity:
            self.compress_completed_tree(self.completed_trees)
        return index

    def advance(self, count: int) -> None:
        """Append ``count`` records that match no feature."""
        cap = self.config.tree_capacity
        while count > 0:
            step = min(count, cap - self.tail.local_count)
            self.tail.advance(step)
            count -= step
            if self.tail.local_count == cap:
                self.compress_completed_tree(self.completed_trees)

    def compress_completed_tree(self, tree_id: Optional[int] = None) -> Dict[int, TreeSegment]:
        if tree_id is None:
            tree_id = self.completed_trees
        if tree_id != self.completed_trees:
            raise StateError(f"tree {tree_id} is not the growing tree ({self.completed_trees})")
        if self.tail.local_count != self.config.tree_capacity:
            raise StateError(f"tree {tree_id} holds {self.tail.local_count} of "
                             f"{self.config.tree_capacity} records")
        segments = self.tail.compressed_words(0)
        self.install_tree(segments)
        logger.debug("Compressed tree %d (%d features present)", tree_id, len(segments))
        if self.on_tree_complete is not None:
            self.on_tree_complete(tree_id, segments)
        return segments

    def install_tree(self, segments: Dict[int, TreeSegment]) -> int:
        """Append one completed tree given its compressed segments; returns its id."""
        tree_id = self.completed_trees
        if self.tail.local_count not in (0, self.config.tree_capacity):
            raise StateError("cannot install a tree while the growing tree holds records")
        for segment in segments.values():
            check_segment(segment)
        for feature_id, segment in sorted(segments.items()):
            self._append_segment(feature_id, tree_id, segment)
        self.completed_trees += 1
        self.tail = BmfForest(self.config, origin=self.completed_trees * self.config.tree_capacity,
                              known_features=self.known_features)
        return tree_id

    def _append_segment(self, feature_id: int, tree_id: int, segment: TreeSegment) -> None:
        roots, middles, leaves = segment
        if feature_id not in self.roots:
            self.roots[feature_id] = new_mask_list()
            self.middles[feature_id] = new_mask_list()
            self.leaves[feature_id] = new_mask_list()
            self.fit_middle[feature_id] = _index_list()
            self.fit_leaf[feature_id] = _index_list()
        self.known_features.add(feature_id)
        self.fit_middle[feature_id].append(len(self.middles[feature_id]))
        self.fit_leaf[feature_id].append(len(self.leaves[feature_id]))
        self.roots[feature_id].extend(roots)
        self.middles[feature_id].extend(middles)
        self.leaves[feature_id].extend(leaves)
        self.ebf[feature_id] = self.ebf.get(feature_id, 0) | (1 << tree_id)

    def restore_tail(self, segments: Dict[int, TreeSegment], record_count: int) -> None:
        """Rebuild the growing tree from its compressed words (used on reload)."""
        origin = self.completed_trees * self.config.tree_capacity
        if not origin <= record_count < origin + self.config.tree_capacity:
            raise StateError(f"record count {record_count} is outside the growing tree")
        branching = self.config.branching
        tail = BmfForest(self.config, origin=origin, known_features=self.known_features)
        for feature_id, segment in segments.items():
            check_segment(segment)
            (root,), middles, leaves = segment
            tail.register(feature_id)
            middle_iter, leaf_iter = iter(middles), iter(leaves)
            for j in find_all_bit_on(root):
                middle = next(middle_iter)
                for k in find_all_bit_on(middle):
                    leaf = next(leaf_iter)
                    leaf_index = j * branching + k
                    for slot in find_all_bit_on(leaf):
                        tail.mark(feature_id, origin + leaf_index * branching + slot)
        tail.record_count = record_count
        self.tail = tail

    # ------------------------- feature creation -------------------------
    def create_features(self, specs: Sequence[FeatureSpec], records: Sequence[TransactionRecord],
                        force: bool = False) -> None:
        """Build new features over the whole ledger, completed trees included."""
        if not force and len(specs) < self.config.create_batch_threshold:
            raise ParameterError(
                f"batch of {len(specs)} features is below the creation threshold "
                f"{self.config.create_batch_threshold}")
        if len(records) != self.record_count:
            raise StateError(f"ledger has {len(records)} records, forest has {self.record_count}")
        seen = set()
        for spec in specs:
            check_dimension(spec.dimension, spec.matcher)
            if spec.feature_id in seen or spec.feature_id in self.roots \
                    or spec.feature_id in self.tail.root_masks:
                raise RegistrationError(f"feature {spec.feature_id} ({spec.name}) already has masks")
            seen.add(spec.feature_id)
        branching = self.config.branching
        per_middle = branching
        per_tree_leaves = branching * branching
        for spec in specs:
            feature_id = spec.feature_id
            leaves = build_leaf_buffer((spec.matches(r) for r in records), branching)
            middles = aggregate(leaves, branching)
            roots = aggregate(middles, branching)
            self.known_features.add(feature_id)
            for tree in range(self.completed_trees):
                root = roots[tree] if tree < len(roots) else 0
                if root == 0:
                    continue
                segment = compress_tree(
                    root,
                    lambda j: middles[tree * per_middle + j],
                    lambda i: leaves[tree * per_tree_leaves + i],
                    branching,
                )
                self._insert_segment_in_order(feature_id, tree, segment)
            tail_tree = self.completed_trees
            if tail_tree < len(roots) and roots[tail_tree]:
                self.tail.root_masks[feature_id] = new_mask_list(roots[tail_tree:tail_tree + 1])
                self.tail.middle_masks[feature_id] = new_mask_list(middles[tail_tree * per_middle:])
                self.tail.leaf_masks[feature_id] = new_mask_list(leaves[tail_tree * per_tree_leaves:])
        logger.info("✓ Created %d features over %d records (%d completed trees)",
                    len(specs), len(records), self.completed_trees)

    def _insert_segment_in_order(self, feature_id: int, tree: int, segment: TreeSegment) -> None:
        # a brand-new feature receives its trees in ascending order, so this is an append
        if self.ebf.get(feature_id, 0) >> tree:
            raise StateError(f"feature {feature_id} already has entries at or after tree {tree}")
        self._append_segment(feature_id, tree, segment)

    # ------------------------- query -------------------------
    def query(self, feature_ids: Sequence[int], cursor: int = 0, exclude: Sequence[int] = (),
              stats: Optional[QueryStats] = None) -> List[int]:
        """Indices ``>= cursor`` of records matching every feature, ascending."""
        if not feature_ids:
            raise ParameterError("a query needs at least one feature")
        feature_ids = list(feature_ids)
        self._check_known(feature_ids + list(exclude))
        cursor = max(0, cursor)
        results = []
        cap = self.config.tree_capacity
        first_tree = cursor // cap
        if first_tree < self.completed_trees:
            candidates = conjoin(self.ebf.get(f, 0) for f in feature_ids)
            for tree in iter_bits(candidates, first_tree, self.completed_trees):
                self._query_tree(feature_ids, tree, cursor, results, stats)
        results.extend(self.tail.search(feature_ids, start=cursor, stats=stats))
        if exclude:
            results = [i for i in results if not any(self.contains(f, i) for f in exclude)]
        return results

    def _query_tree(self, feature_ids: List[int], tree: int, cursor: int,
                    results: List[int], stats: Optional[QueryStats]) -> None:
        branching = self.config.branching
        mid_cap = self.config.middle_capacity
        tree_base = tree * self.config.tree_capacity
        entries = [ebf_rank(self.ebf[f], tree) for f in feature_ids]
        roots = [self.roots[f][n] for f, n in zip(feature_ids, entries)]
        middle_starts = [self.fit_middle[f][n] for f, n in zip(feature_ids, entries)]
        leaf_starts = [self.fit_leaf[f][n] for f, n in zip(feature_ids, entries)]
        if stats is not None:
            stats.trees_visited += 1
            stats.root_reads += len(feature_ids)
        # popcount prefixes of each feature's middle words in this tree, built on demand
        prefixes: List[Optional[List[int]]] = [None] * len(feature_ids)
        root = conjoin(roots)
        slots = find_all_bit_on(root)
        if stats is not None and stats.trace:
            stats.middle_slots[tree] = slots
        for j in slots:
            middle_base = tree_base + j * mid_cap
            if middle_base + mid_cap <= cursor:
                continue
            middle_ranks = [rank(r, j) for r in roots]
            middle_words = []
            for i, f in enumerate(feature_ids):
                position = middle_starts[i] + middle_ranks[i]
                middle_words.append(self.middles[f][position])
                if stats is not None and stats.trace:
                    stats.middle_indices.append(position)
            if stats is not None:
                stats.middle_reads += len(feature_ids)
            middle = conjoin(middle_words)
            for k in find_all_bit_on(middle):
                leaf_base = middle_base + k * branching
                if leaf_base + branching <= cursor:
                    continue
                leaf_words = []
                for i, f in enumerate(feature_ids):
                    if prefixes[i] is None:
                        prefixes[i] = self._middle_prefix(f, middle_starts[i], popcount(roots[i]), stats)
                    position = leaf_starts[i] + prefixes[i][middle_ranks[i]] + rank(middle_words[i], k)
                    leaf_words.append(self.leaves[f][position])
                if stats is not None:
                    stats.leaf_reads += len(feature_ids)
                for slot in find_all_bit_on(conjoin(leaf_words)):
                    index = leaf_base + slot
                    if index >= cursor:
                        results.append(index)

    def _middle_prefix(self, feature_id: int, start: int, count: int,
                       stats: Optional[QueryStats]) -> List[int]:
        words = self.middles[feature_id]
        prefix = [0]
        for position in range(start, start + count):
            prefix.append(prefix[-1] + popcount(words[position]))
        if stats is not None:
            stats.middle_reads += count
        return prefix

    def contains(self, feature_id: int, index: int) -> bool:
        if index < 0 or index >= self.record_count:
            return False
        cap = self.config.tree_capacity
        tree, offset = divmod(index, cap)
        if tree >= self.completed_trees:
            return self.tail.contains(feature_id, index)
        vector = self.ebf.get(feature_id, 0)
        if not vector >> tree & 1:
            return False
        branching = self.config.branching
        j, rest = divmod(offset, self.config.middle_capacity)
        k, slot = divmod(rest, branching)
        n = ebf_rank(vector, tree)
        root = self.roots[feature_id][n]
        if not has_slot(root, j):
            return False
        middle_start = self.fit_middle[feature_id][n]
        middle_rank = rank(root, j)
        middle = self.middles[feature_id][middle_start + middle_rank]
        if not has_slot(middle, k):
            return False
        earlier = sum(popcount(self.middles[feature_id][p])
                      for p in range(middle_start, middle_start + middle_rank))
        leaf = self.leaves[feature_id][self.fit_leaf[feature_id][n] + earlier + rank(middle, k)]
        return has_slot(leaf, slot)

    def segment(self, feature_id: int, tree: int) -> TreeSegment:
        """Stored words of one feature in one completed tree (empty lists if absent)."""
        vector = self.ebf.get(feature_id, 0)
        if tree >= self.completed_trees or not vector >> tree & 1:
            return [], [], []
        n = ebf_rank(vector, tree)
        last = n + 1 == popcount(vector)
        middle_start, leaf_start = self.fit_middle[feature_id][n], self.fit_leaf[feature_id][n]
        middle_end = len(self.middles[feature_id]) if last else self.fit_middle[feature_id][n + 1]
        leaf_end = len(self.leaves[feature_id]) if last else self.fit_leaf[feature_id][n + 1]
        return ([self.roots[feature_id][n]],
                self.middles[feature_id][middle_start:middle_end].tolist(),
                self.leaves[feature_id][leaf_start:leaf_end].tolist())

    def tree_segments(self, tree: int) -> Dict[int, TreeSegment]:
        return {f: self.segment(f, tree) for f in sorted(self.ebf) if self.ebf[f] >> tree & 1}

    # ------------------------- sizes -------------------------
    def tree_word_counts(self, feature_id: int) -> Dict[int, int]:
        """Stored words per completed tree for one feature."""
        counts = {}
        vector = self.ebf.get(feature_id, 0)
        middle_starts = self.fit_middle.get(feature_id, ())
        leaf_starts = self.fit_leaf.get(feature_id, ())
        trees = list(iter_bits(vector))
        for n, tree in enumerate(trees):
            middle_end = middle_starts[n + 1] if n + 1 < len(trees) else len(self.middles[feature_id])
            leaf_end = leaf_starts[n + 1] if n + 1 < len(trees) else len(self.leaves[feature_id])
            counts[tree] = 1 + middle_end - middle_starts[n] + leaf_end - leaf_starts[n]
        return counts

    def measured_size(self, custom_ids: Iterable[int] = ()) -> SizeReport:
        """Stored mask bytes per level; custom-condition features are reported
        as ``define_bytes`` and excluded from the per-level and per-tree figures.
        """
        custom = set(custom_ids)
        report = SizeReport(record_count=self.record_count, tree_count=self.tree_count,
                            ebf_bits=self.tree_count)
        tree_words = [0] * self.completed_trees
        for feature_id in self.roots:
            words = (len(self.roots[feature_id]), len(self.middles[feature_id]),
                     len(self.leaves[feature_id]))
            report.fit_bytes += 2 * 8 * len(self.fit_middle[feature_id])
            if feature_id in custom:
                report.define_bytes += WORD_BYTES * sum(words)
                continue
            report.root_bytes += WORD_BYTES * words[0]
            report.middle_bytes += WORD_BYTES * words[1]
            report.leaf_bytes += WORD_BYTES * words[2]
            for tree, count in self.tree_word_counts(feature_id).items():
                tree_words[tree] += count
        for feature_id, segment in self.tail.compressed_words(0).items():
            size = WORD_BYTES * sum(len(level) for level in segment)
            report.tail_bytes += size
            if feature_id in custom:
                report.define_bytes += size
            else:
                report.root_bytes += WORD_BYTES * len(segment[0])
                report.middle_bytes += WORD_BYTES * len(segment[1])
                report.leaf_bytes += WORD_BYTES * len(segment[2])
        report.tree_bits = [w * WORD_BYTES * 8 for w in tree_words]
        report.uncompressed_bytes = self._dense_bytes()
        return report

    def _dense_bytes(self) -> int:
        n = self.record_count
        b = self.config.branching
        nodes = -(-n // b) + -(-n // (b * b)) + -(-n // self.config.tree_capacity)
        return len(self.known_features) * nodes * WORD_BYTES
