# bitforest/forest.py
"""Uncompressed bitmap forest.

Every feature owns three mask lists (root, middle, leaf). Leaf mask ``i``
covers records ``[i*B, (i+1)*B)`` counted from the forest origin; middle mask
``j`` summarises leaf masks ``[j*B, (j+1)*B)``; root mask ``t`` summarises the
middle masks of tree ``t``. Lists are padded with zero words lazily, so a word
that was never written reads as 0.
"""
import logging
from array import array
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .bitmask import MASK_BITS, conjoin, find_all_bit_on, has_slot
from .config import ForestConfig
from .errors import FeatureLookupError, ParameterError, RegistrationError, StateError
from .features import FeatureSpec, check_dimension
from .records import TransactionRecord

logger = logging.getLogger(__name__)

ROOT, MIDDLE, LEAF = "root", "middle", "leaf"
LEVELS = (ROOT, MIDDLE, LEAF)

# (root words, middle words, leaf words) of one tree, zero words removed
TreeSegment = Tuple[List[int], List[int], List[int]]


def new_mask_list(words: Iterable[int] = ()) -> array:
    return array("I", words)


def build_leaf_buffer(matches: Iterable[bool], branching: int = 32) -> array:
    """Encode a match/non-match stream into leaf masks, first record at slot 0.

    A trailing partial mask is emitted for leftover records.
    """
    buffer = new_mask_list()
    top = MASK_BITS - 1
    stop = top - branching
    k, mask = top, 0
    for matched in matches:
        if matched:
            mask |= 1 << k
        k -= 1
        if k == stop:
            buffer.append(mask)
            k, mask = top, 0
    if k != top:
        buffer.append(mask)
    return buffer


def aggregate(children: Sequence[int], branching: int = 32) -> array:
    """Build the next level up: parent slot s is set iff child s is nonzero."""
    parents = new_mask_list()
    for start in range(0, len(children), branching):
        mask = 0
        for slot, child in enumerate(children[start:start + branching]):
            if child:
                mask |= 1 << (MASK_BITS - 1 - slot)
        parents.append(mask)
    return parents


def compress_tree(root: int, middle_at: Callable[[int], int], leaf_at: Callable[[int], int],
                  branching: int = 32) -> TreeSegment:
    """Drop the zero words of one tree.

    ``middle_at(j)`` returns the middle mask under root slot ``j`` and
    ``leaf_at(j * branching + k)`` the leaf mask under middle slot ``k``.
    """
    middles, leaves = [], []
    for j in find_all_bit_on(root):
        middle = middle_at(j)
        middles.append(middle)
        for k in find_all_bit_on(middle):
            leaves.append(leaf_at(j * branching + k))
    return [root], middles, leaves


@dataclass
class QueryStats:
    """Mask words read by one query, per level."""
    root_reads: int = 0
    middle_reads: int = 0
    leaf_reads: int = 0
    trees_visited: int = 0
    trace: bool = False
    middle_slots: Dict[int, List[int]] = field(default_factory=dict)
    middle_indices: List[int] = field(default_factory=list)

    @property
    def words_read(self) -> int:
        return self.root_reads + self.middle_reads + self.leaf_reads


class BmfForest:
    def __init__(self, config: Optional[ForestConfig] = None, origin: int = 0,
                 known_features: Optional[Set[int]] = None):
        self.config = config or ForestConfig()
        if origin % self.config.tree_capacity:
            raise ParameterError("forest origin must sit on a tree boundary")
        self.origin = origin
        self.record_count = origin
        self.root_masks: Dict[int, array] = {}
        self.middle_masks: Dict[int, array] = {}
        self.leaf_masks: Dict[int, array] = {}
        # may be shared with an enclosing compressed forest
        self.known_features = known_features if known_features is not None else set()

    # ------------------------- growth cursor -------------------------
    @property
    def local_count(self) -> int:
        return self.record_count - self.origin

    @property
    def tree_id(self) -> int:
        return self.local_count // self.config.tree_capacity

    @property
    def middle_slot(self) -> int:
        return self.local_count // self.config.middle_capacity % self.config.branching

    @property
    def leaf_slot(self) -> int:
        return self.local_count // self.config.leaf_capacity % self.config.branching

    @property
    def data_slot(self) -> int:
        return self.local_count % self.config.branching

    @property
    def tree_count(self) -> int:
        cap = self.config.tree_capacity
        return (self.local_count + cap - 1) // cap

    # ------------------------- mask access -------------------------
    def _lists(self, level: str) -> Dict[int, array]:
        return {ROOT: self.root_masks, MIDDLE: self.middle_masks, LEAF: self.leaf_masks}[level]

    def mask_at(self, level: str, feature_id: int, index: int) -> int:
        masks = self._lists(level).get(feature_id)
        if masks is None or index >= len(masks):
            return 0
        return masks[index]

    def masks_of(self, level: str, feature_id: int) -> array:
        return self._lists(level).get(feature_id, new_mask_list())

    def features_present(self) -> List[int]:
        return sorted(f for f, masks in self.root_masks.items() if any(masks))

    def register(self, feature_id: int) -> None:
        self.known_features.add(feature_id)

    def _set(self, level: str, feature_id: int, index: int, slot: int) -> None:
        lists = self._lists(level)
        masks = lists.get(feature_id)
        if masks is None:
            masks = lists[feature_id] = new_mask_list()
        if index >= len(masks):
            masks.extend([0] * (index + 1 - len(masks)))
        masks[index] |= 1 << (MASK_BITS - 1 - slot)

    # ------------------------- insertion -------------------------
    def mark(self, feature_id: int, index: int) -> None:
        """Set the presence bit of record ``index`` for one feature, bottom-up."""
        local = index - self.origin
        if local < 0:
            raise ParameterError(f"record {index} precedes forest origin {self.origin}")
        branching = self.config.branching
        leaf_index, data_slot = divmod(local, branching)
        middle_index, leaf_slot = divmod(leaf_index, branching)
        root_index, middle_slot = divmod(middle_index, branching)
        self._set(LEAF, feature_id, leaf_index, data_slot)
        self._set(MIDDLE, feature_id, middle_index, leaf_slot)
        self._set(ROOT, feature_id, root_index, middle_slot)

    def advance(self, count: int = 1) -> None:
        """Account for ``count`` records that set no further bits."""
        if count < 0:
            raise ParameterError("cannot move the record count backwards")
        self.record_count += count

    def insert(self, feature_ids: Iterable[int]) -> int:
        """Append one record matching ``feature_ids``; returns its global index."""
        index = self.record_count
        for feature_id in feature_ids:
            self.known_features.add(feature_id)
            self.mark(feature_id, index)
        self.record_count += 1
        return index

    def insert_record(self, record: TransactionRecord, specs: Iterable[FeatureSpec]) -> int:
        return self.insert(s.feature_id for s in specs if s.matches(record))

    # ------------------------- batch creation -------------------------
    def create_features(self, specs: Sequence[FeatureSpec], records: Sequence[TransactionRecord],
                        force: bool = False) -> None:
        """Build masks for new features by scanning the whole ledger.

        ``records`` is the full ledger from global index 0; only the records
        at or after the forest origin are scanned.
        """
        if not force and len(specs) < self.config.create_batch_threshold:
            raise ParameterError(
                f"batch of {len(specs)} features is below the creation threshold "
                f"{self.config.create_batch_threshold}")
        if len(records) != self.record_count:
            raise StateError(f"ledger has {len(records)} records, forest has {self.record_count}")
        seen = set()
        for spec in specs:
            check_dimension(spec.dimension, spec.matcher)
            if spec.feature_id in self.root_masks or spec.feature_id in seen:
                raise RegistrationError(f"feature {spec.feature_id} ({spec.name}) already has masks")
            seen.add(spec.feature_id)
        branching = self.config.branching
        window = records[self.origin:]
        for spec in specs:
            leaves = build_leaf_buffer((spec.matches(r) for r in window), branching)
            middles = aggregate(leaves, branching)
            roots = aggregate(middles, branching)
            self.leaf_masks[spec.feature_id] = leaves
            self.middle_masks[spec.feature_id] = middles
            self.root_masks[spec.feature_id] = roots
            self.known_features.add(spec.feature_id)
        logger.info("✓ Created %d features over %d records", len(specs), len(window))

    # ------------------------- search -------------------------
    def search(self, feature_ids: Sequence[int], start: Optional[int] = None,
               stop: Optional[int] = None, exclude: Sequence[int] = (),
               stats: Optional[QueryStats] = None) -> List[int]:
        """Global indices in ``[start, stop)`` matching every feature, ascending."""
        if not feature_ids:
            raise ParameterError("search needs at least one feature")
        for feature_id in list(feature_ids) + list(exclude):
            if feature_id not in self.known_features:
                raise FeatureLookupError(f"feature {feature_id} is not registered")
        start = self.origin if start is None else max(start, self.origin)
        stop = self.record_count if stop is None else min(stop, self.record_count)
        if start >= stop:
            return []
        branching = self.config.branching
        cap = self.config.tree_capacity
        mid_cap = self.config.middle_capacity
        results = []
        first_tree = (start - self.origin) // cap
        last_tree = (stop - 1 - self.origin) // cap
        for tree in range(first_tree, last_tree + 1):
            tree_base = self.origin + tree * cap
            root = conjoin(self.mask_at(ROOT, f, tree) for f in feature_ids)
            if stats is not None:
                stats.trees_visited += 1
                stats.root_reads += len(feature_ids)
            for j in find_all_bit_on(root):
                middle_base = tree_base + j * mid_cap
                if middle_base + mid_cap <= start or middle_base >= stop:
                    continue
                middle_index = tree * branching + j
                middle = conjoin(self.mask_at(MIDDLE, f, middle_index) for f in feature_ids)
                if stats is not None:
                    stats.middle_reads += len(feature_ids)
                for k in find_all_bit_on(middle):
                    leaf_base = middle_base + k * branching
                    if leaf_base + branching <= start or leaf_base >= stop:
                        continue
                    leaf_index = middle_index * branching + k
                    leaf = conjoin(self.mask_at(LEAF, f, leaf_index) for f in feature_ids)
                    if stats is not None:
                        stats.leaf_reads += len(feature_ids)
                    for slot in find_all_bit_on(leaf):
                        index = leaf_base + slot
                        if start <= index < stop:
                            results.append(index)
        if exclude:
            results = [i for i in results if not any(self.contains(f, i) for f in exclude)]
        return results

    def contains(self, feature_id: int, index: int) -> bool:
        """Whether record ``index`` carries the feature."""
        local = index - self.origin
        if local < 0 or index >= self.record_count:
            return False
        leaf_index, slot = divmod(local, self.config.branching)
        return has_slot(self.mask_at(LEAF, feature_id, leaf_index), slot)

    # ------------------------- introspection -------------------------
    def tree_words(self, tree: int) -> Dict[int, tuple]:
        """All mask words of one tree per feature: (root, middles, leaves)."""
        branching = self.config.branching
        words = {}
        for feature_id in sorted(self.root_masks):
            root = self.mask_at(ROOT, feature_id, tree)
            middles = tuple(self.mask_at(MIDDLE, feature_id, tree * branching + j)
                            for j in range(branching))
            leaves = tuple(self.mask_at(LEAF, feature_id, tree * branching * branching + i)
                           for i in range(branching * branching))
            words[feature_id] = (root, middles, leaves)
        return words

    def compressed_words(self, tree: int = 0) -> Dict[int, tuple]:
        """Nonzero words of one tree per feature, in level order.

        Middle words follow root slot order and leaf words follow
        middle-slot-major order; features absent from the tree are omitted.
        """
        branching = self.config.branching
        segments = {}
        for feature_id in sorted(self.root_masks):
            root = self.mask_at(ROOT, feature_id, tree)
            if root == 0:
                continue
            middle_base = tree * branching
            segments[feature_id] = compress_tree(
                root,
                lambda j: self.mask_at(MIDDLE, feature_id, middle_base + j),
                lambda i: self.mask_at(LEAF, feature_id, middle_base * branching + i),
                branching,
            )
        return segments

    def uncompressed_size_bytes(self, feature_count: Optional[int] = None) -> int:
        """Bytes a fully dense forest over the current records would occupy."""
        if feature_count is None:
            feature_count = len(self.known_features)
        n = self.local_count
        b = self.config.branching
        leaves = -(-n // b)
        middles = -(-n // (b * b))
        roots = -(-n // self.config.tree_capacity)
        return feature_count * (leaves + middles + roots) * 4
