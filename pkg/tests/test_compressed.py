from collections import Counter

import numpy as np
import pytest

from bitforest.bitmask import find_all_bit_on
from bitforest.compressed import (CompressedForest, check_segment, ebf_rank, iter_bits,
                                  tree_size_bound_bits)
from bitforest.config import ForestConfig
from bitforest.dataset import generate_dataset, scan
from bitforest.errors import FeatureLookupError, ParameterError, RegistrationError, StateError
from bitforest.features import FeatureSpec, RangeCondition
from bitforest.forest import BmfForest, QueryStats
from conftest import oracle, random_feature_sets

CAP = 32 * 32 * 32


def _build(config, feature_sets, features=4):
    forest = CompressedForest(config)
    for f in range(features):
        forest.register(f)
    for ids in feature_sets:
        forest.insert(ids)
    return forest


def _example_forest():
    """Feature 0 in 30 trees before tree 99 (two middles, four leaves each),
    then in trees 99 and 100 with roots 0x00100000 and 0x81000000."""
    forest = CompressedForest(ForestConfig())
    forest.register(0)
    earlier = ([0xC0000000], [0xC0000000, 0xC0000000], [0x80000000] * 4)
    for tree in range(101):
        if tree < 30:
            forest.install_tree({0: earlier})
        elif tree == 99:
            forest.install_tree({0: ([0x00100000], [0x80000000], [0x80000000])})
        elif tree == 100:
            forest.install_tree({0: ([0x81000000], [0x40000000, 0x00000001],
                                     [0x00000001, 0x80000000])})
        else:
            forest.install_tree({})
    return forest


class TestBitVectors:

    def test_iter_bits(self):
        assert list(iter_bits(0b101101)) == [0, 2, 3, 5]
        assert list(iter_bits(0b101101, 1, 5)) == [2, 3]

    def test_ebf_rank(self):
        assert ebf_rank(0b1011, 3) == 2
        assert ebf_rank(0, 10) == 0


class TestQuery:

    def test_equals_uncompressed(self, small_config, rng):
        sets = random_feature_sets(rng, 500)
        forest = _build(small_config, sets)
        plain = BmfForest(small_config)
        for ids in sets:
            plain.insert(ids)
        assert forest.completed_trees == 500 // 64
        for query in ([0], [1, 2], [0, 2, 3]):
            assert forest.query(query) == oracle(sets, query) == plain.search(query)

    def test_cursor(self, small_config, rng):
        sets = random_feature_sets(rng, 400)
        forest = _build(small_config, sets)
        for cursor in (0, 63, 64, 130, 399, 400):
            assert forest.query([1], cursor=cursor) == oracle(sets, [1], start=cursor)

    def test_exclude(self, small_config, rng):
        sets = random_feature_sets(rng, 300)
        forest = _build(small_config, sets)
        assert forest.query([0], exclude=[2, 3]) == oracle(sets, [0], exclude=[2, 3])

    def test_contains(self, small_config, rng):
        sets = random_feature_sets(rng, 300)
        forest = _build(small_config, sets)
        for i, ids in enumerate(sets):
            for f in range(4):
                assert forest.contains(f, i) == (f in ids)

    def test_unknown_feature(self, small_config):
        with pytest.raises(FeatureLookupError):
            CompressedForest(small_config).query([3])

    def test_empty_query(self, small_config):
        with pytest.raises(ParameterError):
            CompressedForest(small_config).query([])

    def test_advance_skips_whole_trees(self, small_config):
        forest = CompressedForest(small_config)
        forest.register(0)
        forest.insert([0])
        forest.advance(200)
        forest.insert([0])
        assert forest.query([0]) == [0, 201]
        assert forest.ebf_vector(0) == 0b1001


class TestStoredForm:

    def test_no_zero_words(self, small_config, rng):
        sets = random_feature_sets(rng, 640, p=0.1)
        forest = _build(small_config, sets)
        for f in forest.roots:
            assert 0 not in forest.roots[f]
            assert 0 not in forest.middles[f]
            assert 0 not in forest.leaves[f]
            for tree in iter_bits(forest.ebf[f]):
                check_segment(forest.segment(f, tree))

    def test_segments_match_uncompressed_tree(self, small_config, rng):
        sets = random_feature_sets(rng, 192)
        forest = _build(small_config, sets)
        plain = BmfForest(small_config)
        for ids in sets:
            plain.insert(ids)
        for tree in range(3):
            expected = {f: tuple(list(level) for level in seg)
                        for f, seg in plain.compressed_words(tree).items()}
            got = {f: tuple(list(level) for level in seg)
                   for f, seg in forest.tree_segments(tree).items()}
            assert got == expected

    def test_fit_points_at_first_words(self, small_config, rng):
        sets = random_feature_sets(rng, 256)
        forest = _build(small_config, sets)
        for f in forest.roots:
            middle, leaf = 0, 0
            for n, tree in enumerate(iter_bits(forest.ebf[f])):
                assert forest.fit_entries(f)[n] == (middle, leaf)
                roots, middles, leaves = forest.segment(f, tree)
                middle += len(middles)
                leaf += len(leaves)

    def test_fully_dense_feature(self):
        forest = CompressedForest(ForestConfig())
        for _ in range(CAP):
            forest.insert([0])
        assert forest.tree_word_counts(0) == {0: 1 + 32 + 1024}
        roots, middles, leaves = forest.segment(0, 0)
        assert roots == [0xFFFFFFFF]
        assert middles == [0xFFFFFFFF] * 32
        assert leaves == [0xFFFFFFFF] * 1024

    def test_leaf_words_per_node_bounded_by_branching(self, small_config, rng):
        # one dimension: every record carries exactly one of 50 values
        values = rng.integers(0, 50, size=3 * small_config.tree_capacity).tolist()
        forest = CompressedForest(small_config)
        for value in values:
            forest.insert([value])
        b = small_config.branching
        counts = Counter()
        for feature_id in set(values):
            for tree in range(forest.completed_trees):
                roots, middles, _ = forest.segment(feature_id, tree)
                if not roots:
                    continue
                for j, middle in zip(find_all_bit_on(roots[0]), middles):
                    for k in find_all_bit_on(middle):
                        counts[(tree, j, k)] += 1
        assert len(counts) == 3 * b * b
        for (tree, j, k), count in counts.items():
            start = tree * small_config.tree_capacity + j * small_config.middle_capacity + k * b
            assert count == len(set(values[start:start + b]))
            assert count <= b

    def test_install_rejects_bad_segment(self):
        forest = CompressedForest(ForestConfig())
        with pytest.raises(ParameterError):
            forest.install_tree({0: ([0xC0000000], [0x80000000], [0x80000000])})

    def test_install_needs_empty_tail(self, small_config):
        forest = CompressedForest(small_config)
        forest.insert([])
        with pytest.raises(StateError):
            forest.install_tree({})

    def test_compress_needs_full_tree(self, small_config):
        forest = CompressedForest(small_config)
        forest.insert([])
        with pytest.raises(StateError):
            forest.compress_completed_tree()

    def test_callback_per_tree(self, small_config):
        forest = CompressedForest(small_config)
        seen = []
        forest.on_tree_complete = lambda tree, segments: seen.append((tree, sorted(segments)))
        forest.register(1)
        for i in range(130):
            forest.insert([1] if i % 50 == 0 else [])
        assert seen == [(0, [1]), (1, [1])]


class TestExampleWalkthrough:

    def test_fit_entry_of_tree_99(self):
        forest = _example_forest()
        assert ebf_rank(forest.ebf[0], 99) == 30
        assert forest.fit_entries(0)[30] == (60, 120)

    def test_middle_slots_and_reads(self):
        forest = _example_forest()
        stats = QueryStats(trace=True)
        results = forest.query([0], cursor=99 * CAP, stats=stats)
        assert stats.middle_slots == {99: [11], 100: [0, 7]}
        assert stats.middle_indices == [60, 61, 62]
        assert stats.trees_visited == 2
        assert results == [
            99 * CAP + 11 * 1024,
            100 * CAP + 1 * 32 + 31,
            100 * CAP + 7 * 1024 + 31 * 32,
        ]

    def test_global_index_formula(self):
        i, j, k, l = 3, 5, 2, 7
        assert (i << 15) + (j << 10) + (k << 5) + l == 103495
        forest = CompressedForest(ForestConfig())
        forest.register(0)
        forest.advance(103495)
        forest.insert([0])
        assert forest.query([0]) == [103495]


class TestCreateFeatures:

    def test_spans_completed_trees_and_tail(self, small_config):
        records = generate_dataset(200, cardinalities={"value": 8}, seed=5)
        forest = CompressedForest(small_config)
        forest.advance(len(records))
        spec = FeatureSpec(0, "mid value", "value", RangeCondition(20_000, 60_000))
        forest.create_features([spec], records, force=True)
        expected = scan(records, [spec.matches])
        assert forest.query([0]) == expected
        # later inserts keep extending the same feature
        forest.insert([0])
        assert forest.query([0]) == expected + [200]

    def test_threshold_and_duplicates(self, small_config):
        forest = CompressedForest(small_config)
        spec = FeatureSpec(0, "big", "value", RangeCondition(minimum=1))
        with pytest.raises(ParameterError):
            forest.create_features([spec], [])
        with pytest.raises(RegistrationError):
            forest.create_features([spec, spec], [], force=True)

    def test_ledger_length(self, small_config):
        forest = CompressedForest(small_config)
        spec = FeatureSpec(0, "big", "value", RangeCondition(minimum=1))
        with pytest.raises(StateError):
            forest.create_features([spec], generate_dataset(3), force=True)


class TestSizes:

    def test_ebf_length_for_seven_million(self):
        forest = CompressedForest(ForestConfig())
        forest.advance(7_000_000)
        assert forest.ebf_length() == 214

    def test_tree_bound_and_reduction(self):
        rng = np.random.default_rng(11)
        config = ForestConfig()
        forest = CompressedForest(config)
        # one dimension: every record carries exactly one of 10,000 values
        for value in rng.integers(0, 10_000, size=CAP):
            forest.insert([int(value)])
        report = forest.measured_size()
        assert forest.completed_trees == 1
        assert report.tree_bits[0] <= tree_size_bound_bits(config, 1)
        assert report.general_bytes <= 0.05 * report.uncompressed_bytes
        assert 1 - report.general_bytes / report.uncompressed_bytes > 0.99
        assert report.bits_per_entry == report.general_bytes * 8 / CAP

    def test_size_plateaus_past_tree_capacity(self):
        config = ForestConfig(branching=4)
        sizes = []
        for cardinality in (4096, 16384, 65536):
            rng = np.random.default_rng(cardinality)
            forest = CompressedForest(config)
            for value in rng.integers(0, cardinality, size=64 * config.tree_capacity):
                forest.insert([int(value)])
            sizes.append(forest.measured_size().general_bytes)
        assert max(sizes) / min(sizes) < 1.05

    def test_custom_features_reported_separately(self, small_config):
        records = generate_dataset(64, seed=1)
        forest = CompressedForest(small_config)
        forest.register(0)
        for r in records:
            forest.insert([0])
        spec = FeatureSpec(1, "any", "gasUsed", RangeCondition(minimum=0))
        forest.create_features([spec], records, force=True)
        report = forest.measured_size(custom_ids=[1])
        assert report.define_bytes == report.general_bytes > 0
