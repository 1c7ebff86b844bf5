import numpy as np
import pytest

from bitforest.bitmask import (FULL_MASK, clear_from_slot, conjoin, find_all_bit_on, has_slot,
                               lowest_set_bit, mask_of_slots, popcount, rank, set_slot)
from bitforest.errors import ParameterError


def _naive_slots(mask):
    return [s for s in range(32) if mask >> (31 - s) & 1]


class TestFindAllBitOn:

    @pytest.mark.parametrize("mask,slots", [
        (0x00000000, []),
        (0x81000000, [0, 7]),
        (0x00100000, [11]),
        (0xFFFFFFFF, list(range(32))),
    ])
    def test_examples(self, mask, slots):
        assert find_all_bit_on(mask) == slots

    def test_matches_naive_scan(self, rng):
        for mask in rng.integers(0, 1 << 32, size=2000, dtype=np.uint64):
            mask = int(mask)
            slots = find_all_bit_on(mask)
            assert slots == _naive_slots(mask)
            assert len(slots) == popcount(mask)

    def test_lowest_set_bit_against_loop(self, rng):
        assert lowest_set_bit(0) == -1
        for mask in rng.integers(1, 1 << 32, size=2000, dtype=np.uint64):
            mask = int(mask)
            expected = next(b for b in range(32) if mask >> b & 1)
            assert lowest_set_bit(mask) == expected


class TestRank:

    @pytest.mark.parametrize("mask,slot,expected", [
        (0x81000000, 7, 1),
        (0x00000000, 31, 0),
        (0xFFFFFFFF, 31, 31),
        (0xFFFFFFFF, 0, 0),
    ])
    def test_examples(self, mask, slot, expected):
        assert rank(mask, slot) == expected

    def test_brute_force_low_half(self):
        for mask in range(0, 1 << 16, 37):
            slots = find_all_bit_on(mask)
            for slot in (16, 20, 27, 31):
                assert rank(mask, slot) == sum(1 for t in slots if t < slot)

    @pytest.mark.parametrize("slot", [-1, 32])
    def test_out_of_range(self, slot):
        with pytest.raises(ParameterError):
            rank(0xFFFFFFFF, slot)


class TestSetSlot:

    def test_examples(self):
        assert set_slot(0x00000000, 0) == 0x80000000
        assert set_slot(0x80000000, 0) == 0x80000000
        assert set_slot(0x80000000, 31) == 0x80000001

    def test_set_slot_is_found(self, rng):
        for mask, slot in zip(rng.integers(0, 1 << 32, size=500, dtype=np.uint64),
                              rng.integers(0, 32, size=500)):
            updated = set_slot(int(mask), int(slot))
            assert int(slot) in find_all_bit_on(updated)
            assert has_slot(updated, int(slot))

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            set_slot(0, 32)

    def test_mask_of_slots(self):
        assert mask_of_slots([0, 7]) == 0x81000000


class TestConjoin:

    def test_examples(self):
        assert conjoin([0x81000000, 0x01000000]) == 0x01000000
        assert conjoin([0x12345678]) == 0x12345678
        assert conjoin([0xF0F0F0F0, 0x0F0F0F0F]) == 0

    def test_order_does_not_matter(self, rng):
        masks = [int(m) for m in rng.integers(0, 1 << 32, size=5, dtype=np.uint64)]
        assert conjoin(masks) == conjoin(reversed(masks))
        assert conjoin([conjoin(masks[:2]), conjoin(masks[2:])]) == conjoin(masks)

    def test_empty(self):
        with pytest.raises(ParameterError):
            conjoin([])


class TestClearFromSlot:

    def test_clears_tail(self):
        assert clear_from_slot(FULL_MASK, 4) == 0xF0000000
        assert clear_from_slot(FULL_MASK, 0) == 0
        assert clear_from_slot(0x81000000, 32) == 0x81000000
