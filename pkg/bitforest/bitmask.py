# bitforest/bitmask.py
"""Word-level primitives on 32-bit masks.

Slot ``s`` of a mask is bit ``31 - s``: slot 0 is the most significant bit,
so reading slots in ascending order walks the word from MSB to LSB and keeps
ledger order.
"""
from typing import Iterable, List

from .errors import ParameterError

Mask = int

MASK_BITS = 32
FULL_MASK: Mask = 0xFFFFFFFF

DEBRUIJN_32 = 0x077CB531

# BITSCAN_INDEX[(lsb * DEBRUIJN_32 mod 2^32) >> 27] == bit position of lsb
BITSCAN_INDEX = [0] * MASK_BITS
for _bit in range(MASK_BITS):
    BITSCAN_INDEX[(((1 << _bit) * DEBRUIJN_32) & FULL_MASK) >> 27] = _bit
del _bit


def _check_slot(slot: int) -> None:
    if not 0 <= slot < MASK_BITS:
        raise ParameterError(f"slot must be in [0, {MASK_BITS - 1}], got {slot}")


def lowest_set_bit(mask: Mask) -> int:
    """Bit position (0 = LSB) of the lowest set bit; -1 for an empty mask."""
    if mask == 0:
        return -1
    return BITSCAN_INDEX[(((mask & -mask) * DEBRUIJN_32) & FULL_MASK) >> 27]


def popcount(mask: Mask) -> int:
    return mask.bit_count()


def find_all_bit_on(mask: Mask) -> List[int]:
    """Slots of all set bits, ascending."""
    slots = []
    while mask:
        lsb = mask & -mask
        slots.append(MASK_BITS - 1 - BITSCAN_INDEX[((lsb * DEBRUIJN_32) & FULL_MASK) >> 27])
        mask ^= lsb
    # lowest bit first yields the highest slot first
    slots.reverse()
    return slots


def rank(mask: Mask, slot: int) -> int:
    """Number of set bits at slots strictly before ``slot``."""
    _check_slot(slot)
    return (mask >> (MASK_BITS - slot)).bit_count()


def set_slot(mask: Mask, slot: int) -> Mask:
    _check_slot(slot)
    return mask | (1 << (MASK_BITS - 1 - slot))


def has_slot(mask: Mask, slot: int) -> bool:
    _check_slot(slot)
    return bool(mask >> (MASK_BITS - 1 - slot) & 1)


def conjoin(masks: Iterable[Mask]) -> Mask:
    """Bitwise AND of all masks."""
    result = None
    for mask in masks:
        result = mask if result is None else result & mask
        if result == 0:
            break  # zero absorbs the rest
    if result is None:
        raise ParameterError("conjoin needs at least one mask")
    return result


def clear_from_slot(mask: Mask, slot: int) -> Mask:
    """Clear every slot >= ``slot``; ``slot`` may equal MASK_BITS (no-op)."""
    if slot >= MASK_BITS:
        return mask
    if slot <= 0:
        return 0
    return mask & ~((1 << (MASK_BITS - slot)) - 1) & FULL_MASK


def mask_of_slots(slots: Iterable[int]) -> Mask:
    mask = 0
    for slot in slots:
        mask = set_slot(mask, slot)
    return mask
