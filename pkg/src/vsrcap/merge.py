"""Merging planned sequences from multiple control signals into one.

Two sub-roles refer to the same visual regions iff their proposal-set
indices are equal; verb slots are never shared (each surviving verb keeps
its own token).  The merged sequence keeps the first input's order, re-ranks
the shared region sets of the second input to follow the first, and inserts
every non-shared region of the second input immediately before its nearest
shared right-neighbour (appending when no shared set lies to its right).
"""

from __future__ import annotations

from functools import reduce

from .errors import InvalidInput, NoSharedRegions
from .sequence import GroundedSequence


def _keys(seq: GroundedSequence, side: str):
    keys = []
    verb_count = 0
    for slot in seq:
        if slot.set_index is None:
            keys.append(("verb", side, verb_count))
            verb_count += 1
        else:
            keys.append(("set", slot.set_index))
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise InvalidInput(f"sequence grounds one region set twice: {dupes}")
    return keys


def merge(a: GroundedSequence, b: GroundedSequence) -> GroundedSequence:
    """Merge two aligned sequences; the first input's verb ranks first."""
    if not len(a) or not len(b):
        raise InvalidInput("cannot merge an empty sequence")
    keys_a = _keys(a, "a")
    keys_b = _keys(b, "b")

    shared = [k for k in keys_a if k in set(keys_b)]
    if not shared:
        raise NoSharedRegions(
            "the two control signals ground no region set in common")
    shared_set = set(shared)

    # re-rank: shared entries of the second sequence take the first
    # sequence's relative order
    relabeled = []
    i_same = 0
    for k in keys_b:
        if k in shared_set:
            relabeled.append(shared[i_same])
            i_same += 1
        else:
            relabeled.append(k)

    merged_keys = list(keys_a)
    merged_slots = list(a.slots)
    for pos, k in enumerate(relabeled):
        if k in shared_set:
            continue
        right = next((rk for rk in relabeled[pos + 1:] if rk in shared_set), None)
        if right is None:
            merged_keys.append(k)
            merged_slots.append(b.slots[pos])
        else:
            at = merged_keys.index(right)
            merged_keys.insert(at, k)
            merged_slots.insert(at, b.slots[pos])
    return GroundedSequence(tuple(merged_slots))


def merge_many(seqs) -> GroundedSequence:
    """Left fold of merge over sequences in verb-rank order."""
    seqs = list(seqs)
    if not seqs:
        raise InvalidInput("need at least one sequence")
    return reduce(merge, seqs)
