"""Aligned (structure, grounded regions) sequences flowing between planner,
merger and captioner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roles import SubRole


@dataclass(frozen=True)
class PlannedSlot:
    """One position of a planned sequence: a sub-role with its regions.

    Verb slots carry the global image feature as their single "region" and
    no set index.  ``verb`` names the owning activity so the captioner can be
    conditioned per slot (merged sequences mix verbs).
    """

    subrole: SubRole
    verb: str
    set_index: int | None
    features: np.ndarray          # (m, d_v) member features
    pooled: np.ndarray            # (d_v,) mean of members

    @property
    def is_verb(self) -> bool:
        return self.subrole.is_verb


@dataclass(frozen=True)
class GroundedSequence:
    """Index-aligned sub-role sequence and grounded region features."""

    slots: tuple[PlannedSlot, ...]

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def __getitem__(self, i) -> PlannedSlot:
        return self.slots[i]

    def subroles(self) -> tuple[SubRole, ...]:
        return tuple(s.subrole for s in self.slots)

    def pooled_matrix(self) -> np.ndarray:
        return np.stack([s.pooled for s in self.slots])

    def describe(self) -> str:
        return " ".join(
            ("VERB" if s.is_verb else s.subrole.key())
            + (f"@{s.set_index}" if s.set_index is not None else "")
            for s in self.slots)
