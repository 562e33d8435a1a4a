"""Scene-side data model: proposals, proposal sets, fully annotated samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..roles import VSR, SemanticStructure

# All boxes live on the normalized image plane; dataset files carry no pixel
# sizes, so width = height = 1 by convention.
IMAGE_W = 1.0
IMAGE_H = 1.0


@dataclass(frozen=True)
class Proposal:
    """One detected region: feature vector, class label, box.

    ``score`` is only present on ingested data (detector confidence); the
    synthetic generator never emits it.
    """

    feature: np.ndarray
    class_id: int
    box: tuple[float, float, float, float]
    score: float | None = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (0.0 <= x0 < x1 <= IMAGE_W and 0.0 <= y0 < y1 <= IMAGE_H):
            raise ValueError(f"degenerate or out-of-range box {self.box}")
        if not np.all(np.isfinite(self.feature)):
            raise ValueError("proposal feature contains non-finite values")

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class ProposalSet:
    """A disjoint group of proposals with its mean-pooled feature."""

    members: tuple[int, ...]
    pooled: np.ndarray

    def __post_init__(self):
        if not self.members:
            raise ValueError("proposal set must be non-empty")

    @staticmethod
    def from_members(members, proposals) -> "ProposalSet":
        members = tuple(members)
        pooled = np.mean([proposals[i].feature for i in members], axis=0)
        return ProposalSet(members, pooled)


@dataclass(frozen=True)
class SceneSample:
    """One fully annotated scene: proposals, disjoint sets, and ground truth."""

    image_id: int
    proposals: tuple[Proposal, ...]
    sets: tuple[ProposalSet, ...]
    gt_vsr: VSR
    gt_structure: SemanticStructure
    gt_grounding: dict[str, int]        # sub-role key -> set index
    gt_caption: tuple[str, ...]
    gt_gates: tuple[int, ...]
    filled_subroles: tuple[str, ...] = field(default=())

    @property
    def global_feature(self) -> np.ndarray:
        return np.mean([p.feature for p in self.proposals], axis=0)

    @property
    def d_v(self) -> int:
        return int(self.proposals[0].feature.shape[0])

    def set_features(self, idx: int) -> np.ndarray:
        """Member feature matrix of one set, shape (m, d_v)."""
        return np.stack([self.proposals[i].feature for i in self.sets[idx].members])

    def set_boxes(self, idx: int) -> np.ndarray:
        return np.array([self.proposals[i].box for i in self.sets[idx].members])

    def set_classes(self, idx: int) -> np.ndarray:
        return np.array([self.proposals[i].class_id for i in self.sets[idx].members])


def check_sample(sample: SceneSample) -> None:
    """Assert the structural invariants every dataset sample must satisfy."""
    covered = [i for s in sample.sets for i in s.members]
    if sorted(covered) != list(range(len(sample.proposals))):
        raise ValueError("proposal sets must partition the proposals")
    for s in sample.sets:
        expect = np.mean([sample.proposals[i].feature for i in s.members], axis=0)
        if not np.allclose(s.pooled, expect, atol=1e-5):
            raise ValueError("pooled set feature does not match member mean")
    sample.gt_structure.validate()
    for sub in sample.gt_structure.non_verb():
        if sub.key() not in sample.gt_grounding:
            raise ValueError(f"sub-role {sub.key()} has no grounded set")
        if not (0 <= sample.gt_grounding[sub.key()] < len(sample.sets)):
            raise ValueError(f"grounding of {sub.key()} is out of range")
    if len(sample.gt_gates) != len(sample.gt_caption):
        raise ValueError("gates must align with caption tokens")
    if sum(sample.gt_gates) != len(sample.gt_structure):
        raise ValueError("gates must close exactly one chunk per sub-role")
    if any(g not in (0, 1) for g in sample.gt_gates):
        raise ValueError("gates must be 0/1")
    if sample.gt_gates and sample.gt_gates[-1] != 1:
        raise ValueError("the final token must close the last chunk")
