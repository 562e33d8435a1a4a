"""Grounding model: scores (role, proposal-set) pairs, picks top-n per role.

The scorer fuses a query (verb embedding, role embedding, global feature)
with each set's pooled feature by element-wise product in a common space and
maps the result through a four-layer perceptron ending in a logistic, so
every score lives in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionMismatch, NotEnoughSets, ShapeMismatch
from .roles import VSR, SubRole
from .sequence import GroundedSequence, PlannedSlot
from .scene.types import SceneSample


class GsrlNet(nn.Module):
    """Similarity scorer between sub-roles and proposal sets."""

    def __init__(self, n_verbs: int, d_v: int, verb_dim: int = 64,
                 role_dim: int = 64, attn_dim: int = 64, n_roles: int = 25):
        super().__init__()
        self.d_v = d_v
        self.verb_emb = nn.Embedding(n_verbs, verb_dim)
        self.role_emb = nn.Embedding(n_roles, role_dim)
        self.query_proj = nn.Linear(verb_dim + role_dim + d_v, attn_dim, bias=False)
        self.feat_proj = nn.Linear(d_v, attn_dim, bias=False)
        self.scorer = nn.Sequential(
            nn.Linear(attn_dim, attn_dim), nn.ReLU(),
            nn.Linear(attn_dim, attn_dim // 2), nn.ReLU(),
            nn.Linear(attn_dim // 2, attn_dim // 4), nn.ReLU(),
            nn.Linear(attn_dim // 4, 1),
        )

    def score_matrix(self, verb_id: int, role_ids, global_feat, set_feats) -> torch.Tensor:
        """Scores over (role i, set j), shape (R, N), entries in (0, 1)."""
        if set_feats.shape[-1] != self.d_v or global_feat.shape[-1] != self.d_v:
            raise DimensionMismatch(
                f"expected feature width {self.d_v}, got {set_feats.shape[-1]}")
        dev = global_feat.device
        role_ids = torch.as_tensor(role_ids, dtype=torch.long, device=dev)
        ev = self.verb_emb(torch.tensor(verb_id, device=dev))
        es = self.role_emb(role_ids)                                   # (R, ds)
        query = torch.cat(
            [ev.expand(len(role_ids), -1), es,
             global_feat.unsqueeze(0).expand(len(role_ids), -1)], dim=1)
        fused = self.query_proj(query)[:, None, :] * self.feat_proj(set_feats)[None, :, :]
        return torch.sigmoid(self.scorer(fused).squeeze(-1))


def score_pair(net: GsrlNet, verb_id: int, role_id: int,
               global_feat, set_feat) -> torch.Tensor:
    """Single (role, set) similarity score."""
    return net.score_matrix(verb_id, [role_id], global_feat, set_feat.unsqueeze(0))[0, 0]


def gsrl_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Summed binary cross-entropy over every (role, set) pair."""
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"scores {tuple(scores.shape)} vs labels {tuple(labels.shape)}")
    return F.binary_cross_entropy(scores, labels, reduction="sum")


@dataclass(frozen=True)
class GroundingResult:
    """Chosen set per sub-role plus the full score matrix (roles x sets)."""

    assignments: dict[str, int]          # sub-role key -> set index
    scores: np.ndarray
    vsr: VSR

    def set_for(self, sub: SubRole) -> int:
        return self.assignments[sub.key()]


def ground(net: GsrlNet, sample: SceneSample, vsr: VSR, verb_id: int) -> GroundingResult:
    """Pick the n_i highest-scoring sets per role; ties go to the lower index.

    Sub-roles of one role are assigned in descending score order; the
    role-level planner reorders them later.
    """
    n_sets = len(sample.sets)
    need = max(n for _, n in vsr.roles)
    if n_sets < need:
        raise NotEnoughSets(f"sample {sample.image_id} has {n_sets} sets, "
                            f"but a role asks for {need}")
    dtype = next(net.parameters()).dtype
    global_feat = torch.as_tensor(sample.global_feature, dtype=dtype)
    set_feats = torch.stack(
        [torch.as_tensor(ps.pooled, dtype=dtype) for ps in sample.sets])
    with torch.no_grad():
        scores = net.score_matrix(
            verb_id, [r.id for r, _ in vsr.roles], global_feat, set_feats)
    scores = scores.cpu().numpy()
    assignments: dict[str, int] = {}
    for i, (role, n_i) in enumerate(vsr.roles):
        order = sorted(range(n_sets), key=lambda j: (-scores[i, j], j))
        for k in range(1, n_i + 1):
            assignments[SubRole(role, k).key()] = order[k - 1]
    return GroundingResult(assignments=assignments, scores=scores, vsr=vsr)


def grounding_labels(sample: SceneSample, dtype=torch.float32) -> torch.Tensor:
    """Ground-truth (role, set) indicator matrix for training."""
    rows = []
    for role, n_i in sample.gt_vsr.roles:
        row = torch.zeros(len(sample.sets), dtype=dtype)
        for k in range(1, n_i + 1):
            row[sample.gt_grounding[SubRole(role, k).key()]] = 1.0
        rows.append(row)
    return torch.stack(rows)


def grounding_accuracy(net: GsrlNet, samples, verb_id_of) -> float:
    """Fraction of sub-roles whose chosen set belongs to the ground truth
    sets of its role (order within a role is not graded here)."""
    hit = 0
    total = 0
    for sample in samples:
        res = ground(net, sample, sample.gt_vsr, verb_id_of(sample.gt_vsr.verb))
        for role, n_i in sample.gt_vsr.roles:
            gt = {sample.gt_grounding[SubRole(role, k).key()] for k in range(1, n_i + 1)}
            got = {res.assignments[SubRole(role, k).key()] for k in range(1, n_i + 1)}
            hit += len(gt & got)
            total += n_i
    return hit / total


def sequence_from_grounding(sample: SceneSample, grounding: GroundingResult,
                            structure) -> GroundedSequence:
    """Assemble the aligned (structure, regions) sequence for the captioner.

    Verb slots carry the global feature as their single region.
    """
    global_feat = sample.global_feature
    slots = []
    for sub in structure:
        if sub.is_verb:
            slots.append(PlannedSlot(
                subrole=sub, verb=grounding.vsr.verb, set_index=None,
                features=global_feat[None, :], pooled=global_feat))
        else:
            idx = grounding.set_for(sub)
            slots.append(PlannedSlot(
                subrole=sub, verb=grounding.vsr.verb, set_index=idx,
                features=sample.set_features(idx),
                pooled=sample.sets[idx].pooled))
    return GroundedSequence(tuple(slots))
