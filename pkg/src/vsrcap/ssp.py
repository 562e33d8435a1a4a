"""Structure planner: role ordering and within-role sub-role ranking.

The sentence level is a small encoder-decoder transformer that emits a
permutation of the input role tokens (verb included) under a no-repeat mask.
The role level scores each grounded set against each mention position, runs
the doubly-stochastic normalization, and rounds to a hard permutation with
the Hungarian algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch import nn

from .errors import NonFinite, ShapeMismatch, TooManyRoles, TooManySets
from .roles import ALL_ROLE_TOKENS, VERB_ROLE, VSR, SubRole
from .sequence import GroundedSequence, PlannedSlot

N_ROLE_TOKENS = len(ALL_ROLE_TOKENS)  # 24 roles + verb marker
PAD_LOGPOT = -30.0                    # padding block log-potential


# --------------------------------------------------------------------------
# doubly-stochastic normalization and rounding
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PermutationMatrix:
    """Square assignment matrix, soft (doubly stochastic) or hard (0/1)."""

    matrix: np.ndarray
    mode: str  # "soft" | "hard"

    def check(self, tol: float = 1e-6) -> "PermutationMatrix":
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch(f"permutation matrix must be square, got {m.shape}")
        if self.mode == "soft":
            if (m < -tol).any():
                raise ValueError("soft permutation has negative entries")
            if (np.abs(m.sum(0) - 1) > tol).any() or (np.abs(m.sum(1) - 1) > tol).any():
                raise ValueError("soft permutation is not doubly stochastic")
        elif self.mode == "hard":
            if not np.isin(m, (0, 1)).all():
                raise ValueError("hard permutation entries must be 0/1")
            if (m.sum(0) != 1).any() or (m.sum(1) != 1).any():
                raise ValueError("hard permutation needs one 1 per row and column")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        return self


def sinkhorn(Z: torch.Tensor, iters: int = 20) -> torch.Tensor:
    """Iterated row-then-column normalization of exp(Z), in log space.

    The direct exp/divide recurrence overflows for large potentials, so the
    whole iteration runs on log values; the result is a soft doubly
    stochastic matrix, differentiable in Z.
    """
    if iters < 1:
        raise ValueError("need at least one normalization iteration")
    if not torch.isfinite(Z).all():
        raise NonFinite("sinkhorn input must be finite")
    L = Z
    for _ in range(iters):
        L = L - torch.logsumexp(L, dim=-1, keepdim=True)   # rows
        L = L - torch.logsumexp(L, dim=-2, keepdim=True)   # columns
    return torch.exp(L)


def hungarian_round(P) -> np.ndarray:
    """Hard permutation maximizing the total soft mass (linear assignment)."""
    if isinstance(P, torch.Tensor):
        P = P.detach().cpu().numpy()
    rows, cols = linear_sum_assignment(P, maximize=True)
    hard = np.zeros_like(P, dtype=np.int64)
    hard[rows, cols] = 1
    return hard


# --------------------------------------------------------------------------
# sentence-level planner
# --------------------------------------------------------------------------

class SLevelPlanner(nn.Module):
    """Transformer over role tokens; decodes an order where every input role
    (and the verb) appears exactly once."""

    BOS = N_ROLE_TOKENS

    def __init__(self, n_verbs: int, d_model: int = 512, heads: int = 8,
                 layers: int = 3, max_len: int = 10):
        super().__init__()
        self.max_len = max_len
        self.verb_emb = nn.Embedding(n_verbs, d_model)
        self.role_emb = nn.Embedding(N_ROLE_TOKENS, d_model)
        self.input_proj = nn.Linear(d_model, d_model)
        self.out_emb = nn.Embedding(N_ROLE_TOKENS + 1, d_model)  # + BOS
        self.pos_emb = nn.Embedding(max_len + 1, d_model)
        enc_layer = nn.TransformerEncoderLayer(
            d_model, heads, dim_feedforward=4 * d_model, dropout=0.0, batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(
            d_model, heads, dim_feedforward=4 * d_model, dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, layers)
        self.decoder = nn.TransformerDecoder(dec_layer, layers)
        self.head = nn.Linear(d_model, N_ROLE_TOKENS)

    def _input_tokens(self, vsr: VSR) -> list[int]:
        tokens = [VERB_ROLE.id] + [r.id for r, _ in vsr.roles]
        if len(tokens) > self.max_len:
            raise TooManyRoles(f"{len(tokens)} role tokens exceed the planner "
                               f"window of {self.max_len}")
        return tokens

    def encode(self, verb_id: int, tokens: list[int]) -> torch.Tensor:
        dev = self.head.weight.device
        tok = torch.tensor(tokens, device=dev)
        ev = self.verb_emb(torch.tensor(verb_id, device=dev))
        # the input is a role *set*: token embeddings carry no position
        x = self.input_proj(ev.unsqueeze(0) + self.role_emb(tok))
        return self.encoder(x.unsqueeze(0))

    def decode_logits(self, memory: torch.Tensor, prefix: list[int]) -> torch.Tensor:
        """Next-token logits given the emitted prefix."""
        dev = memory.device
        ids = torch.tensor([self.BOS] + list(prefix), device=dev)
        pos = torch.arange(len(ids), device=dev)
        x = (self.out_emb(ids) + self.pos_emb(pos)).unsqueeze(0)
        mask = nn.Transformer.generate_square_subsequent_mask(len(ids)).to(dev)
        out = self.decoder(x, memory, tgt_mask=mask)
        return self.head(out[0, -1])

    def teacher_logits(self, verb_id: int, vsr: VSR, target: list[int]) -> torch.Tensor:
        """Per-step logits under teacher forcing, shape (T, n_tokens)."""
        memory = self.encode(verb_id, self._input_tokens(vsr))
        dev = memory.device
        ids = torch.tensor([self.BOS] + list(target[:-1]), device=dev)
        pos = torch.arange(len(ids), device=dev)
        x = (self.out_emb(ids) + self.pos_emb(pos)).unsqueeze(0)
        mask = nn.Transformer.generate_square_subsequent_mask(len(ids)).to(dev)
        out = self.decoder(x, memory, tgt_mask=mask)
        return self.head(out[0])


def plan_role_order(planner: SLevelPlanner, verb_id: int, vsr: VSR) -> list[int]:
    """Greedy masked decode: the argmax runs over input tokens not yet
    emitted, so the output is always a permutation of the input multiset."""
    tokens = planner._input_tokens(vsr)
    memory = planner.encode(verb_id, tokens)
    remaining = set(tokens)
    order: list[int] = []
    with torch.no_grad():
        for _ in range(len(tokens)):
            logits = planner.decode_logits(memory, order)
            mask = torch.full_like(logits, float("-inf"))
            keep = torch.tensor(sorted(remaining), device=logits.device)
            mask[keep] = 0.0
            pick = int((logits + mask).argmax())
            order.append(pick)
            remaining.discard(pick)
    return order


def plan_role_order_beam(planner: SLevelPlanner, verb_id: int, vsr: VSR,
                         beam: int = 5) -> list[tuple[list[int], float]]:
    """Beam decode under the same mask; returns orders with their scores,
    best first.  Log-probabilities are renormalized over remaining tokens."""
    tokens = planner._input_tokens(vsr)
    memory = planner.encode(verb_id, tokens)
    hyps: list[tuple[list[int], float]] = [([], 0.0)]
    with torch.no_grad():
        for _ in range(len(tokens)):
            grown: list[tuple[list[int], float]] = []
            for order, score in hyps:
                remaining = sorted(set(tokens) - set(order))
                logits = planner.decode_logits(memory, order)
                keep = torch.tensor(remaining, device=logits.device)
                logp = F.log_softmax(logits[keep], dim=0)
                for tok, lp in zip(remaining, logp.tolist()):
                    grown.append((order + [tok], score + lp))
            grown.sort(key=lambda h: -h[1])
            hyps = grown[:beam]
    return hyps


# --------------------------------------------------------------------------
# role-level planner
# --------------------------------------------------------------------------

class RLevelRanker(nn.Module):
    """Scores grounded sets against mention positions from visual features,
    class embeddings and normalized box coordinates."""

    def __init__(self, d_v: int, n_classes: int, visual_dim: int = 32,
                 class_dim: int = 16, hidden: int = 64, n_max: int = 10):
        super().__init__()
        self.n_max = n_max
        self.vis_proj = nn.Linear(d_v, visual_dim, bias=False)
        self.class_emb = nn.Embedding(n_classes, class_dim)
        self.mlp = nn.Sequential(
            nn.Linear(visual_dim + class_dim + 4, hidden), nn.ReLU(),
            nn.Linear(hidden, n_max),
        )

    def set_scores(self, features, boxes, classes) -> torch.Tensor:
        """Mean per-set position scores; inputs are per-proposal tensors."""
        z = torch.cat([self.vis_proj(features), self.class_emb(classes), boxes], dim=1)
        return self.mlp(z).mean(dim=0)

    def padded_potentials(self, sets) -> torch.Tensor:
        """(n_max, n_max) log-potentials; padded slots self-assign via a
        zero diagonal against a large-negative background, so they never
        steal mass from the real top-left block.

        ``sets`` is a list of (features, boxes, classes) tensor triples.
        """
        n = len(sets)
        if n > self.n_max:
            raise TooManySets(f"{n} sets exceed n_max = {self.n_max}")
        dtype = self.vis_proj.weight.dtype
        out = torch.full((self.n_max, self.n_max), PAD_LOGPOT, dtype=dtype)
        pad_idx = torch.arange(n, self.n_max)
        out[pad_idx, pad_idx] = 0.0
        if n:
            real = torch.stack([self.set_scores(*s) for s in sets])  # (n, n_max)
            out[:n, :n] = real[:, :n]
        return out


def rank_within_role(ranker: RLevelRanker, sets, sinkhorn_iters: int = 20) -> list[int]:
    """Mention order of the given sets: position j is filled by input set
    order[j].  Identity for a single set."""
    n = len(sets)
    if n == 1:
        return [0]
    Z = ranker.padded_potentials(sets)
    with torch.no_grad():
        soft = sinkhorn(Z, sinkhorn_iters)
    hard = hungarian_round(soft)
    block = hard[:n, :n]
    if (block.sum(0) != 1).any() or (block.sum(1) != 1).any():
        raise ValueError("padding leaked into the assignment block")
    return [int(block[:, j].argmax()) for j in range(n)]


def rlevel_soft(ranker: RLevelRanker, sets, sinkhorn_iters: int = 20) -> torch.Tensor:
    """Differentiable padded soft permutation, for training."""
    return sinkhorn(ranker.padded_potentials(sets), sinkhorn_iters)


def mention_order_target(n: int, mention_of: list[int], n_max: int,
                         dtype=torch.float32) -> torch.Tensor:
    """Padded hard target: input set i belongs at mention position
    mention_of[i]; padding positions self-assign."""
    P = torch.zeros(n_max, n_max, dtype=dtype)
    for i, j in enumerate(mention_of):
        P[i, j] = 1.0
    for k in range(n, n_max):
        P[k, k] = 1.0
    return P


# --------------------------------------------------------------------------
# full plan and training losses
# --------------------------------------------------------------------------

def plan(slevel: SLevelPlanner, rlevel: RLevelRanker, vsr: VSR, grounding,
         sample, verb_id: int, sinkhorn_iters: int = 20,
         role_order: list[int] | None = None) -> GroundedSequence:
    """Order roles, rank sub-roles inside multi-count roles, and assemble the
    aligned sequence.  The verb slot carries the global image feature.

    ``role_order`` overrides the greedy sentence-level decode (used when a
    beam over structures supplies the order)."""
    counts = {r.id: n for r, n in vsr.roles}
    roles_by_id = {r.id: r for r, _ in vsr.roles}
    order = role_order if role_order is not None else plan_role_order(slevel, verb_id, vsr)
    dtype = rlevel.vis_proj.weight.dtype
    slots: list[PlannedSlot] = []
    global_feat = sample.global_feature
    for tok in order:
        if tok == VERB_ROLE.id:
            slots.append(PlannedSlot(
                subrole=SubRole(VERB_ROLE, 1), verb=vsr.verb, set_index=None,
                features=global_feat[None, :], pooled=global_feat))
            continue
        role = roles_by_id[tok]
        n_i = counts[tok]
        set_idxs = [grounding.set_for(SubRole(role, k)) for k in range(1, n_i + 1)]
        if n_i > 1:
            tensors = [
                (torch.as_tensor(sample.set_features(si), dtype=dtype),
                 torch.as_tensor(sample.set_boxes(si), dtype=dtype),
                 torch.as_tensor(sample.set_classes(si), dtype=torch.long))
                for si in set_idxs]
            order_in_role = rank_within_role(rlevel, tensors, sinkhorn_iters)
        else:
            order_in_role = [0]
        for pos, src in enumerate(order_in_role, start=1):
            si = set_idxs[src]
            slots.append(PlannedSlot(
                subrole=SubRole(role, pos), verb=vsr.verb, set_index=si,
                features=sample.set_features(si), pooled=sample.sets[si].pooled))
    return GroundedSequence(tuple(slots))


def ssp_losses(s_logits: torch.Tensor, s_targets: torch.Tensor,
               p_preds, p_targets, counts) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forced planner losses.

    Sentence level: summed cross-entropy over steps.  Role level: mean
    squared error per soft matrix, summed over roles with more than one
    sub-role (single-count roles contribute nothing).
    """
    if s_logits.shape[0] != s_targets.shape[0]:
        raise ShapeMismatch("one logit row per target step required")
    l_s = F.cross_entropy(s_logits, s_targets, reduction="sum")
    device = s_logits.device
    l_r = torch.zeros((), device=device, dtype=s_logits.dtype)
    if len(p_preds) != len(p_targets) or len(p_preds) != len(counts):
        raise ShapeMismatch("role-level predictions, targets and counts must align")
    for pred, target, n in zip(p_preds, p_targets, counts):
        if pred.shape != target.shape:
            raise ShapeMismatch(f"soft matrix {tuple(pred.shape)} vs target {tuple(target.shape)}")
        if n > 1:
            l_r = l_r + F.mse_loss(pred, target.to(pred.dtype), reduction="mean")
    return l_s, l_r
