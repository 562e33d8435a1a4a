"""Role-shift caption decoder.

Two recurrent cells generate words while a pointer walks the planned
sub-role sequence.  Two adaptive attention heads share a scoring network:
the gate head renormalizes a sub-role sentinel against the current regions
and its sentinel weight is the probability of shifting to the next sub-role;
the context head mixes a visual sentinel with the regions to build the
context vector.

Pointer convention: the sub-role focused at step t is
``min(1 + sum(gates before t), K)``; the gate recorded at step t therefore
takes effect at step t+1.  Because a verb slot must emit exactly one token,
the gate recorded at a verb-focused step is forced to 1 (it is the decision
that moves the pointer off the verb), and forced gates carry no sampling
log-probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionMismatch, EmptyStructure, ShapeMismatch
from .sequence import GroundedSequence

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int]

    @staticmethod
    def build(words) -> "Vocab":
        tokens = (BOS, EOS, UNK) + tuple(sorted(set(words)))
        return Vocab(tokens, {t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    def encode(self, words) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(w, unk) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]


class CaptionerNet(nn.Module):
    """Parameters of the role-shift decoder.

    Region features are linearly lifted to the hidden width before both
    attention heads and the context sum; the two heads share the region
    scoring parameters unless ``share_attention`` is unset.  When
    ``verb_conditioning`` is set, an embedding of the slot's owning verb is
    appended to the first cell's input, which is what lets the decoder name
    the activity.
    """

    def __init__(self, vocab_size: int, n_verbs: int, d_v: int,
                 hidden: int = 512, word_dim: int = 128, attn_dim: int = 128,
                 share_attention: bool = True, verb_conditioning: bool = True):
        super().__init__()
        self.d_v = d_v
        self.hidden = hidden
        self.verb_conditioning = verb_conditioning
        self.word_emb = nn.Embedding(vocab_size, word_dim)
        self.verb_emb = nn.Embedding(n_verbs, word_dim) if verb_conditioning else None
        d_in = word_dim + d_v + hidden + (word_dim if verb_conditioning else 0)
        self.d_in = d_in
        self.lstm1 = nn.LSTMCell(d_in, hidden)
        self.lstm2 = nn.LSTMCell(2 * hidden, hidden)
        self.region_proj = nn.Linear(d_v, hidden, bias=False)
        # gate head
        self.w_ig = nn.Linear(d_in, hidden, bias=False)
        self.w_hg = nn.Linear(hidden, hidden, bias=False)
        self.w_sg = nn.Linear(hidden, attn_dim, bias=False)
        # context head
        self.w_is = nn.Linear(d_in, hidden, bias=False)
        self.w_hs = nn.Linear(hidden, hidden, bias=False)
        self.w_ss = nn.Linear(hidden, attn_dim, bias=False)
        # region/hidden scoring, shared across heads as written
        self.w_sr = nn.Linear(hidden, attn_dim, bias=False)
        self.w_g = nn.Linear(hidden, attn_dim, bias=False)
        self.w_h = nn.Linear(attn_dim, 1, bias=False)
        if share_attention:
            self.w_sr_b = self.w_sr
            self.w_g_b = self.w_g
            self.w_h_b = self.w_h
        else:
            self.w_sr_b = nn.Linear(hidden, attn_dim, bias=False)
            self.w_g_b = nn.Linear(hidden, attn_dim, bias=False)
            self.w_h_b = nn.Linear(attn_dim, 1, bias=False)
        self.out = nn.Linear(hidden, vocab_size)

    def init_state(self, batch: int = 1, dtype=None):
        dtype = dtype or self.out.weight.dtype
        z = torch.zeros(batch, self.hidden, dtype=dtype)
        return DecodeState(h1=z, m1=z.clone(), h2=z.clone(), m2=z.clone(),
                           pointer=1, gates=())


@dataclass
class DecodeState:
    """Recurrent state plus the sub-role pointer derived from past gates."""

    h1: torch.Tensor
    m1: torch.Tensor
    h2: torch.Tensor
    m2: torch.Tensor
    pointer: int
    gates: tuple[int, ...]


def advance_subrole(state: DecodeState, gate: int, seq_len: int) -> int:
    """Fold one gate into the pointer: min(1 + sum of gates so far, K)."""
    if gate not in (0, 1):
        raise ValueError("gate must be 0 or 1")
    new = min(1 + sum(state.gates) + gate, seq_len)
    state.gates = state.gates + (gate,)
    state.pointer = new
    return new


def _joint_attention(net: CaptionerNet, x, h1_prev, h1, m1, regions,
                     w_i, w_h_state, w_sent, w_sr, w_g, w_h, region_mask=None):
    """Sentinel + regions scoring for one head.

    Returns (sentinel, sentinel_weight, region_weights); the weights are a
    single softmax over [regions; sentinel], so they sum to one.
    """
    lgate = torch.sigmoid(w_i(x) + w_h_state(h1_prev))
    sentinel = lgate * torch.tanh(m1)
    a_sent = w_h(torch.tanh(w_sent(sentinel) + w_g(h1))).squeeze(-1)    # (B,)
    hid = w_g(h1).unsqueeze(1)                                          # (B,1,a)
    a_reg = w_h(torch.tanh(w_sr(regions) + hid)).squeeze(-1)            # (B,m)
    if region_mask is not None:
        a_reg = a_reg.masked_fill(~region_mask, float("-inf"))
    joint = torch.cat([a_reg, a_sent.unsqueeze(1)], dim=1)
    weights = torch.softmax(joint, dim=1)
    return sentinel, weights[:, -1], weights[:, :-1]


def shift_gate_prob(net: CaptionerNet, x, h1_prev, h1, m1, regions,
                    region_mask=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Probability of shifting off the current sub-role.

    The sub-role sentinel competes with the current regions; its
    renormalized weight is the shift probability, strictly inside (0, 1).
    """
    _, alpha_g, alpha_r = _joint_attention(
        net, x, h1_prev, h1, m1, regions,
        net.w_ig, net.w_hg, net.w_sg, net.w_sr, net.w_g, net.w_h, region_mask)
    return alpha_g, alpha_r


def context_vector(net: CaptionerNet, x, h1_prev, h1, m1, regions,
                   region_mask=None):
    """Adaptive context: visual sentinel mixed with the current regions."""
    sentinel, alpha_v, alpha_r = _joint_attention(
        net, x, h1_prev, h1, m1, regions,
        net.w_is, net.w_hs, net.w_ss, net.w_sr_b, net.w_g_b, net.w_h_b, region_mask)
    ctx = alpha_v.unsqueeze(1) * sentinel + (alpha_r.unsqueeze(2) * regions).sum(1)
    return ctx, alpha_v, alpha_r


def step(net: CaptionerNet, state: DecodeState, y_prev: int,
         global_feat: torch.Tensor, seq: GroundedSequence,
         verb_id: int | None = None):
    """One decode step on the current sub-role.

    Returns (word log-probabilities, shift probability, new state, diag)
    where diag carries the attention sums the trace records.
    """
    if len(seq) == 0:
        raise EmptyStructure("cannot decode over an empty structure")
    slot = seq[state.pointer - 1]
    dtype = net.out.weight.dtype
    if global_feat.shape[-1] != net.d_v:
        raise DimensionMismatch(f"global feature width {global_feat.shape[-1]} != {net.d_v}")
    x_parts = [net.word_emb(torch.tensor([y_prev])),
               global_feat.to(dtype).unsqueeze(0),
               state.h2]
    if net.verb_conditioning:
        x_parts.append(net.verb_emb(torch.tensor([verb_id])))
    x = torch.cat(x_parts, dim=1)
    h1, m1 = net.lstm1(x, (state.h1, state.m1))
    regions = net.region_proj(
        torch.as_tensor(np.ascontiguousarray(slot.features), dtype=dtype).unsqueeze(0))
    alpha_g, gate_alpha_r = shift_gate_prob(net, x, state.h1, h1, m1, regions)
    ctx, alpha_v, ctx_alpha_r = context_vector(net, x, state.h1, h1, m1, regions)
    h2, m2 = net.lstm2(torch.cat([h1, ctx], dim=1), (state.h2, state.m2))
    log_words = F.log_softmax(net.out(h2), dim=1).squeeze(0)
    new_state = DecodeState(h1=h1, m1=m1, h2=h2, m2=m2,
                            pointer=state.pointer, gates=state.gates)
    diag = {
        "gate_sum": float(alpha_g.item() + gate_alpha_r.sum().item()),
        "ctx_sum": float(alpha_v.item() + ctx_alpha_r.sum().item()),
    }
    return log_words, alpha_g.squeeze(0), new_state, diag


@dataclass
class CaptionTrace:
    """Per-step record of one decode: words, gates, pointer path, log-probs."""

    token_ids: list[int] = field(default_factory=list)   # includes EOS if emitted
    gates: list[int] = field(default_factory=list)       # one per word step
    forced: list[bool] = field(default_factory=list)     # gate was the verb rule
    subrole_index: list[int] = field(default_factory=list)
    word_logprobs: list[float] = field(default_factory=list)
    gate_logprobs: list[float] = field(default_factory=list)  # 0.0 when not sampled
    att_sums: list[tuple[float, float]] = field(default_factory=list)
    word_lp_terms: list[torch.Tensor] = field(default_factory=list)
    gate_lp_terms: list[torch.Tensor] = field(default_factory=list)
    score: float = 0.0

    def words(self, vocab: Vocab) -> list[str]:
        ids = self.token_ids
        if ids and ids[-1] == vocab.eos:
            ids = ids[:-1]
        return vocab.decode(ids)

    def logprob_sum(self) -> torch.Tensor:
        return torch.stack(self.word_lp_terms).sum() + (
            torch.stack(self.gate_lp_terms).sum() if self.gate_lp_terms else 0.0)


def _gate_decision(mode: str, slot_is_verb: bool, alpha_g: torch.Tensor,
                   generator) -> tuple[int, bool, torch.Tensor | None]:
    """Returns (gate, forced, log_prob_term or None)."""
    if slot_is_verb:
        return 1, True, None
    if mode == "sample":
        g = int(torch.bernoulli(alpha_g.detach(), generator=generator).item())
        lp = torch.log(alpha_g if g else 1.0 - alpha_g)
        return g, False, lp
    return int(alpha_g.item() >= 0.5), False, None


def decode(net: CaptionerNet, seq: GroundedSequence, global_feat, vocab: Vocab,
           verb_ids: dict[str, int] | None = None, mode: str = "greedy",
           beam: int = 5, max_len: int = 20, seed: int = 0,
           oracle_words: dict[str, int] | None = None,
           keep_graph: bool = False) -> CaptionTrace:
    """Decode one caption over a planned sequence.

    Modes: greedy (argmax words, gates thresholded at 0.5), sample
    (categorical words, Bernoulli gates; seeded), beam(b) (word-level beam,
    gates thresholded).  ``oracle_words`` maps a verb to a token id that is
    forced whenever a slot of that verb is focused (oracle-verb evaluation).
    beam == 1 matches greedy exactly.

    Word log-probabilities are recorded for every emitted token including the
    terminating EOS; gate log-probabilities only for sampled, unforced gates.
    """
    if len(seq) == 0:
        raise EmptyStructure("cannot decode over an empty structure")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if mode == "beam" and beam > 1:
        return _decode_beam(net, seq, global_feat, vocab, verb_ids, beam,
                            max_len, oracle_words)
    if mode == "beam":
        mode = "greedy"
    generator = torch.Generator().manual_seed(seed) if mode == "sample" else None
    global_feat = torch.as_tensor(np.ascontiguousarray(global_feat),
                                  dtype=net.out.weight.dtype)
    grad_ctx = torch.enable_grad() if keep_graph else torch.no_grad()
    trace = CaptionTrace()
    with grad_ctx:
        state = net.init_state()
        y_prev = vocab.bos
        for _ in range(max_len):
            slot = seq[state.pointer - 1]
            vid = verb_ids[slot.verb] if verb_ids is not None else None
            log_words, alpha_g, state, diag = step(net, state, y_prev,
                                                   global_feat, seq, vid)
            if oracle_words is not None and slot.is_verb and slot.verb in oracle_words:
                y_t = oracle_words[slot.verb]
            elif mode == "sample":
                y_t = int(torch.multinomial(log_words.exp(), 1, generator=generator).item())
            else:
                y_t = int(log_words.topk(1).indices.item())
            trace.token_ids.append(y_t)
            trace.subrole_index.append(state.pointer)
            trace.word_logprobs.append(float(log_words[y_t].item()))
            trace.att_sums.append((diag["gate_sum"], diag["ctx_sum"]))
            if keep_graph:
                trace.word_lp_terms.append(log_words[y_t])
            trace.score += float(log_words[y_t].item())
            if y_t == vocab.eos:
                break
            gate, was_forced, lp = _gate_decision(mode, slot.is_verb, alpha_g, generator)
            trace.gates.append(gate)
            trace.forced.append(was_forced)
            trace.gate_logprobs.append(float(lp.item()) if lp is not None else 0.0)
            if keep_graph and lp is not None:
                trace.gate_lp_terms.append(lp)
            advance_subrole(state, gate, len(seq))
            y_prev = y_t
    return trace


def _decode_beam(net, seq, global_feat, vocab, verb_ids, beam, max_len,
                 oracle_words) -> CaptionTrace:
    """Word-level beam search; per-hypothesis gates are thresholded, scores
    are summed word log-probabilities with no length normalization."""
    global_feat = torch.as_tensor(np.ascontiguousarray(global_feat),
                                  dtype=net.out.weight.dtype)
    live: list[tuple[CaptionTrace, DecodeState, int]] = [
        (CaptionTrace(), net.init_state(), vocab.bos)]
    done: list[CaptionTrace] = []
    with torch.no_grad():
        for _ in range(max_len):
            grown: list[tuple[float, CaptionTrace, DecodeState, int]] = []
            for trace, state, y_prev in live:
                slot = seq[state.pointer - 1]
                vid = verb_ids[slot.verb] if verb_ids is not None else None
                log_words, alpha_g, new_state, diag = step(
                    net, state, y_prev, global_feat, seq, vid)
                if oracle_words is not None and slot.is_verb and slot.verb in oracle_words:
                    cand = [(oracle_words[slot.verb],
                             float(log_words[oracle_words[slot.verb]].item()))]
                else:
                    vals, idxs = log_words.topk(min(beam, len(vocab)))
                    cand = [(int(i), float(v)) for v, i in zip(vals, idxs)]
                for y_t, lp in cand:
                    t2 = CaptionTrace(
                        token_ids=trace.token_ids + [y_t],
                        gates=list(trace.gates), forced=list(trace.forced),
                        subrole_index=trace.subrole_index + [state.pointer],
                        word_logprobs=trace.word_logprobs + [lp],
                        gate_logprobs=list(trace.gate_logprobs),
                        att_sums=trace.att_sums + [(diag["gate_sum"], diag["ctx_sum"])],
                        score=trace.score + lp)
                    s2 = DecodeState(h1=new_state.h1, m1=new_state.m1,
                                     h2=new_state.h2, m2=new_state.m2,
                                     pointer=state.pointer, gates=state.gates)
                    if y_t == vocab.eos:
                        done.append(t2)
                        continue
                    gate, was_forced, _ = _gate_decision("greedy", slot.is_verb,
                                                         alpha_g, None)
                    t2.gates.append(gate)
                    t2.forced.append(was_forced)
                    t2.gate_logprobs.append(0.0)
                    advance_subrole(s2, gate, len(seq))
                    grown.append((t2.score, t2, s2, y_t))
            grown.sort(key=lambda g: -g[0])
            live = [(t, s, y) for _, t, s, y in grown[:beam]]
            if not live:
                break
        done.extend(t for t, _, _ in live)
    return max(done, key=lambda t: t.score)


# --------------------------------------------------------------------------
# teacher-forced training loss (batched)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class XeItem:
    """One teacher-forcing example: planned sequence, caption, gate labels."""

    seq: GroundedSequence
    global_feat: np.ndarray
    verb_id: int
    word_ids: list[int]     # caption tokens, no specials
    gates: list[int]


def xe_loss(net: CaptionerNet, vocab: Vocab, items: list[XeItem],
            gate_weight: float = 1.0) -> torch.Tensor:
    """Summed word NLL (EOS included) plus weighted gate BCE, teacher forced
    with ground-truth gates driving the pointer; mean over the batch.

    Packed into one padded batch; padded steps and padded regions are masked
    out, so the loss is invariant to padding length.
    """
    if not items:
        raise ShapeMismatch("empty batch")
    for it in items:
        if len(it.word_ids) != len(it.gates):
            raise ShapeMismatch("caption tokens and gate labels must align")
    dtype = net.out.weight.dtype
    B = len(items)
    T = max(len(it.word_ids) + 1 for it in items)          # + EOS step
    m_max = max(max(slot.features.shape[0] for slot in it.seq) for it in items)

    y_in = torch.full((B, T), vocab.bos, dtype=torch.long)
    y_out = torch.zeros((B, T), dtype=torch.long)
    step_mask = torch.zeros((B, T), dtype=torch.bool)
    gate_mask = torch.zeros((B, T), dtype=torch.bool)
    gate_tgt = torch.zeros((B, T), dtype=dtype)
    regions = torch.zeros((B, T, m_max, net.d_v), dtype=dtype)
    region_mask = torch.zeros((B, T, m_max), dtype=torch.bool)
    gfeat = torch.stack([torch.as_tensor(it.global_feat, dtype=dtype) for it in items])
    verb_ids = torch.tensor([it.verb_id for it in items])

    for b, it in enumerate(items):
        ids = it.word_ids + [vocab.eos]
        K = len(it.seq)
        ptr = 1
        for t, target in enumerate(ids):
            if t > 0:
                y_in[b, t] = ids[t - 1]
                ptr = min(1 + sum(it.gates[:t]), K)
            y_out[b, t] = target
            step_mask[b, t] = True
            slot = it.seq[ptr - 1]
            m = slot.features.shape[0]
            regions[b, t, :m] = torch.as_tensor(
                np.ascontiguousarray(slot.features), dtype=dtype)
            region_mask[b, t, :m] = True
            if t < len(it.gates):                           # no gate label at EOS
                gate_mask[b, t] = True
                gate_tgt[b, t] = float(it.gates[t])

    h1 = torch.zeros(B, net.hidden, dtype=dtype)
    m1 = torch.zeros(B, net.hidden, dtype=dtype)
    h2 = torch.zeros(B, net.hidden, dtype=dtype)
    m2 = torch.zeros(B, net.hidden, dtype=dtype)
    word_nll = torch.zeros(B, dtype=dtype)
    gate_bce = torch.zeros(B, dtype=dtype)
    for t in range(T):
        x_parts = [net.word_emb(y_in[:, t]), gfeat, h2]
        if net.verb_conditioning:
            x_parts.append(net.verb_emb(verb_ids))
        x = torch.cat(x_parts, dim=1)
        h1_new, m1_new = net.lstm1(x, (h1, m1))
        reg = net.region_proj(regions[:, t])
        alpha_g, _ = shift_gate_prob(net, x, h1, h1_new, m1_new, reg,
                                     region_mask[:, t])
        ctx, _, _ = context_vector(net, x, h1, h1_new, m1_new, reg,
                                   region_mask[:, t])
        h2_new, m2_new = net.lstm2(torch.cat([h1_new, ctx], dim=1), (h2, m2))
        logits = net.out(h2_new)
        nll = F.cross_entropy(logits, y_out[:, t], reduction="none")
        word_nll = word_nll + nll * step_mask[:, t].to(dtype)
        bce = F.binary_cross_entropy(alpha_g.clamp(1e-7, 1 - 1e-7), gate_tgt[:, t],
                                     reduction="none")
        gate_bce = gate_bce + bce * gate_mask[:, t].to(dtype)
        keep = step_mask[:, t].unsqueeze(1).to(dtype)
        h1 = h1_new * keep + h1 * (1 - keep)
        m1 = m1_new * keep + m1 * (1 - keep)
        h2 = h2_new * keep + h2 * (1 - keep)
        m2 = m2_new * keep + m2 * (1 - keep)
    return (word_nll + gate_weight * gate_bce).mean()


def trace_logprob(net: CaptionerNet, seq: GroundedSequence, global_feat,
                  vocab: Vocab, verb_ids, token_ids, gates,
                  forced) -> torch.Tensor:
    """Log-probability of a frozen trajectory (words plus unforced gates),
    re-evaluated under the current parameters.  The pointer is driven by the
    frozen gates, mirroring the decode that produced them."""
    global_feat = torch.as_tensor(np.ascontiguousarray(global_feat),
                                  dtype=net.out.weight.dtype)
    state = net.init_state()
    y_prev = vocab.bos
    total = torch.zeros((), dtype=net.out.weight.dtype)
    for t, y_t in enumerate(token_ids):
        slot = seq[state.pointer - 1]
        vid = verb_ids[slot.verb] if verb_ids is not None else None
        log_words, alpha_g, state, _ = step(net, state, y_prev, global_feat, seq, vid)
        total = total + log_words[y_t]
        if y_t == vocab.eos:
            break
        if not forced[t]:
            g = gates[t]
            total = total + torch.log(alpha_g if g else 1.0 - alpha_g)
        advance_subrole(state, gates[t], len(seq))
        y_prev = y_t
    return total


# --------------------------------------------------------------------------
# self-critical update
# --------------------------------------------------------------------------

def scst_surrogate(reward: float, baseline: float,
                   sampled: CaptionTrace) -> torch.Tensor:
    """Loss whose gradient is -(r - b) * grad(log p(words) + log p(gates)).

    The reward gap is a constant; only the log-probabilities carry gradient.
    Forced gates contribute no term (no sampling decision was taken).
    """
    if not sampled.word_lp_terms:
        raise ShapeMismatch("sampled trace was decoded without keep_graph")
    return -(reward - baseline) * sampled.logprob_sum()


def scst_update(net: CaptionerNet, seq: GroundedSequence, global_feat,
                vocab: Vocab, verb_ids, references, reward_fn,
                max_len: int = 20, seed: int = 0):
    """One self-critical term: sample a trace, score it against the greedy
    baseline with ``reward_fn(tokens, references)``, return the surrogate.

    Returns (surrogate, reward, baseline, sampled trace).
    """
    references = list(references)
    if not references:
        from .errors import EmptyReferences
        raise EmptyReferences("self-critical reward needs references")
    sampled = decode(net, seq, global_feat, vocab, verb_ids, mode="sample",
                     max_len=max_len, seed=seed, keep_graph=True)
    greedy = decode(net, seq, global_feat, vocab, verb_ids, mode="greedy",
                    max_len=max_len)
    r = float(reward_fn(sampled.words(vocab), references))
    b = float(reward_fn(greedy.words(vocab), references))
    return scst_surrogate(r, b, sampled), r, b, sampled
