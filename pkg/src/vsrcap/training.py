"""Training loops for the three components.

Each stage trains separately: grounding on (role, set) indicator targets,
the two planner levels on teacher-forced structures, the captioner first
with teacher forcing and then self-critically against the consensus reward.
Every loop is deterministic under the run seed.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .captioner import CaptionerNet, Vocab, XeItem, decode, scst_update, xe_loss
from .config import RunConfig
from .gsrl import (
    GroundingResult,
    GsrlNet,
    grounding_labels,
    gsrl_loss,
    sequence_from_grounding,
)
from .metrics import build_corpus_stats, cider_d
from .roles import VerbLexicon
from .sequence import GroundedSequence
from .ssp import RLevelRanker, SLevelPlanner, mention_order_target, rlevel_soft
from .roles import SubRole, VERB_ROLE


def gt_sequence(sample) -> GroundedSequence:
    """Planned sequence a perfect pipeline would produce: ground-truth
    structure with ground-truth grounding."""
    res = GroundingResult(dict(sample.gt_grounding), np.zeros((0, 0)), sample.gt_vsr)
    return sequence_from_grounding(sample, res, sample.gt_structure)


def build_xe_items(samples, vocab: Vocab, lex: VerbLexicon) -> list[XeItem]:
    items = []
    for s in samples:
        items.append(XeItem(
            seq=gt_sequence(s), global_feat=s.global_feature,
            verb_id=lex.verb_id(s.gt_vsr.verb),
            word_ids=vocab.encode(s.gt_caption), gates=list(s.gt_gates)))
    return items


# --------------------------------------------------------------------------
# grounding
# --------------------------------------------------------------------------

def train_gsrl(net: GsrlNet, samples, lex: VerbLexicon, cfg: RunConfig,
               log=None) -> list[dict]:
    opt = torch.optim.Adam(net.parameters(), lr=cfg.gsrl_lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.gsrl_lr_step,
                                            gamma=cfg.gsrl_lr_decay)
    rng = np.random.default_rng(cfg.seed + 11)
    dtype = next(net.parameters()).dtype
    cached = []
    for s in samples:
        cached.append((
            lex.verb_id(s.gt_vsr.verb),
            [r.id for r, _ in s.gt_vsr.roles],
            torch.as_tensor(s.global_feature, dtype=dtype),
            torch.stack([torch.as_tensor(ps.pooled, dtype=dtype) for ps in s.sets]),
            grounding_labels(s, dtype=dtype),
        ))
    curve = []
    for epoch in range(cfg.gsrl_epochs):
        order = rng.permutation(len(cached))
        total = 0.0
        for start in range(0, len(order), 32):
            opt.zero_grad()
            batch = order[start:start + 32]
            loss = torch.zeros((), dtype=dtype)
            for i in batch:
                vid, role_ids, gf, sf, labels = cached[i]
                loss = loss + gsrl_loss(net.score_matrix(vid, role_ids, gf, sf), labels)
            loss = loss / len(batch)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        sched.step()
        curve.append({"epoch": epoch, "loss": total / len(cached),
                      "lr": sched.get_last_lr()[0]})
        if log:
            log(f"gsrl epoch {epoch}: loss {curve[-1]['loss']:.4f}")
    return curve


# --------------------------------------------------------------------------
# sentence-level planner
# --------------------------------------------------------------------------

def _slevel_batch_loss(planner: SLevelPlanner, batch) -> torch.Tensor:
    """Padded teacher-forced batch; returns the mean per-sample summed XE.

    batch items: (verb_id, input token ids, target token ids).
    """
    dev = planner.head.weight.device
    B = len(batch)
    L = max(len(toks) for _, toks, _ in batch)
    T = max(len(tgt) for _, _, tgt in batch)
    src = torch.zeros(B, L, dtype=torch.long, device=dev)
    src_pad = torch.ones(B, L, dtype=torch.bool, device=dev)
    tgt_in = torch.full((B, T), planner.BOS, dtype=torch.long, device=dev)
    tgt_out = torch.zeros(B, T, dtype=torch.long, device=dev)
    tgt_pad = torch.ones(B, T, dtype=torch.bool, device=dev)
    verb_ids = torch.tensor([v for v, _, _ in batch], device=dev)
    for b, (_, toks, tgt) in enumerate(batch):
        src[b, :len(toks)] = torch.tensor(toks, device=dev)
        src_pad[b, :len(toks)] = False
        tgt_in[b, 1:len(tgt)] = torch.tensor(tgt[:-1], device=dev)
        tgt_out[b, :len(tgt)] = torch.tensor(tgt, device=dev)
        tgt_pad[b, :len(tgt)] = False
    x = planner.input_proj(planner.verb_emb(verb_ids).unsqueeze(1) + planner.role_emb(src))
    memory = planner.encoder(x, src_key_padding_mask=src_pad)
    pos = torch.arange(T, device=dev)
    y = planner.out_emb(tgt_in) + planner.pos_emb(pos).unsqueeze(0)
    causal = nn.Transformer.generate_square_subsequent_mask(T).to(dev)
    out = planner.decoder(y, memory, tgt_mask=causal,
                          tgt_key_padding_mask=tgt_pad,
                          memory_key_padding_mask=src_pad)
    logits = planner.head(out)
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                          tgt_out.reshape(-1), reduction="none").reshape(B, T)
    return (nll * (~tgt_pad).float()).sum(1).mean()


def train_slevel(planner: SLevelPlanner, samples, lex: VerbLexicon,
                 cfg: RunConfig, log=None) -> list[dict]:
    opt = torch.optim.Adam(planner.parameters(), lr=cfg.ssp_lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.ssp_lr_step,
                                            gamma=cfg.ssp_lr_decay)
    rng = np.random.default_rng(cfg.seed + 22)
    data = []
    for s in samples:
        toks = [VERB_ROLE.id] + [r.id for r, _ in s.gt_vsr.roles]
        target = [r.id for r in s.gt_structure.role_order()]
        data.append((lex.verb_id(s.gt_vsr.verb), toks, target))
    curve = []
    for epoch in range(cfg.ssp_epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), 32):
            batch = [data[i] for i in order[start:start + 32]]
            opt.zero_grad()
            loss = _slevel_batch_loss(planner, batch)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        sched.step()
        curve.append({"epoch": epoch, "loss": total / len(data),
                      "lr": sched.get_last_lr()[0]})
        if log:
            log(f"slevel epoch {epoch}: loss {curve[-1]['loss']:.4f}")
    return curve


# --------------------------------------------------------------------------
# role-level planner
# --------------------------------------------------------------------------

def _rlevel_examples(samples, cfg: RunConfig):
    """One example per (sample, role with n > 1): input sets in ascending
    set-index order, target permutation = their caption mention order."""
    out = []
    for s in samples:
        for role, n in s.gt_vsr.roles:
            if n < 2:
                continue
            mention = [s.gt_grounding[SubRole(role, k).key()] for k in range(1, n + 1)]
            inputs = sorted(mention)
            mention_of = [mention.index(si) for si in inputs]
            sets = [
                (torch.as_tensor(s.set_features(si), dtype=torch.float32),
                 torch.as_tensor(s.set_boxes(si), dtype=torch.float32),
                 torch.as_tensor(s.set_classes(si), dtype=torch.long))
                for si in inputs]
            out.append((sets, mention_order_target(n, mention_of, cfg.n_max), n))
    return out


def train_rlevel(ranker: RLevelRanker, samples, cfg: RunConfig, log=None) -> list[dict]:
    opt = torch.optim.Adam(ranker.parameters(), lr=cfg.rlevel_lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.ssp_lr_step,
                                            gamma=cfg.ssp_lr_decay)
    rng = np.random.default_rng(cfg.seed + 33)
    examples = _rlevel_examples(samples, cfg)
    curve = []
    for epoch in range(cfg.ssp_epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), 32):
            batch = order[start:start + 32]
            opt.zero_grad()
            loss = torch.zeros(())
            for i in batch:
                sets, target, n = examples[i]
                soft = rlevel_soft(ranker, sets, cfg.sinkhorn_iters)
                loss = loss + F.mse_loss(soft, target)
            loss = loss / len(batch)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        sched.step()
        curve.append({"epoch": epoch, "loss": total / max(1, len(examples)),
                      "lr": sched.get_last_lr()[0]})
        if log:
            log(f"rlevel epoch {epoch}: loss {curve[-1]['loss']:.5f}")
    return curve


# --------------------------------------------------------------------------
# captioner
# --------------------------------------------------------------------------

def mean_greedy_reward(net: CaptionerNet, vocab: Vocab, samples, lex, stats,
                       max_len: int) -> float:
    verb_ids = {v: i for i, v in enumerate(lex.verbs)}
    total = 0.0
    for s in samples:
        tr = decode(net, gt_sequence(s), s.global_feature, vocab, verb_ids,
                    mode="greedy", max_len=max_len)
        total += cider_d(tr.words(vocab), [list(s.gt_caption)], stats)
    return total / len(samples)


def train_captioner_xe(net: CaptionerNet, vocab: Vocab, train_samples,
                       val_samples, lex: VerbLexicon, cfg: RunConfig,
                       stats=None, log=None) -> list[dict]:
    """Teacher-forced stage with early stopping on the validation reward."""
    stats = stats or build_corpus_stats([[list(s.gt_caption)] for s in train_samples])
    items = build_xe_items(train_samples, vocab, lex)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.xe_lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.cap_lr_decay)
    rng = np.random.default_rng(cfg.seed + 44)
    best_reward, best_state, stale = -1.0, None, 0
    curve = []
    for epoch in range(cfg.xe_epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), cfg.cap_batch):
            batch = [items[i] for i in order[start:start + cfg.cap_batch]]
            opt.zero_grad()
            loss = xe_loss(net, vocab, batch, gate_weight=cfg.xe_gate_weight)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        sched.step()
        val_reward = mean_greedy_reward(net, vocab, val_samples, lex, stats,
                                        cfg.max_len)
        curve.append({"epoch": epoch, "loss": total / len(items),
                      "val_cider": val_reward, "lr": sched.get_last_lr()[0]})
        if log:
            log(f"xe epoch {epoch}: loss {curve[-1]['loss']:.3f} "
                f"val CIDEr-D {val_reward:.3f}")
        if val_reward > best_reward + 1e-6:
            best_reward, stale = val_reward, 0
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        else:
            stale += 1
            if stale >= cfg.xe_patience:
                break
    if best_state is not None:
        net.load_state_dict(best_state)
    return curve


def train_captioner_rl(net: CaptionerNet, vocab: Vocab, train_samples,
                       lex: VerbLexicon, cfg: RunConfig, stats=None,
                       log=None) -> list[dict]:
    """Self-critical stage; the reward is the same consensus scorer used for
    evaluation.  The curve starts with a pre-update epoch-0 row."""
    stats = stats or build_corpus_stats([[list(s.gt_caption)] for s in train_samples])

    def reward_fn(tokens, refs):
        return cider_d(tokens, refs, stats)

    verb_ids = {v: i for i, v in enumerate(lex.verbs)}
    opt = torch.optim.Adam(net.parameters(), lr=cfg.rl_lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.cap_lr_decay)
    rng = np.random.default_rng(cfg.seed + 55)
    subset = train_samples[:cfg.rl_subset]
    pre = mean_greedy_reward(net, vocab, subset, lex, stats, cfg.max_len)
    curve = [{"epoch": 0, "greedy_reward": pre, "sample_reward": float("nan"),
              "lr": cfg.rl_lr}]
    if log:
        log(f"rl epoch 0 (pre-update): greedy reward {pre:.3f}")
    seq_cache = [(gt_sequence(s), s) for s in subset]
    step_counter = 0
    for epoch in range(1, cfg.rl_epochs + 1):
        order = rng.permutation(len(seq_cache))
        sampled_total = 0.0
        for start in range(0, len(order), cfg.cap_batch):
            batch = order[start:start + cfg.cap_batch]
            opt.zero_grad()
            loss = torch.zeros(())
            for i in batch:
                seq, s = seq_cache[i]
                step_counter += 1
                surrogate, r, _, _ = scst_update(
                    net, seq, s.global_feature, vocab, verb_ids,
                    [list(s.gt_caption)], reward_fn, max_len=cfg.max_len,
                    seed=cfg.seed * 100003 + step_counter)
                loss = loss + surrogate
                sampled_total += r
            (loss / len(batch)).backward()
            opt.step()
        sched.step()
        greedy = mean_greedy_reward(net, vocab, subset, lex, stats, cfg.max_len)
        curve.append({"epoch": epoch, "greedy_reward": greedy,
                      "sample_reward": sampled_total / len(order),
                      "lr": sched.get_last_lr()[0]})
        if log:
            log(f"rl epoch {epoch}: greedy {greedy:.3f} "
                f"sampled {curve[-1]['sample_reward']:.3f}")
    return curve
