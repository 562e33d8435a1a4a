"""End-to-end wiring: grounding, planning, merging, decoding.

A Pipeline owns the four trained components for one (config, grammar) pair
and exposes the inference path: for each control signal, ground its roles,
plan a structure, then merge all planned sequences and decode one caption.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .captioner import CaptionerNet, CaptionTrace, Vocab, decode
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import MissingPrerequisite
from .gsrl import GroundingResult, GsrlNet, ground, sequence_from_grounding
from .merge import merge_many
from .roles import VSR, ensure_valid
from .scene import SceneGrammar
from .sequence import GroundedSequence
from .ssp import RLevelRanker, SLevelPlanner, plan, plan_role_order_beam
from .training import (
    train_captioner_rl,
    train_captioner_xe,
    train_gsrl,
    train_rlevel,
    train_slevel,
)

STAGES = ("gsrl", "ssp", "captioner-xe", "captioner-rl")
_FILES = {"gsrl": "gsrl.pt", "slevel": "slevel.pt", "rlevel": "rlevel.pt",
          "captioner": "captioner.pt"}


class Pipeline:
    def __init__(self, cfg: RunConfig, grammar: SceneGrammar):
        self.cfg = cfg
        self.grammar = grammar
        self.lex = grammar.lexicon()
        self.vocab = Vocab.build(grammar.caption_tokens())
        self.verb_ids = {v: i for i, v in enumerate(self.lex.verbs)}
        torch.manual_seed(cfg.seed)
        self.gsrl = GsrlNet(
            n_verbs=len(self.lex.verbs), d_v=cfg.d_v,
            verb_dim=cfg.gsrl_verb_dim, role_dim=cfg.gsrl_role_dim,
            attn_dim=cfg.gsrl_attn_dim)
        self.slevel = SLevelPlanner(
            n_verbs=len(self.lex.verbs), d_model=cfg.slevel_dim,
            heads=cfg.slevel_heads, layers=cfg.slevel_layers,
            max_len=cfg.slevel_maxlen)
        self.rlevel = RLevelRanker(
            d_v=cfg.d_v, n_classes=len(grammar.class_names),
            visual_dim=cfg.rlevel_visual_dim, class_dim=cfg.rlevel_class_dim,
            hidden=cfg.rlevel_hidden, n_max=cfg.n_max)
        self.captioner = CaptionerNet(
            vocab_size=len(self.vocab), n_verbs=len(self.lex.verbs),
            d_v=cfg.d_v, hidden=cfg.cap_hidden, word_dim=cfg.cap_word_dim,
            attn_dim=cfg.cap_attn_dim, share_attention=cfg.share_attention,
            verb_conditioning=cfg.verb_conditioning)

    # --- checkpoints ---

    def _fp(self, section: str) -> str:
        return self.cfg.fingerprint(section, self.grammar.fingerprint())

    def save(self, ckpt_dir, sections=("gsrl", "slevel", "rlevel", "captioner")) -> None:
        ckpt_dir = Path(ckpt_dir)
        for sec in sections:
            save_checkpoint(ckpt_dir / _FILES[sec], getattr(self, sec), self._fp(sec))

    def load(self, ckpt_dir, sections=("gsrl", "slevel", "rlevel", "captioner")) -> None:
        ckpt_dir = Path(ckpt_dir)
        for sec in sections:
            path = ckpt_dir / _FILES[sec]
            if not path.exists():
                raise MissingPrerequisite(
                    f"checkpoint {path} is missing; train the "
                    f"{'ssp' if sec in ('slevel', 'rlevel') else sec} stage first")
            load_checkpoint(path, getattr(self, sec), self._fp(sec))
        for module in (self.gsrl, self.slevel, self.rlevel, self.captioner):
            module.eval()

    # --- training orchestration ---

    def train_stage(self, stage: str, train_samples, val_samples, log=None) -> list[dict]:
        if stage == "gsrl":
            return train_gsrl(self.gsrl, train_samples, self.lex, self.cfg, log)
        if stage == "ssp":
            c1 = train_slevel(self.slevel, train_samples, self.lex, self.cfg, log)
            c2 = train_rlevel(self.rlevel, train_samples, self.cfg, log)
            return [{"epoch": a["epoch"], "loss": a["loss"],
                     "rlevel_loss": b["loss"], "lr": a["lr"]}
                    for a, b in zip(c1, c2)]
        if stage == "captioner-xe":
            return train_captioner_xe(self.captioner, self.vocab, train_samples,
                                      val_samples, self.lex, self.cfg, log=log)
        if stage == "captioner-rl":
            return train_captioner_rl(self.captioner, self.vocab, train_samples,
                                      self.lex, self.cfg, log=log)
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")

    # --- inference ---

    def ground_vsr(self, sample, vsr: VSR, use_gt: bool = False) -> GroundingResult:
        if use_gt and vsr == sample.gt_vsr:
            return GroundingResult(dict(sample.gt_grounding), np.zeros((0, 0)), vsr)
        return ground(self.gsrl, sample, vsr, self.verb_ids[vsr.verb])

    def plan_vsr(self, sample, vsr: VSR, grounding: GroundingResult,
                 role_order=None) -> GroundedSequence:
        return plan(self.slevel, self.rlevel, vsr, grounding, sample,
                    self.verb_ids[vsr.verb], self.cfg.sinkhorn_iters,
                    role_order=role_order)

    def structure_beam(self, vsr: VSR, beam: int | None = None):
        return plan_role_order_beam(self.slevel, self.verb_ids[vsr.verb], vsr,
                                    beam or self.cfg.beam)

    def caption(self, sample, vsrs: list[VSR], mode: str = "beam",
                beam: int | None = None, max_len: int | None = None,
                seed: int = 0, oracle_verb: bool = False,
                use_gt_grounding: bool = False,
                role_orders: list | None = None):
        """Full inference for one or more control signals.

        Returns (trace, merged sequence, per-signal sequences).  Multiple
        signals are planned independently and merged in the given order.
        """
        for vsr in vsrs:
            ensure_valid(vsr, self.lex, self.cfg.n_max)
        seqs = []
        for i, vsr in enumerate(vsrs):
            grounding = self.ground_vsr(sample, vsr, use_gt=use_gt_grounding)
            order = role_orders[i] if role_orders else None
            seqs.append(self.plan_vsr(sample, vsr, grounding, role_order=order))
        merged = merge_many(seqs)
        oracle = None
        if oracle_verb:
            oracle = {v.verb: self.vocab.index[self.grammar.verb_surfaces[v.verb]]
                      for v in vsrs}
        trace = decode(self.captioner, merged, sample.global_feature, self.vocab,
                       self.verb_ids, mode=mode, beam=beam or self.cfg.beam,
                       max_len=max_len or self.cfg.max_len, seed=seed,
                       oracle_words=oracle)
        return trace, merged, seqs

    def words(self, trace: CaptionTrace) -> list[str]:
        return trace.words(self.vocab)
