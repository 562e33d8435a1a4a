"""Evaluation protocols and report files.

Controllability: for every test sample the control signal aligned with the
ground-truth caption drives the full pipeline; the generated caption is
scored against the single ground-truth reference plus the recall metrics.

Diversity: per image, two structures from a beam over the planner give two
captions for the ground-truth-aligned signal; two further sampled role
subsets per verb contribute two captions each (six in total).  Caption sets
are scored with distinct-n-gram ratios and the spectral consensus diversity.

The consensus-metric IDF is built from the evaluation split itself, which
the report header records.
"""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import NotEnoughSets, Unparseable
from .metrics import (
    CorpusStats,
    bleu4,
    build_corpus_stats,
    cider_d,
    div_n,
    role_recall,
    self_cider,
)
from .pipeline import Pipeline
from .roles import VSR

REPORT_VERSION = "1"


def eval_stats(samples) -> CorpusStats:
    return build_corpus_stats([[list(s.gt_caption)] for s in samples])


def controllability_rows(pipe: Pipeline, samples, stats: CorpusStats,
                         oracle_verb: bool = False,
                         use_gt_grounding: bool = False,
                         mode: str = "beam", log=None) -> list[dict]:
    rows = []
    for s in samples:
        trace, merged, _ = pipe.caption(
            s, [s.gt_vsr], mode=mode, oracle_verb=oracle_verb,
            use_gt_grounding=use_gt_grounding)
        words = pipe.words(trace)
        rec = role_recall(words, s.gt_vsr, pipe.grammar)
        rows.append({
            "image_id": s.image_id,
            "caption": " ".join(words),
            "b4": bleu4(words, [list(s.gt_caption)]) if words else 0.0,
            "cider": cider_d(words, [list(s.gt_caption)], stats),
            "r_v": rec.r_v,
            "r_sr1": rec.r_sr1,
            "r_sr2": rec.r_sr2,
            "planned": merged.describe(),
        })
        if log and len(rows) % 25 == 0:
            log(f"controllability: {len(rows)}/{len(samples)}")
    return rows


def _sampled_vsr(rng: random.Random, pipe: Pipeline, verb: str) -> VSR:
    allowed = sorted(pipe.lex.allowed_roles[verb], key=lambda r: r.id)
    k = rng.randint(1, min(3, len(allowed)))
    picked = rng.sample(allowed, k)
    return VSR(verb, tuple((r, 1) for r in picked))


def _distinct_orders(pipe: Pipeline, vsr: VSR, want: int = 2):
    hyps = pipe.structure_beam(vsr)
    orders = []
    for order, _ in hyps:
        if order not in orders:
            orders.append(order)
        if len(orders) == want:
            break
    return orders


def diversity_rows(pipe: Pipeline, samples, stats: CorpusStats,
                   seed: int = 0, log=None) -> list[dict]:
    rows = []
    for s in samples:
        rng = random.Random((seed, s.image_id))
        caps: list[list[str]] = []
        # two structures for the ground-truth-aligned signal
        for order in _distinct_orders(pipe, s.gt_vsr):
            trace, _, _ = pipe.caption(s, [s.gt_vsr], mode="beam",
                                       role_orders=[order])
            caps.append(pipe.words(trace))
        two = [c for c in caps]
        # two sampled role subsets, two structures each
        for _ in range(2):
            vsr = _sampled_vsr(rng, pipe, s.gt_vsr.verb)
            try:
                orders = _distinct_orders(pipe, vsr)
                for order in orders[:2]:
                    trace, _, _ = pipe.caption(s, [vsr], mode="beam",
                                               role_orders=[order])
                    caps.append(pipe.words(trace))
            except NotEnoughSets:
                continue
        caps = [c if c else ["<empty>"] for c in caps]
        two = [c if c else ["<empty>"] for c in two]
        baseline = [caps[0]] * len(caps)
        ref = [list(s.gt_caption)]
        rows.append({
            "image_id": s.image_id,
            "n_caps": len(caps),
            "div1_2": div_n(two, 1),
            "div2_2": div_n(two, 2),
            "self_cider_2": self_cider(two, stats) if len(two) >= 2 else 0.0,
            "div1": div_n(caps, 1),
            "div2": div_n(caps, 2),
            "self_cider": self_cider(caps, stats) if len(caps) >= 2 else 0.0,
            "div1_identical": div_n(baseline, 1),
            "best_cider": max(cider_d(c, ref, stats) for c in caps),
            "best_b4": max(bleu4(c, ref) for c in caps),
        })
        if log and len(rows) % 25 == 0:
            log(f"diversity: {len(rows)}/{len(samples)}")
    return rows


def aggregate(rows: list[dict], keys) -> dict:
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


CONTROLLABILITY_KEYS = ("b4", "cider", "r_v", "r_sr1", "r_sr2")
DIVERSITY_KEYS = ("div1_2", "div2_2", "self_cider_2", "div1", "div2",
                  "self_cider", "div1_identical", "best_cider", "best_b4")


def write_tsv(path, rows: list[dict], header_lines=()) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        if not rows:
            return
        cols = list(rows[0].keys())
        fh.write("\t".join(cols) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(r[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def read_report(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or line == "metric\tvalue" or not line.strip():
            continue
        key, _, value = line.partition("\t")
        out[key] = float(value)
    return out


def write_report(out_dir, cfg: RunConfig, grammar_hash: str,
                 ctrl_rows, oracle_rows, div_rows) -> Path:
    """Emit the flat metric report plus the per-sample tables."""
    out_dir = Path(out_dir)
    header = [
        f"report version {REPORT_VERSION}",
        f"grammar {grammar_hash}",
        "idf source: evaluation split references",
        f"seed {cfg.seed}",
    ]
    agg = aggregate(ctrl_rows, CONTROLLABILITY_KEYS)
    metrics = [{"metric": k, "value": v} for k, v in agg.items()]
    if oracle_rows:
        oracle = aggregate(oracle_rows, CONTROLLABILITY_KEYS)
        metrics += [{"metric": f"oracle_{k}", "value": v} for k, v in oracle.items()]
    if div_rows:
        dagg = aggregate(div_rows, DIVERSITY_KEYS)
        metrics += [{"metric": k, "value": v} for k, v in dagg.items()]
    report = out_dir / "report.tsv"
    write_tsv(report, metrics, header)
    write_tsv(out_dir / "samples.tsv", ctrl_rows, header)
    if oracle_rows:
        write_tsv(out_dir / "samples_oracle.tsv", oracle_rows, header)
    if div_rows:
        write_tsv(out_dir / "diversity.tsv", div_rows, header)
    return report
