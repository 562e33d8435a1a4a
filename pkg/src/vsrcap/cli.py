"""Command-line surface: gen-data, train, eval, generate, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import VsrcapError
from .evaluation import (
    controllability_rows,
    diversity_rows,
    eval_stats,
    write_report,
    write_tsv,
)
from .pipeline import STAGES, Pipeline
from .plots import plot_diversity_scatter, plot_loss_curves, plot_recall_bars
from .roles import parse_vsr
from .scene import default_grammar, generate_dataset, read_dataset, write_dataset

SPLITS = ("train", "val", "test")


def _build_cfg(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "sinkhorn_iters", None) is not None:
        overrides["sinkhorn_iters"] = args.sinkhorn_iters
    if getattr(args, "n_max", None) is not None:
        overrides["n_max"] = args.n_max
    return load_config(getattr(args, "config", None), overrides)


def _grammar(cfg: RunConfig):
    return default_grammar(d_v=cfg.d_v, sigma=cfg.grammar_sigma,
                           seed=cfg.grammar_seed)


def _split_sizes(cfg: RunConfig) -> dict[str, int]:
    return {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}


def _load_split(data_dir, name, grammar):
    return read_dataset(Path(data_dir) / f"{name}.jsonl", grammar).samples


def cmd_gen_data(args) -> int:
    cfg = _build_cfg(args)
    grammar = _grammar(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = _split_sizes(cfg)
    for i, name in enumerate(SPLITS):
        seed = cfg.seed + i  # disjoint per-split seed streams
        samples = generate_dataset(grammar, sizes[name], seed=seed,
                                   singleton_sets=cfg.singleton_sets)
        write_dataset(out / f"{name}.jsonl", samples, grammar, seed=seed)
        print(f"wrote {out / f'{name}.jsonl'} ({sizes[name]} samples, seed {seed})")
    cfg.save(out / "effective.cfg")
    print(f"grammar hash {grammar.fingerprint()}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_cfg(args)
    grammar = _grammar(cfg)
    train = _load_split(args.data, "train", grammar)
    val = _load_split(args.data, "val", grammar)
    pipe = Pipeline(cfg, grammar)
    ckpt = Path(args.ckpt)
    ckpt.mkdir(parents=True, exist_ok=True)
    if args.stage == "captioner-rl":
        # the reward stage refines the teacher-forced model
        pipe.load(ckpt, sections=("captioner",))
    curve = pipe.train_stage(args.stage, train, val, log=print)
    sections = {"gsrl": ("gsrl",), "ssp": ("slevel", "rlevel"),
                "captioner-xe": ("captioner",), "captioner-rl": ("captioner",)}
    pipe.save(ckpt, sections=sections[args.stage])
    write_tsv(ckpt / f"curve_{args.stage}.tsv", curve,
              [f"stage {args.stage}", f"seed {cfg.seed}"])
    cfg.save(ckpt / "effective.cfg")
    print(f"saved checkpoint sections {sections[args.stage]} to {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_cfg(args)
    grammar = _grammar(cfg)
    test = _load_split(args.data, "test", grammar)
    pipe = Pipeline(cfg, grammar)
    pipe.load(Path(args.ckpt))
    stats = eval_stats(test)
    ctrl = controllability_rows(pipe, test, stats,
                                use_gt_grounding=args.gt_grounding, log=print)
    oracle = controllability_rows(pipe, test, stats, oracle_verb=True,
                                  use_gt_grounding=args.gt_grounding, log=print)
    div = [] if args.no_diversity else diversity_rows(pipe, test, stats,
                                                      seed=cfg.seed, log=print)
    out = Path(args.out)
    report = write_report(out, cfg, grammar.fingerprint(), ctrl, oracle, div)
    cfg.save(out / "effective.cfg")
    print(f"report written to {report}")
    for line in report.read_text().splitlines():
        print(line)
    return 0


def cmd_generate(args) -> int:
    cfg = _build_cfg(args)
    grammar = _grammar(cfg)
    data = read_dataset(Path(args.data), grammar)
    by_id = {s.image_id: s for s in data.samples}
    if args.image_id not in by_id:
        raise VsrcapError(f"image id {args.image_id} not present in {args.data}")
    sample = by_id[args.image_id]
    vsrs = [parse_vsr(text) for text in args.vsr]
    pipe = Pipeline(cfg, grammar)
    pipe.load(Path(args.ckpt))
    trace, merged, _ = pipe.caption(
        sample, vsrs, mode=args.mode, beam=args.beam, max_len=args.max_len,
        seed=cfg.seed, oracle_verb=args.oracle_verb)
    words = pipe.words(trace)
    result = {
        "image_id": sample.image_id,
        "vsrs": [v.to_text() for v in vsrs],
        "caption": " ".join(words),
        "structure": merged.describe(),
        "gates": trace.gates,
        "subrole_index": trace.subrole_index,
        "grounding": {slot.subrole.key(): slot.set_index
                      for slot in merged if not slot.is_verb},
    }
    print(json.dumps(result, indent=2))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    written = []
    if args.ckpt:
        written += plot_loss_curves(args.ckpt, out)
    report_dir = Path(args.report)
    if (report_dir / "report.tsv").exists():
        written.append(plot_recall_bars(report_dir / "report.tsv", out))
    if (report_dir / "diversity.tsv").exists():
        written.append(plot_diversity_scatter(report_dir / "diversity.tsv", out))
    for p in written:
        print(f"wrote {p}")
    if not written:
        raise VsrcapError("nothing to plot: no curves or report found")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsrcap",
        description="Role-controlled caption generation on a synthetic scene grammar")
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/val/test splits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--data", required=True, help="directory with the splits")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--sinkhorn-iters", type=int)
    p.add_argument("--n-max", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the evaluation protocols")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-grounding", action="store_true",
                   help="use annotated grounding instead of the trained model")
    p.add_argument("--no-diversity", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="caption one image from control signals")
    p.add_argument("--data", required=True, help="dataset file with the image")
    p.add_argument("--image-id", type=int, required=True)
    p.add_argument("--vsr", action="append", required=True,
                   help="textual control signal, repeatable: 'verb ROLE:n ...'")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", choices=("greedy", "beam", "sample"), default="beam")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--oracle-verb", action="store_true")
    p.add_argument("--out", help="also write the result as JSON")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plot", help="render figures from a report directory")
    p.add_argument("--report", required=True, help="directory written by eval")
    p.add_argument("--ckpt", help="checkpoint directory with loss curves")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VsrcapError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
