"""Line-delimited dataset files.

First line is a meta header ``{"meta": {...}}`` with the grammar hash, seed,
sample count and format version; every further line is one sample record.
Reading tolerates extra per-proposal fields (``score`` from ingested
detections); writing emits exactly the documented fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..roles import SemanticStructure, SubRole, parse_vsr, role_by_name
from .grammar import SceneGrammar
from .types import Proposal, ProposalSet, SceneSample

FORMAT_VERSION = "1"


@dataclass(frozen=True)
class DatasetFile:
    samples: list[SceneSample]
    meta: dict
    dropped_verbless: int = 0


def _sample_record(s: SceneSample) -> dict:
    props = []
    for p in s.proposals:
        rec = {
            "feature": [round(float(x), 6) for x in p.feature],
            "class_id": int(p.class_id),
            "box": [round(float(x), 6) for x in p.box],
        }
        if p.score is not None:
            rec["score"] = round(float(p.score), 6)
        props.append(rec)
    return {
        "image_id": int(s.image_id),
        "d_v": s.d_v,
        "proposals": props,
        "sets": [list(ps.members) for ps in s.sets],
        "vsr": s.gt_vsr.to_text(),
        "structure": [[sub.role.name, sub.index] for sub in s.gt_structure],
        "grounding": dict(s.gt_grounding),
        "caption": list(s.gt_caption),
        "gates": list(s.gt_gates),
    }


def write_dataset(path, samples, grammar: SceneGrammar, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"meta": {
        "grammar_hash": grammar.fingerprint(),
        "seed": int(seed),
        "n": len(samples),
        "version": FORMAT_VERSION,
    }}
    with path.open("w") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in samples:
            fh.write(json.dumps(_sample_record(s), separators=(",", ":")) + "\n")


def _record_sample(rec: dict) -> SceneSample:
    proposals = tuple(
        Proposal(
            feature=np.asarray(p["feature"], dtype=np.float32),
            class_id=int(p["class_id"]),
            box=tuple(float(x) for x in p["box"]),
            score=float(p["score"]) if "score" in p else None,
        )
        for p in rec["proposals"]
    )
    sets = tuple(ProposalSet.from_members(m, proposals) for m in rec["sets"])
    structure = SemanticStructure(
        tuple(SubRole(role_by_name(name), idx) for name, idx in rec["structure"]))
    return SceneSample(
        image_id=int(rec["image_id"]),
        proposals=proposals,
        sets=sets,
        gt_vsr=parse_vsr(rec["vsr"]),
        gt_structure=structure,
        gt_grounding={k: int(v) for k, v in rec["grounding"].items()},
        gt_caption=tuple(rec["caption"]),
        gt_gates=tuple(int(g) for g in rec["gates"]),
    )


def read_dataset(path, grammar: SceneGrammar | None = None,
                 drop_verbless: bool = True) -> DatasetFile:
    """Load a dataset file; samples whose caption names no grammar verb are
    dropped when a grammar is supplied (mirrors ingestion of noisy data)."""
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if "meta" not in header:
            raise ValueError(f"{path}: missing meta header line")
        meta = header["meta"]
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {meta.get('version')!r}")
        samples = []
        dropped = 0
        for line in fh:
            if not line.strip():
                continue
            sample = _record_sample(json.loads(line))
            if drop_verbless and grammar is not None and not grammar.contains_verb(sample.gt_caption):
                dropped += 1
                continue
            samples.append(sample)
    if grammar is not None and meta.get("grammar_hash") != grammar.fingerprint():
        raise ValueError(
            f"{path}: grammar hash {meta.get('grammar_hash')} does not match "
            f"the supplied grammar ({grammar.fingerprint()})")
    return DatasetFile(samples=samples, meta=meta, dropped_verbless=dropped)
