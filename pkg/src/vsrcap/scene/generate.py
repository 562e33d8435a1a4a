"""Procedural dataset generation and region back-filling."""

from __future__ import annotations

import numpy as np

from ..errors import NoProposals
from ..roles import VSR, SubRole
from .grammar import SceneGrammar, Template
from .types import Proposal, ProposalSet, SceneSample


def _sample_box(rng) -> tuple[float, float, float, float]:
    w = rng.uniform(0.15, 0.35)
    h = rng.uniform(0.15, 0.35)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return (x0, y0, x0 + w, y0 + h)


def _jitter_box(rng, box, amount=0.02):
    x0, y0, x1, y1 = box
    d = rng.uniform(-amount, amount, size=4)
    jx0 = min(max(x0 + d[0], 0.0), 0.98)
    jy0 = min(max(y0 + d[1], 0.0), 0.98)
    jx1 = max(min(x1 + d[2], 1.0), jx0 + 0.01)
    jy1 = max(min(y1 + d[3], 1.0), jy0 + 0.01)
    return (jx0, jy0, jx1, jy1)


def _entity_boxes(rng, n: int, min_dx: float = 0.15):
    """n boxes whose center-x values are pairwise separated by min_dx."""
    for _ in range(200):
        boxes = [_sample_box(rng) for _ in range(n)]
        cx = [(b[0] + b[2]) / 2 for b in boxes]
        if all(abs(cx[i] - cx[j]) >= min_dx for i in range(n) for j in range(i + 1, n)):
            return boxes
    # soften the margin rather than loop forever on unlucky streams
    return _entity_boxes(rng, n, min_dx * 0.5)


def generate_sample(grammar: SceneGrammar, image_id: int, rng,
                    singleton_sets: bool = False,
                    multi_count_prob: float = 0.4,
                    max_mods: int = 2) -> SceneSample:
    """Sample one fully annotated scene.

    Entities of a multi-count role are mentioned left-to-right by box center,
    which is the positional signal the sub-role ranking model has to learn.
    """
    verbs = sorted(grammar.verb_surfaces)
    verb = verbs[rng.integers(len(verbs))]
    mods = [r for r in grammar.verb_roles[verb] if r.name not in ("Arg0", "Arg1")]
    chosen = [m for m in mods if rng.random() < 0.5]
    while len(chosen) > max_mods:
        chosen.pop(rng.integers(len(chosen)))
    roles = [r for r in grammar.verb_roles[verb] if r.name in ("Arg0", "Arg1")] + chosen

    counts = {r.name: 1 for r in roles}
    if rng.random() < multi_count_prob:
        candidates = [r for r in roles
                      if len(grammar.noun_classes[(verb, r.name)]) >= 2]
        if candidates:
            counts[candidates[rng.integers(len(candidates))].name] = 2

    candidates = grammar.templates_for(verb, frozenset(roles))
    weights = np.array([t.weight for t in candidates], dtype=float)
    template: Template = candidates[rng.choice(len(candidates), p=weights / weights.sum())]

    # entities: per sub-role a noun class (distinct within a role) and a box;
    # mention order inside a role follows ascending box center-x
    nouns: dict[str, str] = {}
    entity_boxes: dict[str, tuple] = {}
    used_classes: list[str] = []
    for role in template.roles:
        n = counts[role.name]
        pool = [c for c in grammar.noun_classes[(verb, role.name)] if c not in used_classes]
        picked = list(rng.choice(pool, size=n, replace=False))
        used_classes.extend(picked)
        boxes = _entity_boxes(rng, n)
        order = np.argsort([(b[0] + b[2]) / 2 for b in boxes])
        for k in range(1, n + 1):
            sub = SubRole(role, k)
            nouns[sub.key()] = picked[k - 1]
            entity_boxes[sub.key()] = boxes[order[k - 1]]

    tokens, gates, structure = grammar.render(template, counts, nouns)

    # distractor sets: present in the image, never referenced by the signal
    n_distract = int(rng.integers(1, 5))
    free = [c for c in grammar.class_names if c not in used_classes]
    distract_classes = list(rng.choice(free, size=min(n_distract, len(free)), replace=False))

    groups: list[tuple[str | None, str, tuple]] = []  # (subrole key, class, box)
    for sub in structure.non_verb():
        groups.append((sub.key(), nouns[sub.key()], entity_boxes[sub.key()]))
    for c in distract_classes:
        groups.append((None, c, _sample_box(rng)))

    order = rng.permutation(len(groups))
    proposals: list[Proposal] = []
    sets: list[ProposalSet] = []
    grounding: dict[str, int] = {}
    for set_idx, gi in enumerate(order):
        key, cls, box = groups[gi]
        m = 1 if singleton_sets else int(rng.integers(1, 4))
        members = []
        proto = grammar.prototype(cls)
        for _ in range(m):
            feat = (proto + rng.normal(0.0, grammar.sigma, size=grammar.d_v)).astype(np.float32)
            members.append(len(proposals))
            proposals.append(Proposal(feat, grammar.class_id(cls), _jitter_box(rng, box)))
        sets.append(ProposalSet.from_members(members, proposals))
        if key is not None:
            grounding[key] = set_idx

    vsr = VSR(verb, tuple((r, counts[r.name]) for r in template.roles))
    return SceneSample(
        image_id=image_id, proposals=tuple(proposals), sets=tuple(sets),
        gt_vsr=vsr, gt_structure=structure, gt_grounding=grounding,
        gt_caption=tokens, gt_gates=gates,
    )


def generate_dataset(grammar: SceneGrammar, n: int, seed: int,
                     singleton_sets: bool = False) -> list[SceneSample]:
    """Deterministic dataset of n samples; sample i only depends on (seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        out.append(generate_sample(grammar, image_id=i, rng=rng,
                                    singleton_sets=singleton_sets))
    return out


def _set_rank(sample: SceneSample, idx: int) -> float:
    """Back-fill preference: mean detector score when ingested, else total area."""
    scores = [sample.proposals[i].score for i in sample.sets[idx].members]
    if all(s is not None for s in scores):
        return float(np.mean(scores))
    return float(sum(sample.proposals[i].area for i in sample.sets[idx].members))


def fill_missing_regions(sample: SceneSample) -> SceneSample:
    """Assign every ungrounded sub-role to the most probable proposal set.

    Ties break toward the lowest set index.  Fully grounded samples are
    returned unchanged.
    """
    missing = [s for s in sample.gt_structure.non_verb()
               if s.key() not in sample.gt_grounding]
    if not missing:
        return sample
    if not sample.sets:
        raise NoProposals(f"sample {sample.image_id} has no proposal sets")
    ranks = [_set_rank(sample, i) for i in range(len(sample.sets))]
    best = int(np.argmax(ranks))  # argmax keeps the lowest index on ties
    grounding = dict(sample.gt_grounding)
    for sub in missing:
        grounding[sub.key()] = best
    return SceneSample(
        image_id=sample.image_id, proposals=sample.proposals, sets=sample.sets,
        gt_vsr=sample.gt_vsr, gt_structure=sample.gt_structure,
        gt_grounding=grounding, gt_caption=sample.gt_caption,
        gt_gates=sample.gt_gates,
        filled_subroles=tuple(s.key() for s in missing),
    )
