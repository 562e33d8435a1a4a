"""Scene grammar: verbs, role chunk patterns, caption templates, inverse parsing.

A grammar fixes everything the synthetic world knows: which verbs exist,
which roles each verb licenses, which noun classes may fill each role, how a
role is rendered as a token chunk, and the ordered template list that turns a
(verb, role subset) into a caption skeleton.  Captions rendered from a
grammar can always be parsed back to the generating template; the parser
tries templates in id order, so the lowest id wins when a grammar is
deliberately ambiguous.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import GrammarInconsistent, Unparseable
from ..roles import (
    VERB_ROLE,
    VSR,
    RoleType,
    SemanticStructure,
    SubRole,
    VerbLexicon,
    role_by_name,
)


@dataclass(frozen=True)
class RolePattern:
    """Surface pattern of one role chunk.

    First sub-role renders as ``intro + (det,) + (noun,)``; each further
    sub-role of the same role continues with ``and (det) noun``.  Chunks are
    therefore never empty and never start with ``and``.
    """

    intro: tuple[str, ...] = ()
    det: str | None = None

    def first(self, noun: str) -> tuple[str, ...]:
        det = (self.det,) if self.det else ()
        return self.intro + det + (noun,)

    def cont(self, noun: str) -> tuple[str, ...]:
        det = (self.det,) if self.det else ()
        return ("and",) + det + (noun,)


@dataclass(frozen=True)
class Template:
    """One caption skeleton: a verb and the mention order of its roles."""

    id: int
    verb: str
    role_order: tuple[RoleType, ...]  # includes the verb marker exactly once
    weight: float = 1.0

    @property
    def roles(self) -> tuple[RoleType, ...]:
        return tuple(r for r in self.role_order if not r.is_verb_marker)


@dataclass(frozen=True)
class ParsedCaption:
    verb: str
    roles: tuple[RoleType, ...]   # one entry per sub-role, in mention order
    template_id: int

    def subroles(self) -> tuple[SubRole, ...]:
        """Mention-order sub-roles with per-role occurrence indices."""
        seen: dict[str, int] = {}
        out = []
        for r in self.roles:
            seen[r.name] = seen.get(r.name, 0) + 1
            out.append(SubRole(r, seen[r.name]))
        return tuple(out)


@dataclass(frozen=True)
class SceneGrammar:
    """Complete synthetic-world specification; immutable once built."""

    d_v: int
    sigma: float
    seed: int
    verb_surfaces: dict[str, str]                       # base form -> caption token
    verb_roles: dict[str, tuple[RoleType, ...]]          # licensed roles per verb
    noun_classes: dict[tuple[str, str], tuple[str, ...]] # (verb, role name) -> class names
    role_patterns: dict[str, RolePattern]
    templates: tuple[Template, ...]
    class_names: tuple[str, ...] = field(default=())     # id order
    prototypes: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        names = sorted({c for pool in self.noun_classes.values() for c in pool})
        object.__setattr__(self, "class_names", tuple(names))
        rng = np.random.default_rng(self.seed)
        protos = rng.normal(0.0, 1.0, size=(len(names), self.d_v))
        object.__setattr__(self, "prototypes", protos)
        self._check()

    def _check(self) -> None:
        for t in self.templates:
            if sum(r.is_verb_marker for r in t.role_order) != 1:
                raise GrammarInconsistent(f"template {t.id} must place the verb exactly once")
            for r in t.roles:
                if r not in self.verb_roles[t.verb]:
                    raise GrammarInconsistent(
                        f"template {t.id} slot {r.name} is not licensed for verb {t.verb!r}")
                if (t.verb, r.name) not in self.noun_classes:
                    raise GrammarInconsistent(
                        f"no noun classes for ({t.verb!r}, {r.name})")
                if r.name not in self.role_patterns:
                    raise GrammarInconsistent(f"no chunk pattern for role {r.name}")

    # --- vocabulary ---

    def lexicon(self) -> VerbLexicon:
        return VerbLexicon(
            verbs=tuple(sorted(self.verb_surfaces)),
            allowed_roles={v: frozenset(r) for v, r in self.verb_roles.items()},
        )

    def class_id(self, name: str) -> int:
        return self.class_names.index(name)

    def prototype(self, name: str) -> np.ndarray:
        return self.prototypes[self.class_id(name)]

    def caption_tokens(self) -> tuple[str, ...]:
        """Every surface token any template can emit, sorted."""
        toks = set(self.verb_surfaces.values())
        toks.update(self.class_names)
        toks.add("and")
        for p in self.role_patterns.values():
            toks.update(p.intro)
            if p.det:
                toks.add(p.det)
        return tuple(sorted(toks))

    def templates_for(self, verb: str, roles: frozenset[RoleType]) -> list[Template]:
        return [t for t in self.templates
                if t.verb == verb and frozenset(t.roles) == roles]

    def fingerprint(self) -> str:
        """Stable content hash used in dataset headers and checkpoints."""
        doc = {
            "d_v": self.d_v,
            "sigma": self.sigma,
            "seed": self.seed,
            "verbs": sorted(self.verb_surfaces.items()),
            "verb_roles": {v: [r.name for r in rs] for v, rs in sorted(self.verb_roles.items())},
            "nouns": {f"{v}/{r}": list(p) for (v, r), p in sorted(self.noun_classes.items())},
            "patterns": {n: [list(p.intro), p.det] for n, p in sorted(self.role_patterns.items())},
            "templates": [[t.id, t.verb, [r.name for r in t.role_order], t.weight]
                          for t in self.templates],
        }
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # --- rendering ---

    def render(self, template: Template, counts: dict[str, int],
               nouns: dict[str, str]) -> tuple[tuple[str, ...], tuple[int, ...], SemanticStructure]:
        """Render a caption from a template.

        ``counts`` maps role name -> n_i, ``nouns`` maps sub-role key -> class
        name.  Returns (tokens, gates, structure); gates carry a 1 on the last
        token of each sub-role chunk.
        """
        tokens: list[str] = []
        gates: list[int] = []
        subroles: list[SubRole] = []
        for role in template.role_order:
            if role.is_verb_marker:
                chunks = [(SubRole(VERB_ROLE, 1), (self.verb_surfaces[template.verb],))]
            else:
                pat = self.role_patterns[role.name]
                n = counts.get(role.name, 1)
                chunks = []
                for k in range(1, n + 1):
                    sub = SubRole(role, k)
                    noun = nouns.get(sub.key())
                    if noun is None:
                        raise GrammarInconsistent(f"no noun chosen for sub-role {sub.key()}")
                    chunk = pat.first(noun) if k == 1 else pat.cont(noun)
                    chunks.append((sub, chunk))
            for sub, chunk in chunks:
                subroles.append(sub)
                tokens.extend(chunk)
                gates.extend([0] * (len(chunk) - 1) + [1])
        return tuple(tokens), tuple(gates), SemanticStructure(tuple(subroles)).validate()

    # --- inverse parsing ---

    def inverse_parse(self, caption) -> ParsedCaption:
        """Recover (verb, mention-order role sequence) from a rendered caption.

        Templates are tried in id order; the first full match wins.
        """
        tokens = tuple(caption)
        for t in self.templates:
            roles = self._match(t, tokens)
            if roles is not None:
                return ParsedCaption(t.verb, tuple(roles), t.id)
        raise Unparseable(f"no template matches caption {' '.join(tokens)!r}")

    def _match(self, t: Template, tokens: tuple[str, ...]):
        pos = 0
        roles: list[RoleType] = []

        def take(expect: tuple[str, ...]) -> bool:
            nonlocal pos
            if tokens[pos:pos + len(expect)] == expect:
                pos += len(expect)
                return True
            return False

        for role in t.role_order:
            if role.is_verb_marker:
                if not take((self.verb_surfaces[t.verb],)):
                    return None
                continue
            pat = self.role_patterns[role.name]
            pool = self.noun_classes[(t.verb, role.name)]
            if not take(pat.intro + ((pat.det,) if pat.det else ())):
                return None
            if pos >= len(tokens) or tokens[pos] not in pool:
                return None
            pos += 1
            roles.append(role)
            # greedy continuation: "and (det) noun" repeats within the chunk group
            while pos < len(tokens) and tokens[pos] == "and":
                save = pos
                pos += 1
                if pat.det and not take((pat.det,)):
                    pos = save
                    break
                if pos < len(tokens) and tokens[pos] in pool:
                    pos += 1
                    roles.append(role)
                else:
                    pos = save
                    break
        return roles if pos == len(tokens) else None

    def contains_verb(self, caption) -> bool:
        surfaces = set(self.verb_surfaces.values())
        return any(tok in surfaces for tok in caption)

    def find_verb(self, caption) -> str | None:
        """Base form of the first verb-surface token in the caption, if any."""
        by_surface = {s: v for v, s in self.verb_surfaces.items()}
        for tok in caption:
            if tok in by_surface:
                return by_surface[tok]
        return None


def _enumerate_templates(verb_mods: dict[str, tuple[str, ...]],
                         alt_weight: float) -> list[Template]:
    """Dominant order [Arg0, V, Arg1, mods...] plus, when modifiers exist, a
    fronted-modifier alternate.  Ids follow enumeration order."""
    arg0, arg1 = role_by_name("Arg0"), role_by_name("Arg1")
    out: list[Template] = []
    tid = 0
    for verb, mods in verb_mods.items():
        mod_roles = tuple(role_by_name(m) for m in mods)
        subsets = [()]
        for m in mod_roles:
            subsets += [s + (m,) for s in subsets]
        for subset in subsets:
            order = (arg0, VERB_ROLE, arg1) + subset
            out.append(Template(tid, verb, order, 1.0 - (alt_weight if subset else 0.0)))
            tid += 1
            if subset:
                fronted = (subset[-1], arg0, VERB_ROLE, arg1) + subset[:-1]
                out.append(Template(tid, verb, fronted, alt_weight))
                tid += 1
    return out


PEOPLE = ("man", "woman", "boy", "girl", "child")

_VERB_TABLE = {
    # verb: (surface, Arg1 nouns, modifier roles, per-modifier nouns)
    "ride":  ("rides",   ("horse", "bike", "camel"),
              {"LOC": ("field", "street", "park"), "MNR": ("ease", "skill"),
               "TMP": ("morning", "evening")}),
    "eat":   ("eats",    ("pancake", "sandwich", "melon"),
              {"LOC": ("kitchen", "park", "beach"), "TMP": ("morning", "noon"),
               "COM": ("friend", "neighbor")}),
    "read":  ("reads",   ("book", "newspaper", "letter"),
              {"LOC": ("library", "park", "kitchen"), "TMP": ("evening", "night"),
               "MNR": ("care", "ease")}),
    "hold":  ("holds",   ("umbrella", "cup", "flag"),
              {"LOC": ("street", "beach"), "MNR": ("care", "pride")}),
    "chase": ("chases",  ("ball", "cat", "pigeon"),
              {"LOC": ("park", "garden"), "DIR": ("river", "fence")}),
    "wash":  ("washes",  ("car", "dish", "window"),
              {"LOC": ("garage", "kitchen"), "MNR": ("vigor", "care"),
               "TMP": ("morning", "afternoon")}),
    "paint": ("paints",  ("fence", "wall", "portrait"),
              {"LOC": ("studio", "garden"), "MNR": ("skill", "patience"),
               "Arg2": ("brush", "roller")}),
    "throw": ("throws",  ("frisbee", "stone", "stick"),
              {"DIR": ("river", "road"), "GOL": ("target", "doorway"),
               "LOC": ("beach", "park")}),
    "pull":  ("pulls",   ("cart", "sled", "rope"),
              {"DIR": ("road", "path"), "LOC": ("field", "street"),
               "MNR": ("effort", "vigor")}),
    "watch": ("watches", ("television", "parade", "match"),
              {"LOC": ("stadium", "plaza"), "TMP": ("noon", "night"),
               "COM": ("friend", "cousin")}),
    "carry": ("carries", ("basket", "crate", "ladder"),
              {"LOC": ("market", "yard"), "GOL": ("doorway", "shed"),
               "MNR": ("effort", "care")}),
    "kick":  ("kicks",   ("football", "door", "can"),
              {"LOC": ("stadium", "yard"), "DIR": ("fence", "road"),
               "GOL": ("goalpost", "target")}),
}

_ROLE_PATTERNS = {
    "Arg0": RolePattern((), "a"),
    "Arg1": RolePattern((), "a"),
    "Arg2": RolePattern(("using",), "a"),
    "LOC": RolePattern(("at", "the")),
    "DIR": RolePattern(("along", "the")),
    "GOL": RolePattern(("towards", "the")),
    "MNR": RolePattern(("with",)),
    "TMP": RolePattern(("during", "the")),
    "COM": RolePattern(("beside", "a")),
}


def default_grammar(d_v: int = 64, sigma: float = 0.1, seed: int = 0,
                    alt_weight: float = 0.15) -> SceneGrammar:
    """The stock 12-verb grammar: Arg0/Arg1 cores plus up to three modifiers."""
    verb_surfaces = {}
    verb_roles = {}
    noun_classes = {}
    verb_mods = {}
    for verb, (surface, arg1_nouns, mods) in _VERB_TABLE.items():
        verb_surfaces[verb] = surface
        roles = [role_by_name("Arg0"), role_by_name("Arg1")]
        noun_classes[(verb, "Arg0")] = PEOPLE
        noun_classes[(verb, "Arg1")] = arg1_nouns
        for mod, pool in mods.items():
            roles.append(role_by_name(mod))
            noun_classes[(verb, mod)] = pool
        verb_roles[verb] = tuple(roles)
        verb_mods[verb] = tuple(mods)
    templates = tuple(_enumerate_templates(verb_mods, alt_weight))
    return SceneGrammar(
        d_v=d_v, sigma=sigma, seed=seed,
        verb_surfaces=verb_surfaces, verb_roles=verb_roles,
        noun_classes=noun_classes, role_patterns=dict(_ROLE_PATTERNS),
        templates=templates,
    )
