"""Control-signal data model: semantic roles, verb lexicon, VSR, sub-role expansion.

A control signal (VSR) is one verb plus an ordered list of (role, count)
pairs.  Each role with count n expands into n sub-roles; the verb itself is
modeled as a reserved 25th role so that planned structures are homogeneous
sequences of sub-role tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    CountOutOfRange,
    DuplicateRole,
    EmptyRoles,
    RoleNotAllowedForVerb,
    UnknownVerb,
    VsrParseError,
)

# The 24 PropBank-style argument labels: six numbered arguments (Arg5 is
# rare but real) plus the argument modifiers.  Order fixes the integer ids
# used by embedding tables.
ROLE_NAMES = (
    "Arg0", "Arg1", "Arg2", "Arg3", "Arg4", "Arg5",
    "COM", "LOC", "DIR", "GOL", "MNR", "TMP", "EXT", "REC", "PRD",
    "PRP", "PNC", "CAU", "DIS", "ADV", "ADJ", "MOD", "NEG", "LVB",
)

# Reserved marker for the verb pseudo-role; never counted among the 24.
VERB_MARKER = "VERB"

assert len(ROLE_NAMES) == 24 and len(set(ROLE_NAMES)) == 24


@dataclass(frozen=True, order=True)
class RoleType:
    """One semantic role label (or the reserved verb marker)."""

    id: int
    name: str

    @property
    def is_verb_marker(self) -> bool:
        return self.name == VERB_MARKER

    def __str__(self) -> str:
        return self.name


ROLES = tuple(RoleType(i, name) for i, name in enumerate(ROLE_NAMES))
VERB_ROLE = RoleType(len(ROLE_NAMES), VERB_MARKER)
ALL_ROLE_TOKENS = ROLES + (VERB_ROLE,)  # 25 tokens for embedding tables

_BY_NAME = {r.name: r for r in ALL_ROLE_TOKENS}


def role_by_name(name: str) -> RoleType:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown semantic role label: {name!r}") from None


@dataclass(frozen=True)
class VerbLexicon:
    """Verb inventory with the allowed role set per verb."""

    verbs: tuple[str, ...]
    allowed_roles: dict[str, frozenset[RoleType]]

    def __post_init__(self):
        for v in self.verbs:
            roles = self.allowed_roles.get(v)
            if not roles:
                raise ValueError(f"verb {v!r} has an empty allowed-role set")
            for r in roles:
                if r.is_verb_marker:
                    raise ValueError("the verb marker is not an allowed role")

    def verb_id(self, verb: str) -> int:
        return self.verbs.index(verb)

    def __contains__(self, verb: str) -> bool:
        return verb in self.allowed_roles


@dataclass(frozen=True)
class VSR:
    """Verb-specific semantic role control signal.

    ``roles`` keeps the user-supplied order.  Order is preserved for display
    and evaluation but carries no meaning for planning; the structure planner
    reorders freely.
    """

    verb: str
    roles: tuple[tuple[RoleType, int], ...]

    @property
    def total_subroles(self) -> int:
        return sum(n for _, n in self.roles)

    def to_text(self) -> str:
        """Textual form ``verb role:count role:count ...``; round-trips exactly."""
        parts = [self.verb] + [f"{r.name}:{n}" for r, n in self.roles]
        return " ".join(parts)

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class SubRole:
    """One of the n_i instances of a role; index is 1-based."""

    role: RoleType
    index: int = 1

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("sub-role index is 1-based")
        if self.is_verb and self.index != 1:
            raise ValueError("the verb sub-role always has index 1")

    @property
    def is_verb(self) -> bool:
        return self.role.is_verb_marker

    def key(self) -> str:
        """Canonical textual key, e.g. ``Arg0-1`` or ``LOC-2``."""
        return f"{self.role.name}-{self.index}"

    @staticmethod
    def from_key(key: str) -> "SubRole":
        name, _, idx = key.rpartition("-")
        return SubRole(role_by_name(name), int(idx))

    def __str__(self) -> str:
        return self.key()


VERB_SUBROLE = SubRole(VERB_ROLE, 1)


@dataclass(frozen=True)
class SemanticStructure:
    """Ordered sub-role sequence with exactly one verb token.

    Built by planners or read from dataset files.  ``validate()`` enforces the
    single-verb / no-duplicate invariants; merged multi-verb sequences use the
    plain tuple form instead (see merge module).
    """

    subroles: tuple[SubRole, ...]

    def validate(self) -> "SemanticStructure":
        verbs = [s for s in self.subroles if s.is_verb]
        if len(verbs) != 1:
            raise ValueError(f"structure must contain exactly one verb token, got {len(verbs)}")
        keys = [s.key() for s in self.subroles]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (role, index) pair in structure")
        return self

    def __len__(self) -> int:
        return len(self.subroles)

    def __iter__(self):
        return iter(self.subroles)

    def __getitem__(self, i):
        return self.subroles[i]

    def non_verb(self) -> tuple[SubRole, ...]:
        return tuple(s for s in self.subroles if not s.is_verb)

    def role_order(self) -> tuple[RoleType, ...]:
        """Role-level order (consecutive same-role runs collapsed), verb included."""
        out: list[RoleType] = []
        for s in self.subroles:
            if not out or out[-1] != s.role:
                out.append(s.role)
        return tuple(out)

    def __str__(self) -> str:
        return " ".join(s.key() if not s.is_verb else VERB_MARKER for s in self.subroles)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    error: type | None = None
    message: str = ""

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise self.error(self.message)


def validate_vsr(vsr: VSR, lex: VerbLexicon, n_max: int = 10) -> ValidationResult:
    """Check a control signal against a lexicon without raising.

    Empty role lists are rejected: a control signal that names no role admits
    no caption plan.
    """
    if vsr.verb not in lex:
        return ValidationResult(False, UnknownVerb, f"verb {vsr.verb!r} not in lexicon")
    if not vsr.roles:
        return ValidationResult(False, EmptyRoles, f"control signal for {vsr.verb!r} names no roles")
    allowed = lex.allowed_roles[vsr.verb]
    seen = set()
    for role, count in vsr.roles:
        if role.is_verb_marker:
            return ValidationResult(False, RoleNotAllowedForVerb, "the verb marker is not a role")
        if role not in allowed:
            return ValidationResult(
                False, RoleNotAllowedForVerb, f"role {role.name} not allowed for verb {vsr.verb!r}")
        if role in seen:
            return ValidationResult(False, DuplicateRole, f"role {role.name} listed twice")
        seen.add(role)
        if not (1 <= count <= n_max):
            return ValidationResult(
                False, CountOutOfRange, f"count {count} for role {role.name} outside [1, {n_max}]")
    return ValidationResult(True)


def ensure_valid(vsr: VSR, lex: VerbLexicon, n_max: int = 10) -> VSR:
    validate_vsr(vsr, lex, n_max).raise_if_invalid()
    return vsr


def expand_sub_roles(vsr: VSR) -> tuple[SubRole, ...]:
    """Expand each (role, n) pair to sub-roles (role,1)..(role,n), in order.

    Deterministic and order-preserving; the verb token is not included.
    """
    out = []
    for role, count in vsr.roles:
        out.extend(SubRole(role, k) for k in range(1, count + 1))
    return tuple(out)


def parse_vsr(text: str) -> VSR:
    """Parse the textual form ``verb role:count role:count ...``.

    Raises VsrParseError with the 0-based token position of the problem.
    """
    tokens = text.split()
    if not tokens:
        raise VsrParseError("empty control signal", 0)
    verb = tokens[0]
    if ":" in verb:
        raise VsrParseError("expected a verb before the role list", 0)
    roles = []
    for pos, tok in enumerate(tokens[1:], start=1):
        name, sep, count_s = tok.partition(":")
        if not sep:
            raise VsrParseError(f"role entry {tok!r} is missing ':count'", pos)
        if name not in _BY_NAME or name == VERB_MARKER:
            raise VsrParseError(f"unknown role label {name!r}", pos)
        try:
            count = int(count_s)
        except ValueError:
            raise VsrParseError(f"count {count_s!r} is not an integer", pos) from None
        roles.append((role_by_name(name), count))
    return VSR(verb, tuple(roles))
