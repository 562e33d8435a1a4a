"""Exception taxonomy shared by all vsrcap modules."""


class VsrcapError(Exception):
    """Base class for all errors raised by this package."""


# --- control-signal validation ---

class UnknownVerb(VsrcapError):
    pass


class RoleNotAllowedForVerb(VsrcapError):
    pass


class DuplicateRole(VsrcapError):
    pass


class CountOutOfRange(VsrcapError):
    pass


class EmptyRoles(VsrcapError):
    pass


class VsrParseError(VsrcapError):
    """Malformed textual control signal; carries the offending token position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at token {position})")
        self.position = position


# --- scene grammar / dataset ---

class GrammarInconsistent(VsrcapError):
    pass


class Unparseable(VsrcapError):
    pass


class NoProposals(VsrcapError):
    pass


# --- model plumbing ---

class DimensionMismatch(VsrcapError):
    pass


class ShapeMismatch(VsrcapError):
    pass


class NotEnoughSets(VsrcapError):
    pass


class TooManyRoles(VsrcapError):
    pass


class TooManySets(VsrcapError):
    pass


class NonFinite(VsrcapError):
    pass


class EmptyStructure(VsrcapError):
    pass


# --- merge ---

class NoSharedRegions(VsrcapError):
    pass


class InvalidInput(VsrcapError):
    pass


# --- metrics ---

class EmptyReferences(VsrcapError):
    pass


class EmptyCaptions(VsrcapError):
    pass


# --- orchestration ---

class MissingPrerequisite(VsrcapError):
    pass


class CheckpointMismatch(VsrcapError):
    pass


class ConfigError(VsrcapError):
    pass
