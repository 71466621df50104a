"""Exception types shared across the toolkit.

Everything raised on bad user data derives from :class:`DetPipeError`, so
callers (and the CLI) can distinguish data problems from genuine bugs.
"""


class DetPipeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(DetPipeError):
    """A file could not be parsed.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class UnknownClassError(DetPipeError):
    """A class identifier does not exist in the active hierarchy."""


class CycleError(DetPipeError):
    """The hierarchy edge set contains a cycle."""


class ConflictError(DetPipeError):
    """The same image/class pair is verified both positive and negative."""


class SelfPairError(DetPipeError):
    """A co-occurrence pair names the same class as subject and part."""


class MixedGroupError(DetPipeError):
    """Suppression input spans more than one image or class."""


class ShapeMismatchError(DetPipeError):
    """Matrix shapes disagree (logits vs. supervision)."""


class NonFiniteLogitError(DetPipeError):
    """Logit matrix contains NaN or infinity."""


class DomainError(DetPipeError):
    """A numeric argument lies outside its documented domain."""


class MissingScoreError(DetPipeError):
    """A model emits a class it has no validation score for."""


class MissingWeightError(DetPipeError):
    """The weight table has no entry for an emitted (model, class) pair."""


class SubsetViolationError(DetPipeError):
    """An expert run contains detections outside its class subset."""


class EmptyProposalError(DetPipeError):
    """Target assignment was called with no proposals."""
