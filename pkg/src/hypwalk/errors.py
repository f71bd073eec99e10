"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: precondition failures exit with 2,
resource and precision failures with 3.
"""


class HypwalkError(Exception):
    """Base class for all library errors."""


class AlphabetError(HypwalkError, ValueError):
    """A word uses a letter outside the group's alphabet."""


class PresentationError(HypwalkError, ValueError):
    """A presentation fails the checks required for Dehn reduction."""


class IncompatibleGroupsError(HypwalkError, ValueError):
    """Elements or measures from different groups were combined."""


class PreconditionError(HypwalkError):
    """An operation's documented precondition does not hold."""


class UnsupportedError(PreconditionError):
    """The requested backend cannot handle this group or measure."""


class InsufficientDataError(PreconditionError):
    """Too few usable data points for a fit or estimate."""


class DiagnosticsError(PreconditionError):
    """A fit was requested in a configuration that would silently mislead."""


class ResourceError(HypwalkError):
    """An enumeration or support-size cap would be exceeded."""


class PrecisionError(HypwalkError):
    """Interval widths or conditioning make the result untrustworthy."""


class DivergenceError(PrecisionError):
    """A series is evaluated outside its region of convergence."""


class NonConvergenceError(HypwalkError):
    """An iterative construction failed to stabilise."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
