"""Exception hierarchy for stripwalk.

Every error carries enough context (layer index, step, value) to locate the
failure without re-running.
"""


class StripWalkError(Exception):
    """Base class for all package errors."""


class NumericalError(StripWalkError):
    """A computation failed a numerical certificate."""


class ConfigInvalid(StripWalkError):
    """The configuration or generator spec is malformed."""


# env
class NonStochasticSpec(ConfigInvalid):
    pass


class WidthMismatch(ConfigInvalid):
    pass


class UnknownGeneratorTag(ConfigInvalid):
    pass


class SingularLayer(NumericalError):
    pass


# hierarchy
class BufferTooSmall(NumericalError):
    pass


class SingularResolvent(NumericalError):
    pass


class NonPositiveInput(StripWalkError):
    pass


# harmonic
class DegenerateMartingale(NumericalError):
    pass


class UnboundedIncrements(NumericalError):
    pass


class NormalizationDegenerate(NumericalError):
    pass


class NonConvergent(NumericalError):
    pass


class TailNotCauchy(NumericalError):
    pass


class TruncationInsufficient(NumericalError):
    pass


class InsufficientWindow(StripWalkError):
    pass


# green
class SingularInterior(NumericalError):
    pass


# walker / experiments
class WindowEscape(StripWalkError):
    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class EmptySample(StripWalkError):
    pass


class InsufficientCounts(StripWalkError):
    pass
