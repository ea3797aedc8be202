"""Exception hierarchy shared across the toolkit."""


class RetrofitError(Exception):
    """Base class for all toolkit errors."""


class Degenerate(RetrofitError):
    """The fixed-point equation (I - A) x = C w has no solution."""


class NotInClass(RetrofitError):
    """A system fails the membership test required by an operation."""


class InconsistentScaling(RetrofitError):
    """Off-diagonal blocks cannot be matched to a primal-dual pattern."""


class DegenerateObjective(RetrofitError):
    pass


class MissingCoefficient(RetrofitError):
    pass


class NotConvexifiable(RetrofitError):
    pass


class StepSizeOutOfRange(RetrofitError):
    pass


class NotApplicable(RetrofitError):
    pass


class RankDeficient(RetrofitError):
    pass


class SingularHessian(RetrofitError):
    pass


class NotOrdered(RetrofitError):
    pass


class ConfigError(RetrofitError):
    """Invalid scenario or run configuration.

    ``field`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class DisconnectedGraph(ConfigError):
    pass
