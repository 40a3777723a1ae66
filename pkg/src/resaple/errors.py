"""Exception hierarchy shared by the library and the command-line tool."""


class ResapleError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(ResapleError, ValueError):
    """Invalid input data, dimensions or configuration."""

    exit_code = 3


class DimensionError(ValidationError):
    pass


class IsolatedUnitError(ValidationError):
    """A spatial unit has no neighbours, so row-standardisation is undefined."""

    def __init__(self, units):
        self.units = list(units)
        shown = ", ".join(str(u) for u in self.units[:10])
        more = "" if len(self.units) <= 10 else f" (+{len(self.units) - 10} more)"
        super().__init__(f"isolated unit(s) with no neighbours: {shown}{more}")


class RankError(ValidationError):
    pass


class NumericalError(ResapleError, ArithmeticError):
    """A numerical procedure failed or its input is degenerate."""

    exit_code = 4


class DegenerateError(NumericalError):
    pass


class SingularityError(NumericalError):
    pass


class OptimizationError(NumericalError):
    pass


class InternalConsistencyError(NumericalError):
    pass
