"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: data problems (2),
solver failures (3) and configuration mistakes (4).
"""


class RobsensError(Exception):
    exit_code = 1


class DataError(RobsensError):
    exit_code = 2


class SolverError(RobsensError):
    exit_code = 3


class ConfigError(RobsensError, ValueError):
    exit_code = 4


# dataset
class MissingColumn(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class NonNumericValue(DataError):
    pass


class AllTreatedOrAllControl(DataError):
    pass


class RankDeficientDesign(DataError):
    pass


# logistic
class FitError(DataError):
    pass


class Separation(FitError):
    pass


class RankDeficient(FitError):
    pass


class NoConvergence(FitError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


# bounds / whole / simulate
class BoundaryInput(DataError, ValueError):
    pass


class ZeroMass(DataError, ValueError):
    pass


class EmptyGrid(DataError, ValueError):
    pass


class DegenerateArm(DataError):
    pass


# linprog
class NumericalBreakdown(SolverError):
    pass


class NodeLimitExceeded(SolverError):
    pass


class TooManyFailedReplicates(SolverError):
    pass
