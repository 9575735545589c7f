"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs (the CLI exits 1);
everything else deriving from ``CovertFlowError`` is a runtime failure
(the CLI exits 2).
"""


class CovertFlowError(Exception):
    pass


class ValidationError(CovertFlowError, ValueError):
    pass


class DegeneratePool(ValidationError):
    pass


class BundleError(ValidationError):
    pass


class ZeroCapital(ValidationError):
    pass


class UnknownAsset(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyInput(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class MissingFile(ValidationError, FileNotFoundError):
    pass


class InsufficientTail(CovertFlowError):
    pass


class InsufficientCapital(CovertFlowError):
    pass


class EstimationFailed(CovertFlowError):
    pass


class SingularCorrelation(CovertFlowError):
    pass


class DegenerateModel(CovertFlowError):
    pass
