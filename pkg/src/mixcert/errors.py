"""Exception hierarchy shared by all mixcert modules."""


class MixcertError(Exception):
    """Base class for every error raised by mixcert."""


class InvalidArgument(MixcertError, ValueError):
    pass


class InvalidModel(MixcertError, ValueError):
    """A component density violates its invariants (e.g. non-PD covariance)."""


class ResourceLimit(MixcertError, MemoryError):
    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class NumericalFailure(MixcertError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateCalibration(MixcertError, ValueError):
    """Upper bound is indistinguishable from the random baseline."""


class InconsistentInputs(MixcertError, ValueError):
    """Inputs were computed on different dataset / model-set pairs."""
