"""Exception hierarchy shared by every kvmix module."""


class KVMixError(Exception):
    """Base class for all errors raised by kvmix."""


class ParameterError(KVMixError, ValueError):
    """An argument is outside its documented domain."""


class DataError(KVMixError, ValueError):
    """Matrix data is unusable (NaN/Inf entries, corrupted codes)."""


class FormatError(KVMixError):
    """A KVD1 file has a bad header (magic, version, dtype, padding)."""


class LengthError(KVMixError):
    """A byte payload is shorter or longer than its header promises."""


class WriteError(KVMixError, OSError):
    """Writing an output file failed."""


class SpecError(ParameterError):
    """A synthetic-matrix specification violates its invariants."""


class SizeError(KVMixError):
    """A matrix exceeds the desk-scale dimension guard."""


class AllocationError(ParameterError):
    """No valid (b_k, b_v) pair satisfies the requested budget."""


class ConvergenceError(KVMixError, ArithmeticError):
    """An iterative method failed to converge.

    The last iterate is kept on ``estimate`` so callers can still use it.
    """

    def __init__(self, message, estimate=None, iterations=None):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations
