"""Exception hierarchy shared by every subpackage."""


class MMFSError(Exception):
    """Base class for all errors raised by mmfs."""


# tensors / autodiff
class ShapeMismatchError(MMFSError, ValueError):
    pass


class UnknownKindError(MMFSError, ValueError):
    pass


class AxisOutOfRangeError(MMFSError, IndexError):
    pass


class EmptyInputError(MMFSError, ValueError):
    pass


class KernelTooLargeError(MMFSError, ValueError):
    pass


class IndexOutOfRangeError(MMFSError, IndexError):
    pass


class InvalidProbabilityError(MMFSError, ValueError):
    pass


class AllKeysMaskedError(MMFSError, ValueError):
    pass


class DegenerateBatchError(MMFSError, ValueError):
    pass


class NotScalarError(MMFSError, ValueError):
    pass


class DetachedTensorError(MMFSError, RuntimeError):
    pass


class SecondOrderError(MMFSError, RuntimeError):
    """Raised when a consumed tape is differentiated again."""


class NonFiniteOutputError(MMFSError, FloatingPointError):
    pass


class MissingGradError(MMFSError, RuntimeError):
    pass


# text
class EmptyCorpusError(MMFSError, ValueError):
    pass


class NoMaskableTokensError(MMFSError, ValueError):
    pass


# fusion
class KindMismatchError(MMFSError, ValueError):
    pass


class EmptyClassAxisError(MMFSError, ValueError):
    pass


# data
class ManifestParseError(MMFSError, ValueError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnknownLabelError(MMFSError, ValueError):
    pass


class DuplicateIdError(MMFSError, ValueError):
    pass


class BadMagicError(MMFSError, ValueError):
    pass


class TruncatedPixelDataError(MMFSError, ValueError):
    pass


class UnsupportedMaxvalError(MMFSError, ValueError):
    pass


class InsufficientSamplesError(MMFSError, ValueError):
    pass


class EmptyDatasetError(MMFSError, ValueError):
    pass


# training / evaluation
class EmptySplitError(MMFSError, ValueError):
    pass


class NonFiniteLossError(MMFSError, FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


class EmptyMatrixError(MMFSError, ValueError):
    pass


class VersionMismatchError(MMFSError, ValueError):
    pass


class TensorCountMismatchError(MMFSError, ValueError):
    pass


class ConfigError(MMFSError, ValueError):
    pass
