"""Exception types shared across the package."""


class BlindRxError(Exception):
    """Base class for all blindrx errors."""


class DimensionError(BlindRxError, ValueError):
    """Array lengths or shapes are inconsistent with the operation."""


class EmptyInputError(BlindRxError, ValueError):
    """An operation received an empty signal or symbol list."""


class UnsupportedSchemeError(BlindRxError, ValueError):
    """Operation not defined for this modulation kind (linear vs continuous-phase)."""


class UnknownClassError(BlindRxError, ValueError):
    """Scheme not present in the class universe."""


class DegenerateSnrError(BlindRxError, ValueError):
    """SNR is undefined, e.g. noise scaling requested for a zero-energy signal."""


class TrainingFault(BlindRxError, RuntimeError):
    """Non-finite loss or gradient encountered during training."""
