"""Exception types raised across the package."""


class VPNTKError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(VPNTKError, ValueError):
    pass


class InvalidStateError(VPNTKError, RuntimeError):
    pass


class PrivacyViolationError(VPNTKError, RuntimeError):
    """Raised when private data would be touched outside the single allowed release."""


class DegenerateFeatureError(VPNTKError, ArithmeticError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateInputError(VPNTKError, ArithmeticError):
    pass


class DivergenceError(VPNTKError, ArithmeticError):
    def __init__(self, step, eta, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step} (eta={eta})")
        self.step = step
        self.eta = eta
        self.loss = loss


class CheckpointError(VPNTKError):
    pass


class CheckpointMissingError(CheckpointError, FileNotFoundError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic, unsupported version, or a truncated/unparseable file."""


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointKindError(CheckpointError):
    pass


class DatasetError(VPNTKError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)
