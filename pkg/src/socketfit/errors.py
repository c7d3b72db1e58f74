"""Exception types raised across the pipeline."""


class SocketfitError(Exception):
    """Base class for all package errors."""


class ParseError(SocketfitError, ValueError):
    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class InvariantViolation(SocketfitError, ValueError):
    pass


class MeshIOError(SocketfitError, OSError):
    pass


class EmptyMesh(SocketfitError, ValueError):
    pass


class TopologyMismatch(SocketfitError, ValueError):
    pass


class DegenerateLandmarks(SocketfitError, ValueError):
    pass


class EmptySlice(SocketfitError, ValueError):
    pass


class RegistrationDiverged(SocketfitError, RuntimeError):
    def __init__(self, message, residual=None, mesh=None):
        super().__init__(message)
        self.residual = residual
        self.mesh = mesh


class InsufficientSamples(SocketfitError, ValueError):
    pass


class DimensionMismatch(SocketfitError, ValueError):
    pass


class ShapeMismatch(SocketfitError, ValueError):
    pass


class NonFiniteLoss(SocketfitError, ArithmeticError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class KTooLarge(SocketfitError, ValueError):
    pass


class DatasetTooSmall(SocketfitError, ValueError):
    pass


class ModeMismatch(SocketfitError, ValueError):
    pass


class EmptyInput(SocketfitError, ValueError):
    pass


class InvalidParams(SocketfitError, ValueError):
    pass


class ConfigError(SocketfitError, ValueError):
    pass
