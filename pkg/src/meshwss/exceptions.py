class MeshWSSError(Exception):
    """Base class for errors raised by meshwss."""


class MeshError(MeshWSSError, ValueError):
    """Structural problem with a triangle mesh."""


class ConfigurationError(MeshWSSError, ValueError):
    pass


class FrameError(MeshWSSError):
    """A tangent frame could not be built at some vertex."""


class TransportError(MeshWSSError):
    pass


class LoftingError(MeshWSSError):
    pass


class SamplingError(MeshWSSError):
    pass


class CheckpointError(MeshWSSError):
    pass


class UsageError(MeshWSSError, RuntimeError):
    pass


class NonFiniteGradientError(MeshWSSError, FloatingPointError):
    pass
