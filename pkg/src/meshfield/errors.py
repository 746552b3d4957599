"""Exception hierarchy shared by all meshfield modules."""


class MeshFieldError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MeshFieldError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateFace(MeshFieldError):
    def __init__(self, face_index, message="zero-area triangle"):
        self.face_index = int(face_index)
        super().__init__(f"face {self.face_index}: {message}")


class EmptyMesh(MeshFieldError):
    pass


class IsolatedVertex(MeshFieldError):
    def __init__(self, vertex_index):
        self.vertex_index = int(vertex_index)
        super().__init__(f"vertex {self.vertex_index} has no incident face")


class ConstantField(MeshFieldError):
    pass


class ConvergenceFailure(MeshFieldError):
    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class NegativeTime(MeshFieldError):
    pass


class ShapeMismatch(MeshFieldError):
    pass


class NonFinite(MeshFieldError):
    def __init__(self, op, name=None):
        self.op = op
        self.name = name
        where = f" in parameter {name!r}" if name else ""
        super().__init__(f"non-finite value produced by {op}{where}")


class NonScalarRoot(MeshFieldError):
    pass


class ConfigError(MeshFieldError):
    pass


class LevelOutOfRange(MeshFieldError):
    pass


class ZeroVector(MeshFieldError):
    pass


class EmptySubset(MeshFieldError):
    pass


class CheckpointError(MeshFieldError):
    pass


class TrainingError(MeshFieldError):
    """Numeric failure during training; carries the iteration index."""

    def __init__(self, iteration, cause):
        self.iteration = int(iteration)
        self.cause = cause
        super().__init__(f"iteration {self.iteration}: {cause}")
