"""Exception types raised across the package."""


class FolError(Exception):
    """Base class for all package errors."""


class MeshParseError(FolError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TopologyError(FolError, ValueError):
    pass


class UnknownNodeSetError(FolError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node set"


class DegenerateElementError(FolError, ValueError):
    pass


class InvalidMaterialError(FolError, ValueError):
    pass


class SingularSystemError(FolError, RuntimeError):
    pass


class DimensionMismatchError(FolError, ValueError):
    pass


class IllConditionedBasisError(FolError, ValueError):
    pass


class StaleTapeError(FolError, ValueError):
    pass


class NonFiniteLossError(FolError, FloatingPointError):
    def __init__(self, message, sample_id=None, epoch=None):
        self.sample_id = sample_id
        self.epoch = epoch
        super().__init__(message)


class MeshMismatchError(FolError, ValueError):
    pass


class UnstructuredMeshError(FolError, ValueError):
    pass


class ConfigError(FolError, ValueError):
    pass
