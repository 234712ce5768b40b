"""Exception hierarchy shared by all submodules."""


class SBCError(Exception):
    """Base class for every error raised by sbcompress."""


class NotPositiveDefinite(SBCError):
    pass


class SingularPivot(SBCError):
    pass


class SingularBlock(SBCError):
    pass


class ShapeMismatch(SBCError, ValueError):
    pass


class InvalidTau(SBCError, ValueError):
    pass


class InvalidGeometry(SBCError, ValueError):
    pass


class MissingStats(SBCError, ValueError):
    pass


class VersionMismatch(SBCError):
    pass


class CorruptPayload(SBCError):
    pass


class ShapeInconsistent(SBCError):
    pass


class RateUnattainable(SBCError):
    pass


class ModuleFailure(SBCError):
    """Wraps an error raised while compressing a specific module."""

    def __init__(self, module, cause):
        super().__init__(f"module {module!r}: {type(cause).__name__}: {cause}")
        self.module = module
        self.cause = cause
