"""Exception types raised across the package."""


class DiracBohmError(ValueError):
    """Base class; every error carries a short machine-readable ``code``."""

    code = "Error"


class InvertedBounds(DiracBohmError):
    code = "InvertedBounds"


class NotPowerOfTwo(DiracBohmError):
    code = "NotPowerOfTwo"


class PacketEscapesGrid(DiracBohmError):
    code = "PacketEscapesGrid"


class AllPointsMasked(DiracBohmError):
    code = "AllPointsMasked"


class GridMismatch(DiracBohmError):
    code = "GridMismatch"


class InconsistentGrids(GridMismatch):
    code = "InconsistentGrids"


class UnstableStep(DiracBohmError):
    code = "UnstableStep"


class SeedOutOfRange(DiracBohmError):
    code = "SeedOutOfRange"


class SolverDiverged(DiracBohmError):
    code = "SolverDiverged"


class UnresolvableKernel(DiracBohmError):
    code = "UnresolvableKernel"


class ConfigError(DiracBohmError):
    """Configuration problem, optionally anchored to a line of the source text."""

    code = "ConfigError"

    def __init__(self, message, lines=None, code=None):
        self.lines = tuple(lines or ())
        if code is not None:
            self.code = code
        if self.lines:
            where = ", ".join(str(n) for n in self.lines)
            message = f"line {where}: {message}" if len(self.lines) == 1 else f"lines {where}: {message}"
        super().__init__(message)


class SeedEscapedGrid(DiracBohmError):
    """A sampled path left the grid; paths are flagged rather than aborting the run."""

    code = "SeedEscapedGrid"


class EmptyBin(DiracBohmError):
    code = "EmptyBin"
