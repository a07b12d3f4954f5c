"""Exception hierarchy shared by all pipeline stages."""


class BochnerError(Exception):
    """Base class for every error raised by the package."""

    stage = "unknown"


class NonAntisymmetric(BochnerError):
    stage = "geometry"


class FieldSpecError(BochnerError):
    """Malformed field description (bad wavevector, closedness failure, ...)."""

    stage = "geometry"


class DegenerateWell(BochnerError):
    stage = "geometry"


class ZeroIntensity(BochnerError):
    stage = "geometry"


class RankJump(BochnerError):
    stage = "geometry"


class NotPrequantized(BochnerError):
    stage = "geometry"

    def __init__(self, cycle, flux, residual):
        self.cycle = cycle
        self.flux = flux
        self.residual = residual
        super().__init__(
            f"flux {flux:.12g} through cycle {cycle} is not in 2*pi*Z "
            f"(residual {residual:.3e})"
        )


class HolonomyMismatch(BochnerError):
    stage = "connection"


class PatchOutOfBounds(BochnerError):
    stage = "operators"


class LengthMismatch(BochnerError):
    stage = "operators"


class NoConvergence(BochnerError):
    stage = "eigensolve"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SaturatedSpectrum(BochnerError):
    stage = "analysis"


class EmptySublevel(BochnerError):
    stage = "analysis"


class OddDimension(BochnerError):
    stage = "analysis"


class RankDeficientRegion(BochnerError):
    stage = "analysis"


class IllConditioned(BochnerError):
    stage = "analysis"


class ConfigInvalid(BochnerError):
    stage = "config"

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
