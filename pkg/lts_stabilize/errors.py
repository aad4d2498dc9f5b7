class LtsError(Exception):
    """Base class for every error raised by lts_stabilize.

    `partial` maps stage names to the results obtained before the failure and `log`
    holds the trajectory recorded so far; both are filled in by the orchestrator.
    """

    def __init__(self, message="", partial=None, log=None):
        super().__init__(message)
        self.partial = dict(partial or {})
        self.log = log


class InvalidConfig(LtsError, ValueError):
    pass


# spectral

class SpectralError(LtsError, ValueError):
    pass


class NonDiagonalizable(SpectralError):
    pass


class DistinctModulusViolated(SpectralError):
    pass


class ModulusOnUnitCircle(SpectralError):
    pass


class BadInstabilityIndex(SpectralError):
    pass


class NotOrthonormal(SpectralError):
    pass


class NotSchurStable(SpectralError):
    pass


class Unstabilizable(SpectralError):
    pass


class DegenerateEigenvalues(SpectralError):
    pass


class InvalidSpectrum(SpectralError):
    pass


# plant

class PlantError(LtsError):
    pass


class DimensionMismatch(PlantError, ValueError):
    pass


class GenerationFailed(PlantError):
    pass


class NoiseSamplingError(PlantError):
    pass


class SimulationOverflow(PlantError):
    """A state norm crossed the overflow guard. `log` ends with the offending state."""


# lts0n

class StageError(LtsError):
    """A learning stage could not produce its estimate."""


class RankDeficient(StageError):
    pass


class SingularGram(StageError):
    pass


class ZeroState(StageError):
    pass


# certify

class CertifyError(LtsError):
    pass


class GapViolated(CertifyError):
    pass
