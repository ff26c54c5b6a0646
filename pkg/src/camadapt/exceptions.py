"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`CamAdaptError` so callers (and the CLI) can separate data problems
from programming errors.
"""


class CamAdaptError(Exception):
    """Base class for all package errors."""


class MissingFile(CamAdaptError, FileNotFoundError):
    pass


class DimensionMismatch(CamAdaptError, ValueError):
    pass


class DuplicateSampleKey(CamAdaptError, ValueError):
    pass


class NonFiniteFeature(CamAdaptError, ValueError):
    pass


class RankDeficient(CamAdaptError, ValueError):
    """Fewer independent directions than requested components."""


class NotEnoughIdentities(CamAdaptError, ValueError):
    pass


class InvalidConfig(CamAdaptError, ValueError):
    pass


class NoSimilarPairs(CamAdaptError, ValueError):
    pass


class SingularCovariance(CamAdaptError, ValueError):
    pass


class Diverged(CamAdaptError, RuntimeError):
    """Non-finite objective during optimisation; lower the learning rate."""


class SingleClass(CamAdaptError, ValueError):
    pass


class SubspaceTooLarge(CamAdaptError, ValueError):
    """Subspace dimension exceeds the size of its orthogonal complement."""


class OutOfRange(CamAdaptError, ValueError):
    pass


class EmptyInput(CamAdaptError, ValueError):
    pass


class NoSources(CamAdaptError, ValueError):
    pass


class NoTargets(CamAdaptError, ValueError):
    pass


class MissingMetric(CamAdaptError, KeyError):
    pass


class MissingKernel(CamAdaptError, KeyError):
    pass


class ProbeIdentityMissing(CamAdaptError, ValueError):
    pass


class IncompatibleReports(CamAdaptError, ValueError):
    pass
