"""Exception hierarchy shared across the package."""


class Cog3dError(Exception):
    """Base class for all library errors."""


class BehindCamera(Cog3dError):
    """Point has non-positive camera-frame depth."""


class EmptyCloud(Cog3dError):
    """No valid depth pixels / no points to work with."""


class ImageTooSmall(Cog3dError):
    """Image below the minimum size for filtering."""


class TooFewPoints(Cog3dError):
    """Not enough points for neighborhood estimation."""


class NoPositiveExamples(Cog3dError):
    """Training set contains no positive instances."""


class NonConvergence(Cog3dError):
    """Optimizer hit its iteration cap before reaching tolerance."""


class NoAnnotations(Cog3dError):
    """Category has no annotated instances."""


class SingleClass(Cog3dError):
    """Binary training data contains only one class."""


class MissingModel(Cog3dError):
    """A required per-category model was not provided."""


class NoCandidates(Cog3dError):
    """Candidate set is empty."""


class NoGroundTruth(Cog3dError):
    """Evaluation requires at least one ground-truth instance."""


class CountMismatch(Cog3dError):
    """Prediction and annotation counts disagree."""


class Malformed(Cog3dError):
    """File container is corrupt or truncated."""


class VersionMismatch(Cog3dError):
    """File container version is not supported."""


class InvalidSpec(Cog3dError):
    """Synthetic scene specification violates its invariants."""
