"""Exception types shared by every module.

Each error carries a short machine-readable ``code`` (the class name) so the
CLI can echo it in reports.
"""


class RamifyError(Exception):
    """Base class for all package errors."""

    @property
    def code(self):
        return type(self).__name__


# cell_model
class MalformedGluing(RamifyError):
    pass


class DepthOverflow(RamifyError):
    pass


class UnknownBuiltin(RamifyError):
    pass


class LevelOutOfRange(RamifyError):
    pass


class DistinctPointsRequired(RamifyError):
    pass


class DepthInsufficient(RamifyError):
    pass


class InsufficientDepth(RamifyError):
    pass


# metrics
class MissingCellSamples(RamifyError):
    pass


class AlphaRange(RamifyError):
    pass


class AdmissibilityRequired(RamifyError):
    pass


class DegenerateTriple(RamifyError):
    pass


# julia
class DegreeCollapse(RamifyError):
    pass


class NoRepellingSeed(RamifyError):
    pass


class NotInvariant(RamifyError):
    pass


class CoverCountMismatch(RamifyError):
    pass


class InjectivityWitness(RamifyError):
    def __init__(self, msg, z1=None, z2=None):
        super().__init__(msg)
        self.z1 = z1
        self.z2 = z2


class UnstableClustering(RamifyError):
    pass


class GluingAmbiguity(RamifyError):
    pass


# homeos
class BoundaryMismatch(RamifyError):
    pass


class NotABranch(RamifyError):
    pass


class ContextMismatch(RamifyError):
    pass


class UnresolvedPrefix(RamifyError):
    pass


class NotPiecewiseCellular(RamifyError):
    pass
