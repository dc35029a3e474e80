"""Exception types shared across the package."""


class CmcError(Exception):
    """Base class for all package errors."""


# -- loop algebra ------------------------------------------------------------

class TailOverflow(CmcError):
    """Discarded Fourier tail mass of a truncated product exceeded budget."""


class FactorizationDiverged(CmcError):
    """Iwasawa factorization residual failed to meet tolerance."""


class NotDeterminantOne(CmcError):
    """Input loop is not (numerically) SL(2,C)-valued on the unit circle."""


class NotPositiveOnCircle(CmcError):
    """Scalar function is not real positive on the unit circle."""


# -- potentials / gauges -----------------------------------------------------

class BranchAmbiguity(CmcError):
    """Square-root branch could not be continued unambiguously."""


class NotPlusType(CmcError):
    """Loop expected to extend holomorphically to the disk does not."""


class SingularGauge(CmcError):
    """Gauge loop is singular (determinant ~ 0) at an evaluation point."""


class LiftBreakdown(CmcError):
    """Rank-1 lift could not be tracked continuously along the path."""


class NotAdapted(CmcError):
    """Residue coefficient at lambda^-1 is not upper triangular."""


# -- monodromy ---------------------------------------------------------------

class PoleTooClose(CmcError):
    """Integration path passes too close to a pole of the potential."""


class StepUnderflow(CmcError):
    """ODE step size underflowed before reaching tolerance."""


class ZeroPatternMismatch(CmcError):
    """Zero/pole pattern of the diagonal-unitarizer data is inconsistent."""


class NotUnitarizableInput(CmcError):
    """Monodromy data fails the unitarizability test."""


class ZeroOnCircle(CmcError):
    """A scalar loop vanishes (numerically) on the unit circle."""


# -- seed --------------------------------------------------------------------

class PolishDiverged(CmcError):
    """Newton polish of the seed potential failed to converge."""


class NoCommonZero(CmcError):
    """Dressing point is not a common zero of the required functions."""


class SeriesUnderflow(CmcError):
    """Theta series failed to converge within the term budget."""


# -- flow --------------------------------------------------------------------

class JacobianRankDrop(CmcError):
    """Flow Jacobian lost rank beyond the pseudo-inverse threshold."""


class CorrectorDiverged(CmcError):
    """Gauss-Newton corrector failed to restore the constraint set."""


class FlowStalled(CmcError):
    """Step size fell below the floor without an accepted step."""


# -- tessellation ------------------------------------------------------------

class DegenerateBeyondTolerance(CmcError):
    """Gram matrix signature is ambiguous at the given tolerance."""


# -- surface -----------------------------------------------------------------

class NonPlanarBoundary(CmcError):
    """A boundary arc of the mesh is not planar within tolerance."""


class PlaneAlignmentFailed(CmcError):
    """Could not align fitted boundary planes to standard position."""


class CellConsistencyFailure(CmcError):
    """Welded mesh cells are mutually inconsistent."""


class UmbilicOnGridPoint(CmcError):
    """Hopf differential vanishes at a curvature-line grid point."""


class NotUnitaryAtEvaluation(CmcError):
    """Frame is not unitary at the Sym evaluation point."""
