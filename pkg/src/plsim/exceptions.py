class PLSIMError(Exception):
    """Base class for numerical failures raised by this package."""


class DegenerateNeighborhood(PLSIMError):
    """The local-linear system at an evaluation point is (nearly) singular."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"degenerate smoothing neighbourhood at t={t:.6g}")


class DegenerateFitError(PLSIMError):
    pass


class NoValidBandwidthError(PLSIMError):
    pass


class RankDeficiencyError(PLSIMError, ArithmeticError):
    """A covariance or normal-equation matrix is singular."""


class CollinearityError(RankDeficiencyError):
    """Residualized linear covariates are collinear."""


class ConstraintViolation(PLSIMError, ValueError):
    """Reduced index coordinates lie outside the open unit ball."""


class PivotSignError(PLSIMError, ValueError):
    pass


class StudyError(PLSIMError):
    """Too many Monte Carlo replicates failed."""
