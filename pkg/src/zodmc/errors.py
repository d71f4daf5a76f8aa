"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid problem or run configuration (bad dimensions, non-PD covariance, ...)."""


class UnsupportedTargetError(ValueError):
    """Operation requires target features (e.g. analytic scores) that are absent."""


class DominationViolation(RuntimeError):
    """Rejection-sampling proposal failed to dominate the target density.

    Carries the witness point so the caller can inspect where the envelope broke.
    """

    def __init__(self, witness, log_ratio):
        self.witness = witness
        self.log_ratio = float(log_ratio)
        super().__init__(
            f"density ratio exp({self.log_ratio:.3g}) > 1 at {witness}; "
            "the proposal constant M is too small"
        )


class RgoStarved(RuntimeError):
    """Proposal cap exhausted with zero acceptances.

    The caller may retry with a refreshed potential minimum or a larger cap.
    """

    def __init__(self, proposals_used, t=None, x=None):
        self.proposals_used = int(proposals_used)
        self.t = t
        self.x = x
        msg = f"no acceptances after {self.proposals_used} proposals"
        if t is not None:
            msg += f" at t={t:.4g}"
        super().__init__(msg)
