"""Exception hierarchy for the sldsim package.

Every error raised by the library derives from ``SldsimError`` so callers
can catch the whole family with one clause. Exceptions carry the offending
values as attributes where that helps diagnosis.
"""

from __future__ import annotations


class SldsimError(Exception):
    """Base class for all sldsim errors."""


class NoRegion(SldsimError):
    """No region of the model contains the given state (invalid partition)."""

    def __init__(self, x) -> None:
        self.x = x
        super().__init__(f"no region contains state {x!r}")


class DivergenceError(SldsimError):
    """A trajectory left the numerically representable range."""

    def __init__(self, step_index: int, norm: float) -> None:
        self.step_index = step_index
        self.norm = norm
        super().__init__(
            f"state norm {norm:.3e} exceeded the divergence guard at step {step_index}"
        )


class ClassificationConflict(SldsimError):
    """A polyhedral region's declared boundedness contradicts probing."""

    def __init__(self, region_index: int, detail: str) -> None:
        self.region_index = region_index
        super().__init__(f"region {region_index}: {detail}")


class UncoveredExterior(SldsimError):
    """No region intersects the exterior of the classification ball."""


class NotCertifiable(SldsimError):
    """The contraction hypothesis fails: some exterior gain has norm >= 1."""

    def __init__(self, gamma: float, region_index: int) -> None:
        self.gamma = gamma
        self.region_index = region_index
        super().__init__(
            f"gamma = {gamma!r} >= 1 (squared spectral norm of region "
            f"{region_index}); the chain need not be geometrically ergodic"
        )


class DriftViolation(SldsimError):
    """A sampled state violated a drift inequality the certificate promises."""

    def __init__(self, violations) -> None:
        self.violations = violations
        worst = violations[0]
        super().__init__(
            f"{len(violations)} drift violation(s); worst: {worst}"
        )


class MinorizationViolation(SldsimError):
    """P(x, A) fell below beta * nu_hat(A) for a checked pair."""


class RejectionStall(SldsimError):
    """The residual-kernel rejection sampler failed to accept for too long."""

    def __init__(self, attempts: int) -> None:
        self.attempts = attempts
        super().__init__(
            f"residual sampler rejected {attempts} consecutive proposals; "
            "the splitting probability is likely invalid for this small set"
        )


class InsufficientBlocks(SldsimError):
    """Too few complete regeneration blocks for the requested estimator."""

    def __init__(self, have: int, need: int) -> None:
        self.have = have
        self.need = need
        super().__init__(f"need >= {need} complete blocks, have {have}")


class NoRegeneration(SldsimError):
    """The log contains no regeneration usable for the requested quantity."""


class MaxStepsExceeded(SldsimError):
    """The stopping rule did not fire within the step cap (censored run)."""

    def __init__(self, cap: int) -> None:
        self.cap = cap
        super().__init__(f"stopping rule did not fire within {cap} steps")


class ConfigError(SldsimError):
    """A configuration file is missing, unreadable, or malformed."""
