"""Regenerative (split-chain) simulation and steady-state estimators.

A minorization ``P(x, .) >= beta nu_hat(.)`` for ``x`` in a small set ``S``
lets each transition out of ``S`` be decomposed as a mixture: with
probability ``beta`` the next state is drawn from ``nu_hat`` (a
regeneration), otherwise from the residual kernel. Marginally nothing
changes, but the regeneration times cut the trajectory into i.i.d. blocks,
which powers unbiased ratio estimators and block-based error bars.

The certified minorization constant is far too small to ever fire in a
feasible run, so simulation uses an operational pair: a smaller ball with
a much larger (still valid) constant. Both pairs are plain
:class:`Minorization` values; estimators do not care which produced a log.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientBlocks,
    MinorizationViolation,
    NoRegeneration,
    RejectionStall,
)
from .ergodicity import Certificate, log_ball_volume
from .model import ClosedLoop, RewardSpec, SldsModel, region_of

LOG_2PI = math.log(2.0 * math.pi)

MAX_REJECTIONS = 1_000_000


@dataclass(frozen=True)
class Minorization:
    """A small set and regeneration measure usable for splitting.

    ``kind`` selects the measure: ``"ball"`` is the uniform distribution
    on the ball of radius ``s_radius`` (the standard choice); ``"gaussian"``
    is N(0, I) with ``S`` the whole space, valid only for identically zero
    dynamics (then the kernel equals the measure), provided as an i.i.d.
    debug mode.
    """

    n: int
    s_radius: float
    log_beta: float
    kind: str = "ball"
    log_vol: float = field(default=math.nan, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("ball", "gaussian"):
            raise ValueError(f"unknown minorization kind {self.kind!r}")
        if self.kind == "ball" and math.isnan(self.log_vol):
            object.__setattr__(
                self, "log_vol", log_ball_volume(self.n, self.s_radius))

    @classmethod
    def from_certificate(cls, cert: Certificate) -> "Minorization":
        """The certified pair: ball ``S`` with the closed-form constant."""
        return cls(n=cert.n, s_radius=cert.s_radius, log_beta=cert.log_beta)

    def beta(self) -> float:
        return math.exp(self.log_beta)

    def contains(self, x: np.ndarray) -> bool:
        if self.kind == "gaussian":
            return True
        return float(np.linalg.norm(x)) <= self.s_radius

    def log_density(self, y: np.ndarray) -> float:
        """Log density of the regeneration measure at ``y``."""
        if self.kind == "gaussian":
            return -(self.n / 2.0) * LOG_2PI - 0.5 * float(np.dot(y, y))
        if float(np.linalg.norm(y)) > self.s_radius:
            return -math.inf
        return -self.log_vol

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(self.n)
        z = rng.standard_normal(self.n)
        z /= np.linalg.norm(z)
        return self.s_radius * rng.random() ** (1.0 / self.n) * z


def operational_minorization(cert: Certificate,
                             radius: float | None = None) -> Minorization:
    """A smaller ball with a usably large minorization constant.

    The closed form bounds the transition density over the ball of radius
    ``radius`` from below by the normal density at the worst displacement
    ``D = radius (1 + max_gain)``. Turning a density floor into a constant
    against the uniform measure multiplies by the ball volume; that factor
    is kept only when it hurts (volume < 1), so the constant stays valid
    for arbitrarily small balls and conservative for large ones.

    The default radius is ``2 / (1 + max_gain)``, which makes ``D = 2``
    and keeps the constant above ``exp(-3)`` in one dimension.
    """
    max_gain = math.sqrt(max(cert.gamma, cert.c))
    if radius is None:
        radius = 2.0 / (1.0 + max_gain)
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = radius * (1.0 + max_gain)
    log_vol = log_ball_volume(cert.n, radius)
    log_beta = -(cert.n / 2.0) * LOG_2PI - 0.5 * d * d + min(0.0, log_vol)
    return Minorization(n=cert.n, s_radius=radius, log_beta=log_beta)


def iid_debug_minorization(n: int) -> Minorization:
    """Full splitting for zero dynamics: ``S`` is everything, beta is 1."""
    return Minorization(n=n, s_radius=math.inf, log_beta=0.0,
                        kind="gaussian", log_vol=math.nan)


def check_minorization_pointwise(cl: ClosedLoop, model: SldsModel,
                                 minor: Minorization,
                                 rng: np.random.Generator,
                                 n_grid: int = 256) -> float:
    """Validate ``beta * q(y) <= p_x(y)`` on sampled (x, y) grid pairs.

    Returns the smallest log margin ``log p_x(y) - log beta - log q(y)``
    over the grid; raises if any sampled pair violates the inequality
    (which would make the residual kernel of :func:`split_step` invalid).
    """
    worst = math.inf
    for _ in range(n_grid):
        x = minor.sample(rng)
        y = minor.sample(rng)
        mean = cl.ahat[region_of(model, x)] @ x
        diff = y - mean
        log_p = -(minor.n / 2.0) * LOG_2PI - 0.5 * float(np.dot(diff, diff))
        margin = log_p - minor.log_beta - minor.log_density(y)
        worst = min(worst, margin)
    if worst < -1e-9:
        raise MinorizationViolation(
            f"beta * q(y) exceeds the transition density by a log margin of "
            f"{worst!r} on the validation grid")
    return worst


@dataclass(frozen=True)
class SplitState:
    """A state annotated with the regeneration bit of its outgoing step."""

    x: np.ndarray
    theta: int


def sample_nu_hat(minor: Minorization | Certificate,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw from the regeneration measure (uniform on the ball ``S``)."""
    if isinstance(minor, Certificate):
        minor = Minorization.from_certificate(minor)
    return minor.sample(rng)


def split_step(x: np.ndarray, cl: ClosedLoop, model: SldsModel,
               minor: Minorization, beta_op: float,
               rng: np.random.Generator) -> tuple[SplitState, np.ndarray]:
    """One split-chain transition; marginally identical to the plain step.

    Outside ``S`` the bit is 0 and the step is a plain Gaussian step. Inside
    ``S`` the bit is Bernoulli(``beta_op``); on 1 the next state is a fresh
    draw from ``nu_hat``, on 0 it comes from the residual kernel, sampled by
    rejection: propose a plain step ``y`` and accept with probability
    ``1 - beta_op q(y) / p_x(y)``, which is a valid probability because the
    minorization guarantees ``p_x >= beta_op q`` pointwise on ``S``.

    Raises
    ------
    RejectionStall
        After 10^6 consecutive rejections, which indicates ``beta_op`` is
        not actually dominated by the transition density.
    """
    if not (0.0 < beta_op <= 1.0):
        raise ValueError("beta_op must lie in (0, 1]")
    if math.log(beta_op) > minor.log_beta + 1e-12:
        raise ValueError(
            f"beta_op = {beta_op!r} exceeds the certified minorization "
            f"constant exp({minor.log_beta!r})")
    j = region_of(model, x)
    mean = cl.ahat[j] @ x
    n = model.n
    if not minor.contains(x):
        return SplitState(x=x, theta=0), mean + rng.standard_normal(n)
    if rng.random() < beta_op:
        return SplitState(x=x, theta=1), minor.sample(rng)
    log_beta_op = math.log(beta_op)
    for _ in range(MAX_REJECTIONS):
        w = rng.standard_normal(n)
        y = mean + w
        log_q = minor.log_density(y)
        if log_q == -math.inf:
            return SplitState(x=x, theta=0), y
        log_p = -(n / 2.0) * LOG_2PI - 0.5 * float(np.dot(w, w))
        # reject with probability beta_op * q(y) / p_x(y)
        if rng.random() >= math.exp(log_beta_op + log_q - log_p):
            return SplitState(x=x, theta=0), y
    raise RejectionStall(MAX_REJECTIONS)


@dataclass(frozen=True)
class RegenerationLog:
    """A split-chain trajectory with its regeneration bookkeeping.

    ``horizon`` is the nominal estimation horizon N. The stored trajectory
    runs through the first regeneration time strictly after N (so it is
    longer than N whenever that regeneration was found), because block
    statistics and the overshoot decomposition need the tail.

    Derived fields follow the standard definitions: ``taus`` are the times
    t with bit ``theta_{t-1} = 1``; ``blocks`` are the half-open index
    ranges between consecutive regenerations, which partition
    ``[taus[0], taus[-1])``; ``r_at_horizon`` counts regenerations up to and
    including the first one past N; ``overshoot`` is that time minus N.
    """

    states: np.ndarray            # (L, n), L = taus[-1] when regeneration closed
    thetas: np.ndarray            # (L,) uint8, bit t belongs to step t -> t+1
    horizon: int
    taus: tuple[int, ...]
    blocks: tuple[tuple[int, int], ...]
    excursion_lengths: tuple[int, ...]
    r_at_horizon: int | None
    overshoot: int | None

    @classmethod
    def from_raw(cls, states: np.ndarray, thetas: np.ndarray,
                 horizon: int) -> "RegenerationLog":
        """Derive all bookkeeping from raw states and bits.

        The log is truncated at the first regeneration time past the
        horizon when one exists; later material contributes nothing to any
        estimator defined here.
        """
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        thetas = np.asarray(thetas, dtype=np.uint8)
        if thetas.shape[0] != states.shape[0]:
            raise ValueError("need one bit per state")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        taus_all = np.flatnonzero(thetas == 1) + 1
        beyond = taus_all[taus_all > horizon]
        if beyond.size:
            cut = int(beyond[0])
            taus = tuple(int(t) for t in taus_all[taus_all <= cut])
            states = states[:cut]
            thetas = thetas[:cut]
            r_at = len(taus)
            overshoot = cut - horizon
        else:
            taus = tuple(int(t) for t in taus_all)
            r_at = None
            overshoot = None
        blocks = tuple((taus[i], taus[i + 1]) for i in range(len(taus) - 1))
        excursions = tuple(b - a for a, b in blocks)
        return cls(states=states, thetas=thetas, horizon=horizon, taus=taus,
                   blocks=blocks, excursion_lengths=excursions,
                   r_at_horizon=r_at, overshoot=overshoot)

    @property
    def block_count(self) -> int:
        return len(self.blocks)


def simulate_regenerative(cl: ClosedLoop, model: SldsModel,
                          minor: Minorization, beta_op: float, horizon: int,
                          rng: np.random.Generator, x0_mode: str = "nu_hat",
                          x0: np.ndarray | None = None,
                          max_extension: int = 1_000_000) -> RegenerationLog:
    """Run the split chain to the first regeneration past ``horizon``.

    ``x0_mode`` is ``"nu_hat"`` (draw the start from the regeneration
    measure, making every inter-regeneration block identically distributed)
    or ``"given"`` (use ``x0``). If no regeneration occurs within
    ``max_extension`` steps past the horizon the log is returned without a
    closing regeneration; estimators then fall back to plain averages.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if x0_mode == "nu_hat":
        x = minor.sample(rng)
    elif x0_mode == "given":
        if x0 is None:
            raise ValueError("x0_mode='given' requires x0")
        x = np.asarray(x0, dtype=float)
    else:
        raise ValueError(f"unknown x0_mode {x0_mode!r}")

    cap = horizon + max_extension
    states = np.empty((min(cap, 2 * horizon), model.n), dtype=float)
    thetas = np.empty(states.shape[0], dtype=np.uint8)
    t = 0
    while True:
        if t == states.shape[0]:
            grow = min(cap, 2 * states.shape[0])
            new_states = np.empty((grow, model.n), dtype=float)
            new_states[:t] = states
            states = new_states
            new_thetas = np.empty(grow, dtype=np.uint8)
            new_thetas[:t] = thetas
            thetas = new_thetas
        states[t] = x
        split, x_next = split_step(x, cl, model, minor, beta_op, rng)
        thetas[t] = split.theta
        if split.theta == 1 and t + 1 > horizon:
            t += 1
            break
        if t + 1 >= cap:
            t += 1
            break
        x = x_next
        t += 1
    return RegenerationLog.from_raw(states[:t], thetas[:t], horizon)


def rewards_of(states: np.ndarray, spec: RewardSpec) -> np.ndarray:
    """Vectorized per-state rewards for a (L, n) state array."""
    if spec.p_hat_is_identity:
        return np.linalg.norm(states, axis=1)
    quad = np.einsum("ij,jk,ik->i", states, spec.p_hat, states)
    return np.sqrt(np.clip(quad, 0.0, None))


@dataclass(frozen=True)
class RewardEstimate:
    value: float
    standard_error: float | None
    block_count: int


@dataclass(frozen=True)
class SumDecomposition:
    """Centered-reward mass split at the regeneration boundaries.

    ``head`` covers the warm-up before the first regeneration, ``core`` the
    complete regeneration span, and ``tail`` the overshoot past the nominal
    horizon; ``head + core - tail`` equals the centered-reward sum over the
    horizon exactly.
    """

    head: float
    core: float
    tail: float
    horizon: int


@dataclass(frozen=True)
class EstimatorOutput:
    reward_timeavg: float
    standard_error: float | None
    sigma2_as: float | None
    ratio_estimates: dict[str, float]
    block_count: int


def _block_sums(log: RegenerationLog, values: np.ndarray) -> np.ndarray:
    """Per-block sums of a per-state array covering the whole log."""
    starts = np.asarray(log.taus[:-1], dtype=np.intp)
    return np.add.reduceat(values[: log.taus[-1]], starts)


def estimate_reward(log: RegenerationLog, spec: RewardSpec,
                    rng: np.random.Generator | None = None,
                    n_bootstrap: int = 200) -> RewardEstimate:
    """Time-averaged reward over the nominal horizon with a block error bar.

    The value is the plain average of ``r`` over the first N states. When
    at least 30 complete blocks exist, a standard error is attached by
    resampling whole blocks with replacement and recomputing the ratio of
    block reward sums to block lengths; block boundaries are regeneration
    times, so resampled blocks are exchangeable.
    """
    n = log.horizon
    r = rewards_of(log.states[:n], spec)
    value = float(np.mean(r))
    if not log.taus:
        warnings.warn("no regenerations in the log; returning a plain time "
                      "average without block-based error estimates")
        return RewardEstimate(value=value, standard_error=None, block_count=0)
    stderr = None
    if log.block_count >= 30:
        if rng is None:
            rng = np.random.default_rng(0)
        r_full = rewards_of(log.states, spec)
        sums = _block_sums(log, r_full)
        lens = np.diff(np.asarray(log.taus, dtype=float))
        m = sums.shape[0]
        idx = rng.integers(0, m, size=(n_bootstrap, m))
        stat = sums[idx].sum(axis=1) / lens[idx].sum(axis=1)
        stderr = float(np.std(stat, ddof=1))
    return RewardEstimate(value=value, standard_error=stderr,
                          block_count=log.block_count)


def estimate_invariant_prob(log: RegenerationLog, predicate) -> float:
    """Ratio estimator of the invariant probability of a set.

    ``predicate`` maps a single state vector to a bool. The estimate is the
    count of hits over complete blocks divided by the total block length,
    which is consistent for the invariant measure of the set by the i.i.d.
    block structure.
    """
    if log.block_count < 2:
        raise InsufficientBlocks(have=log.block_count, need=2)
    lo, hi = log.taus[0], log.taus[-1]
    hits = sum(1 for i in range(lo, hi) if predicate(log.states[i]))
    return hits / (hi - lo)


def estimate_sigma2_as(log: RegenerationLog, spec: RewardSpec,
                       rho_hat: float) -> float:
    """Block estimate of the asymptotic variance of the reward average.

    With rewards centered at ``rho_hat``, the estimator is the mean squared
    block sum divided by the mean block length; complete blocks only.
    """
    if log.block_count < 30:
        raise InsufficientBlocks(have=log.block_count, need=30)
    r_full = rewards_of(log.states, spec) - rho_hat
    sums = _block_sums(log, r_full)
    lens = np.diff(np.asarray(log.taus, dtype=float))
    return float(np.mean(sums ** 2) / np.mean(lens))


def decompose_sum(log: RegenerationLog, spec: RewardSpec, rho_hat: float,
                  horizon: int | None = None) -> SumDecomposition:
    """Split the centered-reward sum at the regeneration boundaries.

    For the first regeneration time ``tau`` and the first one past the
    horizon ``tau_R``:

        head = sum_{i < tau} rbar(x_i)
        core = sum_{tau <= i < tau_R} rbar(x_i)
        tail = sum_{N <= i < tau_R} rbar(x_i)

    and ``head + core - tail`` equals ``sum_{i < N} rbar(x_i)`` exactly.

    Raises
    ------
    NoRegeneration
        The log has no regeneration, or none after the requested horizon.
    """
    n = log.horizon if horizon is None else horizon
    if n < 1 or n > log.horizon:
        raise ValueError(f"horizon must lie in [1, {log.horizon}]")
    if not log.taus:
        raise NoRegeneration("the log contains no regeneration")
    tau1 = log.taus[0]
    tau_r = next((t for t in log.taus if t > n), None)
    if tau_r is None:
        raise NoRegeneration(f"no regeneration after horizon {n}")
    rbar = rewards_of(log.states[:tau_r], spec) - rho_hat
    head = float(np.sum(rbar[:tau1]))
    core = float(np.sum(rbar[tau1:tau_r]))
    tail = float(np.sum(rbar[n:tau_r]))
    return SumDecomposition(head=head, core=core, tail=tail, horizon=n)


def estimate_all(log: RegenerationLog, spec: RewardSpec,
                 predicates: dict[str, object] | None = None,
                 rng: np.random.Generator | None = None) -> EstimatorOutput:
    """Bundle the standard estimators for one log (CLI summary payload)."""
    rew = estimate_reward(log, spec, rng=rng)
    try:
        sigma2 = estimate_sigma2_as(log, spec, rho_hat=rew.value)
    except InsufficientBlocks:
        sigma2 = None
    ratios: dict[str, float] = {}
    for name, pred in (predicates or {}).items():
        try:
            ratios[name] = estimate_invariant_prob(log, pred)
        except InsufficientBlocks:
            continue
    return EstimatorOutput(reward_timeavg=rew.value,
                           standard_error=rew.standard_error,
                           sigma2_as=sigma2, ratio_estimates=ratios,
                           block_count=log.block_count)
