"""Switched linear dynamical systems under linear state feedback.

A model partitions the state space into regions, each with its own linear
dynamics. Under a feedback law ``u = pi x`` the closed loop evolves as

    x_{t+1} = (A_j + B_j pi) x_t + w_t,   w_t ~ N(0, I_n),

where ``j`` is the index of the region containing ``x_t``. The per-state
reward is ``r(x) = sqrt(x' (Q + pi' R pi) x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, NoRegion

DIVERGENCE_LIMIT = 1e150

_PSD_TOL = 1e-10


def _as_matrix(a, rows: int, cols: int, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.shape != (rows, cols):
        raise ValueError(f"{name} must have shape {(rows, cols)}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class Region:
    """One cell of a state-space partition.

    Two kinds are supported:

    - ``radial``: the shell ``{x : r_lo < ||x|| <= r_hi}``; the innermost
      shell (``r_lo == 0``) is closed at the origin.
    - ``polyhedral``: the set ``{x : L x <= C}`` with ``L`` of shape (q, n).

    ``declared_unbounded`` is an explicit claim that the region reaches
    outside any ball; it is required for polyhedral regions (radial shells
    are decided analytically from ``r_hi``).
    """

    kind: str
    r_lo: float = 0.0
    r_hi: float = math.inf
    L: np.ndarray | None = None
    C: np.ndarray | None = None
    declared_unbounded: bool | None = None

    def __post_init__(self) -> None:
        if self.kind == "radial":
            if not (0.0 <= self.r_lo < self.r_hi):
                raise ValueError(f"radial shell needs 0 <= r_lo < r_hi, got "
                                 f"({self.r_lo}, {self.r_hi})")
        elif self.kind == "polyhedral":
            if self.L is None or self.C is None:
                raise ValueError("polyhedral region needs L and C")
            L = np.asarray(self.L, dtype=float)
            C = np.asarray(self.C, dtype=float)
            if L.ndim != 2 or C.shape != (L.shape[0],):
                raise ValueError("L must be (q, n) and C must be (q,)")
            object.__setattr__(self, "L", L)
            object.__setattr__(self, "C", C)
            if self.declared_unbounded is None:
                raise ValueError("polyhedral region needs declared_unbounded")
        else:
            raise ValueError(f"unknown region kind {self.kind!r}")

    def contains(self, x: np.ndarray) -> bool:
        """Deterministic membership test; boundaries per declared convention."""
        if self.kind == "radial":
            r = float(np.linalg.norm(x))
            if self.r_lo == 0.0:
                return r <= self.r_hi
            return self.r_lo < r <= self.r_hi
        return bool(np.all(self.L @ x <= self.C))


def radial_shell(r_lo: float, r_hi: float = math.inf) -> Region:
    """Convenience constructor for a radial shell region."""
    return Region(kind="radial", r_lo=r_lo, r_hi=r_hi)


def polyhedron(L, C, declared_unbounded: bool) -> Region:
    """Convenience constructor for ``{x : L x <= C}``."""
    return Region(kind="polyhedral", L=np.asarray(L, dtype=float),
                  C=np.asarray(C, dtype=float),
                  declared_unbounded=declared_unbounded)


@dataclass(frozen=True)
class SldsModel:
    """A switched linear model: ordered regions with per-region (A_j, B_j).

    Parameters
    ----------
    n, p : int
        State and input dimensions.
    regions : tuple of Region
        Ordered region list; on membership ties the first declared wins.
    dynamics : tuple of (A_j, B_j) pairs
        ``A_j`` is (n, n), ``B_j`` is (n, p). Process noise is N(0, I_n)
        per step, independent across steps.
    """

    n: int
    p: int
    regions: tuple[Region, ...]
    dynamics: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if len(self.regions) != len(self.dynamics) or not self.regions:
            raise ValueError("need len(regions) == len(dynamics) >= 1")
        checked = tuple(
            (_as_matrix(A, self.n, self.n, f"A[{j}]"),
             _as_matrix(B, self.n, self.p, f"B[{j}]"))
            for j, (A, B) in enumerate(self.dynamics)
        )
        object.__setattr__(self, "dynamics", checked)
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def num_regions(self) -> int:
        return len(self.regions)


@dataclass(frozen=True)
class Policy:
    """Linear feedback law ``u = pi x`` with ``pi`` of shape (p, n)."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2:
            raise ValueError("pi must be a (p, n) matrix")
        object.__setattr__(self, "pi", pi)


@dataclass(frozen=True)
class RewardSpec:
    """Reward ``r(x) = sqrt(x' P_hat x)`` with ``P_hat = Q + pi' R pi``.

    Build with :meth:`bind`, which checks Q >= 0 and R > 0 (eigenvalue
    floor) and optionally rescales ``P_hat`` so its spectral norm is <= 1.
    """

    q: np.ndarray
    r: np.ndarray
    p_hat: np.ndarray
    # True when p_hat is exactly the identity; enables a norm shortcut.
    p_hat_is_identity: bool = field(default=False, compare=False)

    @classmethod
    def bind(cls, Q, R, policy: Policy, normalize: bool = False) -> "RewardSpec":
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        n = Q.shape[0]
        p = R.shape[0]
        _as_matrix(Q, n, n, "Q")
        _as_matrix(R, p, p, "R")
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        scale_q = max(1.0, float(np.abs(Q).max()))
        scale_r = max(1.0, float(np.abs(R).max()))
        if np.linalg.eigvalsh(Q).min() < -_PSD_TOL * scale_q:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= _PSD_TOL * scale_r:
            raise ValueError("R must be positive definite")
        pi = policy.pi
        if pi.shape != (p, n):
            raise ValueError(f"policy shape {pi.shape} incompatible with "
                             f"(p, n) = {(p, n)}")
        p_hat = Q + pi.T @ R @ pi
        if normalize:
            top = float(np.linalg.norm(p_hat, 2))
            if top > 1.0:
                p_hat = p_hat / top
        is_id = p_hat.shape[0] == p_hat.shape[1] and bool(
            np.array_equal(p_hat, np.eye(p_hat.shape[0]))
        )
        return cls(q=Q, r=R, p_hat=p_hat, p_hat_is_identity=is_id)


@dataclass(frozen=True)
class ClosedLoop:
    """Per-region closed-loop matrices ``A_j + B_j pi`` and their norms."""

    ahat: tuple[np.ndarray, ...]
    ahat_norms: tuple[float, ...]


@dataclass(frozen=True)
class Trajectory:
    """A simulated path: states x_0..x_{N-1} with per-state rewards."""

    states: np.ndarray      # (N, n)
    rewards: np.ndarray     # (N,)
    seed: int | None

    def __len__(self) -> int:
        return self.states.shape[0]


def region_of(model: SldsModel, x: np.ndarray) -> int:
    """Index of the first declared region containing ``x``.

    Boundary points that satisfy several membership tests resolve to the
    first declared region; boundaries carry zero Lebesgue measure, so any
    deterministic rule leaves the transition kernel unchanged almost surely.

    Raises
    ------
    NoRegion
        If no region contains ``x`` (the declared partition is invalid).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state must have shape ({model.n},), got {x.shape}")
    for j, region in enumerate(model.regions):
        if region.contains(x):
            return j
    raise NoRegion(x)


def closed_loop(model: SldsModel, policy: Policy) -> ClosedLoop:
    """Compose ``A_j + B_j pi`` for every region and record spectral norms."""
    pi = policy.pi
    if pi.shape != (model.p, model.n):
        raise ValueError(f"policy shape {pi.shape} incompatible with model "
                         f"(p, n) = {(model.p, model.n)}")
    ahat = tuple(A + B @ pi for A, B in model.dynamics)
    norms = tuple(spectral_norm(m) for m in ahat)
    return ClosedLoop(ahat=ahat, ahat_norms=norms)


def spectral_norm(A: np.ndarray) -> float:
    """Largest singular value of a square matrix."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return float(np.linalg.norm(A, 2))


def reward(x: np.ndarray, spec: RewardSpec) -> float:
    """Evaluate ``sqrt(x' P_hat x)``; tiny negative quadratics clip to 0."""
    if spec.p_hat_is_identity:
        return float(np.linalg.norm(x))
    quad = float(x @ spec.p_hat @ x)
    return math.sqrt(max(quad, 0.0))


def step(cl: ClosedLoop, model: SldsModel, x: np.ndarray,
         rng: np.random.Generator, zero_noise: bool = False) -> np.ndarray:
    """One transition ``x' = Ahat_{j(x)} x + w`` with ``w ~ N(0, I_n)``.

    ``zero_noise=True`` suppresses the noise draw entirely (debug aid for
    deterministic checks); it is never a default.
    """
    j = region_of(model, x)
    mean = cl.ahat[j] @ x
    if zero_noise:
        return mean
    return mean + rng.standard_normal(model.n)


def simulate(cl: ClosedLoop, model: SldsModel, spec: RewardSpec,
             x0: np.ndarray, n_steps: int, rng: np.random.Generator,
             zero_noise: bool = False, seed_label: int | None = None,
             noise_chunk: int = 4096) -> Trajectory:
    """Simulate ``n_steps`` states x_0..x_{n_steps-1} from ``x0``.

    Noise is drawn in row batches from ``rng``; batched draws consume the
    generator stream in the same order as per-step draws, so results are
    bit-identical to a loop over :func:`step` with the same generator.

    Raises
    ------
    DivergenceError
        If a state norm exceeds ``DIVERGENCE_LIMIT`` (reported with its
        step index); certificate-violating models can overflow doubles.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},), got {x.shape}")
    states = np.empty((n_steps, model.n), dtype=float)
    rewards = np.empty(n_steps, dtype=float)
    states[0] = x
    rewards[0] = reward(x, spec)
    buf = np.empty((0, model.n))
    buf_i = 0
    for t in range(1, n_steps):
        j = region_of(model, x)
        x = cl.ahat[j] @ x
        if not zero_noise:
            if buf_i == buf.shape[0]:
                # Refill with exactly the rows still needed so the stream
                # consumption matches a per-step loop over step().
                rows = min(noise_chunk, n_steps - t)
                buf = rng.standard_normal((rows, model.n))
                buf_i = 0
            x = x + buf[buf_i]
            buf_i += 1
        nrm = float(np.linalg.norm(x))
        if not math.isfinite(nrm) or nrm > DIVERGENCE_LIMIT:
            raise DivergenceError(step_index=t, norm=nrm)
        states[t] = x
        rewards[t] = reward(x, spec)
    return Trajectory(states=states, rewards=rewards, seed=seed_label)
