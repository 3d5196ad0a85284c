"""Shared fixtures and helpers for the test suite.

``build_system`` assembles the two-shell benchmark family end to end
(model, policy, reward, closed loop, certificate); ``zero_system`` is the
degenerate i.i.d. chain whose steady state is known in closed form. The
acceptance tests register one human-readable verdict line per criterion,
echoed in a terminal section at the end of the run.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from sldsim import (
    Certificate,
    ClosedLoop,
    Policy,
    RewardSpec,
    SldsModel,
    build_case_study,
    certify,
    classify_regions,
    closed_loop,
    radial_shell,
)

# Two-shell benchmark constants: root gain 0.9 outside the rho ball,
# root gain 2 inside, ball radius 10. The certificate then reads
# gamma = 0.81, c = 4, K = n + 400.
CASE_GAMMA_ROOT = 0.9
CASE_C_ROOT = 2.0
CASE_RHO = 10.0

# Contracting variant: inner root gain 0.5, so the chain visits the
# origin-centered operational small set and actually regenerates. The
# benchmark values above orbit the ball boundary and never do.
CONTRACT_C_ROOT = 0.5


class System(NamedTuple):
    model: SldsModel
    policy: Policy
    spec: RewardSpec
    cl: ClosedLoop
    cert: Certificate


def build_system(n: int, gamma_root: float = CASE_GAMMA_ROOT,
                 c_root: float = CASE_C_ROOT,
                 rho: float = CASE_RHO) -> System:
    model, policy, spec = build_case_study(n, gamma_root, c_root, rho)
    cl = closed_loop(model, policy)
    classification = classify_regions(model, rho)
    cert = certify(cl, classification, rho, n)
    return System(model, policy, spec, cl, cert)


def contracting_system(n: int) -> System:
    return build_system(n, c_root=CONTRACT_C_ROOT)


def zero_system(n: int = 1) -> System:
    """Identically zero dynamics: states are i.i.d. N(0, I)."""
    model = SldsModel(n=n, p=1, regions=(radial_shell(0.0, math.inf),),
                      dynamics=((np.zeros((n, n)), np.zeros((n, 1))),))
    policy = Policy(pi=np.zeros((1, n)))
    spec = RewardSpec.bind(Q=np.eye(n), R=np.eye(1), policy=policy)
    cl = closed_loop(model, policy)
    cert = certify(cl, classify_regions(model, 1.0), 1.0, n)
    return System(model, policy, spec, cl, cert)


def batch_se(values: np.ndarray, n_batches: int = 100) -> float:
    """Standard error of the mean via batch means; valid under the
    serial correlation of a Markov trajectory once batches are long."""
    values = np.asarray(values, dtype=float)
    m = values.size // n_batches
    if m < 1:
        raise ValueError("too few values for the requested batch count")
    means = values[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


_ACCEPTANCE_LINES: list[str] = []


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
