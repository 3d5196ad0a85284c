"""Config files, CSV emission, and run manifests.

Model configs are JSON with matrices as row-major nested arrays. All CSV
numbers are written with full round-trip precision (shortest decimal that
recovers the exact double), so identical runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import Policy, Region, RewardSpec, SldsModel, Trajectory


def fmt(value) -> str:
    """Round-trip text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class ModelConfig:
    """A fully parsed model file: system, policy, reward, and ball radius."""

    model: SldsModel
    policy: Policy
    reward: RewardSpec
    rho_ball: float


def _region_from_dict(d: dict, index: int) -> Region:
    kind = d.get("kind")
    if kind == "radial":
        r_hi = d.get("r_hi")
        return Region(kind="radial", r_lo=float(d.get("r_lo", 0.0)),
                      r_hi=math.inf if r_hi is None else float(r_hi),
                      declared_unbounded=d.get("declared_unbounded"))
    if kind == "polyhedral":
        return Region(kind="polyhedral",
                      L=np.asarray(d["L"], dtype=float),
                      C=np.asarray(d["C"], dtype=float),
                      declared_unbounded=bool(d["declared_unbounded"]))
    raise ConfigError(f"region {index}: unknown kind {kind!r}")


def _region_to_dict(region: Region) -> dict:
    if region.kind == "radial":
        return {"kind": "radial", "r_lo": region.r_lo,
                "r_hi": None if math.isinf(region.r_hi) else region.r_hi,
                "declared_unbounded": region.declared_unbounded}
    return {"kind": "polyhedral", "L": region.L.tolist(),
            "C": region.C.tolist(),
            "declared_unbounded": region.declared_unbounded}


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "n": cfg.model.n,
        "p": cfg.model.p,
        "regions": [_region_to_dict(r) for r in cfg.model.regions],
        "A": [A.tolist() for A, _ in cfg.model.dynamics],
        "B": [B.tolist() for _, B in cfg.model.dynamics],
        "pi": cfg.policy.pi.tolist(),
        "Q": cfg.reward.q.tolist(),
        "R": cfg.reward.r.tolist(),
        "rho": cfg.rho_ball,
    }


def model_config_from_dict(data: dict) -> ModelConfig:
    try:
        n = int(data["n"])
        p = int(data["p"])
        regions = tuple(_region_from_dict(r, i)
                        for i, r in enumerate(data["regions"]))
        dynamics = tuple(
            (np.asarray(A, dtype=float), np.asarray(B, dtype=float))
            for A, B in zip(data["A"], data["B"], strict=True))
        model = SldsModel(n=n, p=p, regions=regions, dynamics=dynamics)
        policy = Policy(pi=np.asarray(data["pi"], dtype=float))
        reward = RewardSpec.bind(
            Q=np.asarray(data["Q"], dtype=float),
            R=np.asarray(data["R"], dtype=float),
            policy=policy,
            normalize=bool(data.get("normalize_reward", False)))
        rho = float(data["rho"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc
    if rho <= 0:
        raise ConfigError("rho must be positive")
    return ModelConfig(model=model, policy=policy, reward=reward,
                       rho_ball=rho)


def load_model_config(path: str | Path) -> ModelConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return model_config_from_dict(data)


def save_model_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_config_to_dict(cfg), indent=2)
                          + "\n")


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    """Columns ``step, x_0..x_{n-1}, reward``; round-trip precision."""
    n = traj.states.shape[1]
    lines = ["step," + ",".join(f"x_{i}" for i in range(n)) + ",reward"]
    for t in range(len(traj)):
        cells = [str(t)]
        cells += [fmt(v) for v in traj.states[t]]
        cells.append(fmt(traj.rewards[t]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def sha256_of_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(path: str | Path, config_hash: str, master_seed: int,
                   extra: dict | None = None) -> None:
    """Record everything needed to reproduce a run's outputs."""
    import scipy

    from . import __version__

    manifest = {
        "config_sha256": config_hash,
        "master_seed": master_seed,
        "sldsim_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": sys.version.split()[0],
        "platform": platform.platform(),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True)
                          + "\n")
