"""File formats: trajectory CSV, run manifest JSON and report JSON."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .solver_grid import Trajectory


def _fmt(v: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(v), ".17g")


def cell_labels(shape: tuple[int, ...]) -> list[str]:
    return [";".join(str(i) for i in idx) for idx in np.ndindex(*shape)]


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    """One row per snapshot: ``t`` then densities in row-major lattice order,
    followed by per-cell standard errors when the trajectory carries them."""
    path = Path(path)
    shape = traj.densities.shape[1:]
    labels = cell_labels(shape)
    header = ["t"] + [f"c({lab})" for lab in labels]
    if traj.stderr is not None:
        header += [f"se({lab})" for lab in labels]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [_fmt(t)] + [_fmt(v) for v in traj.densities[i].ravel()]
            if traj.stderr is not None:
                row += [_fmt(v) for v in traj.stderr[i].ravel()]
            w.writerow(row)
    return path


def read_trajectory_csv(path, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Inverse of :func:`write_trajectory_csv`: ``(times, densities, stderr)``."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    ncells = sum(1 for h in header if h.startswith("c("))
    side = round(ncells ** (1.0 / d))
    shape = (len(body),) + (side,) * d
    dens = body[:, 1:1 + ncells].reshape(shape)
    se = body[:, 1 + ncells:].reshape(shape) if len(header) > 1 + ncells else None
    return body[:, 0], dens, se


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def manifest(cfg, trajectories: dict[str, Trajectory], files: dict[str, str], rng_name: str) -> dict:
    """Everything needed to regenerate the outputs: config text and hash, seed,
    code version and the run metadata of every trajectory."""
    return {
        "code_version": __version__,
        "config_sha256": cfg.sha256,
        "config_text": cfg.text,
        "seed": cfg.seed,
        "rng": rng_name,
        "dimension": cfg.dimension,
        "solver": cfg.solver,
        "grid": cfg.grid.describe(),
        "kernel": cfg.kernel.describe(),
        "init": cfg.init.to_records(),
        "source": cfg.source.to_records(),
        "ssa": {"volume": cfg.ssa.volume, "replicas": cfg.ssa.replicas},
        "files": files,
        "runs": {
            name: {
                "times": traj.times,
                "lost_mass": traj.lost_mass,
                "clamped_mass": traj.clamped_mass,
                "meta": traj.meta,
            }
            for name, traj in trajectories.items()
        },
    }
