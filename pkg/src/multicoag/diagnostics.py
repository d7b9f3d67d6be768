"""Checks on computed trajectories: conservation, moment bounds, weak-form
residuals, time regularity, localisation summaries and solver comparison.

Every check returns a :class:`CheckReport`.  Reports are deterministic
functions of their inputs and satisfy ``passed == (worst_violation <= tolerance)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .composition import WeightParams
from .coagulation import strong_loss, weak_apply, weak_scale
from .errors import IncompatibleGridError
from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure, mass_vector, pair
from .solver_grid import SourceSpec, Trajectory, lattice_weight

logger = logging.getLogger(__name__)

ROUNDOFF = 1e-12
WEAK_RESIDUAL_C = 1.0  # constant in the weak-residual tolerance C ((rate dt)^4 + (rate h)^4)
UNRESOLVED_STEP = 0.5  # rate * h above this means snapshots do not resolve the dynamics


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    tolerance: float
    location: tuple | None = None
    context: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["location"] = None if self.location is None else [_plain(v) for v in self.location]
        out["extra"] = {k: _plain(v) for k, v in self.extra.items()}
        out["worst_violation"] = _plain(self.worst_violation)
        return out

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: worst={self.worst_violation:.3e} tol={self.tolerance:.3e}"


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _report(name, worst, tol, location=None, context="", **extra) -> CheckReport:
    worst = float(worst)
    return CheckReport(name, bool(worst <= tol), worst, float(tol), location, context, extra)


def _as_measure(src, d: int) -> SignedDiscreteMeasure:
    if src is None:
        return SignedDiscreteMeasure.empty(d)
    if isinstance(src, SourceSpec):
        return src.measure
    return src


# -- conservation -------------------------------------------------------------


def mass_conservation_residual(traj: Trajectory, f0: SignedDiscreteMeasure | None, zeta=None,
                               tol: float = 1e-8) -> CheckReport:
    """``max_t ||mass(t) + lost(t) - mass(0) - t mass(zeta)||_inf / scale``.

    ``f0=None`` takes the first snapshot as the initial state (useful for
    particle runs whose initial counts are random).
    """
    d = traj.d
    zeta = _as_measure(zeta, d)
    m = traj.mass_vectors() + traj.lost_mass
    m0 = m[0] if f0 is None else mass_vector(f0)
    mz = mass_vector(zeta)
    expected = m0[None, :] + traj.times[:, None] * mz[None, :]
    scale = max(float(np.max(np.abs(expected))), ROUNDOFF)
    dev = np.abs(m - expected) / scale
    i, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
    return _report(
        "mass_conservation", dev[i, j], tol, location=(float(traj.times[i]), int(j)),
        context=f"component {j} at t={traj.times[i]:.6g}",
        scale=scale, final_mass=m[-1],
    )


# -- localisation -------------------------------------------------------------


def theta0(f0: SignedDiscreteMeasure) -> np.ndarray:
    """Mass-weighted mean direction ``int x df0 / int |x| df0`` (a point of the simplex)."""
    if not f0.is_nonnegative():
        raise ValueError("theta0 needs a nonnegative measure")
    total = float(f0.sizes @ f0.weights) if len(f0) else 0.0
    if not total > 0:
        raise ValueError("theta0 is undefined for a measure with zero mass")
    return mass_vector(f0) / total


@dataclass(frozen=True)
class LocalisationParams:
    gamma: float
    delta: float
    theta0: tuple[float, ...]

    def __post_init__(self):
        if not self.gamma < 1:
            raise ValueError("gamma must be < 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        th = np.asarray(self.theta0, dtype=float)
        if np.any(th < 0) or abs(th.sum() - 1.0) > 1e-12:
            raise ValueError("theta0 must lie on the simplex")


def _directions(mu: SignedDiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    sizes = mu.sizes
    return sizes, mu.points / sizes[:, None]


def localisation_fraction(f_t: SignedDiscreteMeasure, t: float, p: LocalisationParams) -> float:
    """Fraction of the mass ``int |x| df_t`` inside the closed window-and-cone set

    ``delta s <= |x| <= s / delta`` and ``||x/|x| - theta0||_1 <= delta``,
    with ``s = t^(1/(1-gamma))``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if len(f_t) == 0:
        return 0.0
    s = t ** (1.0 / (1.0 - p.gamma))
    sizes, dirs = _directions(f_t)
    dist = np.abs(dirs - np.asarray(p.theta0)).sum(axis=1)
    inside = (sizes >= p.delta * s) & (sizes <= s / p.delta) & (dist <= p.delta)
    mass = sizes * f_t.weights
    total = float(mass.sum())
    if total == 0:
        return 0.0
    return float(mass[inside].sum()) / total


@dataclass
class DirectionStats:
    mean_direction: np.ndarray
    directional_variance: float


def direction_stats(f_t: SignedDiscreteMeasure, theta0_: np.ndarray) -> DirectionStats:
    """Mean direction ``int x df / int |x| df`` and the mass-weighted spread
    ``int |x| ||x/|x| - theta0||_1^2 df / int |x| df``."""
    if len(f_t) == 0:
        raise ValueError("direction statistics need nonzero mass")
    sizes, dirs = _directions(f_t)
    mass = sizes * f_t.weights
    total = float(mass.sum())
    if not total > 0:
        raise ValueError("direction statistics need nonzero mass")
    dist2 = np.abs(dirs - np.asarray(theta0_)).sum(axis=1) ** 2
    return DirectionStats(mass_vector(f_t) / total, float(mass @ dist2) / total)


def trajectory_direction_stats(traj: Trajectory, theta0_) -> list[DirectionStats]:
    return [direction_stats(traj.measure(i), theta0_) for i in range(len(traj))]


# -- moment inequalities ------------------------------------------------------


def _moment_bound_report(name, lhs, rhs, times, tol, **extra) -> CheckReport:
    scale = np.maximum(np.abs(rhs), ROUNDOFF)
    excess = (lhs - rhs) / scale
    i = int(np.argmax(excess))
    worst = max(float(excess[i]), 0.0)
    return _report(name, worst, tol, location=(float(times[i]),),
                   context=f"largest excess at t={times[i]:.6g}",
                   lhs=lhs, rhs=rhs, min_slack=float(np.min(rhs - lhs)))


def sublinear_moment_check(traj: Trajectory, f0: SignedDiscreteMeasure | None, zeta,
                           p: WeightParams, tol: float = 1e-8) -> CheckReport:
    """``int w df_t <= int w df0 + t int w dzeta`` for ``w = omega_{alpha,beta}``, ``alpha, beta <= 1``."""
    if p.alpha > 1 or p.beta > 1:
        raise ValueError("the sublinear moment bound needs alpha, beta <= 1")
    zeta = _as_measure(zeta, traj.d)
    lhs = traj.moments(p)
    base = lhs[0] if f0 is None else pair(f0, p)
    rhs = base + traj.times * pair(zeta, p)
    return _moment_bound_report(f"sublinear_moment(alpha={p.alpha:g},beta={p.beta:g})",
                                lhs, rhs, traj.times, tol)


@dataclass(frozen=True)
class _PhiOfInversePower:
    Phi: Callable
    alpha: float

    def __call__(self, x):
        r = np.asarray(x, dtype=float).sum(axis=-1)
        return np.asarray(self.Phi(r ** (-self.alpha)), dtype=float)


def phi_moment_check(traj: Trajectory, f0: SignedDiscreteMeasure | None, zeta,
                     Phi: Callable, alpha: float, tol: float = 1e-8) -> CheckReport:
    """``int Phi(|x|^-alpha) df_t <= int Phi(|x|^-alpha) df0 + t int Phi(|x|^-alpha) dzeta``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    w = _PhiOfInversePower(Phi, alpha)
    zeta = _as_measure(zeta, traj.d)
    lhs = traj.moments(w)
    base = lhs[0] if f0 is None else pair(f0, w)
    rhs = base + traj.times * pair(zeta, w)
    return _moment_bound_report(f"phi_moment(alpha={alpha:g})", lhs, rhs, traj.times, tol)


def higher_moment_growth(traj: Trajectory, exponents=(2.0, 3.0)) -> CheckReport:
    """Fitted log-log growth rates of ``int |x|^k df_t``; informational only."""
    fits = {}
    t = traj.times
    for k in exponents:
        m = traj.moments(WeightParams(k, k))
        use = (t > 0) & (m > 0)
        if use.sum() >= 2:
            slope, icpt = np.polyfit(np.log(t[use]), np.log(m[use]), 1)
            fits[f"k={k:g}"] = {"slope": float(slope), "prefactor": float(np.exp(icpt)),
                                "moments": m}
    return CheckReport("higher_moment_growth", True, 0.0, 0.0, None,
                       "fitted curves, reported without a pass criterion", fits)


# -- time regularity ----------------------------------------------------------


def _snapshot_distances(traj: Trajectory, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, traj.densities.ndim))
    diff = np.abs(np.diff(traj.densities[idx], axis=0))
    return np.sum(diff * w, axis=axes)


def time_lipschitz_check(traj: Trajectory, theta1: float, ratio_tol: float = 2.0) -> CheckReport:
    """Fitted constant ``max ||f_{t2} - f_{t1}|| / |t2 - t1|`` over consecutive snapshots,
    norm ``omega_{max(0,-theta1), 0}``.

    Passes iff the constant is finite and the estimates from all snapshots and
    from every other snapshot differ by less than a factor ``ratio_tol``.
    """
    if len(traj) < 3:
        raise ValueError("time Lipschitz check needs at least 3 snapshots")
    w = lattice_weight(WeightParams(max(0.0, -theta1), 0.0), traj.points)
    fine_idx = np.arange(len(traj))
    coarse_idx = fine_idx[::2]
    fine = _snapshot_distances(traj, w, fine_idx) / np.diff(traj.times[fine_idx])
    coarse = _snapshot_distances(traj, w, coarse_idx) / np.diff(traj.times[coarse_idx])
    lf, lc = float(np.max(fine)), float(np.max(coarse))
    if not (math.isfinite(lf) and math.isfinite(lc)):
        ratio = math.inf
    elif max(lf, lc) == 0.0:
        ratio = 1.0
    elif min(lf, lc) == 0.0:
        ratio = math.inf
    else:
        ratio = max(lf, lc) / min(lf, lc)
    i = int(np.argmax(fine))
    return CheckReport(
        "time_lipschitz", bool(ratio < ratio_tol), ratio, ratio_tol,
        (float(traj.times[i]), float(traj.times[i + 1])),
        f"fitted constant {lf:.6g} (every other snapshot: {lc:.6g})",
        {"constant": lf, "coarse_constant": lc},
    )


# -- weak formulation -----------------------------------------------------------


def weak_solution_residual(traj: Trajectory, k: KernelSpec, f0: SignedDiscreteMeasure | None,
                           zeta, phi: Callable, dt: float | None = None,
                           C: float = WEAK_RESIDUAL_C) -> CheckReport:
    """Residual of the integrated weak identity at every snapshot.

    ``int phi df_t - int phi df0 - int_0^t <Q(f_s, f_s), phi> ds - t int phi dzeta``
    with the time integral by composite Simpson over the snapshots (trapezoid
    when the number of intervals is odd).  Tolerance:
    ``C ((lam dt)^4 + (lam h)^4) scale`` for Simpson, with ``(lam h)^2`` for
    trapezoid, where ``h`` is the snapshot spacing, ``lam`` the largest
    number-weighted mean collision rate per particle along the trajectory (so
    time is measured in units of the typical coagulation time) and ``scale``
    bounds the magnitudes of all terms.  The check only discriminates when ``lam h < 1``.
    """
    zeta = _as_measure(zeta, traj.d)
    t = traj.times
    if len(t) < 2:
        raise ValueError("need at least two snapshots")
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("weak residual needs equally spaced snapshots")
    h0 = float(h[0])
    if dt is None:
        dt = float(traj.meta.get("grid", {}).get("dt", h0))

    measures = traj.measures()
    lhs = np.array([pair(m, phi) for m in measures])
    q = np.array([weak_apply(k, m, m, phi) for m in measures])
    # number-weighted mean collision rate of a particle: sets the time scale of q
    lam = max((float(strong_loss(k, m, m).weights.sum() / m.weights.sum()) for m in measures if len(m)),
              default=0.0)
    if lam * h0 > UNRESOLVED_STEP:
        logger.warning("snapshot spacing %.3g is coarse against the coagulation time %.3g; "
                       "the weak residual check is weak", h0, 1.0 / lam)
    qscale = np.array([weak_scale(k, m, m, phi) for m in measures])
    intervals = len(t) - 1
    if intervals % 2 == 0:
        quad = integrate.cumulative_simpson(q, x=t, initial=0.0)
        rule, order = "simpson", 4
    else:
        quad = integrate.cumulative_trapezoid(q, x=t, initial=0.0)
        rule, order = "trapezoid", 2
    base = lhs[0] if f0 is None else pair(f0, phi)
    rhs = base + quad + t * pair(zeta, phi)
    resid = np.abs(lhs - rhs)
    scale = max(float(np.max(np.abs(lhs))), float(np.max(qscale)) * float(t[-1]),
                abs(base), ROUNDOFF)
    tol = C * ((lam * dt) ** 4 + (lam * h0) ** order) * scale + ROUNDOFF * scale
    i = int(np.argmax(resid))
    return _report(
        "weak_solution_residual", resid[i], tol, location=(float(t[i]),),
        context=f"{rule} quadrature over {intervals} intervals",
        residuals=resid, scale=scale, rule=rule, rate=lam,
    )


# -- solver comparison --------------------------------------------------------


def _check_compatible(a: Trajectory, b: Trajectory) -> None:
    if a.densities.shape[1:] != b.densities.shape[1:]:
        raise IncompatibleGridError(
            f"lattices differ: {a.densities.shape[1:]} vs {b.densities.shape[1:]}")
    if a.cell != b.cell:
        raise IncompatibleGridError(f"cell sizes differ: {a.cell} vs {b.cell}")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=1e-12, atol=1e-12):
        raise IncompatibleGridError("snapshot times differ")


def uniqueness_compare(a: Trajectory, b: Trajectory, theta1: float, theta2: float,
                       tol=None, atol: float = 1e-12) -> CheckReport:
    """Distance series ``D(t) = ||f_t - g_t||`` in the norm ``omega_{-theta1, theta2}``.

    ``tol`` is a scalar or per-snapshot array.  By default it is the sum of the
    trajectories' statistical budgets, ``3 ||stderr||`` for each trajectory that
    carries standard errors, plus ``atol`` times the solution scale.
    """
    _check_compatible(a, b)
    w = lattice_weight(WeightParams(-theta1, theta2), a.points)
    axes = tuple(range(1, a.densities.ndim))
    D = np.sum(np.abs(a.densities - b.densities) * w, axis=axes)
    scale = np.maximum(np.sum(np.abs(a.densities) * w, axis=axes),
                       np.sum(np.abs(b.densities) * w, axis=axes))
    if tol is None:
        budget = atol * np.maximum(scale, 1.0)
        for traj in (a, b):
            if traj.stderr is not None:
                budget = budget + 3.0 * np.sum(traj.stderr * w, axis=axes)
    else:
        budget = np.broadcast_to(np.asarray(tol, dtype=float), D.shape)
    excess = D - budget
    i = int(np.argmax(excess))
    worst = float(excess[i])
    return CheckReport(
        "uniqueness_compare", bool(worst <= 0.0), worst, 0.0, (float(a.times[i]),),
        "distance minus combined error budget (pass iff <= 0)",
        {"distance": D, "budget": np.asarray(budget), "scale": scale},
    )


def moment_agreement(grid_values: np.ndarray, ssa_mean: np.ndarray, ssa_se: np.ndarray,
                     grid_error: np.ndarray | float = 0.0, nsigma: float = 3.0,
                     name: str = "moment_agreement") -> CheckReport:
    """``|grid - mean| <= nsigma * SE + grid_error`` at every snapshot; reports the
    largest ``|grid - mean| / (nsigma SE + grid_error)``."""
    grid_values = np.asarray(grid_values, dtype=float)
    band = nsigma * np.asarray(ssa_se, dtype=float) + grid_error
    dev = np.abs(grid_values - np.asarray(ssa_mean, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(band > 0, dev / band, np.where(dev > 0, np.inf, 0.0))
    i = int(np.argmax(ratio))
    return _report(name, ratio.flat[i], 1.0, location=(i,), context=f"{nsigma:g} sigma band",
                   deviation=dev, band=band)

