"""Deterministic solver for the coagulation equation with source on ``{0..N}^d``.

Densities live on the integer lattice; the origin cell is kept in the array for
indexing convenience and is always zero.  Two truncation policies are
available:

``closed``
    pairs whose sum would leave the box do not react at all, so the in-box mass
    obeys the conservation law exactly (up to rounding);
``open``
    every pair reacts; clusters formed outside the box are removed and their
    mass is accumulated in ``lost_mass``.

Time stepping is classic fixed-step RK4.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import NumericalError
from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure, from_lattice, lattice_points, to_lattice

logger = logging.getLogger(__name__)

TRUNCATIONS = ("closed", "open")
MAX_PAIR_TABLE_POINTS = 3000
STABILITY_GUIDANCE = 0.1


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    dt: float
    t_end: float
    truncation: str = "closed"
    output_every: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.N < 1:
            raise ValueError("lattice extent N must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if self.truncation not in TRUNCATIONS:
            raise ValueError(f"truncation must be one of {TRUNCATIONS}")
        if self.output_every < 1:
            raise ValueError("output_every must be a positive integer")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"t_end={self.t_end} is not a whole number of dt={self.dt} steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N + 1,) * self.d

    def describe(self) -> dict:
        return {
            "d": self.d, "N": self.N, "dt": self.dt, "t_end": self.t_end,
            "truncation": self.truncation, "output_every": self.output_every,
        }


@dataclass
class GridState:
    c: np.ndarray
    t: float = 0.0
    lost_mass: np.ndarray | None = None
    clamped_mass: float = 0.0
    clamp_events: int = 0

    def __post_init__(self):
        if self.lost_mass is None:
            self.lost_mass = np.zeros(self.c.ndim)

    def copy(self) -> GridState:
        return GridState(self.c.copy(), self.t, self.lost_mass.copy(),
                         self.clamped_mass, self.clamp_events)


@dataclass(frozen=True)
class SourceSpec:
    """Time-constant nonnegative injection rates on lattice points."""

    measure: SignedDiscreteMeasure

    def __post_init__(self):
        if not self.measure.is_nonnegative():
            raise ValueError("source rates must be nonnegative")

    @classmethod
    def none(cls, d: int) -> SourceSpec:
        return cls(SignedDiscreteMeasure.empty(d))

    def on_lattice(self, N: int) -> np.ndarray:
        return to_lattice(self.measure, N)


class LatticeOperator:
    """Coagulation right-hand side on a fixed lattice.

    Calling the operator on a density array returns ``(dc_dt, lost_flux)`` where
    ``lost_flux`` is the rate of mass leaving the box (zero in closed mode).
    Separable kernels are evaluated through lattice convolutions; other kernels
    through an explicit table of unordered pairs, which limits them to modest
    lattices.  With ``threads > 1`` the separable terms are evaluated in
    parallel and summed in their fixed order, so results are bit-identical for
    any thread count.
    """

    def __init__(self, kernel: KernelSpec, spec: GridSpec, threads: int = 1):
        self.kernel = kernel
        self.spec = spec
        self.threads = max(1, int(threads))
        self.points = lattice_points(spec.d, spec.N)
        self.open = spec.truncation == "open"
        if kernel.separable:
            self._setup_separable()
        else:
            self._setup_pairs()

    # -- separable kernels --------------------------------------------------

    def _setup_separable(self):
        origin = (0,) * self.spec.d
        self._factors = []
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for a, b in self.kernel.terms:
                fa = np.array(a(self.points), dtype=float)
                fb = np.array(b(self.points), dtype=float)
                fa[origin] = 0.0
                fb[origin] = 0.0
                self._factors.append((fa, fb))
        N, d = self.spec.N, self.spec.d
        full = lattice_points(d, 2 * N)
        self._outside = np.any(full > N, axis=-1)
        self._outside_points = full[self._outside]
        self._box = (slice(0, N + 1),) * d
        self._pairs = None

    def _convolve(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if u.ndim == 1:
            return np.convolve(u, v)
        return signal.fftconvolve(u, v)

    def _term(self, c: np.ndarray, factors) -> tuple[np.ndarray, np.ndarray]:
        fa, fb = factors
        u = fa * c
        v = fb * c
        conv = self._convolve(u, v)
        if self.open:
            partner = np.full_like(c, v.sum())
        else:
            prefix = v
            for axis in range(v.ndim):
                prefix = np.cumsum(prefix, axis=axis)
            partner = np.flip(prefix)
        return conv, fa * partner

    def _separable(self, c: np.ndarray):
        if self.threads > 1 and len(self._factors) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(lambda f: self._term(c, f), self._factors))
        else:
            parts = [self._term(c, f) for f in self._factors]
        conv = parts[0][0].copy()
        rate = parts[0][1].copy()
        for cv, rt in parts[1:]:
            conv += cv
            rate += rt
        gain = 0.5 * conv[self._box]
        gain.flat[0] = 0.0  # FFT roundoff would otherwise leak into the origin cell
        dc = gain - c * rate
        if self.open:
            flux = 0.5 * (conv[self._outside] @ self._outside_points)
        else:
            flux = np.zeros(self.spec.d)
        return dc, flux

    # -- general kernels ----------------------------------------------------

    def _setup_pairs(self):
        d, N = self.spec.d, self.spec.N
        flat = self.points.reshape(-1, d)
        idx = np.flatnonzero(flat.sum(axis=1) > 0)
        if idx.size > MAX_PAIR_TABLE_POINTS:
            raise ValueError(
                f"non-separable kernels are limited to {MAX_PAIR_TABLE_POINTS} lattice points "
                f"(got {idx.size}); supply a separable expansion for larger grids"
            )
        ii, jj = np.triu_indices(idx.size)
        i, j = idx[ii], idx[jj]
        sums = flat[i] + flat[j]
        inside = np.all(sums <= N, axis=1)
        if not self.open:
            i, j, sums, inside = i[inside], j[inside], sums[inside], inside[inside]
        with np.errstate(all="ignore"):
            kij = np.asarray(self.kernel(flat[i], flat[j]), dtype=float)
        target = np.full(i.shape, -1, dtype=np.int64)
        target[inside] = np.ravel_multi_index(tuple(sums[inside].astype(np.int64).T), self.spec.shape)
        self._pairs = {
            "i": i, "j": j, "k": kij, "target": target, "inside": inside,
            "diag": i == j, "sums": sums,
        }
        self._factors = None

    def _pair_table(self, c: np.ndarray):
        p = self._pairs
        flat = c.reshape(-1)
        size = flat.size
        prod = p["k"] * flat[p["i"]] * flat[p["j"]]
        gain_w = np.where(p["diag"], 0.5 * prod, prod)
        ins = p["inside"]
        gain = np.bincount(p["target"][ins], weights=gain_w[ins], minlength=size)
        loss = np.bincount(p["i"], weights=prod, minlength=size)
        loss += np.bincount(p["j"], weights=np.where(p["diag"], 0.0, prod), minlength=size)
        dc = (gain - loss).reshape(c.shape)
        if self.open:
            out = ~ins
            flux = gain_w[out] @ p["sums"][out]
        else:
            flux = np.zeros(self.spec.d)
        return dc, flux

    def __call__(self, c: np.ndarray):
        if self._factors is not None:
            return self._separable(c)
        return self._pair_table(c)

    def max_loss_rate(self, c: np.ndarray) -> float:
        """Largest per-particle loss rate ``sum_y K(x, y) c_y`` over occupied cells."""
        occupied = c > 0
        if not occupied.any():
            return 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            loss = self._loss_only(c)
            return float(np.max(loss[occupied] / c[occupied]))

    def _loss_only(self, c: np.ndarray) -> np.ndarray:
        if self._factors is not None:
            rate = np.zeros_like(c)
            for f in self._factors:
                rate += self._term(c, f)[1]
            return c * rate
        p = self._pairs
        flat = c.reshape(-1)
        prod = p["k"] * flat[p["i"]] * flat[p["j"]]
        loss = np.bincount(p["i"], weights=prod, minlength=flat.size)
        loss += np.bincount(p["j"], weights=np.where(p["diag"], 0.0, prod), minlength=flat.size)
        return loss.reshape(c.shape)


def _source_array(source, spec: GridSpec) -> np.ndarray:
    if source is None:
        return np.zeros(spec.shape)
    if isinstance(source, SourceSpec):
        return source.on_lattice(spec.N)
    arr = np.asarray(source, dtype=float)
    if arr.shape != spec.shape:
        raise ValueError(f"source array shape {arr.shape} does not match lattice {spec.shape}")
    return arr


def rhs(state: GridState, k: KernelSpec, source, spec: GridSpec,
        operator: LatticeOperator | None = None) -> np.ndarray:
    """``dc/dt`` at ``state``: coagulation gain minus loss plus source."""
    op = operator if operator is not None else LatticeOperator(k, spec)
    dc, _ = op(state.c)
    return dc + _source_array(source, spec)


def step(state: GridState, k: KernelSpec, source, spec: GridSpec,
         operator: LatticeOperator | None = None) -> GridState:
    """One classic RK4 step of size ``spec.dt``.

    Negative densities produced by rounding are clamped to zero; the clamped
    mass is logged and accumulated on the returned state.

    Raises
    ------
    NumericalError
        If any stage derivative is NaN or infinite.
    """
    op = operator if operator is not None else LatticeOperator(k, spec)
    zeta = _source_array(source, spec)
    dt, t = spec.dt, state.t

    def stage(c, n):
        with np.errstate(over="ignore", invalid="ignore"):
            dc, flux = op(c)
            dc = dc + zeta
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(flux))):
            raise NumericalError(
                f"non-finite derivative in RK4 stage {n} of the step starting at t={t:.17g} "
                f"(dt={dt}); reduce dt", stage=n, t=t,
            )
        return dc, flux

    c0 = state.c
    k1, f1 = stage(c0, 1)
    k2, f2 = stage(c0 + 0.5 * dt * k1, 2)
    k3, f3 = stage(c0 + 0.5 * dt * k2, 3)
    k4, f4 = stage(c0 + dt * k3, 4)
    c = c0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    lost = state.lost_mass + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
    if not np.all(np.isfinite(c)):
        raise NumericalError(f"non-finite density after the step starting at t={t:.17g}", stage=4, t=t)

    clamped, events = state.clamped_mass, state.clamp_events
    neg = c < 0
    if neg.any():
        mass = float(np.sum(-c[neg] * op.points[neg].sum(axis=-1)))
        logger.debug("clamped %d negative densities (mass %.3e) at t=%.6g", int(neg.sum()), mass, t + dt)
        c[neg] = 0.0
        clamped += mass
        events += int(neg.sum())
    return GridState(c, t + dt, lost, clamped, events)


@dataclass
class Trajectory:
    """Snapshots of lattice densities.

    ``densities[i]`` is the density array at ``times[i]``; ``lost_mass[i]`` the
    mass that left the box so far (open truncation).  ``stderr`` is set for
    replica averages of stochastic runs.
    """

    times: np.ndarray
    densities: np.ndarray
    lost_mass: np.ndarray
    clamped_mass: np.ndarray
    cell: float = 1.0
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.densities.ndim - 1

    @property
    def N(self) -> int:
        return self.densities.shape[1] - 1

    def __len__(self) -> int:
        return len(self.times)

    @property
    def points(self) -> np.ndarray:
        return lattice_points(self.d, self.N, self.cell)

    def measure(self, i: int) -> SignedDiscreteMeasure:
        return from_lattice(self.densities[i], self.cell)

    def measures(self) -> list[SignedDiscreteMeasure]:
        return [self.measure(i) for i in range(len(self))]

    def lattice_weight(self, weight) -> np.ndarray:
        """Weight evaluated on every lattice point (0 at the origin cell)."""
        return lattice_weight(weight, self.points)

    def moments(self, weight) -> np.ndarray:
        w = self.lattice_weight(weight)
        axes = tuple(range(1, self.densities.ndim))
        return np.sum(self.densities * w, axis=axes)

    def mass_vectors(self) -> np.ndarray:
        pts = self.points
        return np.tensordot(self.densities, pts, axes=self.d)


def lattice_weight(weight, points: np.ndarray) -> np.ndarray:
    flat = points.reshape(-1, points.shape[-1])
    out = np.zeros(flat.shape[0])
    nz = flat.sum(axis=1) > 0
    vals = weight(flat[nz])
    out[nz] = np.asarray(vals, dtype=float)
    return out.reshape(points.shape[:-1])


def snapshot_times(spec: GridSpec) -> np.ndarray:
    """Times at which :func:`simulate` records snapshots."""
    n = spec.n_steps
    idx = list(range(0, n + 1, spec.output_every))
    if idx[-1] != n:
        idx.append(n)
    return np.array(idx, dtype=float) * spec.dt


def initial_state(f0, spec: GridSpec) -> GridState:
    if isinstance(f0, SignedDiscreteMeasure):
        if not f0.is_nonnegative():
            raise ValueError("initial measure must be nonnegative")
        c = to_lattice(f0, spec.N)
    else:
        c = np.array(f0, dtype=float)
        if c.shape != spec.shape:
            raise ValueError(f"initial density shape {c.shape} does not match lattice {spec.shape}")
        if np.any(c < 0):
            raise ValueError("initial density must be nonnegative")
        if c.flat[0] != 0:
            raise ValueError("initial density has mass at the origin cell")
    return GridState(c, 0.0, np.zeros(spec.d))


def simulate(f0, kernel: KernelSpec, source, spec: GridSpec, threads: int = 1) -> Trajectory:
    """Integrate from ``f0`` to ``spec.t_end`` and return the snapshot trajectory.

    Snapshots are taken at ``t = 0``, every ``output_every`` steps, and at the
    final time.
    """
    op = LatticeOperator(kernel, spec, threads=threads)
    zeta = _source_array(source, spec)
    state = initial_state(f0, spec)
    rate = op.max_loss_rate(state.c)
    if spec.dt * rate > STABILITY_GUIDANCE:
        logger.warning("dt * max loss rate = %.3g exceeds the %.2g stability guidance",
                       spec.dt * rate, STABILITY_GUIDANCE)

    times, dens, lost, clamp = [0.0], [state.c.copy()], [state.lost_mass.copy()], [0.0]
    n = spec.n_steps
    for i in range(1, n + 1):
        state = step(state, kernel, zeta, spec, operator=op)
        state.t = i * spec.dt
        if i % spec.output_every == 0 or i == n:
            times.append(state.t)
            dens.append(state.c.copy())
            lost.append(state.lost_mass.copy())
            clamp.append(state.clamped_mass)
    if state.clamp_events:
        logger.info("%d clamp events, total clamped mass %.3e", state.clamp_events, state.clamped_mass)
    return Trajectory(
        times=np.array(times),
        densities=np.array(dens),
        lost_mass=np.array(lost),
        clamped_mass=np.array(clamp),
        meta={"solver": "grid", "grid": spec.describe(), "kernel": kernel.describe(),
              "clamp_events": state.clamp_events},
    )


def constant_kernel_solution(k: int | np.ndarray, t: float) -> np.ndarray:
    """Exact monodisperse solution for ``K = 2``, ``c_1(0) = 1``: ``t^(k-1) / (1+t)^(k+1)``."""
    k = np.asarray(k, dtype=float)
    if t == 0:
        return np.where(k == 1, 1.0, 0.0)
    # log form avoids overflow of t^(k-1) for large k
    return np.exp((k - 1) * np.log(t) - (k + 1) * np.log1p(t))

