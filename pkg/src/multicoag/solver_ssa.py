"""Stochastic particle simulation (Marcus-Lushnikov process) with Poisson source.

A system of particles in volume ``V`` coagulates pairwise: each unordered pair
``{i, j}`` merges at rate ``K(x_i, x_j) / V`` and each source atom ``z`` injects
a particle at rate ``V * zeta_z``.  The empirical measure ``(1/V) sum delta_{x_i}``
approximates the solution of the deterministic equation.

Particles with the same composition are interchangeable, so the multiset is
stored as counts per distinct composition ("species").  Per-species rate sums
``R_s = sum_t K(s, t) n_t - K(s, s)`` are cached and updated in O(S) per event,
with a full recompute every ``RECOMPUTE_EVERY`` events.  Events are drawn with
Gillespie's direct method and are exact.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure, bin_to_lattice
from .solver_grid import SourceSpec, Trajectory

logger = logging.getLogger(__name__)

RNG_NAME = "numpy.random.Philox"
RECOMPUTE_EVERY = 10_000
INITIAL_SLOTS = 64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


class ParticleSystem:
    """Particle multiset as species counts plus the cached pair-rate state."""

    def __init__(self, d: int, V: float, seed: int):
        if not V > 0:
            raise ValueError("volume V must be positive")
        self.d = d
        self.V = float(V)
        self.seed = int(seed)
        self.rng = make_rng(seed)
        self.t = 0.0
        self.events = 0
        self._points = np.zeros((INITIAL_SLOTS, d))
        self._counts = np.zeros(INITIAL_SLOTS, dtype=np.int64)
        self._index: dict[tuple, int] = {}
        self._n = 0  # slots in use
        self._kernel: KernelSpec | None = None
        self._K = None
        self._R = None
        self._since_recompute = 0

    # -- multiset view ------------------------------------------------------

    @property
    def species(self) -> np.ndarray:
        return self._points[: self._n]

    @property
    def counts(self) -> np.ndarray:
        return self._counts[: self._n]

    @property
    def n_particles(self) -> int:
        return int(self.counts.sum())

    @property
    def particles(self) -> np.ndarray:
        """All particle compositions, one row per particle."""
        return np.repeat(self.species, self.counts, axis=0)

    def mass_vector(self) -> np.ndarray:
        """Total composition of all particles (exact integer arithmetic for lattice points)."""
        return self.counts @ self.species if self._n else np.zeros(self.d)

    def empirical_measure(self) -> SignedDiscreteMeasure:
        keep = self.counts > 0
        if not keep.any():
            return SignedDiscreteMeasure.empty(self.d)
        return SignedDiscreteMeasure(self.species[keep], self.counts[keep] / self.V, d=self.d)

    def moments(self) -> dict:
        sizes = self.species.sum(axis=1)
        n = self.counts
        return {
            "M0": float(n.sum()) / self.V,
            "M1": float(n @ sizes) / self.V,
            "M2": float(n @ sizes**2) / self.V,
            "mass": self.mass_vector() / self.V,
        }

    # -- slot management ----------------------------------------------------

    def _slot(self, x: np.ndarray) -> int:
        key = tuple(x.tolist())
        s = self._index.get(key)
        if s is not None:
            return s
        if self._n == len(self._counts):
            self._make_room()
        s = self._n
        self._points[s] = x
        self._counts[s] = 0
        self._index[key] = s
        self._n += 1
        if self._K is not None:
            row = np.asarray(self._kernel(x[None, :], self._points[: self._n]), dtype=float).reshape(-1)
            self._K[s, : self._n] = row
            self._K[: self._n, s] = row
            self._R[s] = row[: s] @ self._counts[: s] - row[s]
        return s

    def _make_room(self) -> None:
        live = self._counts[: self._n] > 0
        if live.sum() <= len(self._counts) // 2:
            self._compact(live)
        else:
            self._grow()

    def _compact(self, live: np.ndarray) -> None:
        keep = np.flatnonzero(live)
        m = keep.size
        self._points[:m] = self._points[keep]
        self._counts[:m] = self._counts[keep]
        self._counts[m:] = 0
        if self._K is not None:
            self._K[:m, :m] = self._K[np.ix_(keep, keep)]
            self._R[:m] = self._R[keep]
        self._n = m
        self._index = {tuple(p.tolist()): i for i, p in enumerate(self._points[:m])}

    def _grow(self) -> None:
        cap = 2 * len(self._counts)
        pts = np.zeros((cap, self.d))
        pts[: self._n] = self._points[: self._n]
        cnt = np.zeros(cap, dtype=np.int64)
        cnt[: self._n] = self._counts[: self._n]
        self._points, self._counts = pts, cnt
        if self._K is not None:
            K = np.zeros((cap, cap))
            K[: self._n, : self._n] = self._K[: self._n, : self._n]
            R = np.zeros(cap)
            R[: self._n] = self._R[: self._n]
            self._K, self._R = K, R

    def add(self, x, count: int = 1) -> None:
        s = self._slot(np.asarray(x, dtype=float))
        self._change(s, count)

    def _change(self, s: int, delta: int) -> None:
        self._counts[s] += delta
        if self._R is not None:
            self._R[: self._n] += delta * self._K[: self._n, s]

    # -- rates --------------------------------------------------------------

    def _attach(self, kernel: KernelSpec) -> None:
        if self._kernel is kernel and self._K is not None:
            return
        self._kernel = kernel
        cap = len(self._counts)
        self._K = np.zeros((cap, cap))
        self._R = np.zeros(cap)
        self._recompute()

    def _recompute(self) -> None:
        n = self._n
        if n:
            pts = self._points[:n]
            self._K[:n, :n] = np.asarray(self._kernel(pts[:, None, :], pts[None, :, :]), dtype=float)
            old = self._R[:n].copy()
            self._R[:n] = self._K[:n, :n] @ self._counts[:n] - np.diag(self._K[:n, :n])
            drift = float(np.max(np.abs(old - self._R[:n]))) if self._since_recompute else 0.0
            if drift:
                logger.debug("rate-sum recompute after %d events, max drift %.3e",
                             self._since_recompute, drift)
        self._since_recompute = 0

    def coagulation_rate(self, kernel: KernelSpec) -> float:
        self._attach(kernel)
        a = self.counts * self._R[: self._n]
        return float(np.sum(np.maximum(a, 0.0))) / (2.0 * self.V)


def init(f0: SignedDiscreteMeasure, V: float, seed: int) -> ParticleSystem:
    """Spawn ``Poisson(w V)`` particles at every atom ``(x, w)`` of ``f0``."""
    if not f0.is_nonnegative():
        raise ValueError("initial measure must be nonnegative")
    sys = ParticleSystem(f0.d, V, seed)
    if len(f0):
        counts = sys.rng.poisson(f0.weights * sys.V)
        for x, c in zip(f0.points, counts):
            if c:
                sys.add(x, int(c))
    return sys


def _source_arrays(source, d: int) -> tuple[np.ndarray, np.ndarray]:
    if source is None:
        return np.zeros((0, d)), np.zeros(0)
    m = source.measure if isinstance(source, SourceSpec) else source
    if not m.is_nonnegative():
        raise ValueError("source rates must be nonnegative")
    return m.points, m.weights


def total_event_rate(sys: ParticleSystem, k: KernelSpec, source=None) -> float:
    """``sum_{i<j} K(x_i, x_j) / V + V * sum zeta``."""
    _, rates = _source_arrays(source, sys.d)
    return sys.coagulation_rate(k) + sys.V * float(rates.sum())


class _Stepper:
    """Event loop for one system with fixed kernel and source."""

    def __init__(self, sys: ParticleSystem, k: KernelSpec, source):
        self.sys = sys
        self.k = k
        self.zpts, zr = _source_arrays(source, sys.d)
        self.zcum = np.cumsum(zr * sys.V)
        self.src_rate = float(self.zcum[-1]) if zr.size else 0.0
        sys._attach(k)

    def rates(self) -> tuple[np.ndarray, float]:
        sys = self.sys
        a = np.maximum(sys.counts * sys._R[: sys._n], 0.0)
        return a, float(a.sum()) / (2.0 * sys.V) + self.src_rate

    def fire(self, a: np.ndarray, total: float) -> bool:
        """Apply one event chosen with probability proportional to its rate.

        Returns False if cached rates were found stale (the event is not applied).
        """
        sys, rng = self.sys, self.sys.rng
        u = rng.random() * total
        coag = total - self.src_rate
        if u >= coag and self.src_rate > 0:
            j = int(np.searchsorted(self.zcum, u - coag, side="right"))
            sys.add(self.zpts[min(j, len(self.zpts) - 1)])
            return True
        cum = np.cumsum(a)
        s = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        s = min(s, sys._n - 1)
        w = sys._K[s, : sys._n] * sys.counts
        w[s] -= sys._K[s, s]
        np.maximum(w, 0.0, out=w)
        cw = np.cumsum(w)
        if not cw[-1] > 0:
            sys._recompute()
            return False
        t = int(np.searchsorted(cw, rng.random() * cw[-1], side="right"))
        t = min(t, sys._n - 1)
        merged = sys.species[s] + sys.species[t]
        sys._change(s, -1)
        sys._change(t, -1)
        sys.add(merged)
        sys.events += 1
        sys._since_recompute += 1
        if sys._since_recompute >= RECOMPUTE_EVERY:
            sys._recompute()
        return True


def step(sys: ParticleSystem, k: KernelSpec, source=None) -> tuple[ParticleSystem, float]:
    """Advance by one event; returns ``(sys, waiting_time)``.

    A system with zero total rate is quiescent: nothing changes and the
    waiting time is ``inf``.
    """
    st = _Stepper(sys, k, source)
    while True:
        a, total = st.rates()
        if total <= 0:
            return sys, math.inf
        tau = sys.rng.exponential(1.0 / total)
        if st.fire(a, total):
            sys.t += tau
            return sys, tau


def advance(sys: ParticleSystem, k: KernelSpec, source, t_target: float) -> ParticleSystem:
    """Run events until the next event would pass ``t_target``; then set ``t = t_target``.

    Redrawing the waiting time at ``t_target`` is exact because waiting times
    are memoryless.
    """
    st = _Stepper(sys, k, source)
    while True:
        a, total = st.rates()
        if total <= 0:
            break
        tau = sys.rng.exponential(1.0 / total)
        if sys.t + tau > t_target:
            break
        if st.fire(a, total):
            sys.t += tau
    sys.t = t_target
    return sys


@dataclass
class ReplicaResult:
    densities: np.ndarray  # (T,) + lattice shape
    overflow_mass: np.ndarray  # (T, d)
    moments: dict  # name -> (T,) or (T, d)
    events: int


def run_replica(f0: SignedDiscreteMeasure, k: KernelSpec, source, V: float, seed: int,
                times: np.ndarray, N: int) -> ReplicaResult:
    sys = init(f0, V, seed)
    dens, over = [], []
    mom = {"M0": [], "M1": [], "M2": [], "mass": []}
    for t in times:
        advance(sys, k, source, float(t))
        b = bin_to_lattice(sys.empirical_measure(), 1.0, N)
        dens.append(b.density)
        over.append(b.overflow_mass)
        for name, val in sys.moments().items():
            mom[name].append(val)
    return ReplicaResult(np.array(dens), np.array(over),
                         {name: np.array(v) for name, v in mom.items()}, sys.events)


def _replica_task(args):
    return run_replica(*args)


@dataclass
class EnsembleResult:
    """Replica-averaged trajectory plus exact per-replica moments."""

    trajectory: Trajectory
    times: np.ndarray
    moments: dict  # name -> (R, T) or (R, T, d)
    seeds: list[int] = field(default_factory=list)

    def mean(self, name: str) -> np.ndarray:
        return self.moments[name].mean(axis=0)

    def stderr(self, name: str) -> np.ndarray:
        m = self.moments[name]
        if m.shape[0] < 2:
            return np.zeros(m.shape[1:])
        return m.std(axis=0, ddof=1) / math.sqrt(m.shape[0])


def run(f0: SignedDiscreteMeasure, k: KernelSpec, source, *, V: float, replicas: int,
        seed: int, times, N: int, threads: int = 1) -> EnsembleResult:
    """Run ``replicas`` independent systems (seeds ``seed + r``) and aggregate.

    Replica results are always combined in replica order, so the output does
    not depend on ``threads``.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("snapshot times must be nonnegative and nondecreasing")
    seeds = [int(seed) + r for r in range(replicas)]
    tasks = [(f0, k, source, V, s, times, N) for s in seeds]
    if threads > 1 and replicas > 1:
        with ProcessPoolExecutor(max_workers=min(threads, replicas)) as pool:
            results = list(pool.map(_replica_task, tasks))
    else:
        results = [_replica_task(t) for t in tasks]

    dens = np.stack([r.densities for r in results])
    over = np.stack([r.overflow_mass for r in results])
    moments = {name: np.stack([r.moments[name] for r in results]) for name in results[0].moments}
    se = dens.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros(dens.shape[1:])
    traj = Trajectory(
        times=times,
        densities=dens.mean(axis=0),
        lost_mass=over.mean(axis=0),
        clamped_mass=np.zeros(len(times)),
        stderr=se,
        meta={
            "solver": "ssa", "V": V, "replicas": replicas, "seeds": seeds, "rng": RNG_NAME,
            "kernel": k.describe(), "events": [r.events for r in results],
        },
    )
    return EnsembleResult(traj, times, moments, seeds)
