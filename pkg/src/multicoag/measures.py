"""Signed discrete measures on the composition space.

A measure is a finite list of atoms ``(point, weight)``.  Instances are kept in
canonical form: points equal to the last bit are merged by adding weights,
atoms with zero weight are dropped, and atoms are sorted lexicographically by
point.  Total variation is therefore atomwise: ``|mu| = sum |w_i| delta_{x_i}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .composition import RadialWeight, _values


class SignedDiscreteMeasure:
    """Finite signed combination of Dirac masses in ``d`` dimensions."""

    __slots__ = ("_points", "_weights", "_d")

    def __init__(self, points, weights, d: int | None = None):
        pts = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float).reshape(-1)
        if pts.size == 0:
            if d is None:
                d = pts.shape[1] if pts.ndim == 2 else None
            if d is None or d < 1:
                raise ValueError("empty measure needs an explicit dimension")
            pts = np.zeros((0, d))
            w = np.zeros(0)
        else:
            if pts.ndim == 1:
                pts = pts[:, None] if d == 1 else pts[None, :]
            if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
                raise ValueError(f"points {pts.shape} and weights {w.shape} do not match")
            if d is not None and pts.shape[1] != d:
                raise ValueError(f"expected dimension {d}, got {pts.shape[1]}")
            if not np.all(np.isfinite(pts)) or np.any(pts < 0):
                raise ValueError("atom coordinates must be finite and nonnegative")
            if np.any(pts.max(axis=1) <= 0):
                raise ValueError("atoms may not sit at the origin")
            if not np.all(np.isfinite(w)):
                raise ValueError("atom weights must be finite")
            pts, w = _canonicalize(pts, w)
        pts.setflags(write=False)
        w.setflags(write=False)
        self._points = pts
        self._weights = w
        self._d = pts.shape[1]

    @classmethod
    def empty(cls, d: int) -> SignedDiscreteMeasure:
        return cls(np.zeros((0, d)), np.zeros(0), d=d)

    @classmethod
    def dirac(cls, point: Sequence[float], weight: float = 1.0) -> SignedDiscreteMeasure:
        p = np.asarray(point, dtype=float).reshape(1, -1)
        return cls(p, [weight])

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[Sequence[float], float]], d: int | None = None):
        atoms = list(atoms)
        if not atoms:
            if d is None:
                raise ValueError("empty atom list needs an explicit dimension")
            return cls.empty(d)
        pts = np.array([np.asarray(p, dtype=float) for p, _ in atoms])
        return cls(pts, [w for _, w in atoms], d=d)

    @classmethod
    def from_records(cls, records: Iterable[Mapping], d: int | None = None):
        """Build from config literals ``[{point: [...], weight: w}, ...]``."""
        atoms = []
        for rec in records:
            extra = set(rec) - {"point", "weight"}
            if extra:
                raise ValueError(f"unknown keys in measure record: {sorted(extra)}")
            atoms.append((rec["point"], float(rec["weight"])))
        return cls.from_atoms(atoms, d=d)

    def to_records(self) -> list[dict]:
        return [
            {"point": [float(c) for c in p], "weight": float(w)}
            for p, w in zip(self._points, self._weights)
        ]

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def d(self) -> int:
        return self._d

    @property
    def sizes(self) -> np.ndarray:
        return self._points.sum(axis=1)

    def __len__(self) -> int:
        return self._weights.shape[0]

    def is_nonnegative(self) -> bool:
        return bool(np.all(self._weights >= 0))

    def total_variation(self) -> SignedDiscreteMeasure:
        return SignedDiscreteMeasure(self._points, np.abs(self._weights), d=self._d)

    def _combine(self, other: SignedDiscreteMeasure, sign: float) -> SignedDiscreteMeasure:
        if not isinstance(other, SignedDiscreteMeasure):
            return NotImplemented
        if other.d != self.d:
            raise ValueError(f"dimension mismatch: {self.d} vs {other.d}")
        pts = np.concatenate([self._points, other._points])
        w = np.concatenate([self._weights, sign * other._weights])
        return SignedDiscreteMeasure(pts, w, d=self.d)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return SignedDiscreteMeasure(self._points, -self._weights, d=self.d)

    def __mul__(self, scalar: float):
        if not np.isscalar(scalar):
            return NotImplemented
        return SignedDiscreteMeasure(self._points, float(scalar) * self._weights, d=self.d)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignedDiscreteMeasure):
            return NotImplemented
        return (
            self.d == other.d
            and np.array_equal(self._points, other._points)
            and np.array_equal(self._weights, other._weights)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"SignedDiscreteMeasure(d={self.d}, atoms={len(self)})"


def _canonicalize(pts: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Exact-equality merge only; no tolerance so mass never moves between points.
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    merged = np.bincount(inverse.reshape(-1), weights=w, minlength=uniq.shape[0])
    keep = merged != 0.0
    return np.ascontiguousarray(uniq[keep]), merged[keep]


def _weight_values(p: Callable, points: np.ndarray) -> np.ndarray:
    if isinstance(p, RadialWeight):
        return np.asarray(p.profile(points.sum(axis=1)), dtype=float)
    return _values(p, points)


def weighted_norm(mu: SignedDiscreteMeasure, p: Callable) -> float:
    """``sum_i w(x_i) |w_i|`` for a weight ``p`` (usually :class:`WeightParams`)."""
    if len(mu) == 0:
        return 0.0
    return float(np.dot(_weight_values(p, mu.points), np.abs(mu.weights)))


def pair(mu: SignedDiscreteMeasure, phi: Callable) -> float:
    """Integral of ``phi`` against ``mu``.

    ``phi`` is called on the ``(n, d)`` array of atom positions and may return an
    ``(n,)`` array or a scalar; functions that only accept a single point are
    evaluated atom by atom.
    """
    if len(mu) == 0:
        return 0.0
    return float(np.dot(_values(phi, mu.points), mu.weights))


def mass_vector(mu: SignedDiscreteMeasure) -> np.ndarray:
    """Componentwise first moments ``(int x_l dmu)_l``."""
    if len(mu) == 0:
        return np.zeros(mu.d)
    return mu.weights @ mu.points


def number_density(mu: SignedDiscreteMeasure) -> float:
    return float(mu.weights.sum())


def weighted_distance(mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure, p: Callable) -> float:
    return weighted_norm(mu - nu, p)


# -- lattice helpers ---------------------------------------------------------


def lattice_points(d: int, N: int, cell: float = 1.0) -> np.ndarray:
    """Coordinates of the lattice ``{0..N}^d`` as an array of shape ``(N+1,)*d + (d,)``."""
    axes = [np.arange(N + 1, dtype=float) * cell] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class LatticeBinning:
    """Result of :func:`bin_to_lattice`.

    ``density`` has shape ``(N+1,)*d`` and is indexed by ``floor(x / cell)``;
    atoms with any index above ``N`` are collected in the overflow bucket.
    """

    density: np.ndarray
    cell: float
    overflow_weight: float
    overflow_mass: np.ndarray

    @property
    def total_weight(self) -> float:
        return float(self.density.sum()) + self.overflow_weight


def bin_to_lattice(mu: SignedDiscreteMeasure, cell: float, N: int) -> LatticeBinning:
    """Assign each atom to the lattice cell containing it (floor rule per coordinate)."""
    if not cell > 0:
        raise ValueError("cell must be positive")
    d = mu.d
    density = np.zeros((N + 1,) * d)
    if len(mu) == 0:
        return LatticeBinning(density, cell, 0.0, np.zeros(d))
    idx = np.floor(mu.points / cell).astype(np.int64)
    inside = np.all(idx <= N, axis=1)
    np.add.at(density, tuple(idx[inside].T), mu.weights[inside])
    out_w = mu.weights[~inside]
    overflow_mass = out_w @ mu.points[~inside] if out_w.size else np.zeros(d)
    return LatticeBinning(density, cell, float(out_w.sum()), overflow_mass)


def from_lattice(density: np.ndarray, cell: float = 1.0) -> SignedDiscreteMeasure:
    """Measure with an atom at every nonzero lattice cell (the origin cell must be empty)."""
    density = np.asarray(density, dtype=float)
    d = density.ndim
    if density.flat[0] != 0.0:
        raise ValueError("lattice density has mass at the origin cell")
    idx = np.argwhere(density != 0.0)
    if idx.size == 0:
        return SignedDiscreteMeasure.empty(d)
    return SignedDiscreteMeasure(idx * cell, density[tuple(idx.T)], d=d)


def to_lattice(mu: SignedDiscreteMeasure, N: int) -> np.ndarray:
    """Place a measure supported on integer points onto ``{0..N}^d``.

    Raises ``ValueError`` if an atom is not an integer point or lies outside.
    """
    density = np.zeros((N + 1,) * mu.d)
    if len(mu) == 0:
        return density
    idx = np.rint(mu.points)
    if not np.array_equal(idx, mu.points):
        raise ValueError("measure has atoms off the integer lattice")
    if np.any(idx > N):
        raise ValueError(f"measure has atoms outside the lattice extent N={N}")
    density[tuple(idx.astype(np.int64).T)] = mu.weights
    return density


def total_variation_norm(mu: SignedDiscreteMeasure) -> float:
    return math.fsum(np.abs(mu.weights))
