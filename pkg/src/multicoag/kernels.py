"""Coagulation kernels and their two-branch envelope.

A kernel is admissible for the uniqueness class when

    K(x, y) <= c_u * |x|^-theta1 |y|^theta2   if |x| <= |y|
                     |x|^theta2 |y|^-theta1   if |y| <= |x|

with ``-theta1 <= theta2``, ``theta2 < 1`` and ``gamma = theta2 - theta1 < 1``.

Rate functions take two point arrays (components on the last axis, broadcastable
leading axes) and return the rate array.  Built-in kernels depend on points only
through their sizes and also carry a *separable expansion*
``K(x, y) = sum_m a_m(x) b_m(y)``, which the lattice solver and the particle
solver use for fast bookkeeping.  All built-in callables are module-level
classes so kernels can be shipped to worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .composition import as_points, sample_compositions

RateFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

ENVELOPE_TOL = 1.0e-12


@dataclass(frozen=True)
class SizePower:
    """Separable factor ``coef * |x|**exponent``, defined as 0 at the origin."""

    exponent: float
    coef: float = 1.0

    def __call__(self, x) -> np.ndarray:
        r = as_points(x).sum(axis=-1)
        if self.exponent == 0.0:
            return np.where(r > 0, self.coef, 0.0)
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = self.coef * r[pos] ** self.exponent
        return out


@dataclass(frozen=True)
class ConstantRate:
    value: float

    def __call__(self, x, y):
        x, y = as_points(x), as_points(y)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        return np.full(shape, self.value)


@dataclass(frozen=True)
class BrownianRate:
    """``(r^(1/3) + s^(1/3)) (r^(-1/3) + s^(-1/3))`` on sizes ``r = |x|``, ``s = |y|``."""

    def __call__(self, x, y):
        r = as_points(x).sum(axis=-1)
        s = as_points(y).sum(axis=-1)
        cr, cs = np.cbrt(r), np.cbrt(s)
        return (cr + cs) * (1.0 / cr + 1.0 / cs)


@dataclass(frozen=True)
class ProductEnvelopeRate:
    """``|x|^-t1 |y|^t2 + |x|^t2 |y|^-t1``."""

    theta1: float
    theta2: float

    def __call__(self, x, y):
        r = as_points(x).sum(axis=-1)
        s = as_points(y).sum(axis=-1)
        t1, t2 = self.theta1, self.theta2
        return r ** (-t1) * s**t2 + r**t2 * s ** (-t1)


@dataclass(frozen=True)
class MultiplicativeRate:
    def __call__(self, x, y):
        return as_points(x).sum(axis=-1) * as_points(y).sum(axis=-1)


@dataclass(frozen=True)
class TableRate:
    """Symmetric table ``K[i-1][j-1]`` indexed by integer sizes ``1..M``."""

    table: tuple[tuple[float, ...], ...]

    def __call__(self, x, y):
        r = as_points(x).sum(axis=-1)
        s = as_points(y).sum(axis=-1)
        ri, si = np.rint(r), np.rint(s)
        m = len(self.table)
        if np.any(ri != r) or np.any(si != s) or np.any(ri < 1) or np.any(si < 1):
            raise ValueError("tabulated kernel is only defined at integer sizes >= 1")
        if np.any(ri > m) or np.any(si > m):
            raise ValueError(f"size outside the kernel table (max {m})")
        arr = np.asarray(self.table)
        return arr[ri.astype(np.int64) - 1, si.astype(np.int64) - 1]


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric coagulation rate plus its envelope parameters.

    ``terms`` optionally lists pairs ``(a, b)`` with ``K(x, y) = sum a(x) b(y)``.
    ``outside_class`` marks kernels kept only for smoke tests (e.g. gelling
    kernels); they skip the class constraints but are refused by the uniqueness
    harness.
    """

    name: str
    rate: RateFn
    c_u: float
    theta1: float
    theta2: float
    outside_class: bool = False
    terms: tuple[tuple[Callable, Callable], ...] | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.c_u > 0:
            raise ValueError(f"c_u must be positive, got {self.c_u}")
        if self.outside_class:
            return
        if not self.theta2 < 1:
            raise ValueError(f"theta2 < 1 violated (theta2={self.theta2})")
        if not -self.theta1 <= self.theta2:
            raise ValueError(f"-theta1 <= theta2 violated (theta1={self.theta1}, theta2={self.theta2})")
        if not self.gamma < 1:
            raise ValueError(f"gamma = theta2 - theta1 < 1 violated (gamma={self.gamma})")

    @property
    def gamma(self) -> float:
        return -self.theta1 + self.theta2

    @property
    def separable(self) -> bool:
        return self.terms is not None

    def __call__(self, x, y):
        return self.rate(as_points(x), as_points(y))

    def describe(self) -> dict:
        return {
            "type": self.name,
            "c_u": self.c_u,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "gamma": self.gamma,
            "outside_class": self.outside_class,
            **self.params,
        }


def constant(value: float = 2.0, c_u: float | None = None) -> KernelSpec:
    return KernelSpec(
        "constant",
        ConstantRate(float(value)),
        c_u=(float(value) if value > 0 else 1.0) if c_u is None else c_u,
        theta1=0.0,
        theta2=0.0,
        terms=((SizePower(0.0, float(value)), SizePower(0.0)),),
        params={"value": float(value)},
    )


def brownian(c_u: float = 4.0, theta1: float = 1.0 / 3.0, theta2: float = 1.0 / 3.0) -> KernelSpec:
    third = 1.0 / 3.0
    return KernelSpec(
        "brownian",
        BrownianRate(),
        c_u=c_u,
        theta1=theta1,
        theta2=theta2,
        terms=(
            (SizePower(0.0, 2.0), SizePower(0.0)),
            (SizePower(third), SizePower(-third)),
            (SizePower(-third), SizePower(third)),
        ),
    )


def product_envelope(theta1: float, theta2: float, c_u: float = 2.0) -> KernelSpec:
    return KernelSpec(
        "product_envelope",
        ProductEnvelopeRate(theta1, theta2),
        c_u=c_u,
        theta1=theta1,
        theta2=theta2,
        terms=(
            (SizePower(-theta1), SizePower(theta2)),
            (SizePower(theta2), SizePower(-theta1)),
        ),
    )


def multiplicative() -> KernelSpec:
    return KernelSpec(
        "multiplicative",
        MultiplicativeRate(),
        c_u=1.0,
        theta1=0.0,
        theta2=2.0,
        outside_class=True,
        terms=((SizePower(1.0), SizePower(1.0)),),
    )


def user_table(table: Sequence[Sequence[float]], c_u: float, theta1: float, theta2: float) -> KernelSpec:
    rows = tuple(tuple(float(v) for v in row) for row in table)
    arr = np.asarray(rows)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ValueError("kernel table must be a nonempty square matrix")
    if not np.array_equal(arr, arr.T):
        raise ValueError("kernel table must be symmetric")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("kernel table entries must be finite and nonnegative")
    return KernelSpec(
        "user_table", TableRate(rows), c_u=c_u, theta1=theta1, theta2=theta2,
        params={"table_size": arr.shape[0]},
    )


def custom(rate: RateFn, c_u: float, theta1: float, theta2: float, *, name: str = "custom",
           terms=None, outside_class: bool = False) -> KernelSpec:
    return KernelSpec(name, rate, c_u=c_u, theta1=theta1, theta2=theta2,
                      terms=terms, outside_class=outside_class)


def evaluate(k: KernelSpec, x, y):
    out = k(x, y)
    return float(out) if np.ndim(out) == 0 else out


def envelope(k: KernelSpec, x, y):
    """Two-branch envelope ``c_u * |small|^-theta1 * |large|^theta2``."""
    r = as_points(x).sum(axis=-1)
    s = as_points(y).sum(axis=-1)
    small, large = np.minimum(r, s), np.maximum(r, s)
    out = k.c_u * small ** (-k.theta1) * large**k.theta2
    return float(out) if np.ndim(out) == 0 else out


def summed_envelope(k: KernelSpec, x, y, c: float | None = None):
    """``c * (|x|^-theta1 |y|^theta2 + |x|^theta2 |y|^-theta1)`` with ``c`` defaulting to ``c_u``."""
    r = as_points(x).sum(axis=-1)
    s = as_points(y).sum(axis=-1)
    c = k.c_u if c is None else c
    t1, t2 = k.theta1, k.theta2
    out = c * (r ** (-t1) * s**t2 + r**t2 * s ** (-t1))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class EnvelopeReport:
    max_ratio: float
    worst_pair: tuple[np.ndarray, np.ndarray]
    passed: bool
    samples: int


def sample_kernel_pairs(k: KernelSpec, rng: np.random.Generator, n: int, d: int = 1):
    """Random pairs for envelope probing.

    Half the pairs have independent sizes; the rest sit on or near the diagonal
    ``|x| = |y|`` where two-branch envelopes are tightest.
    """
    if k.name == "user_table":
        m = k.params["table_size"]
        r = rng.integers(1, m + 1, size=n).astype(float)
        s = rng.integers(1, m + 1, size=n).astype(float)
        s[n // 2:] = r[n // 2:]
        x = np.zeros((n, d))
        y = np.zeros((n, d))
        x[:, 0], y[:, 0] = r, s
        return x, y
    x = sample_compositions(rng, n, d)
    y = sample_compositions(rng, n, d)
    half, quarter = n // 2, n // 4
    rx = x.sum(axis=1)
    ry = y.sum(axis=1)
    target = rx.copy()
    target[half:half + quarter] *= np.exp(rng.normal(0.0, 1e-2, size=quarter))
    scale = np.ones(n)
    scale[half:] = target[half:] / ry[half:]
    y = y * scale[:, None]
    return x, y


def envelope_check(k: KernelSpec, samples: int = 100_000, seed: int = 0, d: int = 1,
                   pairs: tuple[np.ndarray, np.ndarray] | None = None) -> EnvelopeReport:
    """Largest sampled ratio ``K / envelope``; passes iff it is at most ``1 + 1e-12``."""
    if samples <= 0:
        raise ValueError("samples must be positive")
    if pairs is None:
        rng = np.random.default_rng(seed)
        x, y = sample_kernel_pairs(k, rng, samples, d)
    else:
        x, y = (as_points(p) for p in pairs)
    ratio = np.asarray(k(x, y)) / np.asarray(envelope(k, x, y))
    i = int(np.argmax(ratio))
    worst = float(ratio[i])
    return EnvelopeReport(
        max_ratio=worst,
        worst_pair=(x[i].copy(), y[i].copy()),
        passed=bool(worst <= 1.0 + ENVELOPE_TOL),
        samples=len(ratio),
    )


def dense_ratio_scan(k: KernelSpec, n: int = 200_001, log_span: float = 12.0) -> float:
    """Max of ``K / envelope`` along a dense 1-D scan of the size ratio ``|y|/|x|``
    at ``|x| = 1``; an independent check for kernels that depend only on sizes
    and are scale-homogeneous."""
    ratios = np.exp(np.linspace(-log_span, log_span, n))
    ratios = np.append(ratios, 1.0)
    x = np.ones((ratios.size, 1))
    y = ratios[:, None]
    return float(np.max(np.asarray(k(x, y)) / np.asarray(envelope(k, x, y))))


def is_symmetric_on(k: KernelSpec, x: np.ndarray, y: np.ndarray) -> bool:
    return bool(np.array_equal(np.asarray(k(x, y)), np.asarray(k(y, x))))
