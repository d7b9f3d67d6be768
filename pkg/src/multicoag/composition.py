"""Composition space geometry, weight functions and test-function constructions.

A cluster is a point of the punctured nonnegative orthant: ``d`` nonnegative
component volumes, not all zero.  Every weight defined here depends on a point
only through its l1 size ``|x|``, so each weight is a *radial profile* ``r -> w(r)``
lifted to points by ``w(x) = profile(l1_norm(x))``.  All evaluators accept either a
:class:`CompositionVector`, a 1-D coordinate sequence, or an array of points with
the coordinates on the last axis, and vectorise over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ArrayLike = np.ndarray | Sequence[float] | float

# Sampling harness constants shared by the property checks.
SAMPLE_SIZE_RANGE = (1.0e-6, 1.0e6)


@dataclass(frozen=True)
class CompositionVector:
    """Point of ``[0, inf)^d`` minus the origin."""

    coords: tuple[float, ...]

    def __init__(self, coords: Sequence[float]):
        values = tuple(float(c) for c in coords)
        if not values:
            raise ValueError("composition vector needs at least one coordinate")
        if any(not math.isfinite(c) or c < 0.0 for c in values):
            raise ValueError(f"coordinates must be finite and nonnegative, got {values}")
        if not any(c > 0.0 for c in values):
            raise ValueError("composition vector must have a positive coordinate")
        object.__setattr__(self, "coords", values)

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def size(self) -> float:
        return math.fsum(self.coords)

    def __add__(self, other: CompositionVector) -> CompositionVector:
        _check_dims(self, other)
        return CompositionVector([a + b for a, b in zip(self.coords, other.coords)])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype if dtype is not None else float)

    def __iter__(self):
        return iter(self.coords)

    def __len__(self) -> int:
        return len(self.coords)


def _check_dims(x: CompositionVector, y: CompositionVector) -> None:
    if x.d != y.d:
        raise ValueError(f"dimension mismatch: {x.d} vs {y.d}")


def as_points(x) -> np.ndarray:
    """Coordinates of ``x`` as a float array with the components on the last axis."""
    return np.asarray(x, dtype=float)


def l1_norm(x):
    """Total size ``|x| = sum_k x_k``.

    Returns a float for a single point and an array for a stack of points.
    """
    if isinstance(x, CompositionVector):
        return x.size
    pts = as_points(x)
    if pts.ndim == 0:
        raise ValueError("l1_norm expects a point, not a scalar")
    r = pts.sum(axis=-1)
    return float(r) if r.ndim == 0 else r


def strictly_below(x, y) -> bool:
    """Partial order of the composition space: componentwise ``<=`` and ``x != y``."""
    a, b = as_points(x), as_points(y)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a != b))


def _radial(profile: Callable[[np.ndarray], np.ndarray], x):
    r = l1_norm(x)
    out = profile(np.asarray(r, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _piecewise(r: np.ndarray, below: np.ndarray, lo, hi) -> np.ndarray:
    """Evaluate ``lo(r)`` where ``below`` holds and ``hi(r)`` elsewhere, without
    evaluating either branch outside its domain."""
    r = np.asarray(r, dtype=float)
    flat = np.atleast_1d(r)
    mask = np.atleast_1d(below)
    out = np.empty_like(flat)
    if mask.any():
        out[mask] = lo(flat[mask])
    if (~mask).any():
        out[~mask] = hi(flat[~mask])
    return out.reshape(r.shape)


class RadialWeight:
    """Base class for weights of the form ``w(x) = profile(|x|)``."""

    def profile(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, x):
        return _radial(self.profile, x)


@dataclass(frozen=True)
class WeightParams(RadialWeight):
    """Two-branch power weight: ``|x|^alpha`` for ``|x| <= 1`` and ``|x|^beta`` above.

    The boundary ``|x| = 1`` takes the small-size branch; both branches equal 1
    there.
    """

    alpha: float
    beta: float

    def profile(self, r):
        a, b = self.alpha, self.beta
        return _piecewise(r, np.asarray(r) <= 1.0, lambda s: s**a, lambda s: s**b)

    def dual(self) -> WeightParams:
        return WeightParams(-self.alpha, -self.beta)


def weight_eval(p: WeightParams, x):
    return p(x)


def sublinear_power(exponent: float) -> Callable[[np.ndarray], np.ndarray]:
    """Profile ``r -> r**exponent``; sublinear for ``exponent <= 1``."""
    return _PowerProfile(float(exponent))


@dataclass(frozen=True)
class _PowerProfile:
    exponent: float

    def __call__(self, r):
        return np.asarray(r, dtype=float) ** self.exponent


@dataclass(frozen=True)
class TruncatedWeight(RadialWeight):
    """``min(omega_{alpha,beta}(x), n)``: bounded, subadditive for ``alpha, beta <= 1``."""

    base: WeightParams
    n: float

    def __post_init__(self):
        if not self.n > 1:
            raise ValueError(f"truncation level n must exceed 1, got {self.n}")

    def profile(self, r):
        return np.minimum(self.base.profile(r), self.n)

    def majorant(self, r):
        return self.base.profile(r)


@dataclass(frozen=True)
class RegularizedSublinear(RadialWeight):
    """Bounded version of a sublinear profile that is linear below ``eps``.

    ``eps^-1 * base(eps) * |x|`` for ``|x| < eps`` and ``min(base(|x|), R)`` otherwise.
    ``base`` must be a vectorised sublinear profile on ``(0, inf)``.
    """

    base: Callable[[np.ndarray], np.ndarray]
    eps: float
    R: float

    def __post_init__(self):
        _check_eps(self.eps)
        if not self.R > 1:
            raise ValueError(f"cap R must exceed 1, got {self.R}")

    def profile(self, r):
        slope = float(self.base(np.asarray(self.eps))) / self.eps
        r = np.asarray(r, dtype=float)
        return _piecewise(
            r, r < self.eps, lambda s: slope * s, lambda s: np.minimum(self.base(s), self.R)
        )

    def majorant(self, r):
        return self.base(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class ConvexMomentWeight(RadialWeight):
    """Regularisation of ``Phi(|x|^-alpha)`` that is linear below ``eps``.

    ``Phi(eps^-alpha) * |x| / eps`` for ``|x| < eps`` and ``Phi(|x|^-alpha)`` otherwise.
    ``phi`` must be continuous and nondecreasing on ``[0, inf)``.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    alpha: float
    eps: float

    def __post_init__(self):
        _check_eps(self.eps)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def profile(self, r):
        a = self.alpha
        level = float(self.phi(np.asarray(self.eps ** (-a))))
        r = np.asarray(r, dtype=float)
        return _piecewise(
            r, r < self.eps, lambda s: level * s / self.eps, lambda s: self.phi(s ** (-a))
        )

    def majorant(self, r):
        return self.phi(np.asarray(r, dtype=float) ** (-self.alpha))


@dataclass(frozen=True)
class PowerRegularization(RadialWeight):
    """Bounded approximation of ``|x|^k`` for ``k > 1``.

    ``eps^(k-1) * |x|`` for ``|x| < eps`` and ``min(|x|, R)^k`` otherwise.
    """

    k: float
    eps: float
    R: float

    def __post_init__(self):
        _check_eps(self.eps)
        if not self.R > 1:
            raise ValueError(f"cap R must exceed 1, got {self.R}")
        if not self.k > 1:
            raise ValueError(f"exponent k must exceed 1, got {self.k}")

    def profile(self, r):
        k, eps, R = self.k, self.eps, self.R
        r = np.asarray(r, dtype=float)
        return _piecewise(
            r, r < eps, lambda s: eps ** (k - 1) * s, lambda s: np.minimum(s, R) ** k
        )

    def majorant(self, r, theta1: float = -1.0):
        """``omega_{-theta1, k}``; valid for any ``theta1 >= -1``."""
        if -theta1 > 1:
            raise ValueError("majorant requires -theta1 <= 1")
        return WeightParams(-theta1, self.k).profile(r)

    def defect_majorant(self, x, y, mu: float, C: float):
        """Right-hand side ``C * |small|^mu * min(|large|, R)^k * |large|^-mu``."""
        if not 0.0 <= mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        rx = np.asarray(l1_norm(x), dtype=float)
        ry = np.asarray(l1_norm(y), dtype=float)
        small = np.minimum(rx, ry)
        large = np.maximum(rx, ry)
        out = C * small**mu * np.minimum(large, self.R) ** self.k * large ** (-mu)
        return float(out) if out.ndim == 0 else out


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def regularized_weight_eval(spec: RadialWeight, x):
    return spec(x)


def subadditivity_defect(weight: Callable, x, y):
    """``w(x + y) - w(x) - w(y)``; nonpositive for subadditive weights."""
    a, b = as_points(x), as_points(y)
    out = np.asarray(weight(a + b)) - np.asarray(weight(a)) - np.asarray(weight(b))
    return float(out) if out.ndim == 0 else out


def sample_compositions(
    rng: np.random.Generator,
    n: int,
    d: int,
    size_range: tuple[float, float] = SAMPLE_SIZE_RANGE,
) -> np.ndarray:
    """Random points: log-uniform size in ``size_range``, direction uniform on the simplex."""
    lo, hi = size_range
    sizes = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))
    if d == 1:
        return sizes[:, None]
    directions = rng.dirichlet(np.ones(d), size=n)
    return sizes[:, None] * directions


@dataclass
class ValidityReport:
    """Outcome of :func:`is_valid_test_function`."""

    valid: bool
    bounded: bool
    lipschitz: bool
    additive_near_zero: bool
    sup_estimate: float
    lipschitz_estimate: float
    witness: tuple[np.ndarray, np.ndarray] | None = None
    reasons: list[str] = field(default_factory=list)


def _values(phi: Callable, pts: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(phi(pts), dtype=float)
    except (TypeError, ValueError, IndexError):
        # phi only understands single points
        return np.array([float(phi(p)) for p in pts])
    if out.shape == (pts.shape[0],):
        return out
    if out.ndim == 0:
        return np.full(pts.shape[0], float(out))
    return np.array([float(phi(p)) for p in pts])


def is_valid_test_function(
    phi: Callable,
    eps_lin: float,
    samples: int = 4000,
    *,
    d: int = 2,
    seed: int = 0,
    growth_tol: float = 1.0e-3,
    additivity_rtol: float = 1.0e-9,
) -> ValidityReport:
    """Sampled membership check for bounded Lipschitz functions linear near zero.

    Three properties are probed on random points (log-uniform sizes over
    ``SAMPLE_SIZE_RANGE``, uniform directions):

    * boundedness: every value is finite and the supremum over the top size
      decade exceeds the supremum over the rest by at most ``growth_tol``
      (relative);
    * Lipschitz continuity: the largest difference quotient over nearby pairs
      is finite (the estimate is reported);
    * additivity: ``phi(x+y) = phi(x) + phi(y)`` whenever ``|x+y| < eps_lin``.

    On failure of the additivity probe the first offending pair is returned as
    ``witness``.
    """
    if not eps_lin > 0:
        raise ValueError("eps_lin must be positive")
    rng = np.random.default_rng(seed)
    reasons: list[str] = []

    pts = sample_compositions(rng, samples, d)
    vals = _values(phi, pts)
    finite = bool(np.all(np.isfinite(vals)))
    sizes = pts.sum(axis=1)
    top = sizes >= SAMPLE_SIZE_RANGE[1] / 10.0
    sup_rest = float(np.max(np.abs(vals[~top]))) if finite and (~top).any() else math.inf
    sup_top = float(np.max(np.abs(vals[top]))) if finite and top.any() else 0.0
    bounded = finite and sup_top <= (1.0 + growth_tol) * sup_rest + 1e-300
    if not bounded:
        reasons.append(f"unbounded: sup over top decade {sup_top:.6g} vs {sup_rest:.6g}")
    sup_estimate = max(sup_rest, sup_top) if finite else math.inf

    # Nearby pairs: relative componentwise perturbation keeps points in the orthant.
    shift = 1.0 + 1.0e-3 * rng.uniform(-1.0, 1.0, size=pts.shape)
    near = pts * shift
    gap = np.abs(near - pts).sum(axis=1)
    quot = np.abs(_values(phi, near) - vals) / np.where(gap > 0, gap, np.inf)
    lip_estimate = float(np.max(quot)) if quot.size else 0.0
    lipschitz = math.isfinite(lip_estimate)
    if not lipschitz:
        reasons.append("non-finite difference quotient")

    s = np.exp(rng.uniform(math.log(eps_lin * 1e-6), math.log(eps_lin), size=samples))
    s *= 1.0 - 1e-9
    z = sample_compositions(rng, samples, d, size_range=(1.0, 1.0 + 1e-12))
    z = z / z.sum(axis=1, keepdims=True) * s[:, None]
    lam = rng.uniform(0.05, 0.95, size=z.shape)
    x = lam * z
    y = z - x
    fx, fy, fxy = _values(phi, x), _values(phi, y), _values(phi, x + y)
    defect = np.abs(fxy - fx - fy)
    scale = np.abs(fxy) + np.abs(fx) + np.abs(fy)
    bad = ~(defect <= additivity_rtol * scale + 1e-300)
    additive = not bool(bad.any())
    witness = None
    if not additive:
        i = int(np.argmax(bad))
        witness = (x[i].copy(), y[i].copy())
        reasons.append(
            f"not additive below eps_lin: |x+y|={float((x[i] + y[i]).sum()):.6g}, "
            f"defect={float(fxy[i] - fx[i] - fy[i]):.6g}"
        )

    return ValidityReport(
        valid=bounded and lipschitz and additive,
        bounded=bounded,
        lipschitz=lipschitz,
        additive_near_zero=additive,
        sup_estimate=sup_estimate,
        lipschitz_estimate=lip_estimate,
        witness=witness,
        reasons=reasons,
    )
