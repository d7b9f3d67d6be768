"""Randomised property suites for the weight inequalities and the coagulation operator.

Each suite draws parameter sets and point pairs from a seeded generator and
returns a :class:`~multicoag.diagnostics.CheckReport` whose ``worst_violation``
is the largest relative excess of the left side over the right side (zero when
every sample satisfies the inequality).  Samples are processed in groups that
share one parameter draw so each group is a single vectorised evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .coagulation import (
    difference_bound_check,
    operator_norm_bound_check,
    strong_apply,
    weak_apply,
    weak_scale,
)
from .composition import (
    ConvexMomentWeight,
    PowerRegularization,
    RegularizedSublinear,
    TruncatedWeight,
    WeightParams,
    is_valid_test_function,
    sample_compositions,
)
from .diagnostics import CheckReport
from .kernels import KernelSpec, brownian, constant, dense_ratio_scan, envelope_check, product_envelope
from .measures import SignedDiscreteMeasure, mass_vector, pair

REL_TOL = 1e-12
GROUP = 100  # point pairs per parameter draw


def _pairs(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` pairs in dimension 3: mostly log-uniform sizes over 12 decades, plus
    small integer points so the branch boundary ``|x| = 1`` is hit exactly."""
    x = sample_compositions(rng, n, 3)
    y = sample_compositions(rng, n, 3)
    m = n // 10
    if m:
        x[:m] = rng.integers(0, 4, size=(m, 3))
        y[:m] = rng.integers(0, 4, size=(m, 3))
        for arr in (x, y):
            empty = arr[:m].sum(axis=1) == 0
            arr[:m][empty, 0] = 1.0
    return x, y


@dataclass
class _Tally:
    worst: float = 0.0
    violations: int = 0
    samples: int = 0
    witness: tuple | None = None

    def add(self, lhs, rhs, scale, x, y, params) -> None:
        excess = (np.asarray(lhs) - np.asarray(rhs)) / np.maximum(np.abs(scale), np.finfo(float).tiny)
        bad = excess > REL_TOL
        self.samples += excess.size
        self.violations += int(bad.sum())
        i = int(np.argmax(excess))
        if excess.flat[i] > self.worst:
            self.worst = float(excess.flat[i])
            self.witness = (x[i].tolist(), y[i].tolist(), params)

    def report(self, name: str, seconds: float) -> CheckReport:
        return CheckReport(
            name, self.violations == 0 and self.worst <= REL_TOL, self.worst, REL_TOL,
            None if self.witness is None else tuple(self.witness),
            f"{self.samples} samples, {self.violations} violations",
            {"samples": self.samples, "violations": self.violations, "seconds": seconds},
        )


def _run(name: str, samples: int, seed: int, body) -> CheckReport:
    rng = np.random.default_rng(seed)
    tally = _Tally()
    start = time.perf_counter()
    for _ in range(max(1, samples // GROUP)):
        body(rng, tally)
    return tally.report(name, time.perf_counter() - start)


def _subadditive(tally: _Tally, w, x, y, params) -> None:
    wx, wy, ws = w(x), w(y), w(x + y)
    tally.add(ws, wx + wy, wx + wy + ws, x, y, params)


def _below(tally: _Tally, w, majorant, x, y, params) -> None:
    r = x.sum(axis=1)
    lhs, rhs = w(x), majorant(r)
    tally.add(lhs, rhs, np.abs(lhs) + np.abs(rhs), x, y, params)


def power_weight_subadditivity(samples: int = 100_000, seed: int = 0) -> CheckReport:
    """``omega_{a,b}(x+y) <= omega_{a,b}(x) + omega_{a,b}(y)`` for ``a, b <= 1``."""

    def body(rng, tally):
        a, b = rng.uniform(-2.0, 1.0, size=2)
        if rng.random() < 0.1:
            a, b = 1.0, rng.choice([1.0, 0.0])
        x, y = _pairs(rng, GROUP)
        _subadditive(tally, WeightParams(a, b), x, y, {"alpha": a, "beta": b})

    return _run("power_weight_subadditivity", samples, seed, body)


def truncated_weight(samples: int = 100_000, seed: int = 1) -> CheckReport:
    """``min(omega, n)`` is subadditive and below ``omega``."""

    def body(rng, tally):
        a, b = rng.uniform(-2.0, 1.0, size=2)
        n = float(np.exp(rng.uniform(np.log(1.01), np.log(1e4))))
        w = TruncatedWeight(WeightParams(a, b), n)
        x, y = _pairs(rng, GROUP)
        params = {"alpha": a, "beta": b, "n": w.n}
        _subadditive(tally, w, x, y, params)
        _below(tally, w, w.majorant, x, y, params)

    return _run("truncated_weight", samples, seed, body)


def regularized_sublinear_weight(samples: int = 100_000, seed: int = 2) -> CheckReport:
    """The eps/R regularisation of a sublinear profile is subadditive and below it."""

    def body(rng, tally):
        a, b = rng.uniform(-1.0, 1.0, size=2)
        eps = float(rng.uniform(1e-3, 1.0 - 1e-3))
        R = float(np.exp(rng.uniform(np.log(1.01), np.log(1e4))))
        base = WeightParams(a, b)
        w = RegularizedSublinear(base.profile, eps, R)
        x, y = _pairs(rng, GROUP)
        params = {"alpha": a, "beta": b, "eps": eps, "R": R}
        _subadditive(tally, w, x, y, params)
        _below(tally, w, w.majorant, x, y, params)

    return _run("regularized_sublinear_weight", samples, seed, body)


def two_sided_power_bound(samples: int = 100_000, seed: int = 3) -> CheckReport:
    """``omega_{a,b}(x+y) <= max(2^a, 2^b) (omega_{a,b}(x) + omega_{a,b}(y))`` for ``a, b >= 0``."""

    def body(rng, tally):
        a, b = rng.uniform(0.0, 3.0, size=2)
        w = WeightParams(a, b)
        x, y = _pairs(rng, GROUP)
        c = max(2.0**a, 2.0**b)
        wx, wy, ws = w(x), w(y), w(x + y)
        tally.add(ws, c * (wx + wy), ws + c * (wx + wy), x, y, {"alpha": a, "beta": b})

    return _run("two_sided_power_bound", samples, seed, body)


@dataclass(frozen=True)
class _Power:
    p: float

    def __call__(self, r):
        return np.asarray(r, dtype=float) ** self.p


def convex_moment_regularization(samples: int = 100_000, seed: int = 4) -> CheckReport:
    """``Phi_eps`` built from an increasing ``Phi`` is subadditive and below ``Phi(|x|^-alpha)``."""

    def body(rng, tally):
        phi = _Power(float(rng.uniform(1.0, 3.0)))
        alpha = float(rng.uniform(0.05, 2.0))
        eps = float(rng.uniform(1e-3, 1.0 - 1e-3))
        w = ConvexMomentWeight(phi, alpha, eps)
        x, y = _pairs(rng, GROUP)
        params = {"Phi_power": phi.p, "alpha": alpha, "eps": eps}
        _subadditive(tally, w, x, y, params)
        _below(tally, w, w.majorant, x, y, params)

    return _run("convex_moment_regularization", samples, seed, body)


def power_regularization_defect(samples: int = 100_000, seed: int = 5, k: float = 2.0,
                                C: float = 2.0) -> CheckReport:
    """Defect of the bounded ``|x|^k`` approximation is below
    ``C |small|^mu min(|large|, R)^k |large|^-mu`` for ``mu`` in ``{0, 1/2, 1}``
    and random ``mu`` in ``[0, 1]``; the weight itself is below ``omega_{-theta1,k}``."""

    def body(rng, tally):
        eps = float(rng.uniform(1e-3, 1.0 - 1e-3))
        R = float(np.exp(rng.uniform(np.log(1.01), np.log(1e3))))
        w = PowerRegularization(k, eps, R)
        x, y = _pairs(rng, GROUP)
        wx, wy, ws = w(x), w(y), w(x + y)
        defect = ws - wx - wy
        for mu in (0.0, 0.5, 1.0, float(rng.uniform())):
            rhs = w.defect_majorant(x, y, mu, C)
            tally.add(defect, rhs, np.abs(ws) + np.abs(wx) + np.abs(wy) + np.abs(rhs), x, y,
                      {"eps": eps, "R": R, "mu": mu})
        theta1 = float(rng.uniform(-1.0, 1.0))
        _below(tally, w, lambda r: w.majorant(r, theta1), x, y,
               {"eps": eps, "R": R, "theta1": theta1})

    return _run(f"power_regularization_defect(k={k:g},C={C:g})", samples, seed, body)


WEIGHT_SUITES = (
    power_weight_subadditivity,
    truncated_weight,
    regularized_sublinear_weight,
    two_sided_power_bound,
    convex_moment_regularization,
    power_regularization_defect,
)


# -- operator suites ----------------------------------------------------------


def _random_kernel(rng: np.random.Generator) -> KernelSpec:
    choice = int(rng.integers(0, 3))
    if choice == 0:
        return constant(float(rng.uniform(0.5, 3.0)))
    if choice == 1:
        return brownian()
    t2 = float(rng.uniform(-0.5, 0.9))
    t1 = float(rng.uniform(max(-t2, t2 - 0.99), 1.0))
    return product_envelope(t1, t2)


def random_measure(rng: np.random.Generator, d: int | None = None, max_atoms: int = 20,
                   signed: bool | None = None, size_range=(1e-3, 1e3)) -> SignedDiscreteMeasure:
    d = int(rng.integers(1, 4)) if d is None else d
    n = int(rng.integers(1, max_atoms + 1))
    signed = bool(rng.random() < 0.5) if signed is None else signed
    pts = sample_compositions(rng, n, d, size_range)
    if rng.random() < 0.3:
        pts = rng.integers(0, 5, size=(n, d)).astype(float)
        pts[pts.sum(axis=1) == 0, 0] = 1.0
    w = rng.uniform(0.1, 2.0, size=n)
    if signed:
        w *= rng.choice([-1.0, 1.0], size=n)
    return SignedDiscreteMeasure(pts, w, d=d)


@dataclass(frozen=True)
class _Coordinate:
    axis: int

    def __call__(self, x):
        return np.asarray(x, dtype=float)[..., self.axis]


def _random_test_function(rng: np.random.Generator):
    choice = int(rng.integers(0, 3))
    if choice == 0:
        return WeightParams(*rng.uniform(-1.0, 1.0, size=2))
    if choice == 1:
        return RegularizedSublinear(WeightParams(*rng.uniform(0.0, 1.0, size=2)).profile,
                                    float(rng.uniform(0.01, 0.99)), float(rng.uniform(2.0, 50.0)))
    return PowerRegularization(2.0, float(rng.uniform(0.01, 0.99)), float(rng.uniform(2.0, 50.0)))


def weak_strong_equivalence(samples: int = 1000, seed: int = 6) -> list[CheckReport]:
    """``<(1/2)Q+(mu,mu) - Q-(mu,mu), phi>`` equals the weak form, and the strong
    operator has zero mass vector, on random measures."""
    rng = np.random.default_rng(seed)
    eq, mass = _Tally(), _Tally()
    start = time.perf_counter()
    for _ in range(samples):
        k = _random_kernel(rng)
        mu = random_measure(rng)
        phi = _random_test_function(rng)
        strong = strong_apply(k, mu)
        a, b = pair(strong, phi), weak_apply(k, mu, mu, phi)
        scale = weak_scale(k, mu, mu, phi)
        pts = mu.points[:1]
        eq.add(np.array([abs(a - b)]), 0.0, np.array([scale]), pts, pts, k.name)
        mv = mass_vector(strong)
        for axis in range(mu.d):
            s = weak_scale(k, mu, mu, _Coordinate(axis))
            mass.add(np.array([abs(mv[axis])]), 0.0, np.array([s]), pts, pts, k.name)
    secs = time.perf_counter() - start
    return [eq.report("weak_strong_equivalence", secs), mass.report("strong_mass_neutrality", secs)]


NORM_BOUND_PARAMS = ((0.0, 0.0), (0.5, 1.0), (1.0, 2.0))


def operator_norm_bounds(samples: int = 1000, seed: int = 7,
                         params=NORM_BOUND_PARAMS) -> list[CheckReport]:
    """Gain/loss bilinear bounds and the difference bound on random measure pairs."""
    rng = np.random.default_rng(seed)
    reports = []
    for alpha, beta in params:
        p = WeightParams(alpha, beta)
        worst_gain = worst_loss = worst_diff = 0.0
        failures = 0
        start = time.perf_counter()
        for _ in range(samples):
            k = _random_kernel(rng)
            d = int(rng.integers(1, 4))
            mu = random_measure(rng, d=d)
            nu = random_measure(rng, d=d)
            r = operator_norm_bound_check(k, mu, nu, p)
            s = difference_bound_check(k, mu, nu, p)
            worst_gain = max(worst_gain, r.gain_ratio)
            worst_loss = max(worst_loss, r.loss_ratio)
            worst_diff = max(worst_diff, s.gain_ratio, s.loss_ratio)
            failures += (not r.passed) + (not s.passed)
        worst = max(worst_gain, worst_loss, worst_diff)
        reports.append(CheckReport(
            f"operator_norm_bounds(alpha={alpha:g},beta={beta:g})", failures == 0,
            worst, 1.0, None,
            f"{samples} pairs, {failures} violations; largest norm/bound ratio {worst:.3g}",
            {"gain_ratio": worst_gain, "loss_ratio": worst_loss, "difference_ratio": worst_diff,
             "violations": failures, "seconds": time.perf_counter() - start},
        ))
    return reports


def kernel_envelopes(samples: int = 100_000, seed: int = 8) -> list[CheckReport]:
    """Sampled and dense-scan envelope ratios of the built-in in-class kernels."""
    out = []
    for k in (constant(), brownian(), product_envelope(0.3, 0.5)):
        rep = envelope_check(k, samples=samples, seed=seed, d=2)
        scan = dense_ratio_scan(k)
        worst = max(rep.max_ratio, scan)
        out.append(CheckReport(
            f"kernel_envelope({k.name})", bool(rep.passed and scan <= 1.0 + 1e-12), worst, 1.0 + 1e-12,
            (rep.worst_pair[0].tolist(), rep.worst_pair[1].tolist()),
            f"sampled max ratio {rep.max_ratio:.15g}, dense scan {scan:.15g}",
        ))
    return out


def test_function_validity(seed: int = 9) -> list[CheckReport]:
    """The bounded regularised weights qualify as test functions; ``|x|^2`` does not."""
    cases = [
        ("regularized_sublinear", RegularizedSublinear(WeightParams(0.5, 0.9).profile, 0.1, 10.0), 0.1, True),
        ("convex_moment", ConvexMomentWeight(_Power(2.0), 1.0, 0.1), 0.1, True),
        ("power_regularization", PowerRegularization(2.0, 0.1, 10.0), 0.1, True),
        ("unbounded_square", lambda x: np.asarray(x, dtype=float).sum(axis=-1) ** 2, 0.1, False),
    ]
    out = []
    for name, phi, eps, expected in cases:
        rep = is_valid_test_function(phi, eps, seed=seed)
        ok = rep.valid == expected
        out.append(CheckReport(
            f"test_function_validity({name})", ok, 0.0 if ok else 1.0, 0.0, None,
            f"valid={rep.valid} (expected {expected}); " + "; ".join(rep.reasons),
        ))
    return out


def validate_all(seed: int = 0, samples: int = 100_000, operator_samples: int = 1000) -> list[CheckReport]:
    """Every property suite, in a fixed order."""
    reports = [suite(samples=samples, seed=seed + i) for i, suite in enumerate(WEIGHT_SUITES)]
    reports += kernel_envelopes(samples=samples, seed=seed)
    reports += test_function_validity(seed=seed)
    reports += weak_strong_equivalence(samples=operator_samples, seed=seed + 100)
    reports += operator_norm_bounds(samples=operator_samples, seed=seed + 200)
    return reports
