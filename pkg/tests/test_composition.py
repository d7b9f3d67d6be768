import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multicoag.composition import (
    CompositionVector,
    ConvexMomentWeight,
    PowerRegularization,
    RegularizedSublinear,
    TruncatedWeight,
    WeightParams,
    is_valid_test_function,
    l1_norm,
    sample_compositions,
    strictly_below,
    sublinear_power,
    subadditivity_defect,
    weight_eval,
)

coord = st.floats(min_value=0.0, max_value=1e3, allow_nan=False)
point3 = st.lists(coord, min_size=3, max_size=3).filter(lambda c: sum(c) > 1e-9)
exponent_le_one = st.floats(min_value=-2.0, max_value=1.0)
exponent_ge_zero = st.floats(min_value=0.0, max_value=3.0)


def square(r):
    return np.asarray(r, dtype=float) ** 2


# -- composition vectors ------------------------------------------------------


def test_l1_norm_examples():
    assert l1_norm((1, 2, 3)) == 6
    assert l1_norm((0.5, 0)) == 0.5
    x, y = CompositionVector((1, 0)), CompositionVector((0, 3))
    assert (x + y).size == 4 == x.size + y.size


def test_l1_norm_stack():
    np.testing.assert_array_equal(l1_norm(np.array([[1.0, 2.0], [0.5, 0.0]])), [3.0, 0.5])


def test_strictly_below_examples():
    assert strictly_below((1, 1), (2, 1))
    assert not strictly_below((1, 1), (1, 1))
    assert not strictly_below((2, 0), (1, 3))


def test_strictly_below_dimension_mismatch():
    with pytest.raises(ValueError):
        strictly_below((1, 1), (1, 1, 1))


@pytest.mark.parametrize("coords", [(0, 0), (-1, 2), (math.nan, 1), (math.inf, 0), ()])
def test_invalid_composition_rejected(coords):
    with pytest.raises(ValueError):
        CompositionVector(coords)


@given(point3, point3)
def test_size_additive_on_orthant(a, b):
    x, y = np.array(a), np.array(b)
    assert math.isclose(l1_norm(x + y), l1_norm(x) + l1_norm(y), rel_tol=1e-15)


# -- two-branch weights -------------------------------------------------------


def test_weight_examples():
    assert weight_eval(WeightParams(-1 / 3, 1 / 3), (0.5,)) == pytest.approx(1.259921, abs=1e-6)
    assert weight_eval(WeightParams(-1, 1), (4.0,)) == 4.0
    for a, b in [(-2.0, 3.0), (0.5, -0.5), (7.0, 0.1)]:
        assert weight_eval(WeightParams(a, b), (0.25, 0.75)) == 1.0


def test_weight_boundary_uses_small_branch():
    p = WeightParams(-1.0, 2.0)
    r = np.array([np.nextafter(1.0, 0.0), 1.0, np.nextafter(1.0, 2.0)])
    v = p.profile(r)
    assert v[1] == 1.0
    assert v[0] == pytest.approx(1.0) and v[2] == pytest.approx(1.0)


def test_dual_weight():
    assert WeightParams(0.5, -2.0).dual() == WeightParams(-0.5, 2.0)


@given(point3, point3, exponent_le_one, exponent_le_one)
def test_power_weight_subadditive(a, b, alpha, beta):
    x, y = np.array(a), np.array(b)
    d = subadditivity_defect(WeightParams(alpha, beta), x, y)
    scale = WeightParams(alpha, beta)(x) + WeightParams(alpha, beta)(y)
    assert d <= 1e-12 * scale


@given(point3, point3, exponent_ge_zero, exponent_ge_zero)
def test_two_sided_power_bound(a, b, alpha, beta):
    x, y = np.array(a), np.array(b)
    w = WeightParams(alpha, beta)
    c = max(2**alpha, 2**beta)
    assert w(x + y) <= c * (w(x) + w(y)) * (1 + 1e-12)


def test_subadditivity_defect_examples():
    assert subadditivity_defect(WeightParams(0.5, 0.5), (1.0,), (1.0,)) == pytest.approx(2**0.5 - 2)
    phi = TruncatedWeight(WeightParams(-1, 1), 2.0)
    assert subadditivity_defect(phi, (0.1,), (0.1,)) == pytest.approx(-2.0)


# -- regularised weights ------------------------------------------------------


def test_regularized_weight_examples():
    w = RegularizedSublinear(sublinear_power(0.5), eps=0.04, R=10.0)
    assert w((0.01,)) == pytest.approx(0.05)
    c = ConvexMomentWeight(square, alpha=1.0, eps=0.5)
    assert c((0.25,)) == pytest.approx(2.0)
    p = PowerRegularization(2.0, 0.1, 10.0)
    assert p((3.0,)) == 9.0


def test_power_defect_equals_majorant_example():
    p = PowerRegularization(2.0, 0.1, 10.0)
    x, y = (1.0,), (3.0,)
    assert subadditivity_defect(p, x, y) == 6.0
    assert p.defect_majorant(x, y, mu=1.0, C=2.0) == 6.0


@pytest.mark.parametrize("make", [
    lambda: TruncatedWeight(WeightParams(0, 0), 1.0),
    lambda: RegularizedSublinear(sublinear_power(0.5), 0.0, 10.0),
    lambda: RegularizedSublinear(sublinear_power(0.5), 1.0, 10.0),
    lambda: RegularizedSublinear(sublinear_power(0.5), 0.5, 1.0),
    lambda: ConvexMomentWeight(square, 0.0, 0.5),
    lambda: ConvexMomentWeight(square, 1.0, 1.5),
    lambda: PowerRegularization(1.0, 0.5, 10.0),
    lambda: PowerRegularization(2.0, 0.5, 0.5),
])
def test_invalid_regularization_parameters(make):
    with pytest.raises(ValueError):
        make()


@given(point3, point3, exponent_le_one, exponent_le_one, st.floats(1.01, 1e4))
def test_truncated_weight_properties(a, b, alpha, beta, n):
    x, y = np.array(a), np.array(b)
    w = TruncatedWeight(WeightParams(alpha, beta), n)
    assert subadditivity_defect(w, x, y) <= 1e-12 * (w(x) + w(y))
    assert w(x) <= WeightParams(alpha, beta)(x)
    assert w(x) <= n


@given(point3, point3, st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
       st.floats(0.001, 0.999), st.floats(1.01, 1e4))
def test_regularized_sublinear_properties(a, b, alpha, beta, eps, R):
    x, y = np.array(a), np.array(b)
    base = WeightParams(alpha, beta)
    w = RegularizedSublinear(base.profile, eps, R)
    assert subadditivity_defect(w, x, y) <= 1e-12 * (w(x) + w(y) + w(x + y))
    assert w(x) <= base(x) * (1 + 1e-12)


@given(point3, point3, st.floats(1.0, 3.0), st.floats(0.05, 2.0), st.floats(0.001, 0.999))
def test_convex_moment_properties(a, b, power, alpha, eps):
    x, y = np.array(a), np.array(b)
    w = ConvexMomentWeight(lambda r: np.asarray(r) ** power, alpha, eps)
    assert subadditivity_defect(w, x, y) <= 1e-12 * (w(x) + w(y) + w(x + y))
    assert w(x) <= (l1_norm(x) ** -alpha) ** power * (1 + 1e-12)


@given(point3, point3, st.sampled_from([0.0, 0.5, 1.0]), st.floats(0.001, 0.999),
       st.floats(1.01, 1e3), st.floats(-1.0, 1.0))
def test_power_regularization_defect_bound(a, b, mu, eps, R, theta1):
    x, y = np.array(a), np.array(b)
    w = PowerRegularization(2.0, eps, R)
    rhs = w.defect_majorant(x, y, mu, 2.0)
    lhs = subadditivity_defect(w, x, y)
    assert lhs <= rhs + 1e-12 * (abs(rhs) + w(x) + w(y) + w(x + y))
    assert w(x) <= w.majorant(l1_norm(x), theta1) * (1 + 1e-12)


def test_power_defect_constant_two_is_sharp():
    # any constant below 2 fails at |x| = 1, |y| = 3
    p = PowerRegularization(2.0, 0.1, 10.0)
    assert subadditivity_defect(p, (1.0,), (3.0,)) > p.defect_majorant((1.0,), (3.0,), 1.0, 1.9)


def test_regularizations_converge_monotonically():
    x = np.array([0.3, 0.2])
    base = WeightParams(-0.5, 0.5)
    truncated = [TruncatedWeight(base, n)(x) for n in (1.1, 1.2, 2.0, 10.0)]
    assert np.all(np.diff(truncated) >= 0) and truncated[-1] == base(x)
    sub = [RegularizedSublinear(base.profile, e, R)(x) for e, R in [(0.9, 1.01), (0.6, 2), (0.1, 100)]]
    assert np.all(np.diff(sub) >= 0) and sub[-1] == pytest.approx(base(x))
    conv = [ConvexMomentWeight(square, 1.0, e)(x) for e in (0.9, 0.7, 0.5, 0.1)]
    assert np.all(np.diff(conv) >= 0) and conv[-1] == pytest.approx(l1_norm(x) ** -2)


def test_sample_compositions_range(rng):
    pts = sample_compositions(rng, 5000, 3)
    sizes = pts.sum(axis=1)
    assert pts.shape == (5000, 3) and np.all(pts >= 0)
    assert sizes.min() >= 1e-6 * (1 - 1e-12) and sizes.max() <= 1e6 * (1 + 1e-12)


# -- test-function validity ---------------------------------------------------


def test_valid_test_functions_accepted():
    eps = 0.1
    assert is_valid_test_function(ConvexMomentWeight(square, 1.0, eps), eps).valid
    assert is_valid_test_function(RegularizedSublinear(sublinear_power(0.5), eps, 10.0), eps).valid


def test_square_rejected_with_witness():
    rep = is_valid_test_function(lambda x: np.asarray(x).sum(axis=-1) ** 2, 0.1)
    assert not rep.valid
    assert not rep.additive_near_zero
    x, y = (np.asarray(v) for v in rep.witness[:2])
    assert l1_norm(x + y) < 0.1
