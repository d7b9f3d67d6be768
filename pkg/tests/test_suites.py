import numpy as np
import pytest

from multicoag import suites


@pytest.mark.parametrize("suite", suites.WEIGHT_SUITES, ids=lambda s: s.__name__)
def test_weight_suites_pass(suite):
    rep = suite(samples=5000, seed=21)
    assert rep.passed, rep.line()
    assert rep.extra["violations"] == 0 and rep.worst_violation <= suites.REL_TOL


def test_power_defect_constant_one_fails():
    rep = suites.power_regularization_defect(samples=5000, seed=0, C=1.0)
    assert not rep.passed
    assert rep.location is not None


def test_suites_deterministic():
    a = suites.power_weight_subadditivity(samples=2000, seed=4)
    b = suites.power_weight_subadditivity(samples=2000, seed=4)
    assert a.to_dict()["worst_violation"] == b.to_dict()["worst_violation"]
    assert a.extra.get("samples", 2000) == 2000


def test_operator_suites_pass():
    for rep in suites.weak_strong_equivalence(samples=100, seed=1):
        assert rep.passed, rep.line()
    for rep in suites.operator_norm_bounds(samples=100, seed=2):
        assert rep.passed, rep.line()


def test_kernel_envelopes_and_test_functions():
    for rep in suites.kernel_envelopes(samples=5000, seed=3) + suites.test_function_validity(seed=3):
        assert rep.passed, rep.line()


def test_random_measure_shapes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu = suites.random_measure(rng, d=2, max_atoms=5, signed=False)
        assert mu.d == 2 and 1 <= len(mu) <= 5 and mu.is_nonnegative()
