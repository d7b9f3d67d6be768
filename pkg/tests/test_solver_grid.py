import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from multicoag import kernels
from multicoag.errors import NumericalError
from multicoag.measures import SignedDiscreteMeasure as M
from multicoag.solver_grid import (
    GridSpec,
    GridState,
    LatticeOperator,
    SourceSpec,
    constant_kernel_solution,
    initial_state,
    rhs,
    simulate,
    snapshot_times,
    step,
)


def closed_constant_rhs(c):
    """Independent K = 2 closed-box right-hand side written as explicit sums.

    Only pairs whose product stays inside the box react."""
    n = len(c) - 1
    out = np.zeros_like(c)
    for i in range(1, n + 1):
        gain = sum(c[j] * c[i - j] for j in range(1, i))
        out[i] = gain - 2.0 * c[i] * sum(c[j] for j in range(1, n - i + 1))
    return out


def test_rhs_example():
    spec = GridSpec(d=1, N=4, dt=0.1, t_end=0.1)
    c = np.zeros(5)
    c[1] = 1.0
    dc = rhs(GridState(c, 0.0), kernels.constant(), SourceSpec.none(1), spec)
    np.testing.assert_allclose(dc, [0.0, -2.0, 1.0, 0.0, 0.0], atol=1e-15)


def test_closed_box_example():
    spec = GridSpec(d=1, N=2, dt=0.1, t_end=0.1)
    c = np.array([0.0, 1.0, 1.0])
    dc = rhs(GridState(c, 0.0), kernels.constant(), SourceSpec.none(1), spec)
    np.testing.assert_allclose(dc, [0.0, -2.0, 1.0], atol=1e-15)
    # mass conserved: 1*(-2) + 2*(1) = 0
    assert dc @ np.arange(3) == pytest.approx(0.0, abs=1e-15)


def test_rhs_matches_independent_sums(rng):
    spec = GridSpec(d=1, N=12, dt=0.1, t_end=0.1)
    c = rng.uniform(0, 1, 13)
    c[0] = 0.0
    dc = rhs(GridState(c, 0.0), kernels.constant(), SourceSpec.none(1), spec)
    np.testing.assert_allclose(dc, closed_constant_rhs(c), atol=1e-13)


@pytest.mark.parametrize("d,trunc", [(1, "closed"), (1, "open"), (2, "closed"), (2, "open")])
def test_separable_and_pair_paths_agree(rng, d, trunc):
    spec = GridSpec(d=d, N=6 if d == 2 else 20, dt=0.1, t_end=0.1, truncation=trunc)
    k = kernels.brownian()
    c = rng.uniform(0, 1, spec.shape)
    c.flat[0] = 0.0
    dc_sep, flux_sep = LatticeOperator(k, spec)(c)
    dc_tab, flux_tab = LatticeOperator(dataclasses.replace(k, terms=None), spec)(c)
    np.testing.assert_allclose(dc_sep, dc_tab, atol=1e-12)
    np.testing.assert_allclose(flux_sep, flux_tab, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_closed_conserves_and_open_accounts(rng, d):
    for trunc in ("closed", "open"):
        spec = GridSpec(d=d, N=8, dt=0.1, t_end=0.1, truncation=trunc)
        op = LatticeOperator(kernels.brownian(), spec)
        c = rng.uniform(0, 1, spec.shape)
        c.flat[0] = 0.0
        dc, flux = op(c)
        inside = np.tensordot(dc, op.points, axes=d)
        scale = np.abs(dc).sum() * op.points.sum(axis=-1).max()
        np.testing.assert_allclose(inside + flux, 0.0, atol=1e-14 * scale)
        if trunc == "closed":
            np.testing.assert_array_equal(flux, 0.0)
        else:
            assert np.all(flux > 0)


def test_threads_identical(rng):
    spec = GridSpec(d=2, N=16, dt=0.01, t_end=0.05, truncation="open")
    f0 = M.from_atoms([((1, 0), 1.0), ((0, 1), 0.5)])
    a = simulate(f0, kernels.brownian(), SourceSpec.none(2), spec, threads=1)
    b = simulate(f0, kernels.brownian(), SourceSpec.none(2), spec, threads=3)
    np.testing.assert_array_equal(a.densities, b.densities)


def test_constant_kernel_against_closed_form():
    spec = GridSpec(d=1, N=128, dt=1e-3, t_end=1.0, output_every=250)
    traj = simulate(M.dirac((1.0,)), kernels.constant(), SourceSpec.none(1), spec)
    k = np.arange(1, 129)
    for t, c in zip(traj.times, traj.densities):
        np.testing.assert_allclose(c[1:], constant_kernel_solution(k, t), atol=1e-12)


def test_solve_ivp_oracle_matches_closed_form():
    sol = solve_ivp(lambda t, c: closed_constant_rhs(c), (0, 1), np.eye(33)[1], method="DOP853",
                    rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(sol.y[1:, -1], constant_kernel_solution(np.arange(1, 33), 1.0), atol=1e-10)


def test_source_only_growth():
    spec = GridSpec(d=1, N=4, dt=0.1, t_end=1.0)
    zero = kernels.constant(0.0)
    traj = simulate(M.dirac((2.0,), 0.0 + 1e-300), zero, SourceSpec(M.dirac((1.0,), 0.5)), spec)
    assert traj.densities[-1][1] == pytest.approx(0.5, rel=1e-15)


def test_snapshot_times():
    assert list(snapshot_times(GridSpec(d=1, N=4, dt=0.25, t_end=1.0, output_every=3))) == [0.0, 0.75, 1.0]


@pytest.mark.parametrize("kw", [dict(N=0), dict(dt=0.0), dict(t_end=0.15), dict(truncation="periodic"),
                                dict(output_every=0)])
def test_gridspec_validation(kw):
    base = dict(d=1, N=4, dt=0.1, t_end=1.0)
    with pytest.raises(ValueError):
        GridSpec(**{**base, **kw})


def test_initial_state_validation():
    spec = GridSpec(d=1, N=4, dt=0.1, t_end=0.1)
    with pytest.raises(ValueError):
        initial_state(M.dirac((1.0,), -1.0), spec)
    with pytest.raises(ValueError):
        initial_state(np.ones(5), spec)
    with pytest.raises(ValueError):
        SourceSpec(M.dirac((1.0,), -0.1))


def test_nan_raises_with_stage():
    spec = GridSpec(d=1, N=4, dt=1e200, t_end=1e200)
    c = np.zeros(5)
    c[1] = 1e200
    with pytest.raises(NumericalError) as exc:
        step(GridState(c, 0.0), kernels.constant(), SourceSpec.none(1), spec)
    assert exc.value.stage in (1, 2, 3, 4) and exc.value.t == 0.0
    assert "reduce dt" in str(exc.value)


def test_negative_densities_clamped_and_logged():
    spec = GridSpec(d=1, N=8, dt=0.9, t_end=0.9, truncation="open")
    c = np.zeros(9)
    c[1] = 5.0
    out = step(GridState(c, 0.0), kernels.constant(), SourceSpec.none(1), spec)
    assert np.all(out.c >= 0)
    assert out.clamped_mass > 0 and out.clamp_events > 0


def test_trajectory_helpers():
    spec = GridSpec(d=2, N=4, dt=0.1, t_end=0.2)
    f0 = M.from_atoms([((1, 0), 1.0), ((0, 2), 0.5)])
    traj = simulate(f0, kernels.constant(), SourceSpec.none(2), spec)
    assert traj.d == 2 and traj.N == 4 and len(traj) == 3
    assert traj.measure(0) == f0
    np.testing.assert_allclose(traj.mass_vectors()[0], [1.0, 1.0])
    np.testing.assert_allclose(traj.moments(lambda x: np.ones(len(x)))[0], 1.5)
    assert traj.meta["solver"] == "grid"
