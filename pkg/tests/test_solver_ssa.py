import numpy as np
import pytest

from multicoag import kernels
from multicoag.measures import SignedDiscreteMeasure as M
from multicoag.solver_grid import SourceSpec
from multicoag.solver_ssa import (
    ParticleSystem,
    advance,
    init,
    run,
    step,
    total_event_rate,
)

K2 = kernels.constant()
K0 = kernels.constant(0.0)


def system(points, V=1.0, seed=0, d=1):
    s = ParticleSystem(d, V, seed)
    for p in points:
        s.add(np.asarray(p, dtype=float))
    return s


def test_init_counts_poisson():
    s = init(M.dirac((1.0, 0.0)), 1000.0, seed=3)
    assert abs(s.n_particles - 1000) < 5 * 31.6
    assert init(M.empty(2), 1000.0, 0).n_particles == 0
    s = init(M.from_atoms([((1, 0), 1.0), ((0, 1), 2.0)]), 1e4, seed=1)
    counts = dict(zip(map(tuple, s.species), s.counts))
    assert abs(counts[(1.0, 0.0)] - 1e4) < 5 * 100
    assert abs(counts[(0.0, 1.0)] - 2e4) < 5 * 142


def test_init_rejects_negative():
    with pytest.raises(ValueError):
        init(M.dirac((1.0,), -1.0), 10.0, 0)
    with pytest.raises(ValueError):
        ParticleSystem(1, 0.0, 0)


def test_event_rate_examples():
    assert total_event_rate(system([(1,), (1,)]), K2) == 2.0
    assert total_event_rate(system([], V=10.0), K2, SourceSpec(M.dirac((1.0,), 0.3))) == pytest.approx(3.0)
    for n in (1, 5, 17):
        assert total_event_rate(system([(1,)] * n), K2) == n * (n - 1)


def test_event_rate_mixed_species_matches_pair_sum():
    pts = [(1.0, 0.0), (1.0, 0.0), (0.0, 2.0), (3.0, 1.0), (0.0, 2.0), (0.0, 2.0)]
    k = kernels.brownian()
    s = system(pts, V=2.0, d=2)
    arr = np.array(pts)
    expected = sum(float(k(arr[i], arr[j])) for i in range(6) for j in range(i + 1, 6)) / 2.0
    assert total_event_rate(s, k) == pytest.approx(expected, rel=1e-13)


def test_waiting_time_exponential():
    taus = []
    for seed in range(4000):
        _, tau = step(system([(1,), (1,)], seed=seed), K2)
        taus.append(tau)
    taus = np.array(taus)
    # Exp(2): mean 1/2, standard error 0.5/sqrt(n)
    assert abs(taus.mean() - 0.5) < 4 * 0.5 / np.sqrt(len(taus))


def test_coagulation_preserves_mass_exactly():
    s = system([(1, 0), (0, 1), (2, 3), (1, 1)], d=2, seed=7)
    before = s.mass_vector().copy()
    for _ in range(3):
        s, _ = step(s, kernels.brownian())
        np.testing.assert_array_equal(s.mass_vector(), before)
    assert s.n_particles == 1


def test_quiescent_system():
    s = system([(1,)])
    s, tau = step(s, K2)
    assert tau == np.inf and s.n_particles == 1
    s = advance(s, K2, None, 5.0)
    assert s.t == 5.0


def test_source_only_poisson_counts():
    # count at t is Poisson(V * zeta_tot * t) = Poisson(10)
    V, rate, t = 10.0, 0.5, 2.0
    res = run(M.empty(1), K0, SourceSpec(M.dirac((1.0,), rate)), V=V, replicas=1000, seed=0,
              times=[0.0, t], N=4)
    counts = res.moments["M0"][:, -1] * V
    lam = V * rate * t
    assert abs(counts.mean() - lam) <= 3 * np.sqrt(lam / len(counts))
    assert counts.var(ddof=1) == pytest.approx(lam, rel=0.15)
    np.testing.assert_array_equal(counts, np.round(counts))


def test_zero_kernel_keeps_initial_measure():
    f0 = M.from_atoms([((1, 0), 0.5), ((0, 2), 0.3)])
    res = run(f0, K0, None, V=100.0, replicas=2, seed=5, times=[0.0, 1.0, 2.0], N=4)
    for r in range(2):
        assert np.all(res.moments["M0"][r] == res.moments["M0"][r][0])
    np.testing.assert_array_equal(res.trajectory.densities[0], res.trajectory.densities[-1])


def test_monodisperse_number_density():
    V = 1e4
    res = run(M.dirac((1.0,)), K2, None, V=V, replicas=8, seed=11, times=[0.0, 1.0], N=64)
    m0 = res.mean("M0")
    init_density = m0[0]
    # 1/(1+t) decay of the number density relative to the realised initial state
    assert abs(m0[-1] - init_density / 2.0) <= 3 * res.stderr("M0")[-1] + 3 * res.stderr("M0")[0] / 2


def test_pathwise_mass_conservation():
    f0 = M.from_atoms([((1, 0), 1.0), ((0, 1), 0.5)])
    res = run(f0, kernels.brownian(), None, V=200.0, replicas=3, seed=2, times=[0, 0.5, 1.0], N=8)
    mass = res.moments["mass"]
    for r in range(3):
        np.testing.assert_array_equal(mass[r], np.broadcast_to(mass[r][0], mass[r].shape))


def test_source_mass_in_expectation():
    zeta = M.dirac((1.0, 1.0), 0.2)
    res = run(M.dirac((1.0, 0.0)), K2, SourceSpec(zeta), V=100.0, replicas=200, seed=4,
              times=[0.0, 1.0], N=16)
    mass = res.moments["mass"]
    gain = mass[:, -1] - mass[:, 0]
    se = gain.std(axis=0, ddof=1) / np.sqrt(len(gain))
    assert np.all(np.abs(gain.mean(axis=0) - 0.2) <= 3 * se)


def test_seed_determinism_and_threads():
    f0 = M.from_atoms([((1, 0), 1.0), ((0, 1), 1.0)])
    args = dict(V=300.0, replicas=3, seed=9, times=[0.0, 0.5, 1.0], N=8)
    a = run(f0, kernels.brownian(), None, **args)
    b = run(f0, kernels.brownian(), None, **args)
    c = run(f0, kernels.brownian(), None, threads=2, **args)
    for other in (b, c):
        np.testing.assert_array_equal(a.trajectory.densities, other.trajectory.densities)
        np.testing.assert_array_equal(a.moments["M2"], other.moments["M2"])
    assert a.seeds == [9, 10, 11]
    d = run(f0, kernels.brownian(), None, **{**args, "seed": 10})
    assert not np.array_equal(a.moments["M2"], d.moments["M2"])


def test_run_validation():
    with pytest.raises(ValueError):
        run(M.dirac((1.0,)), K2, None, V=10.0, replicas=0, seed=0, times=[0.0], N=4)
    with pytest.raises(ValueError):
        run(M.dirac((1.0,)), K2, None, V=10.0, replicas=1, seed=0, times=[1.0, 0.5], N=4)
