import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import chisquare

from conftest import ising_ring
from ipslab.dynamics import heat_bath, zero_rates
from ipslab.entropy import SQUARE, XLOGX, shift_positive
from ipslab.exact import semigroup_apply, spin_observable
from ipslab.model import DomainError, SiteGraph, Specification, StateSpace, ising
from ipslab.simulate import (MIN_ENSEMBLE, ExactEngine, JumpKernel, Trajectory, compensator,
                             exact_martingale_check, exact_occupancy_law, gillespie_sample, law_battery,
                             martingale_test, occupancy, process_ensemble, reverse_trajectory, sample_ensemble,
                             sample_stationary, submartingale_test, trajectorial_process, trajectory_rng,
                             two_time_battery)


def single_site():
    g = SiteGraph.chain(1)
    spec = Specification(ising(g, 0.0))
    return heat_bath(spec), StateSpace(g, 2)


def same_path(a: Trajectory, b: Trajectory, atol=0.0):
    np.testing.assert_array_equal(a.initial, b.initial)
    np.testing.assert_allclose(a.times, b.times, rtol=0, atol=atol)
    np.testing.assert_array_equal(a.regions, b.regions)
    np.testing.assert_array_equal(a.xi, b.xi)


def test_zero_rates_never_jump():
    space = StateSpace(SiteGraph.ring(3), 2)
    tr = gillespie_sample(zero_rates(space.graph, 2), [1, 0, 1], 5.0, seed=1, space=space)
    assert tr.n_events == 0
    np.testing.assert_array_equal(tr.final, [1, 0, 1])


def test_holding_time_is_exponential():
    rates, space = single_site()
    kernel = JumpKernel(rates, space)
    assert kernel.total == pytest.approx([1.0, 1.0])
    first = np.array([gillespie_sample(rates, [0], 50.0, seed=9, index=i, kernel=kernel).times[0]
                      for i in range(4000)])
    se = first.std(ddof=1) / np.sqrt(len(first))
    assert abs(first.mean() - 1.0) <= 3 * se


def test_single_site_occupancy_law():
    # P(state 1 at t | state 0 at 0) = (1 - e^{-t}) / 2 for the independent resampler
    rates, space = single_site()
    trajs = sample_ensemble(rates, space, 1.0, 4000, seed=4, initial=[0])
    hits = np.array([tr.final[0] for tr in trajs])
    p = (1 - np.exp(-1.0)) / 2
    assert abs(hits.mean() - p) <= 3 * np.sqrt(p * (1 - p) / len(hits))


def test_local_and_enumerated_paths_agree(ring4):
    a = gillespie_sample(ring4.rates, [1, 0, 0, 1], 3.0, seed=11, index=2, space=ring4.space)
    b = gillespie_sample(ring4.rates, [1, 0, 0, 1], 3.0, seed=11, index=2)
    same_path(a, b)
    assert b.states is None and a.states is not None
    np.testing.assert_array_equal(ring4.space.configs[a.states], a.configs())


def test_uniform_sampler_chi_square():
    mu = np.full(16, 1 / 16)
    idx = sample_stationary(mu, 5, 100_000)
    assert chisquare(np.bincount(idx, minlength=16)).pvalue > 0.01


def test_stationary_sampler_energy_histogram(ring4):
    idx = sample_stationary(ring4.mu, 6, 100_000)
    H = ring4.spec.potential.energy(ring4.space.configs)
    levels = np.unique(H)
    obs = np.array([np.sum(H[idx] == e) for e in levels])
    exp = np.array([ring4.mu[H == e].sum() for e in levels]) * len(idx)
    assert chisquare(obs, exp).pvalue > 0.01


def test_point_mass_sampler():
    mu = np.zeros(8)
    mu[5] = 1.0
    assert np.all(sample_stationary(mu, 0, 1000) == 5)
    assert sample_stationary(mu, np.random.default_rng(0)) == 5


def test_trajectory_streams_are_independent_of_order():
    a = trajectory_rng(3, 7).random(4)
    trajectory_rng(3, 6).random(100)
    np.testing.assert_array_equal(trajectory_rng(3, 7).random(4), a)
    assert not np.array_equal(trajectory_rng(3, 8).random(4), a)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.floats(0.1, 4.0))
def test_double_reversal_is_identity(seed, T):
    b = ising_ring(4, 0.5)
    tr = gillespie_sample(b.rates, [0, 1, 1, 0], T, seed=seed, space=b.space)
    twice = reverse_trajectory(reverse_trajectory(tr))
    # T - (T - t) may differ from t in the last bit
    same_path(twice, tr, atol=1e-15)
    np.testing.assert_array_equal(twice.states, tr.states)


def test_reversed_path_visits_states_backwards(rotation):
    tr = gillespie_sample(rotation.rates, [0, 1, 2, 0], 2.0, seed=2, space=rotation.space)
    rev = reverse_trajectory(tr)
    np.testing.assert_array_equal(rev.configs(), tr.configs()[::-1])
    np.testing.assert_allclose(rev.times, 2.0 - tr.times[::-1])
    with pytest.raises(DomainError):
        reverse_trajectory(tr, 3.0)


def test_ensemble_reproducible_across_threads(ring4):
    one = sample_ensemble(ring4.rates, ring4.space, 2.0, 200, seed=21, mu=ring4.mu, threads=1)
    four = sample_ensemble(ring4.rates, ring4.space, 2.0, 200, seed=21, mu=ring4.mu, threads=4)
    for a, b in zip(one, four):
        same_path(a, b)
    tail = sample_ensemble(ring4.rates, ring4.space, 2.0, 50, seed=21, mu=ring4.mu, first_index=150)
    for a, b in zip(one[150:], tail):
        same_path(a, b)
    with pytest.raises(ValueError):
        sample_ensemble(ring4.rates, ring4.space, 2.0, 5, seed=1)


def test_trajectory_csv(tmp_path, rotation):
    tr = gillespie_sample(rotation.rates, [0, 1, 2, 0], 1.0, seed=3, space=rotation.space)
    path = tmp_path / "traj.csv"
    tr.write_csv(path, {"seed": 3})
    lines = path.read_text().splitlines()
    assert lines[:3] == ["# seed=3", "# initial=0;1;2;0", "t,region,xi"]
    assert len(lines) == 3 + tr.n_events


@pytest.mark.parametrize("sim", ["reversed_sample", "direct"])
def test_reversal_matches_reversed_rates(rotation, sim):
    """Reversed forward paths in equilibrium against the chain driven by the reversed rates."""
    T, times, sites = 2.0, [0.0, 0.5, 1.0, 2.0], (0,)
    fwd = sample_ensemble(rotation.rates, rotation.space, T, 3000, seed=31, mu=rotation.mu)
    rev = [reverse_trajectory(tr) for tr in fwd]
    hat = sample_ensemble(rotation.rates_hat, rotation.space, T, 3000, seed=31, mu=rotation.mu, first_index=3000)
    a = occupancy(rev if sim == "reversed_sample" else hat, times, sites, rotation.space)
    marg, joint = exact_occupancy_law(rotation.mu, rotation.L_hat, rotation.space, sites, times)
    assert law_battery(a, marg, joint, times, 3).passed
    assert two_time_battery(occupancy(rev, times, sites, rotation.space),
                            occupancy(hat, times, sites, rotation.space), times, 3).passed


def test_forward_law_differs_from_reversed_law(rotation):
    # the rotation runs the other way in reverse; forward paths fail the reversed law
    T, times = 2.0, [0.0, 0.5, 1.0]
    fwd = sample_ensemble(rotation.rates, rotation.space, T, 3000, seed=32, mu=rotation.mu)
    marg, joint = exact_occupancy_law(rotation.mu, rotation.L_hat, rotation.space, (0,), times)
    assert law_battery(occupancy(fwd, times, (0,), rotation.space), marg, joint, times, 3).passed is False


def test_engine_matches_exact_values(rotation, rng):
    f, _ = shift_positive(rng.normal(size=81))
    T = 1.5
    eng = ExactEngine(rotation.space, rotation.L_hat, f, XLOGX, T)
    for s in [0.0, 0.37, 1.1, 1.5]:
        np.testing.assert_allclose(eng.g(np.arange(81), s), semigroup_apply(rotation.L_hat, f, T - s),
                                   rtol=1e-12, atol=1e-13)
    # the cumulative integral against adaptive quadrature of the exact integrand
    for state in [4, 60]:
        want = quad(lambda r: eng.integrand(r)[state], 0, 1.2, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        assert eng.cumulative(state, 1.2) == pytest.approx(want, rel=1e-10, abs=1e-13)
    assert np.abs(eng.cumulative(np.arange(81), 0.0)).max() <= 1e-15
    with pytest.raises(DomainError):
        ExactEngine(rotation.space, rotation.L_hat, f, XLOGX, 0.0)
    with pytest.raises(DomainError):
        ExactEngine(rotation.space, rotation.L_hat, f - 10, XLOGX, 1.0)


def test_constant_observable_has_flat_process(ring4):
    eng = ExactEngine(ring4.space, ring4.L_hat, np.full(16, 2.0), XLOGX, 1.0)
    tr = gillespie_sample(ring4.rates, [1, 1, 0, 0], 1.0, seed=8, space=ring4.space)
    p = trajectorial_process(tr, eng)
    assert np.all(p.A == 0.0)
    np.testing.assert_allclose(p.L, 2 * np.log(2), rtol=1e-13)


def test_process_endpoints(ring4):
    f = spin_observable(ring4.space, 0)
    T = 2.0
    eng = ExactEngine(ring4.space, ring4.L_hat, f, SQUARE, T)
    tr = gillespie_sample(ring4.rates, [1, 0, 1, 1], T, seed=14, space=ring4.space)
    p = trajectorial_process(tr, eng)
    end = ring4.space.index(tr.final)
    start = ring4.space.index(tr.initial)
    assert p.L[0] == pytest.approx(semigroup_apply(ring4.L_hat, f, T)[end] ** 2, rel=1e-12)
    assert p.L[-1] == pytest.approx(f[start] ** 2, rel=1e-12)
    assert p.A[0] == 0.0
    assert np.all(np.diff(p.A) >= -1e-15)
    g, A = compensator(tr, eng)
    assert A[-1] == pytest.approx(p.A[-1], rel=1e-12)
    with pytest.raises(DomainError):
        trajectorial_process(gillespie_sample(ring4.rates, [1, 0, 1, 1], 1.0, seed=1, space=ring4.space), eng)


def test_compensator_by_hand(ring4, rng):
    f, _ = shift_positive(rng.normal(size=16))
    T = 1.0
    eng = ExactEngine(ring4.space, ring4.L_hat, f, XLOGX, T)
    tr = gillespie_sample(ring4.rates, [0, 0, 1, 1], T, seed=5, space=ring4.space)
    rev = reverse_trajectory(tr)
    edges = np.concatenate([[0.0], rev.times, [T]])
    want = 0.0
    for k, st_ in enumerate(rev.states):
        want += quad(lambda r: eng.integrand(r)[st_], edges[k], edges[k + 1], epsabs=1e-13)[0]
    assert compensator(tr, eng)[1][-1] == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_process_mean_matches_exact(ring4):
    f = spin_observable(ring4.space, 0)
    T, n = 2.0, 4000
    eng = ExactEngine(ring4.space, ring4.L_hat, f, SQUARE, T)
    grid = np.linspace(0, T, 5)
    ens = process_ensemble(sample_ensemble(ring4.rates, ring4.space, T, n, seed=40, mu=ring4.mu), eng, grid)
    for j, s in enumerate(grid):
        exact = ring4.mu @ semigroup_apply(ring4.L_hat, f, T - s) ** 2
        col = ens.L[:, j]
        assert abs(col.mean() - exact) <= 3 * col.std(ddof=1) / np.sqrt(n) + 1e-12
        # E[A(s)] equals the integrated entropy drop
        drop = exact - ring4.mu @ semigroup_apply(ring4.L_hat, f, T) ** 2
        cA = ens.A[:, j]
        assert abs(cA.mean() - drop) <= 3 * cA.std(ddof=1) / np.sqrt(n) + 1e-12


def test_exact_martingale_identity(rotation, rng):
    f, _ = shift_positive(rng.normal(size=81))
    eng = ExactEngine(rotation.space, rotation.L_hat, f, XLOGX, 2.0)
    assert exact_martingale_check(rotation.space, rotation.L, rotation.mu, eng, 0.5, 1.5) <= 1e-10
    wrong = ExactEngine(rotation.space, rotation.L, f, XLOGX, 2.0)
    assert exact_martingale_check(rotation.space, rotation.L, rotation.mu, wrong, 0.5, 1.5) > 1e-3


def test_martingale_and_submartingale_tests(ring4):
    f = spin_observable(ring4.space, 0)
    T = 2.0
    eng = ExactEngine(ring4.space, ring4.L_hat, f, SQUARE, T)
    grid = np.linspace(0, T, 9)
    ens = process_ensemble(sample_ensemble(ring4.rates, ring4.space, T, 2000, seed=50, mu=ring4.mu), eng, grid)
    mt = martingale_test(ens, 0.5, 1.5, ring4.space, sites=(0, 1))
    assert mt.passed and mt.n == 2000
    sub = submartingale_test(ens, 0.5, 1.5, ring4.space, sites=(0,))
    assert sub.passed
    # L alone drifts upward, so its increments are not centred
    drift = martingale_test(ens, 0.0, 2.0, ring4.space, part="L")
    assert drift.passed is False
    with pytest.raises(DomainError):
        martingale_test(ens, 1.5, 0.5, ring4.space)
    with pytest.raises(DomainError):
        ens.column(0.3)


def test_underpowered_ensemble_has_no_verdict(ring4):
    eng = ExactEngine(ring4.space, ring4.L_hat, spin_observable(ring4.space, 0), SQUARE, 1.0)
    ens = process_ensemble(sample_ensemble(ring4.rates, ring4.space, 1.0, 50, seed=1, mu=ring4.mu), eng,
                           [0.0, 0.5, 1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = martingale_test(ens, 0.0, 1.0, ring4.space)
    assert rep.passed is None and rep.warnings and 50 < MIN_ENSEMBLE


def test_report_json(tmp_path, ring4):
    eng = ExactEngine(ring4.space, ring4.L_hat, spin_observable(ring4.space, 0), SQUARE, 1.0)
    ens = process_ensemble(sample_ensemble(ring4.rates, ring4.space, 1.0, 1000, seed=1, mu=ring4.mu), eng,
                           [0.0, 1.0])
    rep = martingale_test(ens, 0.0, 1.0, ring4.space)
    rep.write(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["name"] == "martingale" and d["n"] == 1000 and d["passed"] == rep.passed


def test_forward_negative_control(rotation):
    # along forward paths with forward compensator rates the increments of M are not centred
    f = (rotation.space.configs[:, 0] == 0).astype(float)
    T = 2.0
    eng = ExactEngine(rotation.space, rotation.L_hat, f, SQUARE, T, L_compensator=rotation.L)
    ens = process_ensemble(sample_ensemble(rotation.rates, rotation.space, T, 4000, seed=60, mu=rotation.mu),
                           eng, np.linspace(0, T, 5), direction="forward")
    assert martingale_test(ens, 0.5, 1.5, rotation.space).passed is False

