import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import ising_ring, rotation_ring
from ipslab.dynamics import heat_bath
from ipslab.entropy import (IDENTITY, SQUARE, XLOGX, bregman_div, compensator_integrand, raw_variance_integrand,
                            de_bruijn_check, decay_curve, decay_rate_estimate, dirichlet_form, dissipation,
                            get_phi, integrand_vector, is_reversible, phi_entropy, poincare_gap, power,
                            shift_positive)
from ipslab.exact import build_generator, semigroup_apply, spin_observable, stationary_measure
from ipslab.model import DomainError, SiteGraph, Specification, StateSpace, ising


def single_site(beta=0.0):
    g = SiteGraph.chain(1)
    spec = Specification(ising(g, beta))
    L = build_generator(heat_bath(spec), StateSpace(g, 2))
    return L, stationary_measure(L)


def test_divergence_values():
    assert bregman_div(SQUARE, 3.0, 1.0) == pytest.approx(4.0)
    assert bregman_div(XLOGX, 2.0, 1.0) == pytest.approx(2 * np.log(2) - 1)
    assert bregman_div(XLOGX, 2.0, 1.0) == pytest.approx(0.386294, abs=1e-6)
    assert bregman_div(SQUARE, 1.7, 1.7) == 0.0
    assert bregman_div(XLOGX, 1.7, 1.7) == 0.0
    assert np.all(bregman_div(IDENTITY, np.array([1.0, 5.0]), np.array([2.0, -1.0])) == 0.0)


def test_divergence_domain():
    with pytest.raises(DomainError):
        bregman_div(XLOGX, -1.0, 1.0)
    with pytest.raises(DomainError):
        phi_entropy(np.array([0.5, 0.5]), XLOGX, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        get_phi("cosh")
    with pytest.raises(ValueError):
        power(2.5)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.01, 50), q=st.floats(0.01, 50), name=st.sampled_from(["square", "xlogx", "power1.5"]))
def test_divergence_nonnegative_and_fast_path_agrees(p, q, name):
    phi = get_phi(name)
    d = bregman_div(phi, p, q)
    assert d >= -1e-12 * max(1.0, p, q)
    assert phi.div(p, q) == pytest.approx(max(d, 0.0), abs=1e-9 * max(1.0, p, q))


def test_entropy_values():
    mu = np.array([0.5, 0.5])
    assert phi_entropy(mu, SQUARE, np.array([-1.0, 1.0])) == pytest.approx(1.0)
    assert phi_entropy(mu, SQUARE, np.full(2, 3.0)) == 0.0
    assert phi_entropy(mu, XLOGX, np.full(2, 3.0)) == pytest.approx(0.0, abs=1e-15)


def test_xlogx_entropy_brute_force(ring4, rng):
    f = spin_observable(ring4.space, 0) + 2.0
    m = sum(ring4.mu[i] * f[i] for i in range(16))
    want = sum(ring4.mu[i] * f[i] * np.log(f[i]) for i in range(16)) - m * np.log(m)
    assert phi_entropy(ring4.mu, XLOGX, f) == pytest.approx(want, rel=1e-13)
    g, shift = shift_positive(rng.normal(size=16))
    assert g.min() == pytest.approx(1.0) and phi_entropy(ring4.mu, XLOGX, g) > 0


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_square_dissipation_is_dirichlet_form(beta, rng):
    b = ising_ring(4, beta)
    f = rng.normal(size=16)
    assert dissipation(b.mu, b.L, SQUARE, f) == pytest.approx(-2 * dirichlet_form(b.mu, b.L, f), rel=1e-12)
    assert dirichlet_form(b.mu, b.L, f) == pytest.approx(-b.mu @ (f * (b.L @ f)), rel=1e-12)


@pytest.mark.parametrize("phi", [SQUARE, XLOGX])
def test_de_bruijn(ring4, phi, rng):
    f, _ = shift_positive(rng.normal(size=16))
    rep = de_bruijn_check(ring4.mu, ring4.L, phi, f, np.linspace(0.5, 2.5, 5))
    assert rep.error <= 1e-6
    assert np.all(rep.dissipation <= 1e-15)


def test_de_bruijn_rejects_small_times(ring4):
    with pytest.raises(DomainError):
        de_bruijn_check(ring4.mu, ring4.L, SQUARE, np.ones(16), [1e-5])


def test_de_bruijn_nonreversible(rotation, rng):
    f, _ = shift_positive(rng.normal(size=81))
    rep = de_bruijn_check(rotation.mu, rotation.L, XLOGX, f, [0.5, 1.0])
    assert rep.error <= 1e-6


def test_single_site_gap_and_variance():
    L, mu = single_site()
    res = poincare_gap(L, mu)
    assert res.gap == pytest.approx(1.0, abs=1e-12)
    assert res.c_star == pytest.approx(2.0, abs=1e-12)
    f = np.array([-0.3, 2.1])
    v0 = phi_entropy(mu, SQUARE, f)
    for t in [0.0, 0.5, 1.0, 3.0]:
        assert phi_entropy(mu, SQUARE, semigroup_apply(L, f, t)) == pytest.approx(np.exp(-2 * t) * v0, abs=1e-8)


def test_poincare_eigenfunction_is_tight(ring4):
    res = poincare_gap(ring4.L, ring4.mu)
    phi = res.eigenfunction
    var = phi_entropy(ring4.mu, SQUARE, phi)
    assert var == pytest.approx(0.5 * res.c_star * dirichlet_form(ring4.mu, ring4.L, phi), abs=1e-8)
    # the gap against the dense spectrum of the symmetrised generator
    s = np.sqrt(ring4.mu)
    S = (s[:, None] * ring4.L.toarray()) / s[None, :]
    w = np.sort(np.linalg.eigvalsh(-0.5 * (S + S.T)))
    assert res.gap == pytest.approx(w[1], abs=1e-12)


def test_poincare_lanczos_branch():
    # 2^10 states go through the iterative eigensolver
    b = ising_ring(10, 0.5)
    res = poincare_gap(b.L, b.mu)
    small = ising_ring(8, 0.5)
    assert 0 < res.gap <= poincare_gap(small.L, small.mu).gap + 1e-9
    phi = res.eigenfunction
    assert phi_entropy(b.mu, SQUARE, phi) == pytest.approx(0.5 * res.c_star * dirichlet_form(b.mu, b.L, phi),
                                                           rel=1e-8)


def test_poincare_rejects_nonreversible(rotation):
    assert not is_reversible(rotation.L, rotation.mu)
    with pytest.raises(DomainError, match="decay_rate_estimate"):
        poincare_gap(rotation.L, rotation.mu)


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_variance_decay_bound(beta, rng):
    b = ising_ring(4, beta)
    res = poincare_gap(b.L, b.mu)
    times = np.linspace(0, 4, 17)
    worst = np.inf
    for _ in range(20):
        f = rng.normal(size=16)
        curve = decay_curve(b.mu, b.L, SQUARE, f, times, res.c_star)
        assert np.all(curve.entropy <= curve.bound * (1 + 1e-10) + 1e-14)
        worst = min(worst, decay_rate_estimate(curve))
    assert worst >= 2 / res.c_star - 1e-6


@pytest.mark.parametrize("phi", [SQUARE, XLOGX])
def test_decay_monotone_and_submultiplicative(rotation, phi, rng):
    f, _ = shift_positive(rng.normal(size=81))
    times = np.linspace(0, 3, 13)
    curve = decay_curve(rotation.mu, rotation.L, phi, f, times)
    assert curve.monotone and curve.bound is None
    for i, j in itertools.combinations(range(len(times)), 2):
        assert curve.entropy[j] <= curve.entropy[i] + 1e-13
    assert np.all(curve.dissipation <= 1e-15)
    assert np.isfinite(decay_rate_estimate(curve))


def test_decay_curve_csv(tmp_path, ring4):
    curve = decay_curve(ring4.mu, ring4.L, SQUARE, spin_observable(ring4.space, 0), [0.0, 1.0], 2.0)
    path = tmp_path / "decay.csv"
    curve.write_csv(path, {"seed": 3})
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=3" and lines[1] == "t,entropy,dissipation,bound"
    assert float(lines[2].split(",")[1]) == curve.entropy[0]


def test_decay_curve_rejects_bad_grid(ring4):
    with pytest.raises(DomainError):
        decay_curve(ring4.mu, ring4.L, SQUARE, np.ones(16), [1.0, 0.5])


@pytest.mark.parametrize("phi", [SQUARE, XLOGX])
@pytest.mark.parametrize("which", ["ring", "rotation"])
def test_integrand_vector_matches_pointwise(phi, which, rng):
    b = ising_ring(4, 0.5) if which == "ring" else rotation_ring()
    f, _ = shift_positive(rng.normal(size=b.space.n))
    T, s = 1.5, 0.4
    g = semigroup_apply(b.L_hat, f, T - s)
    vec = integrand_vector(b.L_hat, phi, g)[0]
    for state in [0, 7, b.space.n - 1]:
        want = compensator_integrand(state, s, f, phi, b.rates_hat, b.space, T, b.L_hat)
        assert vec[state] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_integrand_at_final_time_uses_raw_observable(rotation, rng):
    f = rng.normal(size=81)
    for state in [3, 40]:
        a = compensator_integrand(state, 2.0, f, SQUARE, rotation.rates_hat, rotation.space, 2.0, rotation.L_hat)
        assert a == pytest.approx(raw_variance_integrand(state, f, rotation.rates_hat, rotation.space), rel=1e-13)
    with pytest.raises(DomainError):
        compensator_integrand(0, 2.5, f, SQUARE, rotation.rates_hat, rotation.space, 2.0, rotation.L_hat)


def test_constant_observable_has_zero_integrand(ring4):
    assert np.all(integrand_vector(ring4.L_hat, XLOGX, np.full(16, 2.0)) == 0.0)


def test_integrand_integrates_to_entropy_drop(ring4, rng):
    # E_mu of the integrand at P_u f equals minus the dissipation (reversible pair)
    f, _ = shift_positive(rng.normal(size=16))
    g = semigroup_apply(ring4.L, f, 0.7)
    lhs = ring4.mu @ integrand_vector(ring4.L_hat, XLOGX, g)[0]
    assert lhs == pytest.approx(-dissipation(ring4.mu, ring4.L, XLOGX, g), rel=1e-10)


def test_semigroup_for_entropy_matches_expm(ring4, rng):
    f = rng.normal(size=16)
    A = ring4.L.toarray()
    assert phi_entropy(ring4.mu, SQUARE, semigroup_apply(ring4.L, f, 1.3)) == pytest.approx(
        phi_entropy(ring4.mu, SQUARE, expm(1.3 * A) @ f), rel=1e-10)
