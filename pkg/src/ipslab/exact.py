"""Exact computations on the enumerated state space.

Generators are ``scipy.sparse.csr_matrix`` with nonnegative off-diagonal
entries and zero row sums; measures and observables are plain float vectors
indexed like :class:`~ipslab.model.StateSpace`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, gmres, splu
from scipy.stats import poisson

from .dynamics import ConditionReport, RateFamily, reverse_rates
from .model import DomainError, Specification, StateSpace, encode, spin_values

DENSE_LIMIT = 1024
SPARSE_SOLVE_LIMIT = 2**16
POISSON_TAIL = 1e-13


class ReducibleChainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# generators


def _assemble(n, rows, cols, vals) -> sp.csr_matrix:
    rows, cols, vals = (np.concatenate(a) if a else np.zeros(0) for a in (rows, cols, vals))
    keep = (rows != cols) & (vals != 0)
    off = sp.coo_matrix((vals[keep], (rows[keep].astype(np.int64), cols[keep].astype(np.int64))), shape=(n, n)).tocsr()
    off.sum_duplicates()
    return with_diagonal(off)


def with_diagonal(off: sp.spmatrix) -> sp.csr_matrix:
    """Zero the diagonal of ``off`` and replace it by minus the row sums."""
    off = sp.csr_matrix(off, copy=True)
    off.setdiag(0)
    off.eliminate_zeros()
    d = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(d)).tocsr()


def region_kernel(rates: RateFamily, space: StateSpace, k: int) -> sp.csr_matrix:
    """Jump measure of region ``k`` as a matrix, self-jump mass kept on the diagonal."""
    r = rates.regions[k]
    T = rates.table(k, space.configs) * rates.q ** -len(r)
    tgt = space.targets(r)
    rows = np.repeat(np.arange(space.n), T.shape[1])
    return sp.coo_matrix((T.ravel(), (rows, tgt.ravel())), shape=(space.n, space.n)).tocsr()


def build_generator(rates: RateFamily, space: StateSpace) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k, r in enumerate(rates.regions):
        T = rates.table(k, space.configs) * rates.q ** -len(r)
        rows.append(np.repeat(np.arange(space.n), T.shape[1]))
        cols.append(space.targets(r).ravel())
        vals.append(T.ravel())
    return _assemble(space.n, rows, cols, vals)


def generator_defect(L) -> float:
    """Largest row-sum magnitude; also checks off-diagonal signs."""
    off = sp.csr_matrix(L, copy=True)
    off.setdiag(0)
    if off.nnz and off.data.min() < 0:
        raise ValueError("generator has negative off-diagonal entries")
    return float(np.abs(np.asarray(L.sum(axis=1))).max(initial=0.0))


# ---------------------------------------------------------------------------
# stationary measures


def closed_classes(L) -> list[np.ndarray]:
    off = sp.csr_matrix(L, copy=True)
    off.setdiag(0)
    off.eliminate_zeros()
    ncomp, lab = connected_components(off, directed=True, connection="strong")
    if ncomp == 1:
        return [np.arange(L.shape[0])]
    coo = off.tocoo()
    leaving = np.zeros(ncomp, dtype=bool)
    leaving[lab[coo.row][lab[coo.row] != lab[coo.col]]] = True
    return [np.flatnonzero(lab == c) for c in range(ncomp) if not leaving[c]]


def stationary_measure(L, tol: float = 1e-10) -> np.ndarray:
    n = L.shape[0]
    if n == 1:
        return np.ones(1)
    classes = closed_classes(L)
    if len(classes) != 1 or len(classes[0]) != n:
        cls = classes[0]
        shown = cls[:8].tolist() + (["..."] if len(cls) > 8 else [])
        raise ReducibleChainError(
            f"generator is reducible: {len(classes)} closed class(es); e.g. closed class of {len(cls)} states {shown}"
        )
    b = np.zeros(n)
    b[-1] = 1.0
    if n <= DENSE_LIMIT:
        A = L.T.toarray()
        A[-1, :] = 1.0
        mu = np.linalg.solve(A, b)
    elif n <= SPARSE_SOLVE_LIMIT:
        mu = _pinned_krylov(L, tol)
    else:
        mu = _power_iteration(L, tol)
    if mu.min() < -1e-12:
        raise RuntimeError(f"stationary solve produced a negative entry {mu.min():.3e}")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    res = float(np.abs(L.T @ mu).max())
    if res > tol:
        raise RuntimeError(f"stationary residual {res:.3e} exceeds {tol:.0e}")
    return mu


def _pinned_krylov(L, tol):
    """Fix the last coordinate to 1 and solve the rest by Jacobi-preconditioned GMRES.

    Sparse LU fills in almost completely on product-space generators, so a
    Krylov solve is used; power iteration takes over if it stalls.
    """
    A = sp.csr_matrix(L.T)
    B = A[:-1, :-1].tocsr()
    d = B.diagonal()
    M = LinearOperator(B.shape, lambda v: v / d)
    x, info = gmres(B, -A[:-1, -1].toarray().ravel(), x0=np.ones(B.shape[0]), M=M, rtol=1e-13, atol=0,
                    restart=100, maxiter=1000)
    mu = np.append(x, 1.0)
    if info != 0 or mu.min() < 0 or np.abs(L.T @ (mu / mu.sum())).max() > tol:
        return _power_iteration(L, tol)
    return mu


def _power_iteration(L, tol, max_iter=1_000_000):
    rate = float(np.abs(L.diagonal()).max())
    P = (sp.identity(L.shape[0], format="csr") + L / rate).T.tocsr()
    mu = np.full(L.shape[0], 1.0 / L.shape[0])
    for _ in range(max_iter):
        mu = P @ mu
        mu /= mu.sum()
        if np.abs(L.T @ mu).max() <= tol / 10:
            return mu
    raise RuntimeError("power iteration did not converge")


def gibbs_check(mu, spec: Specification, space: StateSpace, regions=None) -> float:
    """``sup |mu(f) - mu(gamma_region(f | .))|`` over indicator ``f`` and the given regions."""
    regions = [(x,) for x in space.graph.sites] if regions is None else [tuple(r) for r in regions]
    worst = 0.0
    for r in regions:
        K = spec.q ** len(r)
        P = spec.density_table(r, space.configs) / K
        tgt = space.targets(r)
        v = np.bincount(tgt.ravel(), weights=(mu[:, None] * P).ravel(), minlength=space.n)
        worst = max(worst, float(np.abs(v - mu).max()))
    return worst


def gibbs_measure(spec: Specification, space: StateSpace) -> np.ndarray:
    """``exp(-beta H) / Z`` by direct enumeration."""
    logw = -spec.beta * spec.potential.energy(space.configs)
    w = np.exp(logw - logw.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# semigroup, resolvent


def _uniformized(L):
    rate = float(np.abs(L.diagonal()).max(initial=0.0))
    if rate == 0:
        return 0.0, None
    P = (sp.identity(L.shape[0], format="csr") + L / rate).tocsr()
    return rate, P


def semigroup_grid(L, f, times) -> np.ndarray:
    """``exp(t L) f`` for every ``t`` in ``times``; shape ``(len(times),) + f.shape``.

    Uniformization: Poisson(rate * t) mixture of powers of ``I + L / rate`` with
    ``rate = max |L_ii|``, right tail cut at mass ``1e-13`` (so the truncation
    error is at most ``1e-13 * max|f|``).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("semigroup time must be nonnegative")
    f = np.asarray(f, dtype=float)
    rate, P = _uniformized(L)
    out = np.empty((len(times),) + f.shape)
    if P is None:
        out[:] = f
        return out
    mus = rate * times
    kmax = int(poisson.ppf(1 - POISSON_TAIL, mus.max())) + 2 if mus.max() > 0 else 0
    ks = np.arange(kmax + 1)
    W = poisson.pmf(ks[None, :], mus[:, None]) if kmax else np.ones((len(times), 1))
    W[mus == 0] = 0.0
    W[mus == 0, 0] = 1.0
    acc = np.zeros((len(times),) + f.shape)
    v = f.copy()
    for k in ks:
        acc += W[:, k].reshape((-1,) + (1,) * f.ndim) * v
        if k < kmax:
            v = P @ v
    return acc


def semigroup_apply(L, f, t: float) -> np.ndarray:
    if t < 0:
        raise DomainError("semigroup time must be nonnegative")
    if t == 0:
        return np.array(f, dtype=float, copy=True)
    return semigroup_grid(L, f, [t])[0]


def transition_matrix(L, t: float) -> np.ndarray:
    """Dense ``exp(t L)`` via uniformization."""
    return semigroup_apply(L, np.eye(L.shape[0]), t)


def resolvent_apply(L, g, lam: float) -> np.ndarray:
    """Solve ``(I - lam L) f = g``."""
    if lam < 0:
        raise DomainError("resolvent parameter must be nonnegative")
    g = np.asarray(g, dtype=float)
    if lam == 0:
        return g.copy()
    A = (sp.identity(L.shape[0], format="csc") - lam * L).tocsc()
    try:
        return splu(A).solve(g)
    except RuntimeError as e:  # singular factor: impossible for a true generator
        raise RuntimeError(f"resolvent system is singular: {e}") from e


def resolvent_quadrature(L, g, lam: float, horizon: float = 40.0, panels: int = 80, order: int = 20) -> np.ndarray:
    """``int_0^inf exp(-t) S_{lam t} g dt`` by composite Gauss-Legendre on ``[0, horizon]``.

    The neglected tail is at most ``exp(-horizon) max|g|``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, horizon, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    t = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wt = (0.5 * (b - a) * w).ravel() * np.exp(-t)
    S = semigroup_grid(L, g, lam * t)
    return np.tensordot(wt, S, axes=1)


@dataclass
class PowerLimit:
    ns: np.ndarray
    errors: np.ndarray
    slope: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.errors) <= 1e-15))


def resolvent_power_limit_check(L, f, t: float, ns=None) -> PowerLimit:
    """``||(I - t/n L)^{-n} f - exp(tL) f||_inf`` over ``ns`` and its log-log slope."""
    if t < 0:
        raise DomainError("time must be nonnegative")
    ns = np.asarray(2 ** np.arange(4, 15) if ns is None else ns, dtype=np.int64)
    f = np.asarray(f, dtype=float)
    exact = semigroup_apply(L, f, t)
    errs = []
    for n in ns:
        if t == 0:
            errs.append(0.0)
            continue
        lu = splu((sp.identity(L.shape[0], format="csc") - (t / n) * L).tocsc())
        v = f.copy()
        for _ in range(int(n)):
            v = lu.solve(v)
        errs.append(float(np.abs(v - exact).max()))
    errs = np.array(errs)
    pos = errs > 0
    slope = float(np.polyfit(np.log(ns[pos]), np.log(errs[pos]), 1)[0]) if pos.sum() >= 2 else 0.0
    return PowerLimit(ns, errs, slope)


# ---------------------------------------------------------------------------
# reversal and duality


def adjoint_generator(L, mu) -> sp.csr_matrix:
    """``L_hat(x, y) = mu(y) / mu(x) * L(y, x)`` with diagonals recomputed."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("adjoint needs a strictly positive measure")
    A = sp.diags(1.0 / mu) @ sp.csr_matrix(L).T @ sp.diags(mu)
    return with_diagonal(A)


@dataclass
class ReversalConsistency:
    discrepancy: float
    witness: tuple[int, int]
    gibbs_discrepancy: float

    @property
    def hypothesis_holds(self) -> bool:
        return self.gibbs_discrepancy <= 1e-10


def reversal_consistency_check(rates: RateFamily, spec: Specification, mu, space: StateSpace,
                               L=None) -> ReversalConsistency:
    """Max-entry gap between the generator of the reversed rates and the mu-adjoint."""
    L = build_generator(rates, space) if L is None else L
    Lhat_formula = build_generator(reverse_rates(rates, spec), space)
    D = abs(Lhat_formula - adjoint_generator(L, mu)).tocoo()
    if D.nnz:
        i = int(np.argmax(D.data))
        disc, wit = float(D.data[i]), (int(D.row[i]), int(D.col[i]))
    else:
        disc, wit = 0.0, (0, 0)
    return ReversalConsistency(disc, wit, gibbs_check(mu, spec, space))


@dataclass
class DualityReport:
    bilinear: float
    witness: tuple[int, int]
    per_region: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max([self.bilinear, *self.per_region.values()])


def _max_entry(A):
    A = abs(sp.csr_matrix(A)).tocoo()
    if not A.nnz:
        return 0.0, (0, 0)
    i = int(np.argmax(A.data))
    return float(A.data[i]), (int(A.row[i]), int(A.col[i]))


def duality_check(L, L_hat, mu, rates: RateFamily | None = None, rates_hat: RateFamily | None = None,
                  space: StateSpace | None = None) -> DualityReport:
    """Bilinear identity ``<L f, g>_mu = <f, L_hat g>_mu`` on the indicator basis.

    On indicators the identity reads ``mu(b) L(b, a) = mu(a) L_hat(a, b)``, so
    the whole basis is one sparse matrix comparison.  With rates supplied the
    per-region switching identity is checked the same way on region kernels.
    """
    D = sp.diags(mu)
    val, wit = _max_entry(D @ L - (D @ L_hat).T)
    per = {}
    if rates is not None:
        if rates_hat is None or space is None:
            raise ValueError("per-region check needs rates_hat and space")
        for k, r in enumerate(rates.regions):
            K, Kh = region_kernel(rates, space, k), region_kernel(rates_hat, space, k)
            per[r] = _max_entry(D @ K - (D @ Kh).T)[0]
    return DualityReport(val, wit, per)


def switching_sums(rates, rates_hat, space, mu, k, f, g) -> tuple[float, float]:
    """Both sides of the per-region switching identity for explicit ``f, g``.

    Direct double sum over ``(omega, xi)``; used as an oracle for the matrix form.
    """
    r = rates.regions[k]
    lam = rates.q ** -len(r)
    tgt = space.targets(r)
    C = rates.table(k, space.configs)
    Ch = rates_hat.table(k, space.configs)
    lhs = float(np.sum(mu[:, None] * C * f[:, None] * g[tgt]) * lam)
    rhs = float(np.sum(mu[:, None] * Ch * f[tgt] * g[:, None]) * lam)
    return lhs, rhs


# ---------------------------------------------------------------------------
# oscillations and growth bounds


def oscillation(f, space: StateSpace, x: int) -> float:
    F = np.asarray(f, dtype=float).reshape((space.q,) * space.n_sites)
    return float((F.max(axis=x) - F.min(axis=x)).max())


def triple_norm(f, space: StateSpace) -> float:
    return float(sum(oscillation(f, space, x) for x in space.graph.sites))


@dataclass
class GrowthReport:
    times: np.ndarray
    norms: np.ndarray
    bounds: np.ndarray
    generator_sup: float
    generator_bound: float

    @property
    def passed(self) -> bool:
        tol = 1e-12 * max(1.0, self.norms[0])
        return bool(np.all(self.norms <= self.bounds + tol)) and self.generator_sup <= self.generator_bound + tol


def growth_bound_check(rates: RateFamily, f, times, space: StateSpace, report: ConditionReport,
                       L=None) -> GrowthReport:
    """``|||P_t f||| <= exp((M - eps) t) |||f|||`` and ``||L f|| <= (total rate bound) |||f|||``."""
    L = build_generator(rates, space) if L is None else L
    times = np.atleast_1d(np.asarray(times, dtype=float))
    Pf = semigroup_grid(L, f, times)
    norms = np.array([triple_norm(v, space) for v in Pf])
    tn = triple_norm(f, space)
    bounds = np.exp((report.M - report.epsilon) * times) * tn
    return GrowthReport(times, norms, bounds, float(np.abs(L @ f).max()), report.total_rate_bound * tn)


# ---------------------------------------------------------------------------
# observables


def spin_observable(space: StateSpace, site: int) -> np.ndarray:
    return spin_values(space.q)[space.configs[:, site]]


def indicator_observable(space: StateSpace, site: int, state: int) -> np.ndarray:
    return (space.configs[:, site] == state).astype(float)


def magnetization(space: StateSpace, sites=None) -> np.ndarray:
    sites = space.graph.sites if sites is None else sites
    return spin_values(space.q)[space.configs[:, list(sites)]].sum(axis=1)


def local_table_observable(space: StateSpace, sites, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values[encode(space.configs, sites, space.q)]


def depends_only_on(f, space: StateSpace, sites) -> bool:
    """Probe the locality tag: zero oscillation at every site outside ``sites``."""
    return all(oscillation(f, space, x) == 0 for x in space.graph.sites if x not in set(sites))
