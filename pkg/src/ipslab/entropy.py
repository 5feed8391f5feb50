"""Phi-entropies, Bregman divergences and their dissipation along a semigroup."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .dynamics import RateFamily
from .exact import closed_classes, semigroup_apply, semigroup_grid
from .model import DomainError, StateSpace

EIGH_LIMIT = 512    # full dense eigendecomposition up to this many states, Lanczos above


@dataclass(frozen=True)
class PhiFunction:
    name: str
    phi: Callable
    dphi: Callable
    d2phi: Callable
    lower: float = -np.inf      # open lower end of the domain interval
    strict: bool = True

    def check(self, *args):
        for a in args:
            a = np.asarray(a, dtype=float)
            if np.any(~np.isfinite(a)) or np.any(a <= self.lower):
                raise DomainError(f"argument outside the domain ({self.lower}, inf) of Phi = {self.name}")

    def __call__(self, u):
        return self.phi(np.asarray(u, dtype=float))

    def div(self, p, q):
        """Bregman divergence without the domain check (internal hot path)."""
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if self.name == "square":
            return (p - q) ** 2
        if self.name == "xlogx":
            return np.maximum(p * np.log(p / q) - p + q, 0.0)
        if self.name == "identity":
            return np.zeros(np.broadcast(p, q).shape)
        return np.maximum(self.phi(p) - self.phi(q) - (p - q) * self.dphi(q), 0.0)


SQUARE = PhiFunction("square", lambda u: u * u, lambda u: 2 * u, lambda u: np.full_like(u, 2.0))
XLOGX = PhiFunction("xlogx", lambda u: u * np.log(u), lambda u: np.log(u) + 1, lambda u: 1 / u, lower=0.0)
IDENTITY = PhiFunction("identity", lambda u: u, lambda u: np.ones_like(u), lambda u: np.zeros_like(u), strict=False)


def power(p: float) -> PhiFunction:
    if not 1 < p <= 2:
        raise ValueError("power Phi needs 1 < p <= 2")
    return PhiFunction(f"power{p:g}", lambda u: u**p, lambda u: p * u ** (p - 1),
                       lambda u: p * (p - 1) * u ** (p - 2), lower=0.0)


def get_phi(name: str) -> PhiFunction:
    if name == "square":
        return SQUARE
    if name in ("xlogx", "entropy"):
        return XLOGX
    if name == "identity":
        return IDENTITY
    if name.startswith("power"):
        return power(float(name[5:]))
    raise ValueError(f"unknown Phi {name!r}; choose square, xlogx, identity or power<p>")


def shift_positive(f, margin: float = 1.0) -> tuple[np.ndarray, float]:
    """Affine shift ``f - min f + margin`` for Phi defined on the positive axis."""
    f = np.asarray(f, dtype=float)
    s = margin - float(f.min())
    return f + s, s


def bregman_div(phi: PhiFunction, p, q):
    phi.check(p, q)
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    out = phi(p) - phi(q) - (p - q) * phi.dphi(q)
    return float(out) if out.ndim == 0 else out


def phi_entropy(mu, phi: PhiFunction, f) -> float:
    phi.check(f)
    f = np.asarray(f, dtype=float)
    return float(mu @ phi(f) - phi(mu @ f))


def dissipation(mu, L, phi: PhiFunction, f) -> float:
    phi.check(f)
    f = np.asarray(f, dtype=float)
    return float(mu @ (phi.dphi(f) * (L @ f)))


def dirichlet_form(mu, L, f) -> float:
    """``(1/2) sum_{x,y} mu(x) L(x,y) (f(y) - f(x))^2``."""
    C = sp.coo_matrix(L)
    off = C.row != C.col
    r, c, v = C.row[off], C.col[off], C.data[off]
    return float(0.5 * np.sum(mu[r] * v * (f[c] - f[r]) ** 2))


@dataclass
class DeBruijnReport:
    times: np.ndarray
    derivative: np.ndarray
    dissipation: np.ndarray
    refined: bool

    @property
    def error(self) -> float:
        return float(np.abs(self.derivative - self.dissipation).max())


def de_bruijn_check(mu, L, phi: PhiFunction, f, times, h: float = 1e-4, tol: float = 1e-6) -> DeBruijnReport:
    """Central difference of ``t -> Ent(P_t f)`` against the dissipation at ``P_t f``.

    Falls back to a Richardson-extrapolated difference when first-pass errors
    exceed ``tol``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times - 2 * h < 0):
        raise DomainError("grid points must exceed twice the step")

    def ent(ts):
        return np.array([phi_entropy(mu, phi, v) for v in semigroup_grid(L, f, ts)])

    deriv = (ent(times + h) - ent(times - h)) / (2 * h)
    diss = np.array([dissipation(mu, L, phi, v) for v in semigroup_grid(L, f, times)])
    refined = False
    if np.abs(deriv - diss).max() > tol:
        d2 = (ent(times + 2 * h) - ent(times - 2 * h)) / (4 * h)
        deriv = (4 * deriv - d2) / 3
        refined = True
    return DeBruijnReport(times, deriv, diss, refined)


@dataclass
class DecayCurve:
    times: np.ndarray
    entropy: np.ndarray
    dissipation: np.ndarray
    bound: np.ndarray | None = None

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.entropy) <= 1e-12 * max(1.0, abs(self.entropy[0]))))

    def write_csv(self, path, header: dict | None = None):
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["t", "entropy", "dissipation", "bound"])
            for i, t in enumerate(self.times):
                b = "" if self.bound is None else repr(float(self.bound[i]))
                w.writerow([repr(float(t)), repr(float(self.entropy[i])), repr(float(self.dissipation[i])), b])


def decay_curve(mu, L, phi: PhiFunction, f, times, c_star: float | None = None) -> DecayCurve:
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise DomainError("time grid must be strictly increasing")
    vals = semigroup_grid(L, f, times)
    ent = np.array([phi_entropy(mu, phi, v) for v in vals])
    diss = np.array([dissipation(mu, L, phi, v) for v in vals])
    bound = None
    if c_star is not None:
        bound = np.exp(-2 * times / c_star) * phi_entropy(mu, phi, f)
    return DecayCurve(times, ent, diss, bound)


def decay_rate_estimate(curve: DecayCurve) -> float:
    """Log-linear slope over the last third of the curve (an estimate, not a spectral value)."""
    m = len(curve.times)
    sel = slice(m - max(2, m // 3), m)
    t, e = curve.times[sel], curve.entropy[sel]
    ok = e > 0
    if ok.sum() < 2:
        return np.inf
    return float(-np.polyfit(t[ok], np.log(e[ok]), 1)[0])


def is_reversible(L, mu, tol: float = 1e-10) -> bool:
    D = sp.diags(mu) @ L
    return bool(abs(D - D.T).max() <= tol) if D.nnz else True


@dataclass
class PoincareResult:
    gap: float
    eigenfunction: np.ndarray

    @property
    def c_star(self) -> float:
        return 2.0 / self.gap


def poincare_gap(L, mu) -> PoincareResult:
    """Spectral gap of ``-L`` in ``L^2(mu)``; ``c* = 2 / gap``.

    Requires detailed balance; use :func:`decay_rate_estimate` otherwise.
    """
    classes = closed_classes(L)
    if len(classes) != 1 or len(classes[0]) != L.shape[0]:
        raise DomainError("generator is reducible; the gap is zero")
    if not is_reversible(L, mu):
        raise DomainError("generator is not reversible w.r.t. mu; use decay_rate_estimate on a decay curve")
    s = np.sqrt(mu)
    S = sp.diags(s) @ L @ sp.diags(1 / s)
    S = 0.5 * (S + S.T)
    n = L.shape[0]
    if n <= EIGH_LIMIT:
        w, V = sla.eigh(-S.toarray())
    else:
        # top of S + rate I; shift-invert would need an LU that fills in
        rate = float(np.abs(L.diagonal()).max())
        w, V = eigsh((S + rate * sp.identity(n)).tocsr(), k=2, which="LA", tol=1e-12)
        order = np.argsort(-w)
        w, V = rate - w[order], V[:, order]
    return PoincareResult(float(w[1]), V[:, 1] / s)


# ---------------------------------------------------------------------------
# compensator integrand


def compensator_integrand(state: int, s: float, f, phi: PhiFunction, rates_hat: RateFamily, space: StateSpace,
                          T: float, L_semigroup) -> float:
    """``sum_D int c_hat_D(eta, xi) div(Pf(xi eta) | Pf(eta)) dlambda`` with ``P = P_{T-s}``.

    ``L_semigroup`` generates the semigroup applied to ``f``.
    """
    if not 0 <= s <= T:
        raise DomainError("need 0 <= s <= T")
    g = semigroup_apply(L_semigroup, f, T - s)
    phi.check(g)
    x = space.configs[state:state + 1]
    total = 0.0
    for k, r in enumerate(rates_hat.regions):
        c = rates_hat.table(k, x)[0]
        tgt = space.targets(r)[state]
        total += float(np.sum(c * bregman_div(phi, g[tgt], np.full(len(tgt), g[state])))) * space.q ** -len(r)
    return total


def integrand_vector(L_hat, phi: PhiFunction, g) -> np.ndarray:
    """Compensator integrand for every state at once, from the reversed generator.

    Self-jumps carry zero divergence, so the off-diagonal generator entries hold
    all the information.  Rows of ``g`` may stack several time points.
    """
    C = sp.coo_matrix(L_hat)
    off = C.row != C.col
    r, c, v = C.row[off], C.col[off], C.data[off]
    g = np.atleast_2d(g)
    contrib = phi.div(g[:, c], g[:, r]) * v
    n = L_hat.shape[0]
    R = sp.csr_matrix((np.ones(len(r)), (r, np.arange(len(r)))), shape=(n, len(r)))
    return (R @ contrib.T).T


def raw_variance_integrand(state: int, f, rates_hat: RateFamily, space: StateSpace) -> float:
    """Variance integrand with the raw observable in place of ``P_{T-s} f``."""
    x = space.configs[state:state + 1]
    total = 0.0
    for k, r in enumerate(rates_hat.regions):
        c = rates_hat.table(k, x)[0]
        tgt = space.targets(r)[state]
        total += float(np.sum(c * (f[tgt] - f[state]) ** 2)) * space.q ** -len(r)
    return total
