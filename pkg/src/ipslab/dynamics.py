"""Rate families, their well-posedness audits, and time-reversed rates.

A rate family holds, for each update region, a vectorised evaluator
``table(k, X) -> (m, q**|region_k|)`` of densities ``c(eta, xi)`` with respect
to the uniform product measure on the region.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import (
    EXACT_TOL,
    EXHAUSTIVE_SITE_CAP,
    DomainError,
    SiteGraph,
    Specification,
    encode,
    local_configs,
    local_patterns,
    splice,
)

FAMILIES = ("heat_bath", "block_heat_bath", "metropolis", "exponential", "cyclic_rotation", "table")


@dataclass(frozen=True, eq=False)
class RateFamily:
    graph: SiteGraph
    q: int
    regions: tuple[tuple[int, ...], ...]
    evaluator: Callable[[int, np.ndarray], np.ndarray]
    dependencies: tuple[tuple[int, ...], ...]
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.regions:
            for s in r:
                if not 0 <= s < self.graph.n_sites:
                    raise DomainError(f"region {r} leaves the volume")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("update regions must be distinct")

    @property
    def R(self) -> int:
        return max((len(r) for r in self.regions), default=0)

    def region_index(self, region) -> int:
        region = tuple(region)
        try:
            return self.regions.index(region)
        except ValueError:
            raise DomainError(f"{region} is not an update region of this family") from None

    def table(self, k: int, X: np.ndarray) -> np.ndarray:
        return self.evaluator(k, np.atleast_2d(X))

    def regions_containing(self, x: int) -> list[int]:
        return [k for k, r in enumerate(self.regions) if x in r]


def rate_eval(rates: RateFamily, region, eta, xi) -> float:
    k = rates.region_index(region)
    T = rates.table(k, np.asarray(eta).reshape(1, -1))
    code = encode(np.asarray(xi).reshape(1, -1), range(len(region)), rates.q)[0]
    return float(T[0, code])


# ---------------------------------------------------------------------------
# built-in families


def _singletons(graph):
    return tuple((x,) for x in graph.sites)


def heat_bath(spec: Specification, regions=None) -> RateFamily:
    """Resample each region from its conditional Gibbs law at unit rate."""
    regions = _singletons(spec.graph) if regions is None else tuple(tuple(r) for r in regions)
    deps = tuple(tuple(sorted(set(r) | set(spec.neighborhood(r)))) for r in regions)
    family = "heat_bath" if all(len(r) == 1 for r in regions) else "block_heat_bath"
    return RateFamily(spec.graph, spec.q, regions, lambda k, X: spec.density_table(regions[k], X), deps, family,
                      {"beta": spec.beta})


def block_heat_bath(spec: Specification, blocks) -> RateFamily:
    return heat_bath(spec, blocks)


def metropolis(spec: Specification, regions=None) -> RateFamily:
    """``min(1, exp(-beta * energy change))`` for every proposal on the region."""
    regions = _singletons(spec.graph) if regions is None else tuple(tuple(r) for r in regions)
    pot = spec.potential
    deps = tuple(tuple(sorted(set(r) | set(spec.neighborhood(r)))) for r in regions)

    def table(k, X):
        r = regions[k]
        E = pot.pattern_energies(r, X)
        E0 = pot.local_energy_batch(r, X)
        return np.exp(np.minimum(0.0, -spec.beta * (E - E0[:, None])))

    return RateFamily(spec.graph, spec.q, regions, table, deps, "metropolis", {"beta": spec.beta})


def exponential_rates(spec: Specification) -> RateFamily:
    """Single-site rates ``exp(-beta * sum_{B ni x} Phi_B(xi_x eta_rest))``."""
    regions = _singletons(spec.graph)
    pot = spec.potential
    deps = tuple(tuple(sorted(set(r) | set(spec.neighborhood(r)))) for r in regions)
    return RateFamily(spec.graph, spec.q, regions,
                      lambda k, X: np.exp(-spec.beta * pot.pattern_energies(regions[k], X)),
                      deps, "exponential", {"beta": spec.beta})


def cyclic_rotation(graph: SiteGraph, q: int) -> RateFamily:
    """Each site advances ``s -> s+1 mod q`` with density 1 (total rate ``1/q``)."""
    if q < 3:
        raise ValueError("cyclic rotation needs q >= 3 (q = 2 is a reversible flip)")
    regions = _singletons(graph)

    def table(k, X):
        x = regions[k][0]
        out = np.zeros((len(X), q))
        out[np.arange(len(X)), (X[:, x].astype(np.int64) + 1) % q] = 1.0
        return out

    return RateFamily(graph, q, regions, table, regions, "cyclic_rotation")


def table_family(graph: SiteGraph, q: int, regions, pattern_sites, tables) -> RateFamily:
    """Explicit densities: ``tables[k][code(eta on pattern_sites[k]), code(xi)]``."""
    regions = tuple(tuple(r) for r in regions)
    pattern_sites = tuple(tuple(p) for p in pattern_sites)
    tables = tuple(np.asarray(t, dtype=float) for t in tables)
    if not (len(regions) == len(pattern_sites) == len(tables)):
        raise ValueError("need one pattern-site list and one table per region")
    for r, p, t in zip(regions, pattern_sites, tables):
        if t.shape != (q ** len(p), q ** len(r)):
            raise ValueError(f"table for region {r} has shape {t.shape}, expected {(q ** len(p), q ** len(r))}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValueError(f"table for region {r} must be finite and nonnegative")
    deps = tuple(tuple(sorted(set(r) | set(p))) for r, p in zip(regions, pattern_sites))
    return RateFamily(graph, q, regions, lambda k, X: tables[k][encode(X, pattern_sites[k], q)], deps, "table",
                      {"pattern_sites": pattern_sites})


def zero_rates(graph: SiteGraph, q: int) -> RateFamily:
    regions = _singletons(graph)
    return RateFamily(graph, q, regions, lambda k, X: np.zeros((len(X), q)), regions, "zero")


def scaled(rates: RateFamily, factor: float) -> RateFamily:
    return RateFamily(rates.graph, rates.q, rates.regions, lambda k, X: factor * rates.table(k, X),
                      rates.dependencies, rates.family, dict(rates.params, scale=factor))


# ---------------------------------------------------------------------------
# time reversal


def reverse_rates(rates: RateFamily, spec: Specification) -> RateFamily:
    """Reversed densities ``c(xi eta_rest, eta_region) gamma(xi|.) / gamma(eta_region|.)``."""
    if spec.q != rates.q or spec.graph.n_sites != rates.graph.n_sites:
        raise ValueError("rates and specification live on different volumes")
    q = rates.q

    def table(k, X):
        r = rates.regions[k]
        rows = np.arange(len(X))
        G = spec.density_table(r, X)
        cur = encode(X, r, q)
        den = G[rows, cur]
        if np.any(den <= 0):
            raise RuntimeError("specification density vanished; densities must be bounded away from zero")
        out = np.empty_like(G)
        for j, p in enumerate(local_patterns(q, len(r))):
            out[:, j] = rates.table(k, splice(X, r, p))[rows, cur]
        return out * G / den[:, None]

    deps = tuple(tuple(sorted(set(d) | set(r) | set(spec.neighborhood(r))))
                 for r, d in zip(rates.regions, rates.dependencies))
    return RateFamily(rates.graph, q, rates.regions, table, deps, f"reversed({rates.family})",
                      {"forward": rates.params, "beta": spec.beta})


# ---------------------------------------------------------------------------
# audits


@dataclass
class ConditionReport:
    rate_bound: float          # sup_x sum_{D ni x} sup_eta ||c_D(eta, .)||_inf
    total_rate_bound: float    # sup_x sum_{D ni x} sup_eta c_D(eta, Omega_D)
    M: float
    epsilon: float
    R: int
    oscillation: dict          # (region, y) -> delta_y c_region
    exact: bool
    gamma_oscillation: float | None = None
    probes: int = 0

    def as_dict(self) -> dict:
        return {
            "rate_bound": self.rate_bound,
            "total_rate_bound": self.total_rate_bound,
            "M": self.M,
            "epsilon": self.epsilon,
            "R": self.R,
            "exact": self.exact,
            "gamma_oscillation": self.gamma_oscillation,
            "probes": self.probes,
            "oscillation": {f"{list(r)}@{y}": v for (r, y), v in sorted(self.oscillation.items())},
        }


def _scan(rates, sites, probes, rng):
    """Exhaustive configurations over ``sites`` or random full-volume probes."""
    sites = sorted(set(sites))
    if len(sites) <= EXHAUSTIVE_SITE_CAP:
        return local_configs(rates.graph.n_sites, sites, rates.q), True
    return rng.integers(0, rates.q, size=(probes, rates.graph.n_sites)).astype(np.int8), False


def condition_audit(rates: RateFamily, spec: Specification | None = None, probes: int = 4096,
                    seed: int = 0) -> ConditionReport:
    """Constants of the well-posedness conditions, by exhaustive local scans.

    Scans enumerate the dependency sites of each region; above
    ``EXHAUSTIVE_SITE_CAP`` sites they fall back to ``probes`` random
    configurations and the report is flagged inexact (values are then lower
    bounds on the true suprema).
    """
    rng = np.random.default_rng(seed)
    q, n_sites = rates.q, rates.graph.n_sites
    exact = True
    sup_inf, sup_mass = [], []
    osc = {}
    for k, r in enumerate(rates.regions):
        lam = q ** -len(r)
        X, ok = _scan(rates, rates.dependencies[k], probes, rng)
        exact &= ok
        T = rates.table(k, X)
        sup_inf.append(float(T.max()))
        sup_mass.append(float((T.sum(axis=1) * lam).max()))
        for y in rates.dependencies[k]:
            worst = 0.0
            for d in range(1, q):
                Z = X.copy()
                Z[:, y] = (Z[:, y] + d) % q
                worst = max(worst, float((np.abs(T - rates.table(k, Z)).sum(axis=1) * lam).max()))
            osc[(r, y)] = worst
    rate_bound = total = M = 0.0
    eps = np.inf
    for x in range(n_sites):
        ks = rates.regions_containing(x)
        rate_bound = max(rate_bound, sum(sup_inf[k] for k in ks))
        total = max(total, sum(sup_mass[k] for k in ks))
        M = max(M, sum(v for (r, y), v in osc.items() if x in r and y != x))
        if not ks:
            eps = 0.0
            continue
        U = {x}.union(*(rates.dependencies[k] for k in ks))
        X, ok = _scan(rates, U, probes, rng)
        exact &= ok
        for d in range(1, q):
            Z = X.copy()
            Z[:, x] = (Z[:, x] + d) % q
            acc = np.zeros(len(X))
            for k in ks:
                r = rates.regions[k]
                col = local_patterns(q, len(r))[:, r.index(x)]
                lam = q ** -len(r)
                Tx, Tz = rates.table(k, X), rates.table(k, Z)
                acc += (Tx * (col[None, :] == Z[:, [x]])).sum(axis=1) * lam
                acc += (Tz * (col[None, :] == X[:, [x]])).sum(axis=1) * lam
            eps = min(eps, float(acc.min()))
    gamma_osc = None
    if spec is not None:
        from .model import gamma_oscillation_sum

        active = [r for k, r in enumerate(rates.regions) if sup_inf[k] > 0]
        gamma_osc = gamma_oscillation_sum(spec, active)[0]
    return ConditionReport(rate_bound, total, M, float(eps), rates.R, osc, exact, gamma_osc, 0 if exact else probes)


@dataclass(frozen=True)
class QuotientReport:
    minimum: float
    maximum: float
    worst_region: tuple[int, ...]
    passed: bool


def quotient_bound_check(rates: RateFamily, spec: Specification) -> QuotientReport:
    """``exp(-2C|D|) <= gamma(xi|.)/gamma(eta_D|.) <= exp(2C|D|)`` on every region."""
    lo, hi, worst, ok = np.inf, 0.0, (), True
    worst_excess = -np.inf
    for r in rates.regions:
        X = spec.scan_configs(r)
        G = spec.density_table(r, X)
        ratio = G / spec.density_at(r, X)[:, None]
        b = np.exp(2 * spec.C * len(r))
        rlo, rhi = float(ratio.min()), float(ratio.max())
        lo, hi = min(lo, rlo), max(hi, rhi)
        excess = max(rhi / b, 1 / (rlo * b))
        if excess > worst_excess:
            worst_excess, worst = excess, r
        ok &= rlo >= (1 - EXACT_TOL) / b and rhi <= b * (1 + EXACT_TOL)
    return QuotientReport(float(lo), float(hi), worst, bool(ok))


@dataclass
class ReversalRegularity:
    report: ConditionReport
    forward: ConditionReport
    pointwise_ok: bool          # c_hat <= exp(2C|D|) * sup c_D on every region
    proof_bound: float          # delta^-1 e^R * forward rate_bound
    proof_bound_ok: bool

    @property
    def passed(self) -> bool:
        return self.pointwise_ok


def reversal_regularity_audit(rates: RateFamily, spec: Specification, **kw) -> ReversalRegularity:
    hat = reverse_rates(rates, spec)
    fwd = condition_audit(rates, spec, **kw)
    rep = condition_audit(hat, spec, **kw)
    ok = True
    for k, r in enumerate(rates.regions):
        X = local_configs(rates.graph.n_sites, hat.dependencies[k], rates.q) \
            if len(hat.dependencies[k]) <= EXHAUSTIVE_SITE_CAP else None
        if X is None:
            continue
        sup_c = rates.table(k, X).max()
        ok &= hat.table(k, X).max() <= np.exp(2 * spec.C * len(r)) * sup_c * (1 + EXACT_TOL) + EXACT_TOL
    bound = np.exp(rates.R) / spec.delta * fwd.rate_bound
    return ReversalRegularity(rep, fwd, bool(ok), float(bound), bool(rep.rate_bound <= bound * (1 + EXACT_TOL)))
