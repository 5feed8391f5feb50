"""Finite site graphs, potentials and the Gibbs specification they induce.

Configurations are integer arrays of local-state indices, one entry per site
position.  Batches of configurations are ``(m, N)`` arrays; every density
evaluator in the package works on such batches.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

#: exhaustive scans over more free sites than this raise instead of running
EXHAUSTIVE_SITE_CAP = 20
DEFAULT_STATE_CAP = 2**22
EXACT_TOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class StateSpaceTooLarge(ValueError):
    """Exhaustive enumeration was requested on a space above the cap."""


# ---------------------------------------------------------------------------
# graphs and alphabets


@dataclass(frozen=True)
class SiteGraph:
    """Finite set of sites with a symmetric neighbourhood relation.

    Sites are addressed by position ``0..N-1``; ``labels`` keeps the
    identifiers used in model files.
    """

    neighbors: tuple[frozenset[int], ...]
    labels: tuple = ()
    geometry: str = "general"
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.neighbors)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(n)))
        if len(self.labels) != n or len(set(self.labels)) != n:
            raise ValueError("site labels must be distinct, one per site")
        for x, nb in enumerate(self.neighbors):
            for y in nb:
                if not 0 <= y < n:
                    raise ValueError(f"neighbour {y} of site {x} is not a listed site")
                if y == x:
                    raise ValueError(f"site {x} lists itself as a neighbour")
                if x not in self.neighbors[y]:
                    raise ValueError(f"neighbourhood not symmetric: {y} in N({x}) but not vice versa")

    @property
    def n_sites(self) -> int:
        return len(self.neighbors)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(range(self.n_sites))

    def edges(self) -> list[tuple[int, int]]:
        return sorted((x, y) for x, nb in enumerate(self.neighbors) for y in nb if x < y)

    @classmethod
    def from_edges(cls, n_sites, edges, labels=(), geometry="general", shape=()):
        nb = [set() for _ in range(n_sites)]
        for x, y in edges:
            if x == y:
                raise ValueError(f"self-loop at site {x}")
            nb[x].add(y)
            nb[y].add(x)
        return cls(tuple(frozenset(s) for s in nb), tuple(labels), geometry, tuple(shape))

    @classmethod
    def lattice(cls, side: int, dim: int = 1, periodic: bool = True):
        """Hypercubic box of ``side**dim`` sites, row-major positions."""
        if side < 1 or dim < 1:
            raise ValueError("side and dim must be positive")
        coords = list(itertools.product(range(side), repeat=dim))
        pos = {c: i for i, c in enumerate(coords)}
        edges = set()
        for c in coords:
            for axis in range(dim):
                d = list(c)
                d[axis] += 1
                if d[axis] == side:
                    if not periodic:
                        continue
                    d[axis] = 0
                a, b = pos[c], pos[tuple(d)]
                if a != b:
                    edges.add((min(a, b), max(a, b)))
        if dim == 1:
            geometry = "ring" if periodic else "chain"
        else:
            geometry = "torus" if periodic else "box"
        return cls.from_edges(len(coords), sorted(edges), geometry=geometry, shape=(side,) * dim)

    @classmethod
    def ring(cls, n: int):
        return cls.lattice(n, 1, periodic=True)

    @classmethod
    def chain(cls, n: int):
        return cls.lattice(n, 1, periodic=False)

    @classmethod
    def torus(cls, side: int, dim: int = 2):
        return cls.lattice(side, dim, periodic=True)

    def missing_neighbors(self, x: int) -> int:
        """Number of lattice neighbours cut off by an open boundary."""
        if self.geometry not in ("chain", "box"):
            return 0
        return 2 * len(self.shape) - len(self.neighbors[x])


@dataclass(frozen=True)
class LocalAlphabet:
    q: int

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("alphabet needs at least two local states")

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.q, 1.0 / self.q)


# ---------------------------------------------------------------------------
# enumeration helpers


def local_patterns(q: int, k: int) -> np.ndarray:
    """All ``q**k`` partial configurations on ``k`` sites, lexicographic."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    codes = np.arange(q**k)
    w = q ** np.arange(k - 1, -1, -1)
    return (codes[:, None] // w) % q


def encode(X: np.ndarray, sites, q: int) -> np.ndarray:
    """Mixed-radix code of ``X[:, sites]`` (first site most significant)."""
    sites = list(sites)
    if not sites:
        return np.zeros(len(X), dtype=np.int64)
    w = q ** np.arange(len(sites) - 1, -1, -1)
    return np.asarray(X)[:, sites].astype(np.int64) @ w


def local_configs(n_sites: int, sites, q: int, cap: int = EXHAUSTIVE_SITE_CAP) -> np.ndarray:
    """Configurations enumerating ``sites`` exhaustively, zero elsewhere."""
    sites = sorted(set(sites))
    if len(sites) > cap:
        raise StateSpaceTooLarge(
            f"exhaustive scan over {len(sites)} sites needs q^{len(sites)} = {q}^{len(sites)} configurations "
            f"(cap: {cap} sites)"
        )
    X = np.zeros((q ** len(sites), n_sites), dtype=np.int8)
    X[:, sites] = local_patterns(q, len(sites))
    return X


def splice(X: np.ndarray, sites, pattern) -> np.ndarray:
    """Copy of ``X`` with ``sites`` overwritten by ``pattern`` (row-broadcast)."""
    Y = np.array(X, copy=True)
    Y[:, list(sites)] = pattern
    return Y


class StateSpace:
    """Bijection between configurations of a volume and ``0..q**N-1``.

    State index ``i`` has site 0 as its most significant base-``q`` digit, so
    the order matches ``itertools.product(range(q), repeat=N)``.
    """

    def __init__(self, graph: SiteGraph, q: int, cap: int = DEFAULT_STATE_CAP):
        self.graph = graph
        self.q = int(q)
        self.n_sites = graph.n_sites
        n = self.q**self.n_sites
        if n > cap:
            raise StateSpaceTooLarge(
                f"state space has q^|sites| = {self.q}^{self.n_sites} = {n} states, above the cap {cap}"
            )
        self.n = n
        self.place = self.q ** np.arange(self.n_sites - 1, -1, -1, dtype=np.int64)

    def __len__(self):
        return self.n

    @cached_property
    def configs(self) -> np.ndarray:
        idx = np.arange(self.n, dtype=np.int64)
        return ((idx[:, None] // self.place) % self.q).astype(np.int8)

    def index(self, X) -> np.ndarray | int:
        X = np.asarray(X)
        if X.ndim == 1:
            return int(X.astype(np.int64) @ self.place)
        return X.astype(np.int64) @ self.place

    def config(self, i: int) -> np.ndarray:
        return self.configs[int(i)].copy()

    def targets(self, region) -> np.ndarray:
        """``(n, q**|region|)`` indices of ``xi_region eta_rest`` for every state."""
        region = list(region)
        w = self.place[region]
        base = np.arange(self.n, dtype=np.int64) - self.configs[:, region].astype(np.int64) @ w
        return base[:, None] + local_patterns(self.q, len(region)) @ w


def enumerate_states(graph: SiteGraph, alphabet: LocalAlphabet | int, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    q = alphabet.q if isinstance(alphabet, LocalAlphabet) else int(alphabet)
    return StateSpace(graph, q, cap)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True, eq=False)
class Term:
    sites: tuple[int, ...]
    table: np.ndarray  # shape (q,) * len(sites)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.table[tuple(X[:, s] for s in self.sites)]


@dataclass(frozen=True, eq=False)
class Potential:
    """Finite collection of interaction terms at inverse temperature ``beta``.

    The Hamiltonian of a configuration is ``sum_B table_B(eta_B)``; Gibbs
    weights are ``exp(-beta * H)``.
    """

    graph: SiteGraph
    q: int
    beta: float
    terms: tuple[Term, ...]
    boundary: str = "free"
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be a finite nonnegative number")
        n = self.graph.n_sites
        for t in self.terms:
            if len(set(t.sites)) != len(t.sites):
                raise ValueError(f"term on {t.sites} repeats a site")
            for s in t.sites:
                if not 0 <= s < n:
                    raise DomainError(f"term on {t.sites} references site {s} outside the volume")
            if t.table.shape != (self.q,) * len(t.sites):
                raise ValueError(f"term on {t.sites} has table shape {t.table.shape}, expected {(self.q,) * len(t.sites)}")
            if not np.all(np.isfinite(t.table)):
                raise ValueError(f"term on {t.sites} has non-finite entries")

    @cached_property
    def _touching(self) -> list[list[int]]:
        out = [[] for _ in range(self.graph.n_sites)]
        for i, t in enumerate(self.terms):
            for s in t.sites:
                out[s].append(i)
        return out

    def terms_touching(self, region) -> list[int]:
        return sorted({i for x in region for i in self._touching[x]})

    def neighborhood(self, region) -> tuple[int, ...]:
        """Sites outside ``region`` that share a term with it."""
        region = set(region)
        out = {s for i in self.terms_touching(region) for s in self.terms[i].sites}
        return tuple(sorted(out - region))

    @property
    def range(self) -> int:
        return max((len(t.sites) for t in self.terms), default=0)

    @property
    def summability(self) -> float:
        """``sup_x sum_{B ni x} |B| max|Phi_B|``."""
        per_site = np.zeros(self.graph.n_sites)
        for t in self.terms:
            for s in t.sites:
                per_site[s] += len(t.sites) * np.max(np.abs(t.table))
        return float(per_site.max(initial=0.0))

    def energy(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.zeros(len(X))
        for t in self.terms:
            out += t(X)
        return out

    def local_energy_batch(self, region, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.zeros(len(X))
        for i in self.terms_touching(region):
            out += self.terms[i](X)
        return out

    def pattern_energies(self, region, X: np.ndarray) -> np.ndarray:
        """``(m, q**|region|)`` local energies of every ``xi_region X_rest``."""
        X = np.atleast_2d(X)
        region = tuple(region)
        pats = local_patterns(self.q, len(region))
        out = np.empty((len(X), len(pats)))
        for j, p in enumerate(pats):
            out[:, j] = self.local_energy_batch(region, splice(X, region, p))
        return out

    def with_beta(self, beta: float) -> "Potential":
        return Potential(self.graph, self.q, beta, self.terms, self.boundary, self.name, dict(self.params))


def _check_region(graph: SiteGraph, region) -> tuple[int, ...]:
    region = tuple(int(s) for s in region)
    for s in region:
        if not 0 <= s < graph.n_sites:
            raise DomainError(f"site {s} is outside the volume of {graph.n_sites} sites")
    if len(set(region)) != len(region):
        raise DomainError(f"region {region} repeats a site")
    return region


def local_energy(potential: Potential, region, xi, eta) -> float:
    """Sum of the terms meeting ``region`` on the spliced configuration."""
    region = _check_region(potential.graph, region)
    xi = np.asarray(xi, dtype=np.int64).reshape(-1)
    eta = np.asarray(eta, dtype=np.int64).reshape(1, -1)
    if len(xi) != len(region) or np.any((xi < 0) | (xi >= potential.q)):
        raise DomainError(f"partial configuration {xi.tolist()} is not valid on {region}")
    return float(potential.local_energy_batch(region, splice(eta, region, xi))[0])


def zero_potential(graph: SiteGraph, q: int, beta: float = 0.0) -> Potential:
    return Potential(graph, q, beta, (), name="zero")


def spin_values(q: int) -> np.ndarray:
    """Numeric spin attached to each local state: ``-1, +1`` for ``q = 2``."""
    if q == 2:
        return np.array([-1.0, 1.0])
    return np.arange(q, dtype=float)


def ising(graph: SiteGraph, beta: float, coupling: float = 1.0, field: float = 0.0,
          boundary: str = "periodic", boundary_state: int | None = None) -> Potential:
    """Nearest-neighbour Ising potential ``-J s_x s_y - h s_x`` with s = +-1.

    With ``boundary="fixed"`` every cut lattice bond is replaced by a
    single-site term coupling to a frozen ghost spin in ``boundary_state``.
    """
    s = spin_values(2)
    pair = -coupling * np.outer(s, s)
    terms = [Term((x, y), pair) for x, y in graph.edges()]
    single = -field * s
    for x in graph.sites:
        tab = single.copy()
        if boundary == "fixed":
            if boundary_state is None:
                raise ValueError("fixed boundary needs a boundary_state")
            tab = tab - coupling * graph.missing_neighbors(x) * s * s[boundary_state]
        if np.any(tab != 0):
            terms.append(Term((x,), tab))
    return Potential(graph, 2, beta, tuple(terms), boundary, "ising",
                     {"coupling": coupling, "field": field, "boundary_state": boundary_state})


def potts(graph: SiteGraph, q: int, beta: float, coupling: float = 1.0,
          boundary: str = "periodic", boundary_state: int | None = None) -> Potential:
    """Potts potential ``-J 1[s_x = s_y]`` on the edges of ``graph``."""
    pair = -coupling * np.eye(q)
    terms = [Term((x, y), pair) for x, y in graph.edges()]
    if boundary == "fixed":
        if boundary_state is None:
            raise ValueError("fixed boundary needs a boundary_state")
        for x in graph.sites:
            k = graph.missing_neighbors(x)
            if k:
                tab = np.zeros(q)
                tab[boundary_state] = -coupling * k
                terms.append(Term((x,), tab))
    return Potential(graph, q, beta, tuple(terms), boundary, "potts",
                     {"coupling": coupling, "boundary_state": boundary_state})


# ---------------------------------------------------------------------------
# specification


class Specification:
    """Gibbs specification of a potential, as densities w.r.t. uniform lambda."""

    def __init__(self, potential: Potential):
        self.potential = potential
        self.graph = potential.graph
        self.q = potential.q
        self.beta = potential.beta

    def neighborhood(self, region) -> tuple[int, ...]:
        return self.potential.neighborhood(region)

    def density_table(self, region, X: np.ndarray) -> np.ndarray:
        """``(m, q**|region|)`` densities ``gamma_region(xi | X_rest)``."""
        region = tuple(region)
        logw = -self.beta * self.potential.pattern_energies(region, X)
        k = logw.shape[1]
        return k * np.exp(logw - logsumexp(logw, axis=1, keepdims=True))

    def density_at(self, region, X: np.ndarray) -> np.ndarray:
        """``gamma_region(X_region | X_rest)`` for each row of ``X``."""
        X = np.atleast_2d(X)
        T = self.density_table(region, X)
        return T[np.arange(len(X)), encode(X, region, self.q)]

    def scan_configs(self, region, extra=()) -> np.ndarray:
        sites = set(region) | set(self.neighborhood(region)) | set(extra)
        return local_configs(self.graph.n_sites, sites, self.q)

    @cached_property
    def single_site_range(self) -> tuple[float, float]:
        lo, hi = np.inf, -np.inf
        for x in self.graph.sites:
            T = self.density_table((x,), self.scan_configs((x,)))
            lo, hi = min(lo, T.min()), max(hi, T.max())
        return float(lo), float(hi)

    @property
    def delta(self) -> float:
        """Largest ``delta`` with ``delta <= gamma_x <= 1/delta`` for all x, eta."""
        lo, hi = self.single_site_range
        return min(lo, 1.0 / hi)

    @property
    def C(self) -> float:
        return abs(float(np.log(self.delta)))


def conditional_density(spec: Specification, region, xi, eta) -> float:
    region = _check_region(spec.graph, region)
    xi = np.asarray(xi, dtype=np.int64).reshape(1, -1)
    eta = np.asarray(eta).reshape(1, -1)
    T = spec.density_table(region, eta)
    return float(T[0, encode(xi, range(len(region)), spec.q)[0]])


# ---------------------------------------------------------------------------
# audits of the specification


def chain_rule_check(spec: Specification, region, order=None) -> float:
    """Worst gap between ``gamma_region`` and the product of one-site marginals.

    The product runs over ``order`` (default sorted): factor ``j`` is the
    marginal density at site ``i_j`` of ``gamma_{i_1..i_j}`` given the
    remaining sites.
    """
    region = _check_region(spec.graph, region)
    if len(region) < 2:
        raise DomainError("chain rule check needs a region of at least two sites")
    order = tuple(sorted(region)) if order is None else _check_region(spec.graph, order)
    if set(order) != set(region):
        raise DomainError(f"order {order} is not an enumeration of {region}")
    X = spec.scan_configs(region)
    q = spec.q
    direct = spec.density_at(region, X)
    prod = np.ones(len(X))
    rows = np.arange(len(X))
    for j in range(1, len(order) + 1):
        sub = order[:j]
        T = spec.density_table(sub, X) / q**j
        last = local_patterns(q, j)[:, -1]
        marg = np.zeros((len(X), q))
        for v in range(q):
            marg[:, v] = T[:, last == v].sum(axis=1)
        prod *= q * marg[rows, X[:, order[j - 1]]]
    return float(np.max(np.abs(prod - direct)))


@dataclass(frozen=True)
class DensityBounds:
    minimum: float
    maximum: float
    lower: float
    upper: float

    @property
    def passed(self) -> bool:
        return self.minimum >= self.lower * (1 - EXACT_TOL) and self.maximum <= self.upper * (1 + EXACT_TOL)


def density_bounds_check(spec: Specification, region) -> DensityBounds:
    """``exp(-C|region|) <= gamma_region <= exp(C|region|)`` with ``C = |log delta|``."""
    region = _check_region(spec.graph, region)
    T = spec.density_table(region, spec.scan_configs(region))
    b = float(np.exp(spec.C * len(region)))
    return DensityBounds(float(T.min()), float(T.max()), 1.0 / b, b)


def specification_consistency_check(spec: Specification, inner, outer) -> float:
    """``sup |gamma_outer gamma_inner (A|eta) - gamma_outer(A|eta)|`` over cylinder events on ``outer``."""
    inner = _check_region(spec.graph, inner)
    outer = _check_region(spec.graph, outer)
    if not set(inner) <= set(outer):
        raise DomainError(f"{inner} is not contained in {outer}")
    q = spec.q
    X = local_configs(spec.graph.n_sites, spec.neighborhood(outer), q)
    K = q ** len(outer)
    p_outer = spec.density_table(outer, X) / K  # probabilities of each omega_outer
    pats = local_patterns(q, len(outer))
    pos = [outer.index(s) for s in inner]
    inner_pats = local_patterns(q, len(inner))
    w = q ** np.arange(len(outer) - 1, -1, -1)
    composed = np.zeros_like(p_outer)
    for j, omega in enumerate(pats):
        Y = splice(X, outer, omega)
        g = spec.density_table(inner, Y) / q ** len(inner)
        for a, xi in enumerate(inner_pats):
            tgt = omega.copy()
            tgt[pos] = xi
            composed[:, int(tgt @ w)] += p_outer[:, j] * g[:, a]
    return float(np.max(np.abs(composed - p_outer)))


def oscillation_gamma(spec: Specification, region, y: int) -> float:
    """``delta_y gamma_region``: sup of the TV distance over pairs differing at ``y``."""
    region = _check_region(spec.graph, region)
    _check_region(spec.graph, (y,))
    if y in region or y not in spec.neighborhood(region):
        return 0.0
    X = spec.scan_configs(region)
    K = spec.q ** len(region)
    T = spec.density_table(region, X)
    worst = 0.0
    for d in range(1, spec.q):
        Z = X.copy()
        Z[:, y] = (Z[:, y] + d) % spec.q
        tv = 0.5 * np.abs(T - spec.density_table(region, Z)).sum(axis=1) / K
        worst = max(worst, float(tv.max()))
    return worst


def gamma_oscillation_sum(spec: Specification, regions) -> tuple[float, dict]:
    """``sup_x sum_{region ni x} sum_{y != x} delta_y gamma_region`` over the given regions."""
    regions = [tuple(r) for r in regions]
    osc = {}
    for r in regions:
        for y in spec.neighborhood(r) + r:
            osc[(r, y)] = oscillation_gamma(spec, r, y)
    per_site = np.zeros(spec.graph.n_sites)
    for x in spec.graph.sites:
        per_site[x] = sum(v for (r, y), v in osc.items() if x in r and y != x)
    return float(per_site.max(initial=0.0)), osc
