"""Trajectory sampling and the trajectorial Phi-entropy process.

Randomness is keyed per trajectory: trajectory ``i`` of master seed ``s`` draws
from a Philox stream seeded with ``SeedSequence(s, spawn_key=(i,))``, so an
ensemble is bit-identical however it is split across workers.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.stats import chi2_contingency, chisquare

from .dynamics import RateFamily
from .entropy import PhiFunction, integrand_vector
from .exact import semigroup_apply, semigroup_grid, transition_matrix
from .model import DomainError, StateSpace, encode

MIN_ENSEMBLE = 1000
SIGMA = 3.0


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Initial configuration plus jump events on ``[0, T]``.

    ``states`` holds enumeration indices (initial state first, then the state
    after every event) when the volume is enumerable.
    """

    initial: np.ndarray
    times: np.ndarray
    regions: np.ndarray
    xi: np.ndarray
    T: float
    region_sites: tuple
    q: int
    self_jump: np.ndarray
    states: np.ndarray | None = None
    seed: int | None = None
    index: int | None = None

    @property
    def n_events(self) -> int:
        return len(self.times)

    @property
    def n_jumps(self) -> int:
        return int((~self.self_jump).sum())

    def configs(self) -> np.ndarray:
        """Configuration before the first event and after each event."""
        out = np.empty((self.n_events + 1, len(self.initial)), dtype=np.int8)
        cur = self.initial.astype(np.int8).copy()
        out[0] = cur
        for e in range(self.n_events):
            r = self.region_sites[self.regions[e]]
            cur[list(r)] = _decode(self.xi[e], len(r), self.q)
            out[e + 1] = cur
        return out

    def state_at(self, s: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, s, side="right"))
        return self.configs()[k]

    @property
    def final(self) -> np.ndarray:
        return self.configs()[-1]

    def write_csv(self, path, header: dict | None = None):
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            fh.write(f"# initial={';'.join(map(str, self.initial.tolist()))}\n")
            w = csv.writer(fh)
            w.writerow(["t", "region", "xi"])
            for e in range(self.n_events):
                r = self.region_sites[self.regions[e]]
                w.writerow([repr(float(self.times[e])), ";".join(map(str, r)),
                            ";".join(map(str, _decode(self.xi[e], len(r), self.q).tolist()))])


def _decode(code, k, q):
    return (int(code) // q ** np.arange(k - 1, -1, -1)) % q


class JumpKernel:
    """Per-state jump weights of a rate family on an enumerated volume.

    Entry ``(i, j)`` is region ``region[j]`` resampled to pattern ``xi[j]``,
    with weight density times the uniform region weight.  Self-jumps are kept.
    """

    def __init__(self, rates: RateFamily, space: StateSpace):
        W, tgt, reg, xi = [], [], [], []
        for k, r in enumerate(rates.regions):
            T = rates.table(k, space.configs) * rates.q ** -len(r)
            W.append(T)
            tgt.append(space.targets(r))
            reg.append(np.full(T.shape[1], k))
            xi.append(np.arange(T.shape[1]))
        self.weights = np.hstack(W)
        self.targets = np.hstack(tgt)
        self.region = np.concatenate(reg)
        self.xi = np.concatenate(xi)
        self.cum = np.cumsum(self.weights, axis=1)
        self.total = self.cum[:, -1].copy()
        self.rates = rates
        self.space = space


def gillespie_sample(rates: RateFamily, initial, T: float, seed: int, index: int = 0,
                     space: StateSpace | None = None, kernel: JumpKernel | None = None,
                     rng: np.random.Generator | None = None) -> Trajectory:
    """Exact continuous-time jump chain on ``[0, T]``.

    With ``space`` (or a prebuilt ``kernel``) the enumerated jump table is used;
    otherwise rates are evaluated locally at every step.
    """
    if T < 0:
        raise DomainError("horizon must be nonnegative")
    rng = trajectory_rng(seed, index) if rng is None else rng
    initial = np.asarray(initial, dtype=np.int8).copy()
    if kernel is None and space is not None:
        kernel = JumpKernel(rates, space)
    times, regs, xis, selfj = [], [], [], []
    t = 0.0
    if kernel is not None:
        state = kernel.space.index(initial)
        states = [state]
        while True:
            tot = kernel.total[state]
            if tot <= 0:
                break
            t += rng.standard_exponential() / tot
            if t > T:
                break
            j = int(np.searchsorted(kernel.cum[state], rng.random() * tot, side="right"))
            j = min(j, kernel.weights.shape[1] - 1)
            new = int(kernel.targets[state, j])
            times.append(t)
            regs.append(kernel.region[j])
            xis.append(kernel.xi[j])
            selfj.append(new == state)
            state = new
            states.append(state)
        states = np.array(states, dtype=np.int64)
    else:
        states = None
        cur = initial.copy()
        while True:
            W = [rates.table(k, cur[None, :])[0] * rates.q ** -len(r) for k, r in enumerate(rates.regions)]
            flat = np.concatenate(W)
            cum = np.cumsum(flat)
            tot = cum[-1]
            if tot <= 0:
                break
            t += rng.standard_exponential() / tot
            if t > T:
                break
            j = min(int(np.searchsorted(cum, rng.random() * tot, side="right")), len(flat) - 1)
            k = int(np.searchsorted(np.cumsum([len(w) for w in W]), j, side="right"))
            code = j - sum(len(w) for w in W[:k])
            r = rates.regions[k]
            pat = _decode(code, len(r), rates.q)
            times.append(t)
            regs.append(k)
            xis.append(code)
            selfj.append(bool(np.all(cur[list(r)] == pat)))
            cur[list(r)] = pat
    return Trajectory(initial, np.array(times), np.array(regs, dtype=np.int64), np.array(xis, dtype=np.int64),
                      float(T), rates.regions, rates.q, np.array(selfj, dtype=bool), states, seed, index)


def sample_stationary(mu, seed_or_rng, size=None):
    """Inverse-CDF draw(s) of state indices from ``mu``."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    cdf = np.cumsum(mu)
    cdf /= cdf[-1]
    u = rng.random(size)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(mu) - 1)
    return int(idx) if size is None else idx


def sample_ensemble(rates: RateFamily, space: StateSpace, T: float, n_paths: int, seed: int, mu=None,
                    initial=None, threads: int = 1, kernel: JumpKernel | None = None,
                    first_index: int = 0) -> list[Trajectory]:
    """``n_paths`` trajectories started from ``mu`` (drawn on the path's own stream) or ``initial``.

    Trajectory ``i`` uses stream ``first_index + i``; disjoint index ranges give
    independent ensembles under one master seed.
    """
    if (mu is None) == (initial is None):
        raise ValueError("give exactly one of mu or initial")
    kernel = JumpKernel(rates, space) if kernel is None else kernel

    def one(i):
        rng = trajectory_rng(seed, i)
        x0 = space.config(sample_stationary(mu, rng)) if mu is not None else np.asarray(initial)
        return gillespie_sample(rates, x0, T, seed, i, kernel=kernel, rng=rng)

    if threads <= 1:
        return [one(i) for i in range(first_index, first_index + n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, range(first_index, first_index + n_paths), chunksize=max(1, n_paths // (8 * threads))))


def reverse_trajectory(traj: Trajectory, T: float | None = None) -> Trajectory:
    """The path ``s -> eta((T - s)-)``: events mirrored at ``T`` with pre/post swapped."""
    T = traj.T if T is None else T
    if T != traj.T:
        raise DomainError(f"trajectory horizon {traj.T} differs from {T}")
    cfg = traj.configs()
    pre = np.array([encode(cfg[e:e + 1], traj.region_sites[traj.regions[e]], traj.q)[0]
                    for e in range(traj.n_events)], dtype=np.int64)
    return Trajectory(cfg[-1].copy(), (T - traj.times)[::-1].copy(), traj.regions[::-1].copy(), pre[::-1].copy(), T,
                      traj.region_sites, traj.q, traj.self_jump[::-1].copy(),
                      None if traj.states is None else traj.states[::-1].copy(), traj.seed, traj.index)


# ---------------------------------------------------------------------------
# exact engine


class ExactEngine:
    """Cached ``g_s = P_{T-s} f`` and the compensator antiderivative, for ``s`` in ``[0, T]``.

    ``L_semigroup`` generates the semigroup applied to ``f``; ``L_compensator``
    (default: the same) supplies the jump rates of the Bregman integrand.
    Both functions of ``s`` are stored as per-panel Chebyshev interpolants built
    from uniformization values, which makes the integral over any sub-interval
    exact up to the interpolation error (~1e-14 at the default panel width).
    """

    def __init__(self, space: StateSpace, L_semigroup, f, phi: PhiFunction, T: float, L_compensator=None,
                 degree: int = 16, panel_rate: float = 0.5):
        if T <= 0:
            raise DomainError("horizon must be positive")
        self.space, self.phi, self.T, self.degree = space, phi, float(T), degree
        self.L = L_semigroup
        self.L_comp = L_semigroup if L_compensator is None else L_compensator
        self.f = np.asarray(f, dtype=float)
        rate = max(float(np.abs(self.L.diagonal()).max(initial=0.0)), float(np.abs(self.L_comp.diagonal()).max(initial=0.0)), 1.0)
        self.panels = max(1, math.ceil(T * rate / panel_rate))
        self.h = T / self.panels
        u = cheb.chebpts1(degree + 1)
        s = (np.arange(self.panels)[:, None] + (u[None, :] + 1) / 2) * self.h
        G = semigroup_grid(self.L, self.f, (T - s).ravel())
        phi.check(G)
        I = integrand_vector(self.L_comp, phi, G)
        n = space.n
        G = G.reshape(self.panels, degree + 1, n)
        I = I.reshape(self.panels, degree + 1, n)
        self.cg = np.stack([cheb.chebfit(u, G[p], degree) for p in range(self.panels)])
        cI = np.stack([cheb.chebfit(u, I[p], degree) for p in range(self.panels)])
        self.cF = np.stack([cheb.chebint(cI[p], lbnd=-1, scl=self.h / 2) for p in range(self.panels)])
        ends = np.array([cheb.chebval(1.0, self.cF[p]) for p in range(self.panels)])  # (panels, n)
        self.offset = np.vstack([np.zeros(n), np.cumsum(ends, axis=0)[:-1]])

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        p = np.clip(np.floor(s / self.h).astype(np.int64), 0, self.panels - 1)
        return p, 2 * (s - p * self.h) / self.h - 1

    def g(self, states, s) -> np.ndarray:
        states, s = np.broadcast_arrays(np.asarray(states, dtype=np.int64), np.asarray(s, dtype=float))
        p, u = self._locate(s.ravel())
        V = cheb.chebvander(u, self.degree)
        return np.sum(V * self.cg[p, :, states.ravel()], axis=1).reshape(s.shape)

    def cumulative(self, states, s) -> np.ndarray:
        """``int_0^s integrand(state, r) dr`` with the state held fixed."""
        states, s = np.broadcast_arrays(np.asarray(states, dtype=np.int64), np.asarray(s, dtype=float))
        st, p = states.ravel(), None
        p, u = self._locate(s.ravel())
        V = cheb.chebvander(u, self.degree + 1)
        return (np.sum(V * self.cF[p, :, st], axis=1) + self.offset[p, st]).reshape(s.shape)

    def g_exact(self, s: float) -> np.ndarray:
        return semigroup_apply(self.L, self.f, self.T - s)

    def integrand(self, s: float) -> np.ndarray:
        return integrand_vector(self.L_comp, self.phi, self.g_exact(s))[0]


@dataclass
class ProcessPath:
    s: np.ndarray
    L: np.ndarray
    A: np.ndarray
    states: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return self.L - self.A

    def write_csv(self, path, header: dict | None = None):
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["s", "L", "A", "M"])
            for row in zip(self.s, self.L, self.A, self.M):
                w.writerow([repr(float(v)) for v in row])


@dataclass
class ProcessEnsemble:
    grid: np.ndarray
    L: np.ndarray        # (paths, grid)
    A: np.ndarray
    states: np.ndarray   # state index at each grid time
    direction: str

    @property
    def M(self) -> np.ndarray:
        return self.L - self.A

    def __len__(self):
        return len(self.L)

    def column(self, s: float) -> int:
        j = int(np.argmin(np.abs(self.grid - s)))
        if abs(self.grid[j] - s) > 1e-12:
            raise DomainError(f"time {s} is not on the ensemble grid")
        return j


def _oriented(traj: Trajectory, direction: str) -> Trajectory:
    if traj.states is None:
        raise DomainError("trajectorial evaluation needs an enumerated volume (trajectory states missing)")
    if direction == "reversed":
        return reverse_trajectory(traj)
    if direction == "forward":
        return traj
    raise ValueError("direction must be 'reversed' or 'forward'")


def _evaluate(paths: list[Trajectory], engine: ExactEngine, grid) -> tuple:
    T = engine.T
    grid = np.asarray(grid, dtype=float)
    starts = [np.concatenate([[0.0], p.times]) for p in paths]
    nseg = np.array([len(s) for s in starts])
    st = np.concatenate(starts)
    en = np.concatenate([np.append(s[1:], T) for s in starts])
    states = np.concatenate([p.states for p in paths])
    pid = np.repeat(np.arange(len(paths)), nseg)
    seg = engine.cumulative(states, en) - engine.cumulative(states, st)
    cs = np.cumsum(seg) - seg
    first = np.concatenate([[0], np.cumsum(nseg)[:-1]])
    A_start = cs - cs[first][pid]
    keys = pid * (T + 1.0) + st
    qk = (np.arange(len(paths))[:, None] * (T + 1.0) + grid[None, :]).ravel()
    j = np.searchsorted(keys, qk, side="right") - 1
    sg = states[j]
    sgrid = np.broadcast_to(grid, (len(paths), len(grid))).ravel()
    A = A_start[j] + engine.cumulative(sg, sgrid) - engine.cumulative(sg, st[j])
    L = engine.phi(engine.g(sg, sgrid))
    shape = (len(paths), len(grid))
    return L.reshape(shape), A.reshape(shape), sg.reshape(shape)


def trajectorial_process(traj: Trajectory, engine: ExactEngine, grid=None, direction: str = "reversed") -> ProcessPath:
    """``L(s) = Phi(g_s(eta_hat(s)))`` on a dense grid plus all event times, with ``A`` and ``M``.

    ``eta_hat`` is the reversed path; ``direction="forward"`` evaluates along the
    forward path instead (the negative control).
    """
    if abs(traj.T - engine.T) > 1e-12:
        raise DomainError("trajectory and engine horizons differ")
    path = _oriented(traj, direction)
    grid = np.linspace(0, engine.T, 101) if grid is None else np.asarray(grid, dtype=float)
    s = np.unique(np.concatenate([grid, path.times]))
    L, A, st = _evaluate([path], engine, s)
    return ProcessPath(s, L[0], A[0], st[0])


def compensator(traj: Trajectory, engine: ExactEngine, grid=None, direction: str = "reversed") -> tuple:
    """Nondecreasing compensator ``A`` on the grid (default: event times and ``T``)."""
    path = _oriented(traj, direction)
    grid = np.append(path.times, engine.T) if grid is None else np.asarray(grid, dtype=float)
    _, A, _ = _evaluate([path], engine, grid)
    return grid, A[0]


def process_ensemble(trajs: list[Trajectory], engine: ExactEngine, grid, direction: str = "reversed") -> ProcessEnsemble:
    paths = [_oriented(t, direction) for t in trajs]
    L, A, st = _evaluate(paths, engine, grid)
    return ProcessEnsemble(np.asarray(grid, dtype=float), L, A, st, direction)


# ---------------------------------------------------------------------------
# statistical tests


@dataclass
class TestReport:
    __test__ = False

    name: str
    n: int
    statistics: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool | None:
        if any(v is None for v in self.verdicts.values()):
            return None
        return all(self.verdicts.values())

    def as_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "passed": self.passed, "statistics": self.statistics,
                "intervals": {k: list(v) for k, v in self.intervals.items()}, "verdicts": self.verdicts,
                "warnings": self.warnings, "meta": self.meta}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")


def feature_matrix(space: StateSpace, states, sites, L_values=None) -> tuple[np.ndarray, list[str]]:
    """One-hot local states (state 0 dropped) at ``sites``, plus ``L`` itself."""
    cols, names = [], []
    cfg = space.configs[states]
    for x in sites:
        for v in range(1, space.q):
            cols.append((cfg[:, x] == v).astype(float))
            names.append(f"site{x}=={v}")
    if L_values is not None:
        cols.append(np.asarray(L_values, dtype=float))
        names.append("L")
    return np.column_stack(cols) if cols else np.zeros((len(states), 0)), names


def _mean_ci(x):
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


def martingale_test(ens: ProcessEnsemble, s: float, t: float, space: StateSpace, sites=(0,),
                    part: str = "M", name: str = "martingale") -> TestReport:
    """Increments of ``M`` (or ``L``) between ``s < t``: mean and feature covariances within 3 sigma of 0."""
    if not s < t:
        raise DomainError("need s < t")
    js, jt = ens.column(s), ens.column(t)
    X = ens.M if part == "M" else ens.L
    D = X[:, jt] - X[:, js]
    F, names = feature_matrix(space, ens.states[:, js], sites, ens.L[:, js])
    rep = TestReport(name, len(D), meta={"s": s, "t": t, "part": part, "direction": ens.direction,
                                          "sites": list(sites), "sigma": SIGMA})
    stats = {"mean": _mean_ci(D)}
    Dc = D - D.mean()
    for k, nm in enumerate(names):
        stats[f"cov[{nm}]"] = _mean_ci(Dc * (F[:, k] - F[:, k].mean()))
    underpowered = len(D) < MIN_ENSEMBLE
    if underpowered:
        rep.warnings.append(f"ensemble of {len(D)} paths is below {MIN_ENSEMBLE}; no verdict")
        warnings.warn(rep.warnings[-1])
    for k, (m, se) in stats.items():
        rep.statistics[k] = m
        rep.statistics[f"se:{k}"] = se
        rep.intervals[k] = (m - SIGMA * se, m + SIGMA * se)
        rep.verdicts[f"{k} contains 0"] = None if underpowered else bool(abs(m) <= SIGMA * se + 1e-14)
    return rep


def submartingale_test(ens: ProcessEnsemble, s: float, t: float, space: StateSpace, sites=(0,),
                       min_cell: int = 30) -> TestReport:
    """One-sided test of ``E[L(t) - L(s) | cell] >= 0`` plus the two-sided test on ``M``."""
    if not s < t:
        raise DomainError("need s < t")
    js, jt = ens.column(s), ens.column(t)
    D = ens.L[:, jt] - ens.L[:, js]
    rep = TestReport("submartingale", len(D), meta={"s": s, "t": t, "direction": ens.direction,
                                                    "sites": list(sites), "sigma": SIGMA})
    underpowered = len(D) < MIN_ENSEMBLE
    if underpowered:
        rep.warnings.append(f"ensemble of {len(D)} paths is below {MIN_ENSEMBLE}; no verdict")
        warnings.warn(rep.warnings[-1])
    cells = encode(space.configs[ens.states[:, js]], sites, space.q)
    groups = {"all": np.ones(len(D), dtype=bool)}
    for c in np.unique(cells):
        if (cells == c).sum() >= min_cell:
            groups[f"cell{int(c)}"] = cells == c
    for k, sel in groups.items():
        m, se = _mean_ci(D[sel])
        rep.statistics[f"increment[{k}]"] = m
        rep.statistics[f"se:increment[{k}]"] = se
        rep.intervals[f"increment[{k}]"] = (m - SIGMA * se, np.inf)
        rep.verdicts[f"increment[{k}] >= 0"] = None if underpowered else bool(m + SIGMA * se >= -1e-14)
    mart = martingale_test(ens, s, t, space, sites)
    for k, v in mart.verdicts.items():
        rep.verdicts[f"M: {k}"] = v
        rep.statistics[f"M:{k}"] = mart.statistics[k.replace(" contains 0", "")]
        rep.intervals[f"M:{k}"] = mart.intervals[k.replace(" contains 0", "")]
    return rep


def exact_martingale_check(space: StateSpace, L_forward, mu, engine: ExactEngine, s: float, t: float,
                           u: float | None = None) -> float:
    """Worst gap between ``E[g_t(eta_hat(t)) | eta_hat(u), eta_hat(s)]`` and ``g_s(eta_hat(s))``.

    Conditional expectations come from the forward chain in equilibrium:
    ``P(eta(T-t)=y, eta(T-s)=x, eta(T-u)=z) = mu(y) P_{t-s}(y,x) P_{s-u}(x,z)``.
    """
    u = s / 2 if u is None else u
    if not 0 <= u <= s < t <= engine.T:
        raise DomainError("need 0 <= u <= s < t <= T")
    P1 = transition_matrix(L_forward, t - s)
    P2 = transition_matrix(L_forward, s - u)
    gt, gs = engine.g_exact(t), engine.g_exact(s)
    a = mu[:, None] * P1                      # (y, x)
    num = (a * gt[:, None]).sum(axis=0)[:, None] * P2   # (x, z)
    den = a.sum(axis=0)[:, None] * P2
    ok = den > 1e-300
    cond = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return float(np.abs(cond - gs[:, None])[ok].max())


def occupancy(trajs: list[Trajectory], times, sites, space: StateSpace) -> np.ndarray:
    """Codes of the local configuration on ``sites`` at each time (``(paths, times)``)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((len(trajs), len(times)), dtype=np.int64)
    for i, tr in enumerate(trajs):
        k = np.searchsorted(tr.times, times, side="right")
        out[i] = encode(space.configs[tr.states[k]], sites, space.q)
    return out


def _homogeneity(a, b, min_expected=5.0):
    ka, kb = np.bincount(a), np.bincount(b)
    m = max(len(ka), len(kb))
    tab = np.vstack([np.pad(ka, (0, m - len(ka))), np.pad(kb, (0, m - len(kb)))]).astype(float)
    tab = tab[:, tab.sum(axis=0) > 0]
    exp = tab.sum(axis=0)[None, :] * tab.sum(axis=1)[:, None] / tab.sum()
    small = exp.min(axis=0) < min_expected
    if small.any():
        tab = np.hstack([tab[:, ~small], tab[:, small].sum(axis=1, keepdims=True)])
    if tab.shape[1] < 2:
        return 0.0, 1.0, tab.shape[1]
    stat, p, dof, _ = chi2_contingency(tab, correction=False)
    return float(stat), float(p), int(dof)


def two_time_battery(codes_a: np.ndarray, codes_b: np.ndarray, times, n_codes: int, alpha: float = 0.01,
                     pairs=None) -> TestReport:
    """Chi-square homogeneity of single- and two-time occupancy laws, Holm-corrected at ``alpha``."""
    times = list(times)
    m = len(times)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)] if pairs is None else pairs
    tests = {f"t={times[i]:g}": (codes_a[:, i], codes_b[:, i]) for i in range(m)}
    for i, j in pairs:
        tests[f"t={times[i]:g},{times[j]:g}"] = (codes_a[:, i] * n_codes + codes_a[:, j],
                                                 codes_b[:, i] * n_codes + codes_b[:, j])
    rep = TestReport("two_time_chi2", min(len(codes_a), len(codes_b)), meta={"alpha": alpha, "holm": True})
    pv = {}
    for k, (a, b) in tests.items():
        stat, p, dof = _homogeneity(a, b)
        rep.statistics[f"chi2[{k}]"] = stat
        rep.statistics[f"dof[{k}]"] = dof
        rep.statistics[f"p[{k}]"] = p
        pv[k] = p
    order = sorted(pv, key=pv.get)
    rejected = False
    for r, k in enumerate(order):
        rejected = rejected or pv[k] < alpha / (len(order) - r)
        rep.verdicts[f"{k} homogeneous"] = not rejected
    return rep


def exact_occupancy_law(mu, L, space: StateSpace, sites, times) -> tuple[list, dict]:
    """Exact single- and two-time laws of local codes on ``sites`` for the chain started in ``mu``.

    Returns per-time marginals and a dict ``(i, j) -> joint[a, b]`` for ``i < j``.
    """
    times = np.asarray(times, dtype=float)
    codes = encode(space.configs, sites, space.q)
    K = space.q ** len(sites)
    B = np.zeros((space.n, K))
    B[np.arange(space.n), codes] = 1.0
    dists = [mu @ transition_matrix(L, t) if t > 0 else np.asarray(mu, dtype=float) for t in times]
    marg = [d @ B for d in dists]
    joint = {}
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            P = transition_matrix(L, times[j] - times[i])
            joint[(i, j)] = B.T @ (dists[i][:, None] * P) @ B
    return marg, joint


def _gof(counts, probs, min_expected=5.0):
    exp = probs * counts.sum()
    keep = exp >= min_expected
    obs = np.append(counts[keep], counts[~keep].sum())
    ex = np.append(exp[keep], exp[~keep].sum())
    if ex[-1] == 0:
        obs, ex = obs[:-1], ex[:-1]
    if len(ex) < 2:
        return 0.0, 1.0, 0
    ex = ex * obs.sum() / ex.sum()
    stat, p = chisquare(obs, ex)
    return float(stat), float(p), len(ex) - 1


def law_battery(codes: np.ndarray, marg, joint, times, n_codes: int, alpha: float = 0.01) -> TestReport:
    """Chi-square goodness of fit of sampled occupancy codes against exact laws, Holm-corrected."""
    rep = TestReport("occupancy_law", len(codes), meta={"alpha": alpha, "holm": True})
    pv = {}
    for i, t in enumerate(times):
        k = f"t={t:g}"
        stat, p, dof = _gof(np.bincount(codes[:, i], minlength=n_codes).astype(float), marg[i])
        rep.statistics.update({f"chi2[{k}]": stat, f"dof[{k}]": dof, f"p[{k}]": p})
        pv[k] = p
    for (i, j), P in joint.items():
        k = f"t={times[i]:g},{times[j]:g}"
        c = np.bincount(codes[:, i] * n_codes + codes[:, j], minlength=n_codes**2).astype(float)
        stat, p, dof = _gof(c, P.ravel())
        rep.statistics.update({f"chi2[{k}]": stat, f"dof[{k}]": dof, f"p[{k}]": p})
        pv[k] = p
    order = sorted(pv, key=pv.get)
    rejected = False
    for r, k in enumerate(order):
        rejected = rejected or pv[k] < alpha / (len(order) - r)
        rep.verdicts[f"{k} fits"] = not rejected
    return rep
