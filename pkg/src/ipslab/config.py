"""Model files and experiment configs (YAML), with errors that cite line and field.

The full schema is documented in ``docs/formats.md``.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import dynamics
from .dynamics import RateFamily
from .entropy import get_phi
from .exact import indicator_observable, local_table_observable, magnetization, spin_observable
from .model import Potential, SiteGraph, Specification, StateSpace, Term, ising, potts, zero_potential

GEOMETRIES = ("ring", "chain", "lattice", "torus", "graph")
POTENTIALS = ("ising", "potts", "zero", "terms")
OBSERVABLES = ("spin", "indicator", "magnetization", "energy", "table")
SUBCOMMANDS = ("audit", "stationary", "reverse", "duality", "decay", "simulate", "trajectorial")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = "", line: int | None = None, source: str = ""):
        self.field, self.line, self.source = field, line, source
        where = ", ".join(p for p in (source, f"line {line}" if line else "", f"field {field}" if field else "") if p)
        super().__init__(f"{where}: {message}" if where else message)


# ---------------------------------------------------------------------------
# YAML with positions


def _marks(node, path="", out=None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = f"{path}.{k.value}" if path else str(k.value)
            out[p] = k.start_mark.line + 1
            _marks(v, p, out)
            out[p] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, f"{path}.{i}" if path else str(i), out)
    return out


class Doc:
    """Parsed mapping plus a field-path -> line table for error reporting."""

    def __init__(self, text: str, source: str = "<string>"):
        self.source = source
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"malformed YAML: {getattr(e, 'problem', e)}", "",
                              mark.line + 1 if mark else None, source) from None
        if not isinstance(self.data, dict):
            raise ConfigError("top level must be a mapping", "", 1, source)
        self.lines = _marks(node)

    def line(self, path: str) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rpartition(".")[0]
        return self.lines.get("")

    def error(self, path: str, message: str) -> ConfigError:
        return ConfigError(message, path, self.line(path), self.source)

    def get(self, path: str, default=KeyError):
        cur = self.data
        for part in path.split("."):
            if isinstance(cur, dict) and part in cur:
                cur = cur[part]
            elif isinstance(cur, list) and part.isdigit() and int(part) < len(cur):
                cur = cur[int(part)]
            else:
                if default is KeyError:
                    raise self.error(path, "required field is missing")
                return default
        return cur

    def number(self, path, default=KeyError, kind=float, lo=None, positive=False):
        v = self.get(path, default)
        if v is default and default is not KeyError:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
            raise self.error(path, f"expected {'an integer' if kind is int else 'a number'}, got {v!r}")
        if not np.isfinite(v):
            raise self.error(path, "must be finite")
        if positive and v <= 0:
            raise self.error(path, f"must be positive, got {v}")
        if lo is not None and v < lo:
            raise self.error(path, f"must be >= {lo}, got {v}")
        return kind(v)

    def choice(self, path, options, default=KeyError):
        v = self.get(path, default)
        if v not in options:
            raise self.error(path, f"unknown value {v!r}; choose one of {', '.join(map(str, options))}")
        return v


def _key(text, q, doc, path, n=None):
    try:
        parts = [int(p) for p in str(text).replace(",", " ").split()]
    except ValueError:
        raise doc.error(path, f"table key {text!r} must be space-separated local states") from None
    if n is not None and len(parts) != n:
        raise doc.error(path, f"table key {text!r} needs {n} local states")
    if any(not 0 <= p < q for p in parts):
        raise doc.error(path, f"table key {text!r} has a local state outside 0..{q - 1}")
    return tuple(parts)


def _code(pattern, q):
    c = 0
    for p in pattern:
        c = c * q + p
    return c


# ---------------------------------------------------------------------------
# model files


@dataclass(eq=False)
class Model:
    name: str
    graph: SiteGraph
    q: int
    potential: Potential
    rates: RateFamily
    data: dict
    source: str = "<string>"
    rate_beta: float | None = None

    @cached_property
    def spec(self) -> Specification:
        return Specification(self.potential)

    @cached_property
    def space(self) -> StateSpace:
        return StateSpace(self.graph, self.q)

    @cached_property
    def hash(self) -> str:
        return model_hash(self.data)

    def site(self, label) -> int:
        try:
            return self.graph.labels.index(label)
        except ValueError:
            raise KeyError(label) from None


def model_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _graph(doc: Doc, boundary: str) -> SiteGraph:
    kind = doc.choice("geometry.type", GEOMETRIES)
    if kind in ("ring", "torus") and boundary != "periodic":
        raise doc.error("boundary", f"geometry {kind} is periodic; boundary must be 'periodic'")
    if kind in ("chain",) and boundary == "periodic":
        raise doc.error("boundary", "a chain has open ends; use boundary free or fixed (or geometry ring)")
    if kind == "ring":
        return SiteGraph.ring(doc.number("geometry.sites", kind=int, lo=2))
    if kind == "chain":
        return SiteGraph.chain(doc.number("geometry.sites", kind=int, lo=1))
    if kind == "torus":
        return SiteGraph.torus(doc.number("geometry.side", kind=int, lo=2), doc.number("geometry.dim", 2, kind=int, lo=1))
    if kind == "lattice":
        return SiteGraph.lattice(doc.number("geometry.side", kind=int, lo=1), doc.number("geometry.dim", kind=int, lo=1),
                                 periodic=boundary == "periodic")
    if boundary == "fixed":
        raise doc.error("boundary", "fixed boundaries need a lattice geometry; encode ghost spins as single-site terms")
    sites = doc.get("geometry.sites")
    if isinstance(sites, int) and not isinstance(sites, bool):
        labels = list(range(sites))
    elif isinstance(sites, list):
        labels = sites
    else:
        raise doc.error("geometry.sites", "expected a site count or a list of site labels")
    if len(set(map(str, labels))) != len(labels):
        raise doc.error("geometry.sites", "site labels must be distinct")
    pos = {lab: i for i, lab in enumerate(labels)}
    edges = []
    for i, e in enumerate(doc.get("geometry.edges", [])):
        p = f"geometry.edges.{i}"
        if not isinstance(e, list) or len(e) != 2:
            raise doc.error(p, "each edge is a pair [a, b]")
        for lab in e:
            if lab not in pos:
                raise doc.error(p, f"edge references unknown site {lab!r}")
        if e[0] == e[1]:
            raise doc.error(p, f"self-loop at site {e[0]!r}")
        edges.append((pos[e[0]], pos[e[1]]))
    return SiteGraph.from_edges(len(labels), edges, labels)


def _sites(doc, path, graph) -> tuple[int, ...]:
    raw = doc.get(path)
    if not isinstance(raw, list) or not raw:
        raise doc.error(path, "expected a nonempty list of sites")
    out = []
    for lab in raw:
        if lab not in graph.labels:
            raise doc.error(path, f"unknown site {lab!r}")
        out.append(graph.labels.index(lab))
    if len(set(out)) != len(out):
        raise doc.error(path, "sites repeat")
    return tuple(out)


def _potential(doc: Doc, graph, q, beta, boundary) -> Potential:
    kind = doc.choice("potential.type", POTENTIALS)
    bstate = None
    if boundary == "fixed":
        bstate = doc.number("boundary_state", kind=int, lo=0)
        if bstate >= q:
            raise doc.error("boundary_state", f"must be a local state in 0..{q - 1}")
    if kind == "ising":
        if q != 2:
            raise doc.error("potential.type", "ising needs alphabet 2")
        return ising(graph, beta, doc.number("potential.coupling", 1.0), doc.number("potential.field", 0.0),
                     boundary, bstate)
    if kind == "potts":
        return potts(graph, q, beta, doc.number("potential.coupling", 1.0), boundary, bstate)
    if kind == "zero":
        return zero_potential(graph, q, beta)
    terms = []
    raw = doc.get("potential.terms")
    if not isinstance(raw, list):
        raise doc.error("potential.terms", "expected a list of terms")
    for i in range(len(raw)):
        p = f"potential.terms.{i}"
        sites = _sites(doc, f"{p}.sites", graph)
        table = np.zeros((q,) * len(sites))
        entries = doc.get(f"{p}.table")
        if not isinstance(entries, dict):
            raise doc.error(f"{p}.table", "expected a mapping from local-state tuples to energies")
        for k in entries:
            table[_key(k, q, doc, f"{p}.table.{k}", len(sites))] = doc.number(f"{p}.table.{k}")
        terms.append(Term(sites, table))
    return Potential(graph, q, beta, tuple(terms), boundary, "terms")


def _rates(doc: Doc, graph, q, potential) -> tuple[RateFamily, float | None]:
    fam = doc.choice("dynamics.family", dynamics.FAMILIES)
    rate_beta = None
    if not isinstance(doc.get("dynamics"), dict):
        raise doc.error("dynamics", "expected a mapping with a 'family' field")
    if "beta" in doc.get("dynamics"):
        rate_beta = doc.number("dynamics.beta", lo=0.0)
        potential = potential.with_beta(rate_beta)
    spec = Specification(potential)
    if fam == "heat_bath":
        return dynamics.heat_bath(spec), rate_beta
    if fam == "metropolis":
        return dynamics.metropolis(spec), rate_beta
    if fam == "exponential":
        return dynamics.exponential_rates(spec), rate_beta
    if fam == "cyclic_rotation":
        if q < 3:
            raise doc.error("dynamics.family", "cyclic_rotation needs alphabet >= 3")
        return dynamics.cyclic_rotation(graph, q), rate_beta
    if fam == "block_heat_bath":
        blocks = doc.get("dynamics.blocks")
        if not isinstance(blocks, list) or not blocks:
            raise doc.error("dynamics.blocks", "expected a list of site lists")
        return dynamics.block_heat_bath(spec, [_sites(doc, f"dynamics.blocks.{i}", graph) for i in range(len(blocks))]), rate_beta
    entries = doc.get("dynamics.regions")
    if not isinstance(entries, list) or not entries:
        raise doc.error("dynamics.regions", "table dynamics need a list of regions")
    regions, pats, tables = [], [], []
    for i in range(len(entries)):
        p = f"dynamics.regions.{i}"
        if not isinstance(entries[i], dict):
            raise doc.error(p, "each region entry is a mapping with region and rates")
        r = _sites(doc, f"{p}.region", graph)
        ps = _sites(doc, f"{p}.pattern_sites", graph) if "pattern_sites" in entries[i] else r
        tab = np.zeros((q ** len(ps), q ** len(r)))
        rates = doc.get(f"{p}.rates")
        if not isinstance(rates, dict):
            raise doc.error(f"{p}.rates", "expected a mapping 'pattern -> xi': density")
        for k in rates:
            kp = f"{p}.rates.{k}"
            if "->" not in str(k):
                raise doc.error(kp, f"key {k!r} must read 'pattern -> xi'")
            a, b = str(k).split("->")
            val = doc.number(kp, lo=0.0)
            tab[_code(_key(a, q, doc, kp, len(ps)), q), _code(_key(b, q, doc, kp, len(r)), q)] = val
        regions.append(r)
        pats.append(ps)
        tables.append(tab)
    return dynamics.table_family(graph, q, regions, pats, tables), rate_beta


def parse_model(text: str, source: str = "<string>") -> Model:
    return model_from_doc(Doc(text, source))


def model_from_doc(doc: Doc, prefix: str = "") -> Model:
    if prefix:
        sub = Doc.__new__(Doc)
        sub.source, sub.data = doc.source, doc.get(prefix)
        if not isinstance(sub.data, dict):
            raise doc.error(prefix, "expected a model mapping or a file path")
        sub.lines = {k[len(prefix) + 1:] if k != prefix else "": v for k, v in doc.lines.items()
                     if k == prefix or k.startswith(prefix + ".")}
        doc = sub
    q = doc.number("alphabet", kind=int, lo=2)
    beta = doc.number("beta", lo=0.0)
    boundary = doc.choice("boundary", ("periodic", "free", "fixed"))
    graph = _graph(doc, boundary)
    potential = _potential(doc, graph, q, beta, boundary)
    rates, rate_beta = _rates(doc, graph, q, potential)
    name = str(doc.get("name", Path(doc.source).stem))
    return Model(name, graph, q, potential, rates, doc.data, doc.source, rate_beta)


def load_model(path) -> Model:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read model file: {e.strerror}", "", None, str(path)) from None
    return parse_model(text, str(path))


# ---------------------------------------------------------------------------
# experiment configs


@dataclass
class Observable:
    name: str
    values: np.ndarray


@dataclass
class ExperimentConfig:
    model: Model
    source: str
    seed: int | None = None
    output: Path = Path("out")
    threads: int = 1
    phi: tuple[str, ...] = ("square",)
    observables: list = field(default_factory=list)
    T: float | None = None
    t_grid: np.ndarray | None = None
    ensemble: int | None = None
    test_s: float | None = None
    test_t: float | None = None
    test_sites: tuple[int, ...] = (0,)
    alpha: float = 0.01
    checks: tuple[str, ...] = SUBCOMMANDS
    exports: int = 5
    data: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)

    def require(self, name: str, command: str):
        if getattr(self, name) is None:
            raise ConfigError(f"'{name}' is required for '{command}' (no default is assumed)", name,
                              None, self.source)
        return getattr(self, name)

    def observable_list(self) -> list[Observable]:
        if self.observables:
            return self.observables
        return [Observable("spin0", spin_observable(self.model.space, 0))]


def _observables(doc: Doc, model: Model) -> list[Observable]:
    out = []
    raw = doc.get("observables", [])
    if not isinstance(raw, list):
        raise doc.error("observables", "expected a list")
    for i, item in enumerate(raw):
        p = f"observables.{i}"
        if not isinstance(item, dict):
            raise doc.error(p, "each observable is a mapping with a 'type' field")
        kind = doc.choice(f"{p}.type", OBSERVABLES)
        name = str(doc.get(f"{p}.name", f"{kind}{i}"))
        space = model.space
        if kind in ("spin", "indicator"):
            lab = doc.get(f"{p}.site")
            if lab not in model.graph.labels:
                raise doc.error(f"{p}.site", f"unknown site {lab!r}")
            x = model.site(lab)
            if kind == "spin":
                vals = spin_observable(space, x)
            else:
                st = doc.number(f"{p}.state", kind=int, lo=0)
                if st >= model.q:
                    raise doc.error(f"{p}.state", f"must be a local state in 0..{model.q - 1}")
                vals = indicator_observable(space, x, st)
        elif kind == "magnetization":
            sites = _sites(doc, f"{p}.sites", model.graph) if "sites" in item else None
            vals = magnetization(space, sites)
        elif kind == "energy":
            vals = model.potential.energy(space.configs)
        else:
            sites = _sites(doc, f"{p}.sites", model.graph)
            tab = np.zeros(model.q ** len(sites))
            entries = doc.get(f"{p}.values")
            if not isinstance(entries, dict):
                raise doc.error(f"{p}.values", "expected a mapping from local-state tuples to values")
            for k in entries:
                tab[_code(_key(k, model.q, doc, f"{p}.values.{k}", len(sites)), model.q)] = doc.number(f"{p}.values.{k}")
            vals = local_table_observable(space, sites, tab)
        out.append(Observable(name, np.asarray(vals, dtype=float)))
    names = [o.name for o in out]
    if len(set(names)) != len(names):
        raise doc.error("observables", "observable names must be distinct")
    return out


def _grid(doc: Doc, T):
    raw = doc.get("t_grid", None)
    if raw is None:
        return None
    if isinstance(raw, dict):
        g = np.linspace(doc.number("t_grid.start", lo=0.0), doc.number("t_grid.stop", lo=0.0),
                        doc.number("t_grid.num", kind=int, lo=2))
    elif isinstance(raw, list):
        g = np.array([doc.number(f"t_grid.{i}", lo=0.0) for i in range(len(raw))])
    else:
        raise doc.error("t_grid", "expected a list of times or {start, stop, num}")
    if len(g) < 2 or np.any(np.diff(g) <= 0):
        raise doc.error("t_grid", "times must be strictly increasing (at least two)")
    if T is not None and g[-1] > T + 1e-12:
        raise doc.error("t_grid", f"grid exceeds the horizon T = {T}")
    return g


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    doc = Doc(text, source)
    if "model" not in doc.data:
        if "geometry" in doc.data:
            model = model_from_doc(doc)
            return ExperimentConfig(model, source, data=doc.data, lines=doc.lines)
        raise doc.error("model", "required field is missing (a model file path or an inline model mapping)")
    ref = doc.get("model")
    if isinstance(ref, str):
        path = Path(source).parent / ref
        try:
            model = load_model(path)
        except ConfigError:
            raise
        except OSError as e:
            raise doc.error("model", f"cannot read {path}: {e}") from None
    else:
        model = model_from_doc(doc, "model")
    cfg = ExperimentConfig(model, source, data=doc.data, lines=doc.lines)
    if "seed" in doc.data:
        cfg.seed = doc.number("seed", kind=int, lo=0)
    cfg.output = Path(str(doc.get("output", "out")))
    if not cfg.output.is_absolute():
        cfg.output = Path(os.path.normpath(Path(source).parent / cfg.output))
    cfg.threads = doc.number("threads", 1, kind=int, lo=1)
    phis = doc.get("phi", ["square"])
    phis = [phis] if isinstance(phis, str) else phis
    for i, ph in enumerate(phis):
        try:
            get_phi(str(ph))
        except ValueError as e:
            raise doc.error(f"phi.{i}" if isinstance(doc.get("phi", None), list) else "phi", str(e)) from None
    cfg.phi = tuple(map(str, phis))
    cfg.observables = _observables(doc, model)
    if "T" in doc.data:
        cfg.T = doc.number("T", positive=True)
    cfg.t_grid = _grid(doc, cfg.T)
    if "ensemble" in doc.data:
        cfg.ensemble = doc.number("ensemble", kind=int, lo=1)
    if "tests" in doc.data:
        if not isinstance(doc.get("tests"), dict):
            raise doc.error("tests", "expected a mapping with s, t, sites, alpha")
        cfg.test_s = doc.number("tests.s", None, lo=0.0)
        cfg.test_t = doc.number("tests.t", None, lo=0.0)
        if "sites" in doc.get("tests"):
            cfg.test_sites = _sites(doc, "tests.sites", model.graph)
        cfg.alpha = doc.number("tests.alpha", 0.01, positive=True)
        if cfg.test_s is not None and cfg.test_t is not None and not cfg.test_s < cfg.test_t:
            raise doc.error("tests.t", "need tests.s < tests.t")
        if cfg.T is not None and cfg.test_t is not None and cfg.test_t > cfg.T:
            raise doc.error("tests.t", f"exceeds the horizon T = {cfg.T}")
    if "checks" in doc.data:
        raw = doc.get("checks")
        if not isinstance(raw, list):
            raise doc.error("checks", "expected a list of subcommand names")
        cfg.checks = tuple(doc.choice(f"checks.{i}", SUBCOMMANDS) for i in range(len(raw)))
    cfg.exports = doc.number("exports", 5, kind=int, lo=0)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", "", None, str(path)) from None
    return parse_config(text, str(path))
