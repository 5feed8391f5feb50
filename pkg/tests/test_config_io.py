import json
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ising_ring
from ipslab import __version__
from ipslab.config import ConfigError, load_config, load_model, model_hash, parse_config, parse_model
from ipslab.exact import build_generator
from ipslab.io import provenance, read_coo, read_header, read_vector, write_coo, write_report, write_vector

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

RING = """\
name: ring
alphabet: 2
geometry:
  type: ring
  sites: 4
boundary: periodic
beta: 0.5
potential:
  type: ising
dynamics:
  family: heat_bath
"""


def error_of(text, parser=parse_model):
    with pytest.raises(ConfigError) as e:
        parser(text, "m.yaml")
    return e.value


def test_yaml_model_matches_hand_built():
    m = parse_model(RING)
    b = ising_ring(4, 0.5)
    assert abs(build_generator(m.rates, m.space) - b.L).max() <= 1e-15
    assert m.spec.beta == 0.5 and m.q == 2 and m.name == "ring"


@pytest.mark.parametrize("path", sorted((CONFIGS / "models").glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_models_load(path):
    m = load_model(path)
    assert m.space.n == m.q ** m.graph.n_sites
    assert len(m.hash) == 16


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.model.hash == load_model(CONFIGS / "models" / f"{cfg.model.name}.yaml").hash


@pytest.mark.parametrize("edit,field,line", [
    (("beta: 0.5", "beta: hot"), "beta", 7),
    (("  family: heat_bath", "  family: glauber"), "dynamics.family", 11),
    (("  sites: 4", "  sites: -4"), "geometry.sites", 5),
    (("  type: ising", "  type: xy"), "potential.type", 9),
    (("alphabet: 2", "alphabet: 1"), "alphabet", 2),
])
def test_model_errors_cite_line_and_field(edit, field, line):
    err = error_of(RING.replace(*edit))
    assert err.field == field and err.line == line
    assert f"line {line}" in str(err) and field in str(err) and "m.yaml" in str(err)


def test_missing_field_is_named():
    err = error_of(RING.replace("beta: 0.5\n", ""))
    assert err.field == "beta" and "missing" in str(err)


def test_malformed_yaml_reports_line():
    err = error_of(RING + "dynamics: [unclosed\n")
    assert err.line is not None and "malformed" in str(err)


def test_table_dynamics_from_yaml():
    text = RING.replace("  family: heat_bath", """\
  family: table
  regions:
    - region: [0]
      pattern_sites: [1]
      rates: {"0 -> 1": 2.0, "1 -> 0": 0.5}""")
    m = parse_model(text)
    L = build_generator(m.rates, m.space).toarray()
    # site 0 goes 0 -> 1 at rate 2 * (1/2) when site 1 is 0; site 0 is the most significant digit
    assert L[0b0000, 0b1000] == pytest.approx(1.0)
    assert L[0b1100, 0b0100] == pytest.approx(0.25)
    assert L[0b0100, 0b1100] == 0.0


def test_table_dynamics_bad_key():
    text = RING.replace("  family: heat_bath", """\
  family: table
  regions:
    - region: [0]
      rates: {"0 to 1": 2.0}""")
    err = error_of(text)
    assert err.field == "dynamics.regions.0.rates.0 to 1" and err.line == 14


def test_config_errors():
    base = "model: models/ising_ring4.yaml\nT: 2.0\n"
    src = str(CONFIGS / "x.yaml")
    with pytest.raises(ConfigError, match="tests.t"):
        parse_config(base + "tests: {s: 1.5, t: 0.5}\n", src)
    with pytest.raises(ConfigError, match="t_grid"):
        parse_config(base + "t_grid: [0.0, 3.0]\n", src)
    with pytest.raises(ConfigError, match="checks.0"):
        parse_config(base + "checks: [everything]\n", src)
    with pytest.raises(ConfigError, match="phi"):
        parse_config(base + "phi: cosh\n", src)
    with pytest.raises(ConfigError, match="observables.0.site"):
        parse_config(base + "observables: [{type: spin, site: 9}]\n", src)
    with pytest.raises(ConfigError, match="field model"):
        parse_config("seed: 1\n", src)
    cfg = parse_config(base, src)
    with pytest.raises(ConfigError, match="ensemble"):
        cfg.require("ensemble", "simulate")


def test_inline_model_and_defaults():
    text = "model:\n" + "".join("  " + ln + "\n" for ln in RING.splitlines()) + "seed: 3\n"
    cfg = parse_config(text, "/tmp/c.yaml")
    assert cfg.seed == 3 and cfg.threads == 1 and cfg.phi == ("square",)
    assert cfg.output == Path("/tmp/out")
    assert [o.name for o in cfg.observable_list()] == ["spin0"]
    assert cfg.model.hash == parse_model(RING).hash
    err = error_of("model:\n  alphabet: 2\n  beta: x\n", parse_config)
    assert err.field == "model.beta" or err.field == "beta"
    assert err.line == 3


def test_model_hash_is_stable_and_sensitive():
    a = parse_model(RING)
    # key order and comments do not change the hash
    shuffled = "# comment\nbeta: 0.5\n" + RING.replace("beta: 0.5\n", "")
    assert parse_model(shuffled).hash == a.hash
    assert parse_model(RING.replace("beta: 0.5", "beta: 0.6")).hash != a.hash
    assert model_hash({"b": 1, "a": 2}) == model_hash({"a": 2, "b": 1})


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 12), density=st.floats(0, 1), seed=st.integers(0, 1000))
def test_coo_round_trip(tmp_path_factory, n, density, seed):
    A = sp.random(n, n, density=density, random_state=seed, format="csr") * 3.7 - sp.identity(n) / 3
    path = tmp_path_factory.mktemp("coo") / "L.csv"
    write_coo(path, A, provenance("abc", seed))
    B = read_coo(path)
    assert B.shape == A.shape
    assert abs(B - A).max() == 0.0 if A.nnz else B.nnz == 0


def test_vector_round_trip_and_header(tmp_path):
    b = ising_ring(3, 0.5)
    path = tmp_path / "mu.csv"
    write_vector(path, b.mu, b.space.configs, provenance("deadbeef", 7, kind="mu"), name="mu")
    np.testing.assert_array_equal(read_vector(path), b.mu)
    h = read_header(path)
    assert h == {"model_hash": "deadbeef", "seed": "7", "version": __version__, "kind": "mu"}
    assert path.read_text().splitlines()[4] == "index,config,mu"


def test_header_without_seed(tmp_path):
    path = tmp_path / "L.csv"
    write_coo(path, sp.identity(2), provenance("h"))
    assert read_header(path)["seed"] == "none" and read_header(path)["shape"] == "2x2"


def test_report_json(tmp_path):
    path = tmp_path / "r.json"
    write_report(path, {"value": np.float64(1.5), "flag": np.bool_(True), "inf": np.inf, "arr": np.arange(2)},
                 provenance("h", 1))
    d = json.loads(path.read_text())
    assert d["provenance"]["model_hash"] == "h"
    assert d["value"] == 1.5 and d["flag"] is True and d["inf"] == "inf" and d["arr"] == [0, 1]
