"""Ensemble means of the entropy process, its compensator and the martingale part.

Samples a stationary ensemble from a model file, evaluates L, A and M = L - A
along reversed paths on a time grid, and writes their means with standard
errors.  With ``--forward`` the same is done along forward paths with forward
compensator rates (the control that should not be a martingale for
irreversible dynamics).

    python scripts/trajectorial_curves.py configs/models/rotation_q3.yaml --phi square --forward
"""
import argparse
import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ipslab.config import load_model
from ipslab.entropy import get_phi, phi_entropy, shift_positive
from ipslab.exact import adjoint_generator, build_generator, semigroup_apply, spin_observable, stationary_measure
from ipslab.io import provenance
from ipslab.simulate import ExactEngine, process_ensemble, sample_ensemble


@dataclass
class CurveConfig:
    model: Path
    phi: str = "square"
    T: float = 2.0
    paths: int = 10_000
    grid: int = 41
    seed: int = 1
    threads: int = 1
    forward: bool = False
    output: Path = Path("out/scripts")


def observable(model):
    space = model.space
    return spin_observable(space, 0) if model.q == 2 else (space.configs[:, 0] == 0).astype(float)


def write(path, header, grid, ens, target=None):
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["s", "mean_L", "se_L", "mean_A", "se_A", "mean_M", "se_M", "exact_mean_L"])
        n = len(ens)
        for j, s in enumerate(grid):
            row = [s]
            for X in (ens.L, ens.A, ens.M):
                row += [X[:, j].mean(), X[:, j].std(ddof=1) / np.sqrt(n)]
            row.append("" if target is None else target[j])
            w.writerow([repr(float(v)) if v != "" else v for v in row])


def run(cfg: CurveConfig):
    model = load_model(cfg.model)
    phi = get_phi(cfg.phi)
    L = build_generator(model.rates, model.space)
    mu = stationary_measure(L)
    L_adj = adjoint_generator(L, mu)
    f = observable(model)
    if np.isfinite(phi.lower):
        f = shift_positive(f)[0]
    grid = np.linspace(0, cfg.T, cfg.grid)
    t0 = time.perf_counter()
    trajs = sample_ensemble(model.rates, model.space, cfg.T, cfg.paths, cfg.seed, mu=mu, threads=cfg.threads)
    print(f"sampled {cfg.paths} paths in {time.perf_counter() - t0:.1f} s")
    eng = ExactEngine(model.space, L_adj, f, phi, cfg.T)
    ens = process_ensemble(trajs, eng, grid)
    exact = np.array([mu @ phi(semigroup_apply(L_adj, f, cfg.T - s)) for s in grid])
    cfg.output.mkdir(parents=True, exist_ok=True)
    header = provenance(model.hash, cfg.seed, phi=cfg.phi, paths=cfg.paths, T=cfg.T)
    out = cfg.output / f"trajectorial_{model.name}_{cfg.phi}.csv"
    write(out, dict(header, direction="reversed"), grid, ens, exact)
    drop = phi_entropy(mu, phi, f) - phi_entropy(mu, phi, semigroup_apply(L_adj, f, cfg.T))
    se = ens.A[:, -1].std(ddof=1) / np.sqrt(len(ens))
    print(f"E[A(T)] = {ens.A[:, -1].mean():.5f} +- {se:.1e}; entropy drop {drop:.5f}")
    dM = ens.M - ens.M[:, :1]
    z = np.abs(dM[:, 1:].mean(0)) / (dM[:, 1:].std(0, ddof=1) / np.sqrt(len(ens)))
    print(f"largest |E[M(s) - M(0)]| in standard errors: {z.max():.2f}")
    print(f"wrote {out}")
    if cfg.forward:
        fwd = ExactEngine(model.space, L_adj, f, phi, cfg.T, L_compensator=L)
        ens_f = process_ensemble(trajs, fwd, grid, "forward")
        out_f = cfg.output / f"trajectorial_{model.name}_{cfg.phi}_forward.csv"
        write(out_f, dict(header, direction="forward"), grid, ens_f)
        print(f"wrote {out_f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("model", type=Path)
    p.add_argument("--phi", default="square")
    p.add_argument("--T", type=float, default=2.0)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--forward", action="store_true")
    p.add_argument("--output", type=Path, default=Path("out/scripts"))
    a = p.parse_args()
    run(CurveConfig(a.model, a.phi, a.T, a.paths, a.grid, a.seed, a.threads, a.forward, a.output))


if __name__ == "__main__":
    main()
