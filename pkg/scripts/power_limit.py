"""Convergence of (I - t/n L)^{-n} f to exp(tL) f, with the leading error term.

The error of the implicit-Euler power behaves like t^2 / (2n) ||L^2 exp(tL) f||;
the script prints both so the first-order rate and its constant can be read off.

    python scripts/power_limit.py configs/models/ising_ring4.yaml --t 1.0
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from ipslab.config import load_model
from ipslab.exact import build_generator, magnetization, resolvent_power_limit_check, semigroup_apply
from ipslab.io import provenance


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("model", type=Path)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=Path("out/scripts"))
    a = p.parse_args()
    model = load_model(a.model)
    L = build_generator(model.rates, model.space)
    rng = np.random.default_rng(a.seed)
    cases = {"magnetization": magnetization(model.space), "random": rng.normal(size=model.space.n)}
    a.output.mkdir(parents=True, exist_ok=True)
    out = a.output / f"power_limit_{model.name}.csv"
    with open(out, "w", newline="") as fh:
        for k, v in provenance(model.hash, a.seed, t=a.t).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["observable", "n", "error", "leading_term"])
        for name, f in cases.items():
            res = resolvent_power_limit_check(L, f, a.t)
            lead = a.t**2 / 2 * np.abs(L @ (L @ semigroup_apply(L, f, a.t))).max()
            print(f"{name}: slope {res.slope:.4f}")
            for n, e in zip(res.ns, res.errors):
                print(f"  n={n:6d}  error {e:.3e}  leading {lead / n:.3e}")
                w.writerow([name, int(n), repr(float(e)), repr(float(lead / n))])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
