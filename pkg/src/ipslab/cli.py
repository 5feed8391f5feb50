"""Command-line experiment runner.

Exit codes: 0 every selected check passed, 1 a check failed (reports are still
written), 2 the configuration or model is invalid.
"""
from __future__ import annotations

import argparse
import csv
import sys
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load_config
from .dynamics import condition_audit, quotient_bound_check, reversal_regularity_audit, reverse_rates
from .entropy import (de_bruijn_check, decay_curve, decay_rate_estimate, get_phi, is_reversible, phi_entropy,
                      poincare_gap, shift_positive)
from .exact import (ReducibleChainError, adjoint_generator, build_generator, duality_check, generator_defect,
                    gibbs_check, growth_bound_check, reversal_consistency_check, semigroup_apply,
                    stationary_measure)
from .io import provenance, write_coo, write_report, write_vector
from .model import DomainError, StateSpaceTooLarge, chain_rule_check, density_bounds_check, \
    specification_consistency_check
from .simulate import (ExactEngine, exact_martingale_check, exact_occupancy_law, law_battery, martingale_test,
                       occupancy, process_ensemble, reverse_trajectory, sample_ensemble, submartingale_test,
                       trajectorial_process, two_time_battery)

EXACT_TOL = 1e-10
CHAIN_TOL = 1e-12
DEBRUIJN_TOL = 1e-6
MARTINGALE_TOL = 1e-8
ENSEMBLE_GRID = 21
CHAIN_RULE_SITES = 12


class Runner:
    def __init__(self, cfg: ExperimentConfig, stream=None):
        self.cfg, self.model = cfg, cfg.model
        self.stream = sys.stdout if stream is None else stream
        self.results: list[tuple[str, bool, str]] = []
        self._trajs = None

    # -- shared state ------------------------------------------------------

    @cached_property
    def L(self):
        return build_generator(self.model.rates, self.model.space)

    @cached_property
    def mu(self):
        return stationary_measure(self.L)

    @cached_property
    def rates_hat(self):
        return reverse_rates(self.model.rates, self.model.spec)

    @cached_property
    def L_hat(self):
        return build_generator(self.rates_hat, self.model.space)

    @cached_property
    def L_adj(self):
        return adjoint_generator(self.L, self.mu)

    def header(self, **extra) -> dict:
        return provenance(self.model.hash, self.cfg.seed, **extra)

    def out(self, sub: str) -> Path:
        d = self.cfg.output / sub
        d.mkdir(parents=True, exist_ok=True)
        return d

    def check(self, name: str, passed: bool, detail: str):
        self.results.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}", file=self.stream)

    def note(self, text: str):
        print(f"      {text}", file=self.stream)

    def snapshot(self):
        data = dict(self.cfg.data)
        if "model" in data:
            data["model"] = self.model.data
        self.cfg.output.mkdir(parents=True, exist_ok=True)
        with open(self.cfg.output / "config_snapshot.yaml", "w") as fh:
            for k, v in self.header().items():
                fh.write(f"# {k}={v}\n")
            yaml.safe_dump(data, fh, sort_keys=True)

    # -- subcommands -------------------------------------------------------

    def audit(self):
        m, d = self.model, self.out("audit")
        rep = condition_audit(m.rates, m.spec, seed=self.cfg.seed or 0)
        self.note(f"M={rep.M:.6g} epsilon={rep.epsilon:.6g} rate_bound={rep.rate_bound:.6g} "
                  f"delta={m.spec.delta:.6g} C={m.spec.C:.6g} exhaustive={rep.exact}")
        report = {"conditions": rep.as_dict(), "delta": m.spec.delta, "C": m.spec.C, "regions": {}}
        regions = list(m.rates.regions)
        if m.graph.n_sites <= CHAIN_RULE_SITES:
            regions.append(tuple(m.graph.sites))
        ok_bounds, ok_chain = True, True
        worst_chain = 0.0
        for r in dict.fromkeys(regions):
            b = density_bounds_check(m.spec, r)
            ok_bounds &= b.passed
            entry = {"min": b.minimum, "max": b.maximum, "lower": b.lower, "upper": b.upper, "passed": b.passed}
            if len(r) > 1:
                errs = [chain_rule_check(m.spec, r), chain_rule_check(m.spec, r, order=tuple(reversed(r)))]
                worst_chain = max(worst_chain, *errs)
                entry["chain_rule"] = errs
            report["regions"][str(list(r))] = entry
        self.check("audit.density_bounds", ok_bounds, f"exp(-C|D|) <= gamma <= exp(C|D|) on {len(report['regions'])} regions")
        self.check("audit.chain_rule", worst_chain <= CHAIN_TOL, f"max error {worst_chain:.3g} (tol {CHAIN_TOL:g})")
        if m.graph.n_sites <= CHAIN_RULE_SITES and m.graph.n_sites > 1:
            cons = specification_consistency_check(m.spec, m.rates.regions[0], tuple(m.graph.sites))
            report["consistency"] = cons
            self.check("audit.consistency", cons <= CHAIN_TOL, f"gamma_Lambda gamma_D = gamma_Lambda, error {cons:.3g}")
        q = quotient_bound_check(m.rates, m.spec)
        report["quotient"] = {"min": q.minimum, "max": q.maximum, "worst_region": list(q.worst_region), "passed": q.passed}
        self.check("audit.quotient_bounds", q.passed, f"ratio in [{q.minimum:.4g}, {q.maximum:.4g}]")
        reg = reversal_regularity_audit(m.rates, m.spec)
        report["reversed_rates"] = {"conditions": reg.report.as_dict(), "pointwise_ok": reg.pointwise_ok,
                                    "proof_bound": reg.proof_bound, "proof_bound_ok": reg.proof_bound_ok}
        self.check("audit.reversed_rate_bound", reg.passed, f"reversed rate_bound {reg.report.rate_bound:.6g}")
        times = self.cfg.t_grid if self.cfg.t_grid is not None else None
        if times is not None:
            report["growth"] = {}
            for obs in self.cfg.observable_list():
                g = growth_bound_check(m.rates, obs.values, times, m.space, rep, self.L)
                report["growth"][obs.name] = {"times": g.times, "norms": g.norms, "bounds": g.bounds,
                                              "generator_sup": g.generator_sup, "generator_bound": g.generator_bound,
                                              "passed": g.passed}
                self.check(f"audit.growth[{obs.name}]", g.passed,
                           f"|||P_t f||| <= exp((M-eps)t)|||f|||, ||Lf|| {g.generator_sup:.4g} <= {g.generator_bound:.4g}")
        else:
            self.note("growth bounds skipped (no t_grid)")
        write_report(d / "audit.json", report, self.header())

    def stationary(self):
        m, d = self.model, self.out("stationary")
        defect = generator_defect(self.L)
        self.check("stationary.generator", defect <= 1e-12, f"row-sum defect {defect:.3g}")
        mu = self.mu
        resid = float(np.abs(self.L.T @ mu).max())
        self.check("stationary.solve", resid <= EXACT_TOL, f"|mu L| = {resid:.3g}")
        gc = gibbs_check(mu, m.spec, m.space)
        self.check("stationary.gibbs", gc <= EXACT_TOL, f"DLR defect {gc:.3g} (tol {EXACT_TOL:g})")
        write_coo(d / "generator.coo.csv", self.L, self.header(matrix="generator"))
        write_vector(d / "mu.csv", mu, m.space.configs, self.header(), "mu")
        write_report(d / "stationary.json", {"generator_defect": defect, "residual": resid, "gibbs_defect": gc,
                                             "n_states": m.space.n}, self.header())

    def reverse(self):
        m, d = self.model, self.out("reverse")
        rc = reversal_consistency_check(m.rates, m.spec, self.mu, m.space, self.L)
        detail = f"||L(c_hat) - adjoint|| = {rc.discrepancy:.3g} (tol {EXACT_TOL:g})"
        if rc.discrepancy > EXACT_TOL:
            i, j = rc.witness
            detail += (f"; witness ({i}, {j}) = ({_cfg(m.space, i)} -> {_cfg(m.space, j)});"
                       f" Gibbs stationarity defect {rc.gibbs_discrepancy:.3g}")
        self.check("reverse.consistency", rc.discrepancy <= EXACT_TOL, detail)
        with open(d / "rates.csv", "w", newline="") as fh:
            for k, v in self.header().items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["region", "state", "config", "xi", "c", "c_hat"])
            X = m.space.configs
            for k, r in enumerate(m.rates.regions):
                C, Ch = m.rates.table(k, X), self.rates_hat.table(k, X)
                for i in range(m.space.n):
                    for xi in range(C.shape[1]):
                        w.writerow([";".join(map(str, r)), i, _cfg(m.space, i), xi, repr(float(C[i, xi])),
                                    repr(float(Ch[i, xi]))])
        write_coo(d / "generator_hat.coo.csv", self.L_hat, self.header(matrix="reversed generator"))
        write_report(d / "reverse.json", {"discrepancy": rc.discrepancy, "witness": list(rc.witness),
                                          "gibbs_defect": rc.gibbs_discrepancy,
                                          "hypothesis_holds": rc.hypothesis_holds}, self.header())

    def duality(self):
        m, d = self.model, self.out("duality")
        rep = duality_check(self.L, self.L_hat, self.mu, m.rates, self.rates_hat, m.space)
        self.check("duality.bilinear", rep.bilinear <= EXACT_TOL,
                   f"max |mu(b)L(b,a) - mu(a)L_hat(a,b)| = {rep.bilinear:.3g} at {rep.witness}")
        worst = max(rep.per_region.values(), default=0.0)
        self.check("duality.switching", worst <= EXACT_TOL, f"worst region {worst:.3g} over {len(rep.per_region)} regions")
        write_report(d / "duality.json", {"bilinear": rep.bilinear, "witness": list(rep.witness),
                                          "per_region": {str(list(k)): v for k, v in rep.per_region.items()}},
                     self.header())

    def decay(self):
        m, d = self.model, self.out("decay")
        grid = self.cfg.require("t_grid", "decay")
        mu, L = self.mu, self.L
        reversible = is_reversible(L, mu)
        gap = None
        if reversible:
            try:
                gap = poincare_gap(L, mu)
                self.note(f"spectral gap {gap.gap:.8g}, c* = {gap.c_star:.8g}")
            except DomainError as e:
                self.note(f"no Poincare constant: {e}")
        else:
            self.note("generator is not reversible; decay rates are empirical only")
        report = {"reversible": reversible, "gap": None if gap is None else gap.gap, "curves": {}}
        db_times = grid[grid >= 1e-3][:5]
        for phi_name in self.cfg.phi:
            phi = get_phi(phi_name)
            for obs in self.cfg.observable_list():
                f, shift = _admissible(obs.values, phi)
                key = f"{phi_name}[{obs.name}]"
                c_star = gap.c_star if (gap is not None and phi_name == "square") else None
                curve = decay_curve(mu, L, phi, f, grid, c_star)
                curve.write_csv(d / f"decay_{phi_name}_{obs.name}.csv", self.header(phi=phi_name, observable=obs.name,
                                                                                    shift=shift))
                db = de_bruijn_check(mu, L, phi, f, db_times)
                self.check(f"decay.de_bruijn[{key}]", db.error <= DEBRUIJN_TOL,
                           f"max |d/dt Ent - dissipation| = {db.error:.3g} at {len(db_times)} times")
                worst = float(curve.dissipation.max())
                self.check(f"decay.dissipation[{key}]", worst <= 1e-12 and curve.monotone,
                           f"max dissipation {worst:.3g}, entropy nonincreasing: {curve.monotone}")
                entry = {"shift": shift, "de_bruijn_error": db.error, "max_dissipation": worst,
                         "rate_estimate": decay_rate_estimate(curve)}
                if c_star is not None:
                    ok = bool(np.all(curve.entropy <= curve.bound * (1 + 1e-9) + 1e-15))
                    entry.update(c_star=c_star, bound_holds=ok)
                    self.check(f"decay.poincare[{key}]", ok, f"Var(P_t f) <= exp(-2t/c*) Var(f), c* = {c_star:.6g}")
                report["curves"][key] = entry
        write_report(d / "decay.json", report, self.header())

    def trajectories(self):
        if self._trajs is None:
            cfg = self.cfg
            seed = cfg.require("seed", "simulate")
            T = cfg.require("T", "simulate")
            n = cfg.require("ensemble", "simulate")
            self._trajs = sample_ensemble(self.model.rates, self.model.space, T, n, seed, mu=self.mu,
                                          threads=cfg.threads)
        return self._trajs

    def simulate(self):
        m, cfg, d = self.model, self.cfg, self.out("simulate")
        trajs = self.trajectories()
        T = cfg.T
        for i, tr in enumerate(trajs[:cfg.exports]):
            tr.write_csv(d / f"trajectory_{i:04d}.csv", self.header(index=tr.index))
        times = np.linspace(0, T, 5)
        sites = cfg.test_sites
        K = m.q ** len(sites)
        codes = occupancy(trajs, times, sites, m.space)
        marg, joint = exact_occupancy_law(self.mu, self.L, m.space, sites, times)
        law = law_battery(codes, marg, joint, times, K, cfg.alpha)
        self.check("simulate.law", law.passed, f"{len(law.verdicts)} chi-square fits at Holm level {cfg.alpha:g}")
        rev = [reverse_trajectory(t) for t in trajs]
        direct = sample_ensemble(self.rates_hat, m.space, T, len(trajs), cfg.seed, mu=self.mu,
                                 threads=cfg.threads, first_index=len(trajs))
        bat = two_time_battery(occupancy(rev, times, sites, m.space), occupancy(direct, times, sites, m.space),
                               times, K, cfg.alpha)
        self.check("simulate.reversal_law", bat.passed,
                   f"reversed vs direct reversed-rate ensembles, {len(bat.verdicts)} homogeneity tests")
        events = np.array([t.n_events for t in trajs])
        jumps = np.array([t.n_jumps for t in trajs])
        meta = {"paths": len(trajs), "T": T, "mean_events": events.mean(), "mean_jumps": jumps.mean()}
        for rep in (law, bat):
            rep.meta.update(meta, seed=cfg.seed, model_hash=m.hash)
            write_report(d / f"{rep.name}.json", rep.as_dict(), self.header())

    def trajectorial(self):
        m, cfg, d = self.model, self.cfg, self.out("trajectorial")
        trajs = self.trajectories()
        T = cfg.T
        s = cfg.test_s if cfg.test_s is not None else T / 4
        t = cfg.test_t if cfg.test_t is not None else 3 * T / 4
        grid = np.unique(np.concatenate([np.linspace(0, T, ENSEMBLE_GRID), [s, t]]))
        reversible = is_reversible(self.L, self.mu)
        for phi_name in cfg.phi:
            phi = get_phi(phi_name)
            for obs in cfg.observable_list():
                key = f"{phi_name}[{obs.name}]"
                f, shift = _admissible(obs.values, phi)
                eng = ExactEngine(m.space, self.L_adj, f, phi, T)
                ens = process_ensemble(trajs, eng, grid)
                gap = exact_martingale_check(m.space, self.L, self.mu, eng, s, t)
                self.check(f"trajectorial.exact[{key}]", gap <= MARTINGALE_TOL,
                           f"E[g_t | G_s] - g_s = {gap:.3g} (tol {MARTINGALE_TOL:g})")
                mart = martingale_test(ens, s, t, m.space, cfg.test_sites)
                sub = submartingale_test(ens, s, t, m.space, cfg.test_sites)
                self.check(f"trajectorial.martingale[{key}]", bool(mart.passed), _summary(mart))
                self.check(f"trajectorial.submartingale[{key}]", bool(sub.passed), _summary(sub))
                dA = float(np.diff(ens.A, axis=1).min())
                a0 = float(np.abs(ens.A[:, 0]).max())
                self.check(f"trajectorial.compensator[{key}]", dA >= -1e-12 and a0 == 0.0,
                           f"min increment {dA:.3g}, |A(0)| = {a0:.3g}")
                target = phi_entropy(self.mu, phi, f) - phi_entropy(self.mu, phi, semigroup_apply(self.L_adj, f, T))
                AT = ens.A[:, -1]
                se = float(AT.std(ddof=1) / np.sqrt(len(AT)))
                self.check(f"trajectorial.expectation[{key}]", abs(AT.mean() - target) <= 3 * se + 1e-12,
                           f"E[A(T)] = {AT.mean():.6g} +- {se:.2g}, entropy drop {target:.6g}")
                for rep in (mart, sub):
                    rep.meta.update(seed=cfg.seed, model_hash=m.hash, phi=phi_name, observable=obs.name, shift=shift,
                                    exact_gap=gap, expected_A_T=target, mean_A_T=float(AT.mean()), se_A_T=se)
                    write_report(d / f"{rep.name}_{phi_name}_{obs.name}.json", rep.as_dict(), self.header())
                if not reversible:
                    fwd = ExactEngine(m.space, self.L_adj, f, phi, T, L_compensator=self.L)
                    ctrl = martingale_test(process_ensemble(trajs, fwd, grid, "forward"), s, t, m.space,
                                           cfg.test_sites, name="forward_control")
                    self.note(f"forward-filtration control for {key}: {'rejected' if ctrl.passed is False else 'not rejected'}")
                    ctrl.meta.update(seed=cfg.seed, model_hash=m.hash, phi=phi_name, observable=obs.name)
                    write_report(d / f"forward_control_{phi_name}_{obs.name}.json", ctrl.as_dict(), self.header())
                for i, tr in enumerate(trajs[:cfg.exports]):
                    trajectorial_process(tr, eng, grid).write_csv(
                        d / f"process_{phi_name}_{obs.name}_{i:04d}.csv",
                        self.header(index=tr.index, phi=phi_name, observable=obs.name, shift=shift))

    def run(self, command: str) -> int:
        self.snapshot()
        commands = [c for c in SUBCOMMANDS if c in self.cfg.checks] if command == "all" else [command]
        for c in commands:
            print(f"== {c}", file=self.stream)
            getattr(self, c)()
        failed = [n for n, ok, _ in self.results if not ok]
        print(f"{len(self.results) - len(failed)}/{len(self.results)} checks passed; outputs in {self.cfg.output}",
              file=self.stream)
        return 1 if failed else 0


def _cfg(space, i) -> str:
    return "".join(map(str, space.config(i).tolist()))


def _admissible(f, phi):
    """Shift ``f`` into the open domain of Phi when needed."""
    if np.isfinite(phi.lower) and f.min() <= phi.lower:
        g, s = shift_positive(f - phi.lower)
        return g + phi.lower, s
    return np.asarray(f, dtype=float), 0.0


def _summary(rep) -> str:
    if rep.passed is None:
        return "underpowered: " + "; ".join(rep.warnings)
    bad = [k for k, v in rep.verdicts.items() if not v]
    return f"{len(rep.verdicts)} statistics at 3 sigma, n = {rep.n}" + (f"; rejected: {', '.join(bad)}" if bad else "")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config or model file (YAML)")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--output", type=Path, default=None, help="override the output directory")
    p = argparse.ArgumentParser(prog="ipslab", description="Finite-volume checks for interacting particle systems.")
    p.add_argument("--version", action="version", version=f"ipslab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "audit": "condition constants and specification bounds",
        "stationary": "stationary measure and Gibbs check",
        "reverse": "reversed rates and reversal consistency",
        "duality": "bilinear and per-region switching identities",
        "decay": "Phi-entropy decay curves",
        "simulate": "trajectory ensembles and law checks",
        "trajectorial": "entropy process, martingale and submartingale tests",
        "all": "every check selected in the config",
    }
    for name, h in helps.items():
        sub.add_parser(name, parents=[common], help=h)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.output is not None:
            cfg.output = args.output
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1", "threads")
            cfg.threads = args.threads
        return Runner(cfg).run(args.command)
    except (ConfigError, DomainError, StateSpaceTooLarge) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except ReducibleChainError as e:
        print(f"FAIL  irreducibility: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
