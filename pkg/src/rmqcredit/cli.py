"""Command line front end: ``rmqcredit <command> [--config PATH] [--seed N] [--threads N] [--out PATH]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from . import credit, filter as filt, oracle
from .analytic import gbm_survival_F, implied_vol
from .config import ExperimentConfig, load_config, load_contract
from .errors import ConfigError, OutOfBandError, RmqError
from .model import simulate_pair
from .quantizer import QuantizationTree, build_tree, dump_tree

log = logging.getLogger("rmqcredit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# per-command defaults, applied before the config file
DEFAULTS = {
    "quantize": dict(sizes=(50,)),
    "fbar-convergence": dict(sizes=(50, 100, 400), t_n=3.0, t_n_min=1.1),
    "default-prob": dict(sizes=(30,), t_n=11.0, t_n_min=1.1),
    "cds-par": dict(sigma=0.05, delta=0.01, n_steps=20, sizes=(60,), sizes_after=100),
    "cdso-table": dict(sigma=0.05, n_steps=20, sizes=(60,), sizes_after=100),
    "diagnostics": dict(sizes=(100,), t_n=2.0, paths=100_000),
}


class Output:
    """CSV sink that stamps every file with the command and config hash."""

    def __init__(self, path: str, command: str, cfg: ExperimentConfig):
        self.path = path
        self.header = [f"# rmqcredit {command}", f"# config_hash={cfg.digest()} seed={cfg.seed}"]

    @contextlib.contextmanager
    def open(self, path: str | None = None):
        path = self.path if path is None else path
        fh = open(path, "w", newline="") if path else sys.stdout
        try:
            fh.write("\n".join(self.header) + "\n")
            yield fh
        finally:
            if path:
                fh.close()


def _say(out: Output, msg: str) -> None:
    """Human-readable summary; kept off stdout when stdout carries the CSV."""
    print(msg, file=sys.stdout if out.path else sys.stderr)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.10g}"
    return str(v)


def _row(fh, *values) -> None:
    fh.write(",".join(_fmt(v) for v in values) + "\n")


def _tree(cfg: ExperimentConfig, n_points: int, t_end: float | None = None,
          delta: float | None = None) -> QuantizationTree:
    grid = cfg.time_grid(t_end)
    return build_tree(cfg.spec(delta), grid, cfg.step_sizes(n_points, grid), newton=cfg.newton)


def _with_spec(tree: QuantizationTree, spec) -> QuantizationTree:
    """Same grids under another observation model (grids do not depend on it)."""
    return QuantizationTree(tree.grids, tree.transitions, spec, tree.time_grid,
                            tree.distortions, tree.converged)


def cmd_quantize(cfg, out: Output, args) -> None:
    if not out.path:
        raise ConfigError("quantize needs --out for the tree file")
    tree = _tree(cfg, cfg.sizes[0])
    dump_tree(tree, out.path, comments=[h[2:] for h in out.header[1:]])
    for k, (d, ok) in enumerate(zip(tree.distortions, tree.converged)):
        print(f"step {k:4d}  N={len(tree.grids[k]):4d}  distortion={d:.6e}{'' if ok else '  (not converged)'}")


def cmd_fbar_convergence(cfg, out: Output, args) -> None:
    grid = cfg.time_grid()
    m = grid.m
    horizons = np.flatnonzero(grid.times >= cfg.t_n_min - 1e-9)
    horizons = horizons[horizons > m]
    summary = []
    with out.open() as fh:
        fh.write("N,x_star,t_n,F_exact,F_hat,abs_err\n")
        for n_points in cfg.sizes:
            tree = _tree(cfg, n_points)
            pts = tree.grids[m].points
            i = int(np.argmin(np.abs(pts - cfg.x0)))
            row = np.zeros(pts.size)
            row[i] = 1.0
            f_hat = filt.curves_from_posterior(tree, row, m, horizons)
            f_exact = gbm_survival_F(cfg.mu, cfg.sigma, cfg.barrier, pts[i],
                                     grid.times[horizons] - grid.times[m])
            for t, fe, fh_ in zip(grid.times[horizons], f_exact, f_hat):
                _row(fh, n_points, pts[i], t, fe, fh_, abs(fh_ - fe))
            summary.append((n_points, float(np.max(np.abs(f_hat - f_exact)))))
        for n_points, err in summary:
            fh.write(f"# sup_error N={n_points} {err:.6e}\n")
    for n_points, err in summary:
        _say(out, f"N={n_points:5d}  sup|F_hat - F| = {err:.3e}")


def _observations(cfg, tree):
    if cfg.observations:
        return filt.read_observation_csv(cfg.observations)
    return filt.ObservationPath.from_pair(simulate_pair(tree.spec, tree.time_grid, cfg.seed))


def cmd_default_prob(cfg, out: Output, args) -> None:
    tree = _tree(cfg, cfg.sizes[0])
    obs = _observations(cfg, tree)
    grid = tree.time_grid
    horizons = np.flatnonzero((grid.times >= cfg.t_n_min - 1e-9) & (np.arange(grid.n + 1) > grid.m))
    analytic = None
    if cfg.exact_F:
        def analytic(x, u):
            return gbm_survival_F(cfg.mu, cfg.sigma, cfg.barrier, x, u)
    curves = filt.survival_curves(tree, obs, horizons, analytic)
    if curves.extinct:
        raise RmqError("filter went extinct: the observations imply default before t_m")
    with out.open() as fh:
        fh.write("t_n,p_full,p_y_only,default_full,default_y_only\n")
        for t, pf, py in zip(curves.times, curves.p_full, curves.p_y_only):
            _row(fh, t, pf, py, 1.0 - pf, 1.0 - py)
    if out.path:
        stem = out.path[:-4] if out.path.endswith(".csv") else out.path
        with out.open(stem + "_observations.csv") as fh:
            fh.write("time,value\n")
            for t, y in zip(obs.times, obs.values):
                _row(fh, t, y)
    else:
        sys.stdout.write("# observations\ntime,value\n")
        for t, y in zip(obs.times, obs.values):
            _row(sys.stdout, t, y)
    direction = "down" if obs.values[-1] < obs.values[0] else "up"
    _say(out, f"observation path {direction}; survival to t_m given Y: {curves.survival_to_m:.6f}")


def _time_zero(cfg, tree):
    contract = credit.CdsContract(cfg.ta, cfg.tb, lgd=cfg.lgd, rate=cfg.rate, alpha=cfg.alpha)
    return contract, credit.time_zero_curve(tree)


def cmd_cds_par(cfg, out: Output, args) -> None:
    tree = _tree(cfg, cfg.sizes[0], t_end=cfg.tb)
    curve = credit.time_zero_curve(tree)
    with out.open() as fh:
        fh.write("lgd,rate,par_spread_bps,risky_duration,protection_leg\n")
        for lgd in cfg.lgd_sweep:
            for rate in cfg.rate_sweep:
                c = credit.CdsContract(cfg.ta, cfg.tb, lgd=lgd, rate=rate, alpha=cfg.alpha)
                _row(fh, lgd, rate, 1e4 * credit.par_spread(curve, c),
                     credit.risky_duration(curve, c), credit.protection_leg(curve, c))
    c = credit.CdsContract(cfg.ta, cfg.tb, lgd=cfg.lgd, rate=cfg.rate, alpha=cfg.alpha)
    _say(out, f"par spread (lgd={cfg.lgd}, r={cfg.rate}): {1e4 * credit.par_spread(curve, c):.2f} bps")


def cmd_cdso_table(cfg, out: Output, args) -> None:
    base = _tree(cfg, cfg.sizes[0], t_end=cfg.tb)
    contract, curve = _time_zero(cfg, base)
    k_star = credit.par_spread(curve, contract)
    annuity = credit.risky_duration(curve, contract)
    strikes = k_star * np.asarray(cfg.strike_factors)
    if cfg.spread_bps > 0:
        strikes = np.append(strikes, 1e-4 * cfg.spread_bps)
    with out.open() as fh:
        fh.write(f"# par_spread_bps={1e4 * k_star:.6f} risky_duration={annuity:.10g}"
                 f" lgd={cfg.lgd} rate={cfg.rate} paths={cfg.paths}\n")
        fh.write("strike,delta,price,stderr,implied_vol\n")
        for delta in cfg.deltas:
            tree = _with_spec(base, cfg.spec(delta))
            t0 = time.perf_counter()
            res = credit.pso_prices(tree, contract, strikes, cfg.paths, cfg.seed, threads=args.threads)
            log.info("delta=%g: %.1fs, %d extinct paths", delta, time.perf_counter() - t0, res.extinct)
            for k, p, se in zip(strikes, res.prices, res.stderr):
                try:
                    iv = implied_vol(p, k_star, k, contract.ta, annuity)
                except OutOfBandError as exc:
                    log.warning("no implied vol at k=%g, delta=%g: %s", k, delta, exc)
                    iv = float("nan")
                _row(fh, k, delta, p, se, iv)
                _say(out, f"k={1e4 * k:7.2f}bps delta={delta:.3f} price={p:.6f} (se {se:.6f}) vol={100 * iv:7.2f}%")


def cmd_diagnostics(cfg, out: Output, args) -> None:
    tree = _tree(cfg, cfg.sizes[0])
    grid = tree.time_grid
    m, n = grid.m, grid.n
    rows = []
    pair = simulate_pair(tree.spec, grid, cfg.seed)
    obs = filt.ObservationPath.from_pair(pair)
    cs = filt.conditional_survival(tree, obs, n)
    pf = oracle.particle_filter_estimate(tree.spec, grid, obs.values, cfg.paths, cfg.seed, n=n)
    rows.append(("p_full vs particle filter", cs.p_full, pf.p_full, pf.p_full_se))
    rows.append(("p_y_only vs particle filter", cs.p_y_only, pf.p_y_only, pf.p_y_only_se))
    table = filt.survival_table(tree, m, n).values
    pts = tree.grids[m].points
    i = int(np.argmin(np.abs(pts - cfg.x0)))
    p, se = oracle.mc_first_passage(tree.spec, pts[i], grid.times[n] - grid.times[m], n - m,
                                    cfg.paths, True, cfg.seed, t0=grid.times[m])
    rows.append((f"F_hat(x={pts[i]:.3f}) vs Euler MC", table[i], p, se))
    u = grid.times[n] - grid.times[m]
    p, se = oracle.mc_gbm_first_passage(cfg.mu, cfg.sigma, cfg.barrier, cfg.x0, u, cfg.paths, 1000, cfg.seed)
    rows.append(("closed-form F vs GBM MC", float(gbm_survival_F(cfg.mu, cfg.sigma, cfg.barrier, cfg.x0, u)), p, se))
    with out.open() as fh:
        fh.write("check,value,reference,stderr,z_score\n")
        for name, v, ref, se in rows:
            z = (v - ref) / se if se > 0 else float("nan")
            _row(fh, name, v, ref, se, z)
            _say(out, f"{name:32s} {v:.6f} vs {ref:.6f} (se {se:.2e}, z {z:+.2f})")


COMMANDS = {
    "quantize": cmd_quantize,
    "fbar-convergence": cmd_fbar_convergence,
    "default-prob": cmd_default_prob,
    "cds-par": cmd_cds_par,
    "cdso-table": cmd_cdso_table,
    "diagnostics": cmd_diagnostics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmqcredit", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="key = value configuration file")
    parser.add_argument("--contract", metavar="PATH",
                        help="contract file (ta, tb, spread_bps, lgd, rate, alpha, paths, seed)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")
    parser.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def make_config(command: str, config_path: str | None, seed: int | None,
                contract_path: str | None = None) -> ExperimentConfig:
    cfg = replace(ExperimentConfig(), **DEFAULTS.get(command, {}))
    if config_path:
        cfg = load_config(config_path, cfg)
    if contract_path:
        cfg = load_contract(contract_path, cfg)
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = seed
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = make_config(args.command, args.config, args.seed, args.contract)
        out = Output(args.out or cfg.out, args.command, cfg)
        COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RmqError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
