"""Command line front end: ``svfactor {fit,sweep,test,simulate,backtest}``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from .errors import ConfigError, SVFactorError, UnknownCommand
from .estimator import common_components, fit_conditional, normalize_fit, state_sweep
from .evalkit import expanding_backtest, mv_factor_portfolio, variance_explained_shares
from .inference import gc_test, pairwise_test_grid
from .io import Report, RunConfig, load_config, load_panel_csv, load_state_csv, write_heatmap, write_report

COMMANDS = ("fit", "sweep", "test", "simulate", "backtest")
STUDIES = ("fig1", "tableI", "tableAI", "figA1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="key = value file")
    g.add_argument("--kind", help="kernel name")
    g.add_argument("--h", type=float, help="bandwidth")
    g.add_argument("--r", type=int, help="number of factors")
    g.add_argument("--grid", help="state grid, start:stop:num or a comma list")
    g.add_argument("--sparsity", choices=("diagonal", "banded"))
    g.add_argument("--time-lag", type=int)
    g.add_argument("--cross-lag", type=int)
    g.add_argument("--min-effective-size", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", dest="output_dir", help="output directory (default $SVFACTOR_OUTPUT_DIR or .)")
    g.add_argument("--format", choices=("csv", "json"))
    g.add_argument("--periods-per-year", type=float)
    g.add_argument("--refit-every", type=int)
    g.add_argument("--initial-train", type=int)


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input panel")
    g.add_argument("--panel", required=True, help="panel CSV")
    g.add_argument("--layout", default="rows_are_time", choices=("rows_are_time", "rows_are_series"))
    g.add_argument("--state-column", help="name of the state column/row inside the panel file")
    g.add_argument("--state-file", help="separate time,value CSV holding the state")
    g.add_argument("--state-transform", default="none", choices=("none", "log", "log_normalized"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="svfactor", description="State-varying factor models by kernel-projected PCA.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the model at one state")
    _config_flags(p)
    _data_flags(p)
    p.add_argument("--state", type=float, required=True)

    p = sub.add_parser("sweep", help="fit over a grid of states")
    _config_flags(p)
    _data_flags(p)

    p = sub.add_parser("test", help="generalized correlation test for one pair or the whole grid")
    _config_flags(p)
    _data_flags(p)
    p.add_argument("--s1", type=float)
    p.add_argument("--s2", type=float)
    p.add_argument("--raw-variance", action="store_true", help="skip the null variance scaling")

    p = sub.add_parser("simulate", help="Monte Carlo studies")
    _config_flags(p)
    p.add_argument("study", help=f"one of {', '.join(STUDIES)}")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--target", default="loading", choices=("loading", "factor", "common", "gc_null"))
    p.add_argument("--s", type=float, default=0.5, help="state for fig1 (first of the pair for gc_null)")
    p.add_argument("--s2", type=float, default=0.6, help="second state of the gc_null pair")

    p = sub.add_parser("backtest", help="expanding-window R^2 and factor portfolio")
    _config_flags(p)
    _data_flags(p)
    p.add_argument("--model", default="both", choices=("state", "constant", "both"))
    p.add_argument("--risk-free-file", help="time,value CSV of per-period risk-free rates")
    return ap


_CFG_KEYS = ("kind", "h", "r", "grid", "sparsity", "time_lag", "cross_lag", "min_effective_size", "seed",
             "output_dir", "format", "periods_per_year", "refit_every", "initial_train")


def _config(ns) -> RunConfig:
    return load_config(ns.config, {k: getattr(ns, k, None) for k in _CFG_KEYS})


def _load(ns):
    panel, state = load_panel_csv(ns.panel, ns.layout, ns.state_column, ns.state_transform)
    if ns.state_file:
        if state is not None:
            raise ConfigError("give either --state-column or --state-file, not both")
        state = load_state_csv(ns.state_file, panel.time_ids, transform=ns.state_transform)
    if state is None:
        raise ConfigError("no state series: use --state-column or --state-file")
    return panel, state


def _factor_cols(M: np.ndarray, prefix: str = "factor") -> dict:
    return {f"{prefix}_{k + 1}": M[:, k] for k in range(M.shape[1])}


def _emit(cfg: RunConfig, name: str, report: Report, written: list) -> None:
    path = cfg.out / f"{name}.{cfg.format}"
    write_report(report, cfg.format, path)
    written.append(str(path))


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(ns, cfg, written):
    panel, state = _load(ns)
    fit = fit_conditional(panel.values, state.values, ns.state, cfg.h, cfg.r, cfg.kind, **cfg.fit_kwargs())
    cc = common_components(fit)
    _emit(cfg, "fit_loadings", Report({"series": list(panel.series_ids), **_factor_cols(fit.loadings)}), written)
    _emit(cfg, "fit_factors", Report({"time": list(panel.time_ids), **_factor_cols(cc.factors)}), written)
    summary = {"state": ns.state, "h": cfg.h, "r": cfg.r, "kind": cfg.kind,
               "effective_size": fit.effective_size, "eigenvalues": fit.eigenvalues,
               "variance_shares": fit.variance_shares}
    _emit(cfg, "fit_eigenvalues", Report({"factor": list(range(1, cfg.r + 1)), "eigenvalue": fit.eigenvalues,
                                          "variance_share": fit.variance_shares}, summary), written)


def cmd_sweep(ns, cfg, written):
    panel, state = _load(ns)
    pts = state_sweep(panel.values, state.values, cfg.states, cfg.h, cfg.r, cfg.kind, **cfg.fit_kwargs())
    states, shares = variance_explained_shares(pts)
    cols = {"state": states, **_factor_cols(shares, "share"),
            "error": ["" if p.error is None else type(p.error).__name__ for p in pts]}
    _emit(cfg, "sweep_shares", Report(cols), written)
    rows_s, rows_i, loads = [], [], []
    for p in pts:
        if p.fit is None:
            continue
        rows_s += [p.s] * panel.shape[0]
        rows_i += list(panel.series_ids)
        loads.append(p.fit.loadings)
    L = np.vstack(loads) if loads else np.empty((0, cfg.r))
    _emit(cfg, "sweep_loadings", Report({"state": rows_s, "series": rows_i, **_factor_cols(L, "loading")}), written)


def cmd_test(ns, cfg, written):
    panel, state = _load(ns)
    if (ns.s1 is None) != (ns.s2 is None):
        raise ConfigError("--s1 and --s2 go together")
    if ns.s1 is not None:
        fits = [normalize_fit(fit_conditional(panel.values, state.values, s, cfg.h, cfg.r, cfg.kind,
                                              **cfg.fit_kwargs())) for s in (ns.s1, ns.s2)]
        res = gc_test(*fits, cfg.sets, null_scaling=not ns.raw_variance)
        cols = {k: [getattr(res, k)] for k in ("s1", "s2", "rho_hat", "r", "bias", "variance", "statistic",
                                                  "p_value")}
        _emit(cfg, "test_pair", Report(cols, {"h": cfg.h, "kind": cfg.kind}), written)
        return
    grid = pairwise_test_grid(panel.values, state.values, cfg.states, cfg.h, cfg.r, cfg.kind, cfg.sets,
                              **cfg.fit_kwargs())
    for name, M in (("test_statistic", grid.t_values), ("test_pvalue", grid.p_values)):
        path = cfg.out / f"{name}.csv"
        write_heatmap(grid.states, M, path)
        written.append(str(path))


def cmd_simulate(ns, cfg, written):
    from . import simlab

    study = ns.study
    if study not in STUDIES:
        raise UnknownCommand(f"unknown study {study!r}; choose from {STUDIES}")
    if study == "fig1":
        reps = ns.reps or 2000
        dcfg = simlab.DgpConfig(N=ns.N, T=ns.T, seed=cfg.seed,
                                loading_model="constant" if ns.target == "gc_null" else "cubic")
        s = (ns.s, ns.s2) if ns.target == "gc_null" else ns.s
        res = simlab.mc_distribution_study(dcfg, s, cfg.h, reps, ns.target, sets=cfg.sets, kind=cfg.kind)
        meta = {"target": res.target, "mean": res.mean, "variance": res.variance, "ks": res.ks,
                "n_reps": res.n_reps, "n_failed": res.n_failed}
        _emit(cfg, f"fig1_{ns.target}", Report({"value": res.values}, meta), written)
    elif study == "tableI":
        tab = simlab.mc_power_study(n_reps=ns.reps or 500, seed=cfg.seed)
        cols = {"N": [n for n, _ in tab.sizes], "T": [t for _, t in tab.sizes]}
        for b, (m, (a, c)) in enumerate(tab.columns):
            cols[f"{m}_{a:g}_{c:g}"] = tab.acceptance[:, b]
        _emit(cfg, "tableI", Report(cols, {"n_reps": tab.n_reps, "critical": tab.critical,
                                           "kind": simlab.TABLE_I_KIND, "h": simlab.TABLE_I_BANDWIDTH}), written)
    elif study == "tableAI":
        rows = simlab.mc_rsq_study(n_seeds=ns.reps or 20, N=ns.N, T=ns.T, h=cfg.h, seed=cfg.seed, kind=cfg.kind)
        cols = {"variant": [r.label for r in rows], "in_rsq_x": [r.in_x for r in rows],
                "in_rsq_c": [r.in_c for r in rows], "out_rsq_x": [r.out_x for r in rows],
                "out_rsq_c": [r.out_c for r in rows]}
        _emit(cfg, "tableAI", Report(cols), written)
    else:
        curves = simlab.mc_factor_curves(n_seeds=ns.reps or 20, N=ns.N, T=ns.T, h=cfg.h, seed=cfg.seed,
                                         kind=cfg.kind)
        cols = {"rep": [], "factors": [], "state_rsq_x": [], "state_rsq_c": [], "pca_rsq_x": [], "pca_rsq_c": []}
        for k, c in enumerate(curves):
            cols["rep"] += [k] * c.factors.size
            cols["factors"] += c.factors.tolist()
            for key, arr in (("state_rsq_x", c.state_x), ("state_rsq_c", c.state_c),
                             ("pca_rsq_x", c.pca_x), ("pca_rsq_c", c.pca_c)):
                cols[key] += arr.tolist()
        _emit(cfg, "figA1", Report(cols), written)


def cmd_backtest(ns, cfg, written):
    panel, state = _load(ns)
    T = panel.shape[1]
    init = cfg.initial_train or T // 2
    rf = None
    if ns.risk_free_file:
        rf = load_state_csv(ns.risk_free_file, panel.time_ids).values
    models = ("state", "constant") if ns.model == "both" else (ns.model,)
    summ = {"model": [], "rsq_x": [], "n_excluded": [], "sharpe": [], "n_periods": [], "ridge_steps": []}
    rets = {"model": [], "time": [], "return": [], "excess": []}
    for m in models:
        bt = expanding_backtest(panel.values, state.values, init, cfg.h, cfg.r, cfg.kind, cfg.refit_every,
                                model=m, **cfg.fit_kwargs())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if rf is None else "default")
            pf = mv_factor_portfolio(panel.values, state.values, init, cfg.h, cfg.r, cfg.kind, cfg.refit_every,
                                     risk_free=rf, periods_per_year=cfg.periods_per_year, model=m,
                                     **cfg.fit_kwargs())
        summ["model"].append(m)
        summ["rsq_x"].append(bt.rsq.rsq_x)
        summ["n_excluded"].append(bt.rsq.n_excluded)
        summ["sharpe"].append(pf.sharpe)
        summ["n_periods"].append(pf.returns.size)
        summ["ridge_steps"].append(len(pf.ridge_steps))
        rets["model"] += [m] * pf.times.size
        rets["time"] += [panel.time_ids[t] for t in pf.times]
        rets["return"] += pf.returns.tolist()
        rets["excess"] += pf.excess.tolist()
    meta = {"initial_train": init, "refit_every": cfg.refit_every, "risk_free_assumed_zero": rf is None}
    _emit(cfg, "backtest_summary", Report(summ, meta), written)
    _emit(cfg, "backtest_returns", Report(rets), written)


_DISPATCH = {"fit": cmd_fit, "sweep": cmd_sweep, "test": cmd_test, "simulate": cmd_simulate,
             "backtest": cmd_backtest}


def _error_record(exc: BaseException, code: int) -> dict:
    return {"status": "error", "error": type(exc).__name__, "message": str(exc), "exit_code": code}


def run_command(argv=None, *, stdout=None, stderr=None) -> int:
    """Parse ``argv``, run one subcommand and return its exit status.

    0 success, 1 usage or configuration, 2 data, 3 numerical failure.  Any
    failure prints a one-line JSON error record on ``stderr``.
    """
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
            raise UnknownCommand(f"unknown command {argv[0]!r}; choose from {COMMANDS}")
        ns = build_parser().parse_args(argv)
        if ns.command is None:
            raise UnknownCommand(f"no command given; choose from {COMMANDS}")
        cfg = _config(ns)
        written: list = []
        _DISPATCH[ns.command](ns, cfg, written)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = _exit_code(exc)
        if code is None:
            raise
        print(json.dumps(_error_record(exc, code)), file=stderr)
        return code
    print(json.dumps({"status": "ok", "command": ns.command, "written": written}), file=stdout)
    return 0


def _exit_code(exc: Exception) -> int | None:
    if isinstance(exc, SVFactorError):
        return exc.exit_code
    if isinstance(exc, np.linalg.LinAlgError):
        return 3
    if isinstance(exc, (ValueError, TypeError)):
        return 1
    if isinstance(exc, OSError):
        return 2
    return None


def main(argv=None) -> None:
    sys.exit(run_command(argv))
