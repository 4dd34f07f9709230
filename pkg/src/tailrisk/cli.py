"""Command-line front end: validate, fit, forecast, backtest, mcs, simulate.

Flags may also come from a JSON config file (--config); explicit flags win. Every
run writes its resolved configuration next to its outputs, and every output file
carries the package version, a hash of that configuration and the seed. All
randomness flows from --seed, and worker count never changes an output byte.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, runmeta
from .backtest import (BacktestError, LossSeries, mcs as run_mcs, rank_table, vrate)
from .data import DataError, MarketSeries, WindowPlan, load_market_csv, to_volatility_scale
from .forecast import ForecastError, read_forecast_csv, rolling_forecast
from .mcmc import Chain, McmcConfig, McmcError, posterior_mean, posterior_summary, run as run_mcmc
from .models import (ModelError, ModelFamily, ModelSpec, filter_path,
                     stationarity_diagnostic, write_risk_path)
from .simulate import paper_dgp, recovery_study, regarch_simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER = 1
EXIT_NUMERIC = 2

_USER_ERRORS = (click.UsageError, DataError, ModelError, BacktestError, ValueError,
                FileNotFoundError, KeyError, json.JSONDecodeError)
_NUMERIC_ERRORS = (McmcError, ForecastError, FloatingPointError, ArithmeticError,
                   np.linalg.LinAlgError, RuntimeError)


def _merge_config(ctx_params: dict, config_path) -> dict:
    """File values fill in whatever flags were left at None."""
    merged = dict(ctx_params)
    if config_path:
        with open(config_path) as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            key = key.replace("-", "_")
            if merged.get(key) is None:
                merged[key] = value
    return merged


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise click.UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _default(cfg: dict, **defaults):
    """Fill keys that are absent or None (flags default to None when omitted)."""
    for key, value in defaults.items():
        if cfg.get(key) is None:
            cfg[key] = value


def _jobs(cfg: dict) -> int:
    """--jobs flag, else TAILRISK_JOBS, else the machine's parallelism."""
    jobs = cfg.get("jobs")
    if jobs is None:
        jobs = os.environ.get("TAILRISK_JOBS")
    if jobs is None:
        jobs = os.cpu_count() or 1
    return max(1, int(jobs))


def _load_series(cfg: dict) -> MarketSeries:
    rm_cols = cfg.get("rm_cols") or []
    if isinstance(rm_cols, str):
        rm_cols = [c for c in rm_cols.split(",") if c]
    return load_market_csv(cfg["data"], rm_cols,
                           price_col=cfg.get("price_col"),
                           return_col=cfg.get("return_col"))


def _model_spec(cfg: dict) -> ModelSpec:
    family = ModelFamily(cfg["model"])
    k = cfg.get("k")
    if k is None:
        rm_cols = cfg.get("rm_cols") or []
        if isinstance(rm_cols, str):
            rm_cols = [c for c in rm_cols.split(",") if c]
        k = len(rm_cols) if family != ModelFamily.ES_CAVIAR_ADD else 0
    return ModelSpec(family, int(k), float(cfg["alpha"]),
                     centered_leverage=bool(cfg.get("centered_leverage", False)))


def _write_csv(path, header, rows, cfg: dict, seed) -> None:
    with open(path, "w", newline="") as fh:
        for line in runmeta.header_lines(cfg, seed):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload: dict, cfg: dict, seed) -> None:
    payload = {"_meta": runmeta.json_meta(cfg, seed), **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_config(outdir: Path, command: str, cfg: dict) -> dict:
    cfg = {k: v for k, v in cfg.items() if v is not None}
    cfg["command"] = command
    resolved = runmeta.resolved_config(cfg)
    runmeta.write_config(outdir / f"{command}_config.json", resolved)
    return resolved


@click.group(name="tailrisk")
@click.version_option(__version__)
def cli():
    """Joint VaR/ES forecasting with realized measures."""


_common = [
    click.option("--config", type=click.Path(exists=True), default=None,
                 help="JSON config file; explicit flags override it."),
    click.option("--out", type=click.Path(), default=None, help="Output directory."),
    click.option("--seed", type=int, default=None),
    click.option("--jobs", type=int, default=None,
                 help="Worker processes (default: TAILRISK_JOBS or 1)."),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@cli.command()
@click.option("--data", type=click.Path(), default=None)
@click.option("--rm-cols", default=None, help="Comma-separated realized-measure columns.")
@click.option("--price-col", default=None)
@click.option("--return-col", default=None)
@click.option("--insample", type=int, default=None)
@click.option("--outsample", type=int, default=None)
@_with_common
def validate(config, out, seed, jobs, **params):
    """Load a market CSV and report/verify its basic properties."""
    cfg = _merge_config(params, config)
    _require(cfg, "data")
    series = _load_series(cfg)
    click.echo(f"{series.name}: T={len(series)}, K={series.n_measures} "
               f"({', '.join(series.rm_names) or 'no realized measures'})")
    click.echo(f"dates {series.dates[0]} .. {series.dates[-1]}")
    if cfg.get("insample") and cfg.get("outsample"):
        WindowPlan(int(cfg["insample"]), int(cfg["outsample"])).validate(len(series))
        click.echo(f"window plan ok: T={cfg['insample']}, m={cfg['outsample']}")


def _fit_chain(cfg: dict) -> tuple[ModelSpec, MarketSeries, Chain]:
    series = to_volatility_scale(_load_series(cfg))
    spec = _model_spec(cfg)
    t = int(cfg.get("insample") or len(series))
    r = series.returns[:t]
    r = r - r.mean()
    x = series.rm_panel[:t] if spec.K else None
    mcfg = McmcConfig(epoch_len=int(cfg.get("epoch_len", 20000)),
                      var_tol=float(cfg.get("var_tol", 0.10)),
                      max_epochs=int(cfg.get("max_epochs", 10)),
                      retain=int(cfg.get("retain", 10000)),
                      seed=int(cfg.get("seed", 0)))
    return spec, series, run_mcmc(spec, r, x, config=mcfg)


@cli.command()
@click.option("--data", type=click.Path(), default=None)
@click.option("--rm-cols", default=None)
@click.option("--price-col", default=None)
@click.option("--return-col", default=None)
@click.option("--model", default=None, type=click.Choice([f.value for f in ModelFamily]))
@click.option("--k", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--centered-leverage", is_flag=True, default=None)
@click.option("--insample", type=int, default=None)
@click.option("--epoch-len", type=int, default=None)
@click.option("--max-epochs", type=int, default=None)
@click.option("--retain", type=int, default=None)
@_with_common
def fit(config, out, seed, jobs, **params):
    """Estimate one model on the first in-sample window; write chain and summary."""
    cfg = _merge_config({**params, "seed": seed, "out": out}, config)
    _require(cfg, "data", "model", "alpha")
    _default(cfg, seed=0)
    outdir = Path(cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = _emit_config(outdir, "fit", cfg)

    spec, series, chain = _fit_chain(cfg)
    label = f"{spec.family.value}-K{spec.K}"
    _write_csv(outdir / f"fit_{label}_chain.csv", chain.param_names,
               [[repr(float(v)) for v in row] for row in chain.draws],
               resolved, cfg["seed"])
    summary = posterior_summary(chain)
    payload = {
        "model": label,
        "alpha": spec.alpha,
        "status": chain.status,
        "epochs_run": chain.epochs_run,
        "acceptance_rates": [float(r) for r in chain.acceptance_rates],
        "block_targets": list(chain.block_targets),
        "blocks": [list(b) for b in chain.block_names],
        "posterior": summary,
    }
    if spec.family == ModelFamily.RES_CAVIAR_M:
        payload["stationarity_diagnostic"] = stationarity_diagnostic(spec, posterior_mean(chain))
    _write_json(outdir / f"fit_{label}_summary.json", payload, resolved, cfg["seed"])

    # in-sample Q/ES path at the posterior mean: tidy data for plotting
    t = int(cfg.get("insample") or len(series))
    r = series.returns[:t]
    path = filter_path(spec, posterior_mean(chain), r - r.mean(),
                       series.rm_panel[:t] if spec.K else None)
    write_risk_path(outdir / f"fit_{label}_riskpath.csv", path, dates=series.dates[:t],
                    header_lines=runmeta.header_lines(resolved, cfg["seed"]))
    click.echo(f"fit {label}: {chain.status} after {chain.epochs_run} epochs -> {outdir}")


@cli.command()
@click.option("--data", type=click.Path(), default=None)
@click.option("--rm-cols", default=None)
@click.option("--price-col", default=None)
@click.option("--return-col", default=None)
@click.option("--model", default=None, type=click.Choice([f.value for f in ModelFamily]))
@click.option("--k", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--centered-leverage", is_flag=True, default=None)
@click.option("--insample", type=int, default=None)
@click.option("--outsample", type=int, default=None)
@click.option("--refit-every", type=int, default=None)
@click.option("--epoch-len", type=int, default=None)
@click.option("--max-epochs", type=int, default=None)
@click.option("--retain", type=int, default=None)
@_with_common
def forecast(config, out, seed, jobs, **params):
    """Roll one-step-ahead VaR/ES forecasts over the out-of-sample period."""
    cfg = _merge_config({**params, "seed": seed, "out": out, "jobs": jobs}, config)
    _require(cfg, "data", "model", "alpha", "insample", "outsample")
    _default(cfg, seed=0)
    outdir = Path(cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = _emit_config(outdir, "forecast", cfg)

    series = to_volatility_scale(_load_series(cfg))
    spec = _model_spec(cfg)
    plan = WindowPlan(int(cfg["insample"]), int(cfg["outsample"]),
                      refit_every=int(cfg.get("refit_every", 1)))
    mcfg = McmcConfig(epoch_len=int(cfg.get("epoch_len", 20000)),
                      var_tol=float(cfg.get("var_tol", 0.10)),
                      max_epochs=int(cfg.get("max_epochs", 10)),
                      retain=int(cfg.get("retain", 10000)),
                      seed=int(cfg["seed"]))
    fc = rolling_forecast(series, spec, plan, mcfg, jobs=_jobs(cfg))
    path = outdir / f"forecast_{fc.model}.csv"
    fc.to_csv(path, header_lines=runmeta.header_lines(resolved, cfg["seed"]))
    click.echo(f"wrote {len(fc)} forecasts -> {path}")


@cli.command()
@click.argument("forecast_files", nargs=-1, type=click.Path(exists=True))
@click.option("--forecasts", multiple=True, type=click.Path(exists=True),
              help="One ForecastSeries CSV per model (repeatable or space-separated).")
@click.option("--alpha", type=float, default=None)
@click.option("--mcs-level", type=float, default=None)
@click.option("--method", type=click.Choice(["R", "SQ"]), default=None)
@click.option("--bootstrap", type=int, default=None, help="Bootstrap resamples B.")
@click.option("--block-len", type=int, default=None)
@_with_common
def backtest(config, out, seed, jobs, forecasts, forecast_files, **params):
    """Score forecast files: losses, violation rates, ranks and the MCS."""
    cfg = _merge_config({**params, "seed": seed, "out": out,
                         "forecasts": list(forecasts) + list(forecast_files) or None},
                        config)
    _require(cfg, "forecasts", "alpha")
    _default(cfg, seed=0, mcs_level=0.75, method="R", bootstrap=5000, block_len=10)
    outdir = Path(cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = _emit_config(outdir, "backtest", cfg)
    alpha = float(cfg["alpha"])

    models, q_losses, j_losses, rows = [], [], [], []
    for path in cfg["forecasts"]:
        fc = read_forecast_csv(path)
        label = fc.model if fc.model != "unknown" else Path(path).stem
        ql = LossSeries.from_forecasts("quantile", label, fc.realized, fc.q_hat,
                                       fc.es_hat, alpha)
        jl = LossSeries.from_forecasts("joint", label, fc.realized, fc.q_hat,
                                       fc.es_hat, alpha)
        vr = vrate(fc.realized, fc.q_hat, alpha)
        models.append(label)
        q_losses.append(ql.values)
        j_losses.append(jl.values)
        rows.append([label, repr(ql.average), repr(jl.average), repr(vr.rate), repr(vr.ratio)])
        _write_csv(outdir / f"loss_{label}.csv", ["quantile_loss", "joint_loss"],
                   [[repr(float(a)), repr(float(b))] for a, b in zip(ql.values, jl.values)],
                   resolved, cfg["seed"])
    _write_csv(outdir / "loss_summary.csv",
               ["model", "avg_quantile_loss", "avg_joint_loss", "vrate", "vrate_ratio"],
               rows, resolved, cfg["seed"])

    lengths = {len(q) for q in q_losses}
    if len(lengths) != 1:
        raise BacktestError("forecast files cover different horizons")
    q_avg = np.array([q.mean() for q in q_losses])
    j_avg = np.array([j.mean() for j in j_losses])
    ranks_q = rank_table(q_avg[None, :], models)
    ranks_j = rank_table(j_avg[None, :], models)
    _write_csv(outdir / "rank_table.csv", ["model", "rank_quantile", "rank_joint"],
               [[m, repr(ranks_q[m]), repr(ranks_j[m])] for m in models],
               resolved, cfg["seed"])

    report = {}
    for kind, losses in (("quantile", q_losses), ("joint", j_losses)):
        if len(models) >= 2:
            res = run_mcs(np.column_stack(losses), labels=models,
                          level=float(cfg["mcs_level"]), method=cfg["method"],
                          b=int(cfg["bootstrap"]), block_len=int(cfg["block_len"]),
                          seed=int(cfg["seed"]))
            report[kind] = {
                "survivors": list(res.survivors),
                "eliminated": list(res.eliminated),
                "p_values": res.p_values,
                "method": res.method,
                "level": res.level,
                "B": res.n_bootstrap,
                "block_len": res.block_len,
                "seed": res.seed,
            }
    _write_json(outdir / "mcs_report.json", report, resolved, cfg["seed"])
    click.echo(f"backtested {len(models)} model(s) -> {outdir}")


@cli.command(name="mcs")
@click.argument("loss_files", nargs=-1, type=click.Path(exists=True))
@click.option("--losses", multiple=True, type=click.Path(exists=True),
              help="Per-model loss CSVs from `backtest` (repeatable or space-separated).")
@click.option("--column", default="quantile_loss")
@click.option("--mcs-level", type=float, default=None)
@click.option("--method", type=click.Choice(["R", "SQ"]), default=None)
@click.option("--bootstrap", type=int, default=None)
@click.option("--block-len", type=int, default=None)
@_with_common
def mcs_cmd(config, out, seed, jobs, losses, loss_files, **params):
    """Run the Model Confidence Set on per-model daily loss files."""
    cfg = _merge_config({**params, "seed": seed, "out": out,
                         "losses": list(losses) + list(loss_files) or None}, config)
    _require(cfg, "losses")
    _default(cfg, seed=0, mcs_level=0.75, method="R", bootstrap=5000,
             block_len=10, column="quantile_loss")
    outdir = Path(cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = _emit_config(outdir, "mcs", cfg)

    labels, columns = [], []
    for path in cfg["losses"]:
        with open(path, newline="") as fh:
            reader = csv.reader(line for line in fh if not line.startswith("#"))
            header = next(reader)
            idx = header.index(cfg["column"])
            columns.append(np.array([float(row[idx]) for row in reader]))
        label = Path(path).stem
        labels.append(label[5:] if label.startswith("loss_") else label)
    res = run_mcs(np.column_stack(columns), labels=labels,
                  level=float(cfg["mcs_level"]), method=cfg["method"],
                  b=int(cfg["bootstrap"]), block_len=int(cfg["block_len"]),
                  seed=int(cfg["seed"]))
    _write_json(outdir / "mcs_report.json", {
        "survivors": list(res.survivors),
        "eliminated": list(res.eliminated),
        "p_values": res.p_values,
        "method": res.method,
        "level": res.level,
        "B": res.n_bootstrap,
        "block_len": res.block_len,
        "seed": res.seed,
    }, resolved, cfg["seed"])
    click.echo(f"MCS ({res.method}) survivors: {', '.join(res.survivors)}")


@cli.command()
@click.option("--dgp-preset", type=click.Choice(["paper", "custom-json"]), default=None)
@click.option("--dgp-json", type=click.Path(exists=True), default=None,
              help="RegarchParams fields as JSON (for --dgp-preset custom-json).")
@click.option("--k", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--n", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--epoch-len", type=int, default=None)
@_with_common
def simulate(config, out, seed, jobs, **params):
    """Generate DGP data; with --reps, run the bias/RMSE recovery study."""
    cfg = _merge_config({**params, "seed": seed, "out": out, "jobs": jobs}, config)
    _require(cfg, "alpha", "n")
    _default(cfg, seed=0, dgp_preset="paper", k=1)
    outdir = Path(cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = _emit_config(outdir, "simulate", cfg)

    if cfg["dgp_preset"] == "paper":
        dgp = paper_dgp(int(cfg["k"]))
    else:
        with open(cfg["dgp_json"]) as fh:
            from .simulate import RegarchParams
            dgp = RegarchParams(**json.load(fh))

    if cfg.get("reps"):
        report = recovery_study(dgp, float(cfg["alpha"]), [int(cfg["n"])],
                                int(cfg["reps"]), seed=int(cfg["seed"]),
                                mcmc_config=McmcConfig(
                                    epoch_len=int(cfg.get("epoch_len", 5000)),
                                    seed=0),
                                jobs=_jobs(cfg))
        _write_csv(outdir / "recovery.csv", ["n", "parameter", "true", "mean", "rmse"],
                   [[n, name, repr(tv), repr(mean), repr(rmse)]
                    for n, name, tv, mean, rmse in report.rows()],
                   resolved, cfg["seed"])
        n = int(cfg["n"])
        _write_json(outdir / "recovery_summary.json", {
            "alpha": report.alpha, "K": report.K, "replications": report.replications,
            "n_success": report.n_success, "n_failed": report.n_failed,
            "approximate_targets": list(report.approximate),
            "convergence_epochs": report.convergence_epochs,
            "acceptance_within_band": report.acceptance_ok,
        }, resolved, cfg["seed"])
        click.echo(f"recovery study ({report.n_success[n]}/{report.replications} ok) -> {outdir}")
    else:
        sim = regarch_simulate(dgp, int(cfg["n"]), seed=int(cfg["seed"]))
        path = outdir / "simulated_market.csv"
        sim.series.to_csv(path, header_lines=runmeta.header_lines(resolved, cfg["seed"]))
        _write_csv(outdir / "simulated_sigma.csv", ["sigma"],
                   [[repr(float(s))] for s in sim.sigma], resolved, cfg["seed"])
        click.echo(f"simulated {int(cfg['n'])} observations -> {path}")


def main(argv=None) -> int:
    """Dispatch like the console script but return an exit code (0/1/2)."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if not argv:
        click.echo(cli.get_help(click.Context(cli, info_name="tailrisk")))
        return EXIT_USER
    try:
        cli.main(args=argv, prog_name="tailrisk", standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return EXIT_OK if exc.exit_code == 0 else EXIT_USER
    except _USER_ERRORS as exc:
        if isinstance(exc, click.UsageError):
            click.echo(exc.format_message(), err=True)
        else:
            click.echo(f"error: {exc}", err=True)
        return EXIT_USER
    except _NUMERIC_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
