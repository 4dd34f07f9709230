"""One-step-ahead VaR/ES forecasting over rolling windows."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from datetime import date, datetime

import numpy as np

from .data import MarketSeries, WindowPlan, demean, rolling_windows
from .mcmc import McmcConfig, posterior_mean, run
from .models import (FilterInit, ModelFamily, ModelSpec, ParamVector, filter_path)

logger = logging.getLogger(__name__)


class ForecastError(RuntimeError):
    """Raised when a window cannot produce a finite forecast."""


@dataclass(frozen=True)
class ForecastSeries:
    """Out-of-sample one-step forecasts with their realized targets."""

    model: str
    alpha: float
    dates: tuple[date, ...]
    q_hat: np.ndarray
    es_hat: np.ndarray
    realized: np.ndarray
    refit: np.ndarray  # 1 where the window re-estimated parameters

    def __post_init__(self):
        for name in ("q_hat", "es_hat", "realized"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "refit", np.asarray(self.refit, dtype=int))
        m = len(self.dates)
        if not (len(self.q_hat) == len(self.es_hat) == len(self.realized) == len(self.refit) == m):
            raise ValueError("forecast series fields must share one length")

    def __len__(self) -> int:
        return len(self.dates)

    def to_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# tailrisk-forecast model={self.model} alpha={self.alpha!r}\n")
            writer = csv.writer(fh)
            writer.writerow(["date", "q_hat", "es_hat", "realized", "refitted"])
            for i, d in enumerate(self.dates):
                writer.writerow([d.isoformat(), repr(float(self.q_hat[i])),
                                 repr(float(self.es_hat[i])), repr(float(self.realized[i])),
                                 int(self.refit[i])])


def read_forecast_csv(path) -> ForecastSeries:
    model, alpha = "unknown", float("nan")
    rows = []
    with open(path, newline="") as fh:
        plain = []
        for line in fh:
            if line.startswith("#"):
                if "tailrisk-forecast" in line:
                    for token in line.split():
                        if token.startswith("model="):
                            model = token[6:]
                        elif token.startswith("alpha="):
                            alpha = float(token[6:])
                continue
            plain.append(line)
        reader = csv.reader(plain)
        next(reader)  # header
        rows = list(reader)
    dates = tuple(datetime.strptime(r[0], "%Y-%m-%d").date() for r in rows)
    return ForecastSeries(
        model=model, alpha=alpha, dates=dates,
        q_hat=np.array([float(r[1]) for r in rows]),
        es_hat=np.array([float(r[2]) for r in rows]),
        realized=np.array([float(r[3]) for r in rows]),
        refit=np.array([int(r[4]) for r in rows]),
    )


def _advance_one_step(spec: ModelSpec, vals: np.ndarray, path, returns, rms_vol,
                      fixed_e2: float | None):
    """Evaluate the quantile and gap recursions at T+1 from the filtered state."""
    T = len(returns)
    K = spec.K
    q_T = path.Q[T - 1]
    om_T = path.omega[T - 1]
    eps_T = path.eps[T - 1]
    if spec.centered_leverage:
        # the expanding mean now includes eps_T; a fixed constant stays fixed
        e2 = float(fixed_e2) if fixed_e2 is not None else float(np.mean(path.eps ** 2))
    else:
        e2 = 0.0
    fam = spec.family
    if fam == ModelFamily.RES_CAVIAR_M:
        u_T = path.U[T - 1]
        lq = (vals[0] + vals[1] * math.log(-q_T) + vals[2] * eps_T
              + vals[3] * (eps_T * eps_T - e2) + float(np.dot(vals[4:4 + K], u_T)))
        q_next = -math.exp(lq)
        om_next = (vals[4 + 5 * K] + vals[5 + 5 * K] * om_T
                   + float(np.dot(vals[6 + 5 * K:6 + 6 * K], np.abs(u_T))))
    elif fam == ModelFamily.LOG_RES_CAVIAR:
        x_T = float(rms_vol[T - 1, 0])
        lq = vals[0] + vals[1] * math.log(x_T) + vals[2] * math.log(-q_T)
        q_next = -math.exp(lq)
        om_next = vals[3] + vals[4] * x_T + vals[5] * om_T
    elif fam in (ModelFamily.RES_CAVIAR, ModelFamily.ES_X_CAVIAR_X):
        x_T = float(rms_vol[T - 1, 0])
        q_next = vals[0] + vals[1] * x_T + vals[2] * q_T
        om_next = vals[3] + vals[4] * x_T + vals[5] * om_T
    else:  # ES_CAVIAR_ADD
        q_next = vals[0] + vals[1] * abs(float(returns[T - 1])) + vals[2] * q_T
        om_next = vals[3] + vals[4] * om_T
    return q_next, q_next - om_next


def one_step_forecast(spec: ModelSpec, theta: ParamVector | np.ndarray,
                      window_returns, window_rms=None,
                      fixed_e2: float | None = None,
                      init: FilterInit | None = None) -> tuple[float, float]:
    """Filter the window then advance the recursions one step.

    Returns (Q_{T+1}, ES_{T+1}) on the same (demeaned) scale as the window.
    """
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    r = np.asarray(window_returns, dtype=float)
    path = filter_path(spec, vals, r, window_rms, fixed_e2=fixed_e2, init=init)
    if not path.finite:
        raise ForecastError("filtered path is non-finite; cannot forecast")
    if spec.K:
        x = np.asarray(window_rms, dtype=float).reshape(len(r), spec.K)
    else:
        x = np.zeros((len(r), 0))
    q_next, es_next = _advance_one_step(spec, vals, path, r, x, fixed_e2)
    if not (es_next <= q_next < 0.0) or not math.isfinite(es_next):
        raise ForecastError(f"non-viable forecast (q={q_next}, es={es_next})")
    return float(q_next), float(es_next)


def _forecast_group(args):
    """Forecast one refit group: estimate on the first window, reuse thereafter."""
    (spec, returns, rm_panel, windows, mcmc_config, fixed_e2) = args
    out = []
    theta = None
    for w in windows:
        r_win = returns[w.start:w.stop]
        x_win = rm_panel[w.start:w.stop] if spec.K else None
        mu = float(r_win.mean())
        r_dm = r_win - mu
        if w.refit or theta is None:
            try:
                chain = run(spec, r_dm, x_win,
                            config=replace(mcmc_config, seed=mcmc_config.seed + w.index),
                            fixed_e2=fixed_e2)
            except Exception as exc:
                raise ForecastError(f"window {w.index}: estimation failed: {exc}") from exc
            theta = posterior_mean(chain)
        try:
            q_hat, es_hat = one_step_forecast(spec, theta, r_dm, x_win, fixed_e2=fixed_e2)
        except ForecastError as exc:
            raise ForecastError(f"window {w.index}: {exc}") from exc
        # forecasts are for demeaned returns; report on the return scale
        out.append((w.index, q_hat + mu, es_hat + mu, bool(w.refit)))
    return out


def rolling_forecast(series: MarketSeries, spec: ModelSpec, plan: WindowPlan,
                     mcmc_config: McmcConfig, fixed_e2: float | None = None,
                     jobs: int = 1) -> ForecastSeries:
    """Walk the plan's windows, re-estimating on the refit schedule.

    Windows between refits reuse the last posterior-mean parameters but re-filter
    on their own (re-demeaned) data. Each refit group is an independent job; the
    merge is ordered by window index so results do not depend on ``jobs``.
    """
    if spec.K and not series.vol_scale:
        raise ValueError("series must be on the volatility scale (see to_volatility_scale)")
    if spec.K and series.n_measures != spec.K:
        raise ValueError(f"model needs {spec.K} realized measures, series has {series.n_measures}")
    windows = list(rolling_windows(series, plan))
    groups = []
    for w in windows:
        if w.refit:
            groups.append([w])
        else:
            groups[-1].append(w)
    rm_panel = series.rm_panel if spec.K else np.zeros((len(series), 0))
    tasks = [(spec, series.returns, rm_panel, grp, mcmc_config, fixed_e2) for grp in groups]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_forecast_group, tasks))
    else:
        results = [_forecast_group(t) for t in tasks]
    rows = sorted(row for grp in results for row in grp)
    targets = [w.target for w in windows]
    return ForecastSeries(
        model=f"{spec.family.value}-K{spec.K}",
        alpha=spec.alpha,
        dates=tuple(series.dates[t] for t in targets),
        q_hat=np.array([r[1] for r in rows]),
        es_hat=np.array([r[2] for r in rows]),
        realized=np.array([series.returns[t] for t in targets]),
        refit=np.array([int(r[3]) for r in rows]),
    )
