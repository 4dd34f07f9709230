"""Forecast evaluation: quantile loss, joint VaR/ES loss, violation rate, ranks
and the Model Confidence Set.

The joint loss is exactly the negative per-day asymmetric-Laplace log score, so
summed joint losses and the quasi-likelihood cancel to zero by construction.
The MCS follows the iterative range (R) / semi-quadratic (SQ) elimination with a
circular block bootstrap; all bootstrap indices come from one counter-based
stream so results are reproducible and independent of any parallel split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TSTAT_CAP = 1e10  # stands in for +/-inf when a differential has zero bootstrap variance


class BacktestError(ValueError):
    """Raised for malformed loss inputs or bootstrap configuration."""


@dataclass(frozen=True)
class LossSeries:
    """Per-day losses for one model at one probability level."""

    model: str
    kind: str  # "quantile" | "joint"
    alpha: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.kind not in ("quantile", "joint"):
            raise BacktestError(f"unknown loss kind {self.kind!r}")
        if not np.all(np.isfinite(vals)):
            raise BacktestError("losses must be finite")
        if self.kind == "quantile" and np.any(vals < 0.0):
            raise BacktestError("quantile losses cannot be negative")

    @property
    def average(self) -> float:
        return float(self.values.mean())

    @classmethod
    def from_forecasts(cls, kind: str, model: str, realized, q_hat, es_hat,
                       alpha: float) -> "LossSeries":
        if kind == "quantile":
            series, _ = quantile_loss(realized, q_hat, alpha)
        else:
            series, _ = joint_loss(realized, q_hat, es_hat, alpha)
        return cls(model=model, kind=kind, alpha=alpha, values=series)


def quantile_loss(realized, q_hat, alpha: float) -> tuple[np.ndarray, float]:
    """Tick loss (alpha - 1[r<=Q])(r - Q); non-negative for every observation."""
    r = np.asarray(realized, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    if r.shape != q.shape:
        raise BacktestError("realized and q_hat must have equal lengths")
    series = (alpha - (r <= q)) * (r - q)
    return series, float(series.mean())


def joint_loss(realized, q_hat, es_hat, alpha: float) -> tuple[np.ndarray, float]:
    """Joint VaR/ES loss; the per-day negative AL log score.

    S_t = -log((alpha-1)/ES_t) - (r_t-Q_t)(alpha - 1[r_t<=Q_t])/(alpha*ES_t),
    defined only for ES_t < 0.
    """
    r = np.asarray(realized, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    es = np.asarray(es_hat, dtype=float)
    if not (r.shape == q.shape == es.shape):
        raise BacktestError("inputs must have equal lengths")
    if np.any(es >= 0.0):
        raise BacktestError("joint loss requires es_hat < 0 everywhere")
    series = -np.log((alpha - 1.0) / es) - (r - q) * (alpha - (r <= q)) / (alpha * es)
    return series, float(series.mean())


@dataclass(frozen=True)
class VRate:
    """Share of returns strictly below the VaR forecast, and its ratio to alpha."""

    rate: float
    ratio: float | None


def vrate(realized, q_hat, alpha: float | None = None) -> VRate:
    r = np.asarray(realized, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    if r.shape != q.shape:
        raise BacktestError("realized and q_hat must have equal lengths")
    if r.size == 0:
        raise BacktestError("empty series")
    rate = float(np.mean(r < q))
    return VRate(rate=rate, ratio=(rate / alpha if alpha else None))


def rank_table(avg_losses, labels=None) -> dict[str, float]:
    """Average rank of each model across markets (1 = lowest loss per market).

    ``avg_losses`` is markets x models. Ties are broken by model order (stable
    sort), which matters only for exactly equal averages.
    """
    a = np.atleast_2d(np.asarray(avg_losses, dtype=float))
    n_markets, n_models = a.shape
    labels = labels or [f"model{i}" for i in range(n_models)]
    if len(labels) != n_models:
        raise BacktestError("one label per model required")
    ranks = np.empty_like(a)
    for i in range(n_markets):
        order = np.argsort(a[i], kind="stable")
        ranks[i, order] = np.arange(1, n_models + 1)
    avg = ranks.mean(axis=0)
    return {lab: float(v) for lab, v in zip(labels, avg)}


@dataclass(frozen=True)
class McsResult:
    """Surviving set with elimination order and monotone MCS p-values."""

    survivors: tuple[str, ...]
    eliminated: tuple[str, ...]  # in elimination order
    p_values: dict[str, float]
    method: str
    level: float
    n_bootstrap: int
    block_len: int
    seed: int

    def included(self, label: str) -> bool:
        return label in self.survivors


def _block_bootstrap_indices(rng, m: int, block_len: int, b: int) -> np.ndarray:
    """Circular block bootstrap: (b, m) index matrix from uniform block starts."""
    n_blocks = -(-m // block_len)
    starts = rng.integers(0, m, size=(b, n_blocks))
    offsets = np.arange(block_len)
    idx = (starts[:, :, None] + offsets[None, None, :]).reshape(b, -1) % m
    return idx[:, :m]


def mcs(loss_matrix, labels=None, level: float = 0.75, method: str = "R",
        b: int = 5000, block_len: int = 10, seed: int = 0) -> McsResult:
    """Model Confidence Set at the given level by iterative elimination.

    Pairwise mean loss differentials get t-statistics from their circular block
    bootstrap variance. The test statistic is the largest |t| (method R) or the
    sum of squared pairwise t (method SQ); the bootstrap null recenters the
    differentials. While the test rejects (p < 1-level) the model with the
    largest max_j t_ij is dropped. Reported p-values are running maxima over the
    elimination sequence, survivors get 1.
    """
    losses = np.atleast_2d(np.asarray(loss_matrix, dtype=float))
    if losses.ndim != 2:
        raise BacktestError("loss_matrix must be m x M")
    m, n_models = losses.shape
    labels = list(labels) if labels is not None else [f"model{i}" for i in range(n_models)]
    if len(labels) != n_models:
        raise BacktestError("one label per model required")
    if not np.all(np.isfinite(losses)):
        raise BacktestError("losses must be finite")
    if method not in ("R", "SQ"):
        raise BacktestError("method must be 'R' or 'SQ'")
    if b < 100:
        raise BacktestError("need at least 100 bootstrap resamples")
    if n_models == 1:
        return McsResult(survivors=(labels[0],), eliminated=(), p_values={labels[0]: 1.0},
                         method=method, level=level, n_bootstrap=b, block_len=block_len,
                         seed=seed)
    if m < 2:
        raise BacktestError("need at least 2 loss rows")

    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = _block_bootstrap_indices(rng, m, block_len, b)
    # per-resample per-model mean losses; one shared time resample keeps pairs aligned
    boot_means = losses[idx].mean(axis=1)  # (b, M)
    full_means = losses.mean(axis=0)

    alive = list(range(n_models))
    p_values = {}
    eliminated = []
    running_p = 0.0
    while len(alive) >= 2:
        sub = np.array(alive)
        d = full_means[sub][:, None] - full_means[sub][None, :]
        bd = boot_means[:, sub][:, :, None] - boot_means[:, sub][:, None, :]
        var = np.mean((bd - d[None, :, :]) ** 2, axis=0)
        sd = np.sqrt(var)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_obs = np.where(sd > 0.0, d / sd, np.where(d == 0.0, 0.0,
                                                        np.sign(d) * _TSTAT_CAP))
            t_boot = np.where(sd[None, :, :] > 0.0, (bd - d[None, :, :]) / sd[None, :, :], 0.0)
        k = len(alive)
        eye = np.eye(k, dtype=bool)
        if method == "R":
            stat = float(np.max(np.abs(t_obs[~eye]))) if k > 1 else 0.0
            boot_stat = np.max(np.abs(t_boot.reshape(b, -1)[:, (~eye).ravel()]), axis=1)
        else:
            iu = np.triu_indices(k, 1)
            stat = float(np.sum(t_obs[iu] ** 2))
            boot_stat = np.sum(t_boot[:, iu[0], iu[1]] ** 2, axis=1)
        p = float(np.mean(boot_stat >= stat))
        if p >= 1.0 - level:
            break
        worst_local = int(np.argmax(np.max(np.where(eye, -np.inf, t_obs), axis=1)))
        worst = alive[worst_local]
        running_p = max(running_p, p)
        p_values[labels[worst]] = running_p
        eliminated.append(labels[worst])
        alive.remove(worst)

    for i in alive:
        p_values[labels[i]] = 1.0
    return McsResult(survivors=tuple(labels[i] for i in alive),
                     eliminated=tuple(eliminated), p_values=p_values,
                     method=method, level=level, n_bootstrap=b,
                     block_len=block_len, seed=seed)
