"""Loading, validation and windowing of daily return / realized-measure panels."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MIN_INSAMPLE = 250  # recommended floor for a stable fit; smaller windows only warn


class DataError(ValueError):
    """Raised for malformed or inconsistent market data."""


@dataclass(frozen=True)
class MarketSeries:
    """One market's daily percentage log returns plus a T x K realized-measure panel.

    Returns are close-to-close log returns scaled by 100. ``rm_panel`` holds one
    column per realized measure, on the variance scale unless ``vol_scale`` is set
    (see :func:`to_volatility_scale`).
    """

    name: str
    dates: tuple[date, ...]
    returns: np.ndarray
    rm_panel: np.ndarray
    rm_names: tuple[str, ...]
    vol_scale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=float))
        panel = np.asarray(self.rm_panel, dtype=float)
        if panel.ndim == 1:
            panel = panel.reshape(-1, 1) if len(self.rm_names) == 1 else panel.reshape(len(self.returns), -1)
        object.__setattr__(self, "rm_panel", panel)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "rm_names", tuple(self.rm_names))
        t = len(self.dates)
        if not (len(self.returns) == t and self.rm_panel.shape[0] == t):
            raise DataError(
                f"length mismatch: {t} dates, {len(self.returns)} returns, "
                f"{self.rm_panel.shape[0]} realized-measure rows"
            )
        if self.rm_panel.shape[1] != len(self.rm_names):
            raise DataError("rm_panel column count does not match rm_names")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.returns)):
            raise DataError("non-finite return")
        if self.rm_panel.size and (not np.all(np.isfinite(self.rm_panel)) or np.any(self.rm_panel < 0)):
            raise DataError("realized measures must be finite and non-negative")
        self.returns.setflags(write=False)
        self.rm_panel.setflags(write=False)

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_measures(self) -> int:
        return self.rm_panel.shape[1]

    def to_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        """Write the series; :func:`load_market_csv` round-trips it bit-exactly."""
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# tailrisk-market name={self.name} scale={'volatility' if self.vol_scale else 'variance'}\n")
            writer = csv.writer(fh)
            writer.writerow(["date", "return", *self.rm_names])
            for i, d in enumerate(self.dates):
                writer.writerow([d.isoformat(), repr(float(self.returns[i])),
                                 *(repr(float(v)) for v in self.rm_panel[i])])


@dataclass(frozen=True)
class WindowPlan:
    """Rolling-window layout: fixed in-sample size, out-of-sample count, refit cadence."""

    in_sample_size: int
    out_sample_size: int
    refit_every: int = 1

    def __post_init__(self):
        if self.in_sample_size < 1 or self.out_sample_size < 1:
            raise DataError("window sizes must be positive")
        if self.refit_every < 1:
            raise DataError("refit_every must be >= 1")
        if self.in_sample_size < MIN_INSAMPLE:
            logger.warning(
                "in-sample size %d below the recommended minimum %d; "
                "estimates may be unstable", self.in_sample_size, MIN_INSAMPLE,
            )

    def validate(self, series_length: int) -> None:
        if self.in_sample_size + self.out_sample_size > series_length:
            raise DataError(
                f"plan needs {self.in_sample_size + self.out_sample_size} observations, "
                f"series has {series_length}"
            )


@dataclass(frozen=True)
class WindowSlice:
    """One rolling window: observations [start, stop) forecasting observation ``target``."""

    index: int
    start: int
    stop: int
    target: int
    refit: bool


def _parse_date(text: str) -> date:
    try:
        return datetime.strptime(text.strip(), "%Y-%m-%d").date()
    except ValueError as exc:
        raise DataError(f"malformed date {text!r} (expected ISO-8601 YYYY-MM-DD)") from exc


def _parse_field(text: str) -> float | None:
    """Missing fields come back as None; anything else must parse as a finite float."""
    text = text.strip()
    if text == "" or text.lower() in {"nan", "na", "null", "none"}:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_market_csv(
    path,
    rm_columns: list[str],
    date_col: str = "date",
    price_col: str | None = None,
    return_col: str | None = None,
    name: str | None = None,
) -> MarketSeries:
    """Load a daily market CSV into a :class:`MarketSeries`.

    The header must contain ``date_col``, each name in ``rm_columns`` and either a
    price or a return column. When a price column is used, returns are computed as
    100 * ln(P_t / P_{t-1}) and the first row is consumed. Rows with any missing
    field are dropped (count logged); realized measures are kept on the variance
    scale unless the file carries a round-trip scale marker.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")

    marker_name, marker_scale = None, None
    rows = []
    with open(path, newline="") as fh:
        plain = []
        for line in fh:
            if line.startswith("#"):
                if "tailrisk-market" in line:
                    for token in line.split():
                        if token.startswith("name="):
                            marker_name = token[5:]
                        elif token.startswith("scale="):
                            marker_scale = token[6:]
                continue
            plain.append(line)
        reader = csv.reader(plain)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    col = {h: i for i, h in enumerate(header)}
    if date_col not in col:
        raise DataError(f"missing date column {date_col!r}")
    for rm in rm_columns:
        if rm not in col:
            raise DataError(f"missing realized-measure column {rm!r}")
    if return_col is None and price_col is None:
        for candidate in ("return", "returns", "ret"):
            if candidate in col:
                return_col = candidate
                break
        else:
            for candidate in ("close", "price", "adj_close"):
                if candidate in col:
                    price_col = candidate
                    break
        if return_col is None and price_col is None:
            raise DataError("no price or return column found; pass price_col or return_col")
    value_col = return_col if return_col is not None else price_col
    if value_col not in col:
        raise DataError(f"missing column {value_col!r}")

    dates, values, rms = [], [], []
    dropped = 0
    for raw in rows:
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) < len(header):
            dropped += 1
            continue
        d = _parse_date(raw[col[date_col]])
        v = _parse_field(raw[col[value_col]])
        rm_vals = [_parse_field(raw[col[rm]]) for rm in rm_columns]
        if v is None or any(r is None for r in rm_vals):
            dropped += 1
            continue
        if any(r < 0 for r in rm_vals):
            raise DataError(f"negative realized measure on {d.isoformat()}")
        dates.append(d)
        values.append(v)
        rms.append(rm_vals)
    if dropped:
        logger.info("dropped %d rows with missing fields from %s", dropped, path.name)
    if len(dates) < 2:
        raise DataError(f"fewer than 2 usable rows in {path}")

    values = np.asarray(values, dtype=float)
    panel = np.asarray(rms, dtype=float).reshape(len(dates), len(rm_columns))
    if price_col is not None:
        if np.any(values <= 0):
            raise DataError("non-positive price")
        returns = 100.0 * np.diff(np.log(values))
        dates, panel = dates[1:], panel[1:]
    else:
        returns = values

    return MarketSeries(
        name=marker_name or name or path.stem,
        dates=tuple(dates),
        returns=returns,
        rm_panel=panel,
        rm_names=tuple(rm_columns),
        vol_scale=(marker_scale == "volatility"),
    )


def to_volatility_scale(series: MarketSeries) -> MarketSeries:
    """Replace every realized-measure entry with its square root.

    Realized measures arrive on the variance scale; models consume them on the
    volatility scale. Re-application is rejected so the transform happens once.
    """
    if series.vol_scale:
        raise DataError("series is already on the volatility scale")
    return replace(series, rm_panel=np.sqrt(series.rm_panel), vol_scale=True)


def demean(returns, window_mean: float) -> np.ndarray:
    """Subtract the in-sample window mean (no look-ahead: the caller supplies it)."""
    return np.asarray(returns, dtype=float) - float(window_mean)


def rolling_windows(series: MarketSeries, plan: WindowPlan):
    """Yield the plan's m windows: window i is [i, i+T) targeting observation i+T.

    Windows with ``i % refit_every == 0`` are flagged for re-estimation; the rest
    reuse the last fitted parameters but refresh the filtered state on their data.
    """
    plan.validate(len(series))
    t, m = plan.in_sample_size, plan.out_sample_size
    for i in range(m):
        yield WindowSlice(index=i, start=i, stop=i + t, target=i + t,
                          refit=(i % plan.refit_every == 0))
