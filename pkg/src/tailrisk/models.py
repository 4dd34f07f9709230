"""Model families and their deterministic forward filters.

Five semi-parametric joint VaR/ES families are implemented. All share the additive
structure ES_t = Q_t - omega_t with a non-negative gap process omega_t; they differ
in the quantile recursion and in whether measurement equations tie the quantile to
realized measures.

Parameter layouts (flat vectors, in order):

* ``res-caviar-m`` (K in 1..3, 6K+6 parameters)::

      log(-Q_t) = omega + beta*log(-Q_{t-1}) + tau1*eps_{t-1} + tau2*q(eps_{t-1})
                  + sum_j gamma_j * u_{j,t-1}
      omega_t   = nu0 + nu1*omega_{t-1} + sum_j psi_j * |u_{j,t-1}|
      log(x_{j,t}) = xi_j + phi_j*log(-Q_t) + delta_j1*eps_t + delta_j2*q(eps_t) + u_{j,t}

  layout: omega, beta, tau1, tau2, gamma[1..K], xi[1..K], phi[1..K],
  delta11..deltaK1, delta12..deltaK2, nu0, nu1, psi[1..K].

* ``log-res-caviar`` (K=1, 10 parameters)::

      log(-Q_t) = b0 + b1*log(x_{t-1}) + b2*log(-Q_{t-1})
      omega_t   = g0 + g1*x_{t-1} + g2*omega_{t-1}
      log(x_t)  = xi + phi*log(-Q_t) + tau1*eps_t + tau2*q(eps_t) + u_t

* ``res-caviar`` (K=1, 10 parameters): same layout as ``log-res-caviar`` but the
  quantile and measurement equations run on levels, regressing x_t on (-Q_t).

* ``es-x-caviar-x`` (K=1, 6 parameters)::

      Q_t = b0 + b1*x_{t-1} + b2*Q_{t-1};  omega_t = g0 + g1*x_{t-1} + g2*omega_{t-1}

* ``es-caviar-add`` (K=0, 5 parameters)::

      Q_t = b0 + b1*|r_{t-1}| + b2*Q_{t-1};  omega_t = g0 + g1*omega_{t-1}

Everywhere eps_t = r_t / Q_t and q(e) = e^2, or e^2 - E_hat when the spec's
``centered_leverage`` is on (E_hat is a supplied constant or the causal expanding
mean of past eps^2). Missing lags at t=1 contribute zero, except the x lag of the
measurement-equation families, which is imputed at its zero-noise model value so
the recursions nest exactly.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k


class ModelError(ValueError):
    """Raised for invalid model specifications or parameter vectors."""


class ModelFamily(str, enum.Enum):
    RES_CAVIAR_M = "res-caviar-m"
    LOG_RES_CAVIAR = "log-res-caviar"
    RES_CAVIAR = "res-caviar"
    ES_X_CAVIAR_X = "es-x-caviar-x"
    ES_CAVIAR_ADD = "es-caviar-add"


_FAMILY_CODE = {
    ModelFamily.RES_CAVIAR_M: _k.FAM_RESM,
    ModelFamily.LOG_RES_CAVIAR: _k.FAM_LOG,
    ModelFamily.RES_CAVIAR: _k.FAM_RES,
    ModelFamily.ES_X_CAVIAR_X: _k.FAM_ESX,
    ModelFamily.ES_CAVIAR_ADD: _k.FAM_ADD,
}

_ALLOWED_K = {
    ModelFamily.RES_CAVIAR_M: (1, 2, 3),
    ModelFamily.LOG_RES_CAVIAR: (1,),
    ModelFamily.RES_CAVIAR: (1,),
    ModelFamily.ES_X_CAVIAR_X: (1,),
    ModelFamily.ES_CAVIAR_ADD: (0,),
}

D0 = 3.0  # flat-prior half-width for unconstrained parameters


def param_names(family: ModelFamily, K: int) -> list[str]:
    if family == ModelFamily.RES_CAVIAR_M:
        names = ["omega", "beta", "tau1", "tau2"]
        names += [f"gamma{j}" for j in range(1, K + 1)]
        names += [f"xi{j}" for j in range(1, K + 1)]
        names += [f"phi{j}" for j in range(1, K + 1)]
        names += [f"delta{j}1" for j in range(1, K + 1)]
        names += [f"delta{j}2" for j in range(1, K + 1)]
        names += ["nu0", "nu1"]
        names += [f"psi{j}" for j in range(1, K + 1)]
        return names
    if family in (ModelFamily.LOG_RES_CAVIAR, ModelFamily.RES_CAVIAR):
        return ["b0", "b1", "b2", "g0", "g1", "g2", "xi", "phi", "tau1", "tau2"]
    if family == ModelFamily.ES_X_CAVIAR_X:
        return ["b0", "b1", "b2", "g0", "g1", "g2"]
    return ["b0", "b1", "b2", "g0", "g1"]


def ar_coef_index(family: ModelFamily) -> int:
    """Index of the quantile autoregressive coefficient (the |.|<1 one)."""
    return 1 if family == ModelFamily.RES_CAVIAR_M else 2


def measurement_count(family: ModelFamily, K: int) -> int:
    """Measurement equations (residual columns); the exogenous-RM families have none."""
    if family in (ModelFamily.ES_X_CAVIAR_X, ModelFamily.ES_CAVIAR_ADD):
        return 0
    return K


def region_bounds(family: ModelFamily, K: int):
    """Flat-prior support: (lo, hi, lo_closed) arrays for the family's layout.

    Every parameter lies in (-D0, D0) except the autoregressive coefficient,
    restricted to (-1, 1), and the gap-equation coefficients, restricted to
    [0, D0) to keep omega_t non-negative.
    """
    names = param_names(family, K)
    n = len(names)
    lo = np.full(n, -D0)
    hi = np.full(n, D0)
    lo_closed = np.zeros(n, dtype=np.bool_)
    ar = ar_coef_index(family)
    lo[ar], hi[ar] = -1.0, 1.0
    if family == ModelFamily.RES_CAVIAR_M:
        nonneg = ["nu0", "nu1"] + [f"psi{j}" for j in range(1, K + 1)]
    elif family == ModelFamily.ES_CAVIAR_ADD:
        nonneg = ["g0", "g1"]
    else:
        nonneg = ["g0", "g1", "g2"]
    for name in nonneg:
        i = names.index(name)
        lo[i] = 0.0
        lo_closed[i] = True
    return lo, hi, lo_closed


@dataclass(frozen=True)
class ModelSpec:
    """One model family at one probability level with K realized measures."""

    family: ModelFamily
    K: int
    alpha: float
    centered_leverage: bool = False

    def __post_init__(self):
        family = ModelFamily(self.family)
        object.__setattr__(self, "family", family)
        if self.K not in _ALLOWED_K[family]:
            raise ModelError(f"{family.value} does not support K={self.K} "
                             f"(allowed: {_ALLOWED_K[family]})")
        if not (0.0 < self.alpha < 0.5):
            raise ModelError(f"alpha must lie in (0, 0.5), got {self.alpha}")

    @property
    def n_params(self) -> int:
        return len(param_names(self.family, self.K))

    @property
    def param_names(self) -> list[str]:
        return param_names(self.family, self.K)


@dataclass(frozen=True)
class ParamVector:
    """A full parameter vector for one family, in the documented layout."""

    family: ModelFamily
    K: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        vals = np.asarray(self.values, dtype=float).copy()
        expected = len(param_names(self.family, self.K))
        if vals.shape != (expected,):
            raise ModelError(f"{self.family.value} K={self.K} needs {expected} "
                             f"parameters, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def names(self) -> list[str]:
        return param_names(self.family, self.K)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    @classmethod
    def from_dict(cls, family: ModelFamily, K: int, mapping: dict[str, float],
                  default: float = 0.0) -> "ParamVector":
        names = param_names(ModelFamily(family), K)
        unknown = set(mapping) - set(names)
        if unknown:
            raise ModelError(f"unknown parameter names: {sorted(unknown)}")
        return cls(family, K, np.array([mapping.get(n, default) for n in names]))


def check_region_a(spec: ModelSpec, theta: ParamVector | np.ndarray) -> bool:
    """True iff theta sits inside the flat-prior support of spec's family."""
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    lo, hi, lo_closed = region_bounds(spec.family, spec.K)
    if vals.shape != lo.shape:
        return False
    inside = (vals > lo) & (vals < hi)
    inside |= lo_closed & (vals == lo)
    return bool(np.all(inside) and np.all(np.isfinite(vals)))


@dataclass(frozen=True)
class FilterInit:
    """Explicit recursion start state; mostly for exactness tests against a DGP."""

    q0: float
    omega0: float
    eps0: float = 0.0
    u0: np.ndarray | None = None


@dataclass(frozen=True)
class RiskPath:
    """Filtered per-day state: quantile, gap, ES, multiplicative errors, residuals."""

    Q: np.ndarray
    omega: np.ndarray
    ES: np.ndarray
    eps: np.ndarray
    U: np.ndarray          # (T, K) measurement residuals
    e2hat: np.ndarray      # centering constant used at each step
    finite: bool

    def __len__(self) -> int:
        return len(self.Q)


def init_state(in_sample_returns, alpha: float) -> tuple[float, float]:
    """Empirical start state: alpha-quantile and quantile-minus-tail-mean gap.

    Uses the linear-interpolation (type-7) quantile so tests are exact. Requires a
    negative empirical quantile; a non-negative one means the sample needs
    demeaning or is unusable for left-tail work.
    """
    r = np.asarray(in_sample_returns, dtype=float)
    if r.size < 50:
        raise ModelError(f"need at least 50 returns to initialize, got {r.size}")
    q0 = float(np.quantile(r, alpha))
    if q0 >= 0.0:
        raise ModelError(
            "empirical quantile is non-negative; demean the window or reject it")
    tail = r[r <= q0]
    om0 = q0 - float(tail.mean())
    return q0, om0


def _as_panel(rms_vol, T: int, K: int) -> np.ndarray:
    x = np.asarray(rms_vol, dtype=float)
    if K == 0:
        return np.zeros((T, 0))
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape != (T, K):
        raise ModelError(f"realized-measure panel shape {x.shape} != ({T}, {K})")
    return np.ascontiguousarray(x)


def filter_path(spec: ModelSpec, theta: ParamVector | np.ndarray, returns,
                rms_vol=None, fixed_e2: float | None = None,
                init: FilterInit | None = None) -> RiskPath:
    """Run the family's forward filter and return the full risk path.

    ``returns`` must be demeaned and ``rms_vol`` on the volatility scale. When
    ``init`` is omitted the recursion starts from :func:`init_state` with zero
    lagged errors/residuals. The path is flagged non-finite (and the tail filled
    with NaN) when the quantile guard trips or any non-finite value arises;
    downstream likelihoods treat that as log-density -inf.
    """
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    if not check_region_a(spec, vals):
        raise ModelError("theta outside the flat-prior region")
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    T = r.shape[0]
    x = _as_panel(rms_vol, T, spec.K)
    logx = np.log(x) if spec.K else x
    nm = measurement_count(spec.family, spec.K)

    if init is None:
        q0, om0 = init_state(r, spec.alpha)
        eps0, u0 = 0.0, np.zeros(nm)
    else:
        q0, om0, eps0 = init.q0, init.omega0, init.eps0
        u0 = np.zeros(nm) if init.u0 is None else np.asarray(init.u0, dtype=float)
        if q0 >= 0.0:
            raise ModelError("initial quantile must be negative")
        if u0.shape != (nm,):
            raise ModelError("u0 must have one entry per measurement equation")

    if spec.centered_leverage:
        e2mode = _k.E2_FIXED if fixed_e2 is not None else _k.E2_EXPANDING
    else:
        e2mode = _k.E2_RAW
    fe2 = float(fixed_e2) if fixed_e2 is not None else 0.0

    Q = np.empty(T)
    OM = np.empty(T)
    EPS = np.empty(T)
    U = np.empty((T, nm))
    E2H = np.empty(T)
    status, steps = _k.filter_kernel(
        _FAMILY_CODE[spec.family], nm, e2mode, fe2, np.ascontiguousarray(vals),
        r, x, logx, q0, om0, eps0, np.ascontiguousarray(u0), Q, OM, EPS, U, E2H)
    finite = status == _k.OK
    if not finite:
        for arr in (Q, OM, EPS, E2H):
            arr[steps:] = np.nan
        U[steps:, :] = np.nan
    return RiskPath(Q=Q, omega=OM, ES=Q - OM, eps=EPS, U=U, e2hat=E2H, finite=finite)


def stationarity_diagnostic(spec: ModelSpec, theta: ParamVector | np.ndarray) -> float:
    """beta - sum_j gamma_j*phi_j for the multi-measure family.

    Values below 1 indicate stability of the substituted quantile recursion. This
    is a diagnostic only, never a prior constraint.
    """
    if spec.family != ModelFamily.RES_CAVIAR_M:
        raise ModelError("stationarity diagnostic is defined for res-caviar-m only")
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    K = spec.K
    beta = vals[1]
    gamma = vals[4:4 + K]
    phi = vals[4 + 2 * K:4 + 3 * K]
    return float(beta - np.dot(gamma, phi))


def write_risk_path(path, risk: RiskPath, dates=None, header_lines: tuple[str, ...] = ()) -> None:
    """Dump a risk path as CSV (date, Q, omega, ES, eps, u_1..u_K) for audit."""
    K = risk.U.shape[1]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["date", "Q", "omega", "ES", "eps",
                         *(f"u_{j}" for j in range(1, K + 1))])
        for t in range(len(risk)):
            d = dates[t].isoformat() if dates is not None else t
            writer.writerow([d, repr(float(risk.Q[t])), repr(float(risk.omega[t])),
                             repr(float(risk.ES[t])), repr(float(risk.eps[t])),
                             *(repr(float(risk.U[t, j])) for j in range(K))])
