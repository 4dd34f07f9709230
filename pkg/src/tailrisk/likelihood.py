"""Asymmetric-Laplace quasi-likelihood, measurement likelihood and the flat prior.

The AL log score is kept with all constants so its negative equals the joint
VaR/ES loss exactly. The measurement covariance is profiled out in two documented
ways: divisor T for the plug-in (profile) solution, divisor T-K-1 for the
integrated likelihood obtained under a Jeffreys prior on the covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .models import (FilterInit, ModelSpec, ParamVector, _FAMILY_CODE, _as_panel,
                     check_region_a, init_state, measurement_count)

NEG_INF = float("-inf")


@dataclass(frozen=True)
class LikelihoodResult:
    """Split quasi-log-likelihood; ``total`` is the -inf sentinel when invalid."""

    al_part: float
    meas_part: float
    total: float
    sigma_hat: np.ndarray | None
    valid: bool


def al_logscore_sum(returns, Q, ES, alpha: float) -> float:
    """Sum over t of log((alpha-1)/ES_t) + (r_t-Q_t)(alpha - 1[r_t<=Q_t])/(alpha*ES_t).

    (alpha-1)/ES_t is positive for ES_t < 0, so every log is finite; any ES_t >= 0
    invalidates the whole sum (-inf).
    """
    r = np.asarray(returns, dtype=float)
    q = np.asarray(Q, dtype=float)
    es = np.asarray(ES, dtype=float)
    if not (r.shape == q.shape == es.shape):
        raise ValueError("returns, Q and ES must have equal lengths")
    if np.any(es >= 0.0) or not np.all(np.isfinite(es)):
        return NEG_INF
    hit = (r <= q).astype(float)
    terms = np.log((alpha - 1.0) / es) + (r - q) * (alpha - hit) / (alpha * es)
    total = float(terms.sum())
    return total if math.isfinite(total) else NEG_INF


def sigma_hat(U, divisor: int) -> np.ndarray:
    """(1/divisor) * sum_t u_t u_t' for a (T, K) residual matrix (1-D means K=1)."""
    u = np.asarray(U, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    T, K = u.shape
    if T <= K + 1:
        raise ValueError(f"need T > K+1 residual rows, got T={T}, K={K}")
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    return (u.T @ u) / float(divisor)


def _eval_parts(spec: ModelSpec, vals: np.ndarray, returns, rms_vol,
                fixed_e2, init):
    """Shared setup for the integrated/profile evaluations; returns kernel output."""
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
    status, al, meas = _k.integrated_parts(
        _FAMILY_CODE[spec.family], nm, spec.alpha, e2mode, fe2,
        np.ascontiguousarray(vals), r, x, logx, q0, om0, eps0,
        np.ascontiguousarray(u0), Q, OM, EPS, U, E2H)
    return status, al, meas, U, T


def integrated_loglik(spec: ModelSpec, theta: ParamVector | np.ndarray, returns,
                      rms_vol=None, fixed_e2: float | None = None,
                      init: FilterInit | None = None) -> LikelihoodResult:
    """AL part plus -(T-K-1)/2 * log|S| with S the divisor-(T-K-1) residual covariance.

    Invalid (total -inf) when theta leaves the prior region, the filtered path is
    non-finite, any ES_t >= 0, or the residual covariance is singular
    (determinant <= 1e-300); the sampler treats such draws as always rejected.
    """
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    if not check_region_a(spec, vals):
        return LikelihoodResult(NEG_INF, NEG_INF, NEG_INF, None, False)
    status, al, meas, U, T = _eval_parts(spec, vals, returns, rms_vol, fixed_e2, init)
    if status != _k.OK:
        return LikelihoodResult(NEG_INF, NEG_INF, NEG_INF, None, False)
    nm = measurement_count(spec.family, spec.K)
    sig = sigma_hat(U, T - nm - 1) if nm else np.zeros((0, 0))
    return LikelihoodResult(al_part=al, meas_part=meas, total=al + meas,
                            sigma_hat=sig, valid=True)


def profile_loglik(spec: ModelSpec, theta: ParamVector | np.ndarray, returns,
                   rms_vol=None, fixed_e2: float | None = None,
                   init: FilterInit | None = None) -> float:
    """Full quasi-log-likelihood with the divisor-T covariance plugged in.

    Equals AL part - (T/2)*(K*log(2pi) + log|S_T|) - TK/2, the quadratic form
    collapsing to TK by the profile identity. Used for MLE-style cross-checks.
    """
    vals = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    if not check_region_a(spec, vals):
        return NEG_INF
    status, al, _, U, T = _eval_parts(spec, vals, returns, rms_vol, fixed_e2, init)
    if status != _k.OK:
        return NEG_INF
    K = measurement_count(spec.family, spec.K)
    if K == 0:
        return al
    sig = sigma_hat(U, T)
    sign, logdet = np.linalg.slogdet(sig)
    if sign <= 0 or not math.isfinite(logdet):
        return NEG_INF
    return al - 0.5 * T * (K * math.log(2.0 * math.pi) + logdet) - 0.5 * T * K


def log_prior(spec: ModelSpec, theta: ParamVector | np.ndarray) -> float:
    """Flat prior over the region-A box: 0 inside, -inf outside."""
    return 0.0 if check_region_a(spec, theta) else NEG_INF


class IntegratedPosterior:
    """Callable log posterior (flat prior + integrated quasi-likelihood) on one window.

    Precomputes the data arrays and start state once; each call costs one filter
    pass. Reentrant: evaluation buffers are allocated per call.
    """

    def __init__(self, spec: ModelSpec, returns, rms_vol=None,
                 fixed_e2: float | None = None, init: FilterInit | None = None):
        self.spec = spec
        self.returns = np.ascontiguousarray(np.asarray(returns, dtype=float))
        T = self.returns.shape[0]
        self.x = _as_panel(rms_vol, T, spec.K)
        self.logx = np.log(self.x) if spec.K else self.x
        self.n_meas = measurement_count(spec.family, spec.K)
        if init is None:
            q0, om0 = init_state(self.returns, spec.alpha)
            self.init = FilterInit(q0=q0, omega0=om0, eps0=0.0, u0=np.zeros(self.n_meas))
        else:
            u0 = np.zeros(self.n_meas) if init.u0 is None else np.asarray(init.u0, dtype=float)
            self.init = FilterInit(q0=init.q0, omega0=init.omega0, eps0=init.eps0, u0=u0)
        if spec.centered_leverage:
            self.e2mode = _k.E2_FIXED if fixed_e2 is not None else _k.E2_EXPANDING
        else:
            self.e2mode = _k.E2_RAW
        self.fixed_e2 = float(fixed_e2) if fixed_e2 is not None else 0.0
        self._lo, self._hi, self._lo_closed = None, None, None

    def __call__(self, values: np.ndarray) -> float:
        vals = np.asarray(values, dtype=float)
        if not check_region_a(self.spec, vals):
            return NEG_INF
        T = self.returns.shape[0]
        Q = np.empty(T)
        OM = np.empty(T)
        EPS = np.empty(T)
        U = np.empty((T, self.n_meas))
        E2H = np.empty(T)
        status, al, meas = _k.integrated_parts(
            _FAMILY_CODE[self.spec.family], self.n_meas, self.spec.alpha, self.e2mode,
            self.fixed_e2, np.ascontiguousarray(vals), self.returns, self.x,
            self.logx, self.init.q0, self.init.omega0, self.init.eps0,
            self.init.u0, Q, OM, EPS, U, E2H)
        return al + meas if status == _k.OK else NEG_INF
