"""Joint semi-parametric VaR/ES forecasting with multiple realized measures."""

__version__ = "0.1.0"

from .backtest import (LossSeries, McsResult, VRate, joint_loss, mcs,
                       quantile_loss, rank_table, vrate)
from .data import (DataError, MarketSeries, WindowPlan, WindowSlice, demean,
                   load_market_csv, rolling_windows, to_volatility_scale)
from .forecast import (ForecastError, ForecastSeries, one_step_forecast,
                       read_forecast_csv, rolling_forecast)
from .likelihood import (IntegratedPosterior, LikelihoodResult, al_logscore_sum,
                         integrated_loglik, log_prior, profile_loglik, sigma_hat)
from .mcmc import (BlockStructure, Chain, McmcConfig, ProposalState,
                   block_structure, metropolis_sweep, posterior_mean,
                   posterior_summary, propose, run, target_rate, tune)
from .models import (FilterInit, ModelError, ModelFamily, ModelSpec, ParamVector,
                     RiskPath, check_region_a, filter_path, init_state,
                     param_names, region_bounds, stationarity_diagnostic,
                     write_risk_path)
from .simulate import (AlphaConstants, MappedParams, RecoveryReport,
                       RegarchParams, SimulatedMarket, alpha_constants,
                       map_true_params, paper_dgp, recovery_study,
                       regarch_simulate)

__all__ = [name for name in dir() if not name.startswith("_")]
