import numpy as np
import pytest

import tailrisk as tk


@pytest.fixture(scope="session")
def paper_sim():
    """One n=2000 draw from the paper-preset generator, shared across tests."""
    dgp = tk.paper_dgp(1)
    sim = tk.regarch_simulate(dgp, 2000, seed=42)
    return dgp, sim


@pytest.fixture(scope="session")
def vol_series(paper_sim):
    _, sim = paper_sim
    return tk.to_volatility_scale(sim.series)


@pytest.fixture(scope="session")
def mapped_25(paper_sim):
    dgp, _ = paper_sim
    return tk.map_true_params(dgp, 0.025, centered=True)


def random_region_theta(rng, family, K, moderate=True):
    """Uniform draw from the prior box; `moderate` shrinks toward stable paths."""
    lo, hi, lo_closed = tk.region_bounds(family, K)
    vals = rng.uniform(lo, hi)
    if moderate:
        vals = rng.uniform(np.maximum(lo, -0.5), np.minimum(hi, 0.5))
        ar = tk.models.ar_coef_index(family)
        vals[ar] = rng.uniform(0.0, 0.9)
    return vals
