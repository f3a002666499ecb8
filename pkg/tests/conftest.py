import time

import pytest

from diffspeed.engine import SamplerConfig, run_chains
from diffspeed.model import HyperParams
from diffspeed.synthetic import GeneratorConfig, simulate_panel

BIG_SEED = 2024
FIT_SEED = 99


@pytest.fixture(scope="session")
def big_sim():
    """Default synthetic panel: 31 countries x 4 products, U-shaped time effect."""
    return simulate_panel(GeneratorConfig(), seed=BIG_SEED)


@pytest.fixture(scope="session")
def big_fits(big_sim):
    """Full fits of all three model variants on the default panel, with timings."""
    fits, timings = {}, {}
    for variant in ("since_intro", "calendar", "invariant"):
        config = SamplerConfig(
            n_iterations=10_000,
            burn_in=2_000,
            thin=10,
            n_chains=4,
            rng_seed=FIT_SEED,
            model_variant=variant,
        )
        start = time.time()
        fits[variant] = run_chains(big_sim.data, HyperParams(), config)
        timings[variant] = time.time() - start
    return {"fits": fits, "timings": timings}
