"""Two-simulator joint-consistency harness on a 2x2x5 toy model.

The marginal-conditional simulator draws parameters from their priors; the
successive-conditional simulator alternates one full Gibbs sweep (indicator
update excluded, indicators held fixed) with a redraw of the observed
adoption ratios given the parameters.  Both target the same joint
distribution, so every parameter moment must agree up to Monte Carlo error.

The toy fixes the adoption scaffold (cumulative counts and populations stay
constant while the ratios are redrawn), uses moderate precision priors and
disables the positivity factor on the speed field so that all conditionals
are exactly conjugate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky

from diffspeed.engine import (
    FitContext,
    draw_precisions,
    draw_random_effects,
    mh_alpha,
    mh_lambda,
    update_beta,
    update_spline,
)
from diffspeed.model import (
    Covariate,
    HyperParams,
    ModelState,
    PanelDataset,
    PanelIndex,
    Series,
)
from diffspeed.splines import SplineState

GAMMA_FIXED = np.array([1, 0, 1])


def toy_hyper() -> HyperParams:
    # Scales chosen so the three levels of the hierarchy are comparable;
    # wildly unequal scales create a funnel the Gibbs sweep crosses too
    # slowly for moment estimates to settle.
    return HyperParams(
        upsilon=2.0,
        w=0.3,
        poisson_rate=2.0,
        precision_shape=5.0,
        precision_rate=0.5,
        theta_h_value=0.25,
        lambda_prior_shape=None,  # keep the speed-field level exactly Gaussian
        rw_step=0.5,
        k_max=6,
    )


def toy_context(seed: int = 0) -> FitContext:
    rng = np.random.default_rng(seed)
    countries = ["A", "B"]
    products = ["P1", "P2"]
    years = np.arange(2000, 2005)
    cum = np.array([300.0, 320.0, 340.0, 360.0, 380.0])
    series = {}
    for c in countries:
        for p in products:
            series[(c, p)] = Series(
                country=c,
                product=p,
                years=years,
                adopters=np.full(5, 20.0),
                cum_prev=cum.copy(),
                population=np.full(5, 1000.0),
            )
    covariates = [
        Covariate(
            name=f"X{k}",
            time_varying=True,
            values={c: {int(y): float(rng.normal()) for y in years} for c in countries},
        )
        for k in range(3)
    ]
    data = PanelDataset(
        countries=countries, products=products, series=series, covariates=covariates
    ).finalize()
    return FitContext(PanelIndex(data))


def forward_draw(ctx: FitContext, hyper: HyperParams, rng: np.random.Generator) -> ModelState:
    """One exact draw of all parameters from the prior/hierarchy."""
    idx = ctx.index
    shape, rate = hyper.precision_shape, hyper.precision_rate
    theta_L, theta_A, theta_B = rng.gamma(shape, 1.0 / rate, size=3)
    tau = rng.normal(0.0, 1.0 / math.sqrt(theta_A), size=len(idx.products))

    beta = np.zeros(idx.K)
    active = np.flatnonzero(GAMMA_FIXED == 1)
    slab = hyper.upsilon * ctx.R[np.ix_(active, active)]
    beta[active] = cholesky(slab, lower=True) @ rng.standard_normal(len(active))

    predictor = idx.X @ (GAMMA_FIXED * beta)
    b_effect = predictor + rng.normal(0.0, 1.0 / math.sqrt(theta_B), size=idx.m_b)

    while True:
        k = rng.poisson(hyper.poisson_rate)
        if k <= hyper.k_max:
            break
    xi = np.sort(rng.uniform(idx.spline_a, idx.spline_b, size=k))
    spline = SplineState(idx.spline_a, idx.spline_b, xi, rng.standard_normal(k + 2))

    alpha = idx.alpha_lower + (1.0 - idx.alpha_lower) * rng.uniform(size=idx.n_pairs)
    state = ModelState(
        lam=np.zeros(idx.n_sites),
        alpha=alpha,
        spline=spline,
        b_effect=b_effect,
        tau=tau,
        beta=beta,
        gamma=GAMMA_FIXED.copy(),
        theta_L=theta_L,
        theta_A=theta_A,
        theta_B=theta_B,
        theta_H=hyper.theta_h_value,
    )
    mean = ctx.f_obs(spline) + b_effect[idx.obs_b] + tau[idx.obs_product]
    state.lam = mean + rng.normal(0.0, math.sqrt(hyper.theta_h_value), size=idx.n_sites)
    return state


def redraw_data(ctx: FitContext, state: ModelState, rng: np.random.Generator) -> None:
    idx = ctx.index
    hazard = state.lam[idx.obs_site] * (1.0 - idx.q / state.alpha[idx.obs_pair])
    ctx.z = hazard + rng.normal(0.0, 1.0 / math.sqrt(state.theta_L), size=idx.n_obs)


def gibbs_sweep(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> None:
    """One sweep of the sampler with the indicators held fixed."""
    draw_precisions(state, ctx, hyper, rng)
    draw_random_effects(state, ctx, hyper, rng)
    update_beta(state, ctx, hyper, rng)
    update_spline(state, ctx, hyper, rng, {})
    mh_alpha(state, ctx, hyper, rng)
    mh_lambda(state, ctx, hyper, rng)


def tracked_scalars(state: ModelState) -> dict:
    return {
        "theta_L": state.theta_L,
        "theta_A": state.theta_A,
        "theta_B": state.theta_B,
        "tau_0": state.tau[0],
        "tau_1": state.tau[1],
        "beta_0": state.beta[0],
        "beta_2": state.beta[2],
        "alpha_0": state.alpha[0],
        "alpha_3": state.alpha[3],
        "lambda_site0": state.lam[0],
    }


def run_marginal(ctx, hyper, n_draws: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    records = {name: np.empty(n_draws) for name in tracked_scalars(forward_draw(ctx, hyper, rng))}
    for i in range(n_draws):
        for name, value in tracked_scalars(forward_draw(ctx, hyper, rng)).items():
            records[name][i] = value
    return records


def run_successive(ctx, hyper, n_sweeps: int, burn_in: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    state = forward_draw(ctx, hyper, rng)
    redraw_data(ctx, state, rng)
    records = {name: np.empty(n_sweeps) for name in tracked_scalars(state)}
    for i in range(burn_in + n_sweeps):
        gibbs_sweep(state, ctx, hyper, rng)
        redraw_data(ctx, state, rng)
        if i >= burn_in:
            for name, value in tracked_scalars(state).items():
                records[name][i - burn_in] = value
    return records


def _batch_se(series: np.ndarray, n_batches: int = 50) -> float:
    usable = len(series) - len(series) % n_batches
    batches = series[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(np.std(batches, ddof=1) / math.sqrt(n_batches))


@dataclass
class MomentComparison:
    name: str
    z: float


def compare_moments(marginal: dict, successive: dict) -> list:
    """z-scores of first and second moments between the two simulators."""
    out = []
    for name in marginal:
        for power, label in ((1, "mean"), (2, "second")):
            a, b = marginal[name] ** power, successive[name] ** power
            se_a = float(np.std(a, ddof=1) / math.sqrt(len(a)))
            se_b = _batch_se(b)
            z = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(se_a**2 + se_b**2)
            out.append(MomentComparison(name=f"{name}:{label}", z=z))
    return out
