"""Metropolis-within-Gibbs sampler over the full hierarchical model.

One iteration runs, in this fixed order: precision draws, random effects,
inclusion indicators, coefficients, the spline jump step, a ceiling MH step
per pair and a random-walk MH step per speed-field site.  A run log asserts
the order every iteration.  Chains are independent given spawned RNG
streams and can be compared with the potential-scale-reduction diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bars, selection
from .errors import NumericalError
from .model import (
    HyperParams,
    ModelState,
    PanelDataset,
    PanelIndex,
    VARIANT_INVARIANT,
    VARIANT_SINCE_INTRO,
    VARIANTS,
)
from .splines import basis_matrix

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "FitContext",
    "initial_state",
    "draw_precisions",
    "draw_random_effects",
    "update_gamma",
    "update_beta",
    "update_spline",
    "mh_alpha",
    "mh_lambda",
    "run_chain",
    "run_chains",
    "gelman_rubin",
    "psrf",
    "scalar_series",
]

GIBBS_STEPS = ("precisions", "random_effects", "gamma", "beta", "spline", "alpha", "lambda")
TUNE_INTERVAL = 100
TARGET_ACCEPTANCE = 0.4


@dataclass
class SamplerConfig:
    n_iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 10
    n_chains: int = 4
    rng_seed: int = 0
    model_variant: str = VARIANT_SINCE_INTRO
    tune_lambda_step: bool = True

    def validate(self):
        if self.n_iterations <= 0 or self.thin <= 0 or self.n_chains < 1:
            raise ValueError("iterations, thin and chain count must be positive")
        if not 0 <= self.burn_in < self.n_iterations and self.burn_in != self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in <= n_iterations")
        if self.model_variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.model_variant!r}")


@dataclass
class ChainOutput:
    draws: list
    deviance: np.ndarray
    acceptance_rates: dict
    seed: int
    burn_in: int
    thin: int
    variant: str
    rw_step: float
    index: PanelIndex | None = None

    def __post_init__(self):
        if len(self.deviance) != len(self.draws):
            raise ValueError("deviance series must align with stored draws")


class FitContext:
    """Per-fit caches shared by the Gibbs steps: flattened panel, design
    cross-products and the spline basis at the unique time abscissae."""

    def __init__(self, index: PanelIndex):
        self.index = index
        self.z = index.z.copy()
        self.xtx = index.X.T @ index.X
        self.R = selection.build_correlation(index.X)
        self._basis_cache = {}
        # Grouped sufficient statistics make the spline regression O(unique abscissae).
        self._abs_counts = np.bincount(index.obs_abs_slot, minlength=len(index.unique_abs)).astype(float)

    def basis_at_unique(self, spline) -> np.ndarray:
        key = (spline.k,) + tuple(spline.xi.tolist())
        cached = self._basis_cache.get(key)
        if cached is None:
            cached = basis_matrix(spline, self.index.unique_abs)
            if len(self._basis_cache) > 512:
                self._basis_cache.clear()
            self._basis_cache[key] = cached
        return cached

    def f_obs(self, spline) -> np.ndarray:
        if self.index.variant == VARIANT_INVARIANT:
            return np.zeros(self.index.n_obs)
        return (self.basis_at_unique(spline) @ spline.omega)[self.index.obs_abs_slot]

    def spline_target(self, state: ModelState, hyper: HyperParams) -> bars.SplineTarget:
        idx = self.index
        residual = state.lam[idx.obs_site] - state.b_effect[idx.obs_b] - state.tau[idx.obs_product]
        sums = np.bincount(idx.obs_abs_slot, weights=residual, minlength=len(idx.unique_abs))
        means = np.divide(sums, self._abs_counts, out=np.zeros_like(sums), where=self._abs_counts > 0)
        return bars.SplineTarget(
            t=idx.unique_abs,
            response=means,
            precision=hyper.theta_h_precision,
            weights=self._abs_counts,
        )

    def log_likelihood(self, state: ModelState) -> float:
        idx = self.index
        hazard = state.lam[idx.obs_site] * (1.0 - idx.q / state.alpha[idx.obs_pair])
        resid = self.z - hazard
        n = idx.n_obs
        return 0.5 * n * (math.log(state.theta_L) - math.log(2.0 * math.pi)) - 0.5 * state.theta_L * float(resid @ resid)


def initial_state(ctx: FitContext, hyper: HyperParams, rng: np.random.Generator) -> ModelState:
    idx = ctx.index
    lower = idx.alpha_lower
    alpha = lower + (1.0 - lower) * rng.uniform(0.15, 0.85, size=idx.n_pairs)
    h = np.maximum(1.0 - idx.q / alpha[idx.obs_pair], 0.05)
    crude = np.clip(ctx.z / h, 0.05, 3.0)
    pair_mean = np.bincount(idx.obs_pair, weights=crude, minlength=idx.n_pairs)
    pair_mean /= np.maximum(np.bincount(idx.obs_pair, minlength=idx.n_pairs), 1)
    if idx.variant == VARIANT_INVARIANT:
        lam = pair_mean * np.exp(0.05 * rng.standard_normal(idx.n_pairs))
    else:
        lam = pair_mean[idx.obs_pair] * np.exp(0.05 * rng.standard_normal(idx.n_obs))
    resid = ctx.z - lam[idx.obs_site] * (1.0 - idx.q / alpha[idx.obs_pair])
    theta_L = idx.n_obs / (float(resid @ resid) + 1e-8)
    state = ModelState(
        lam=lam,
        alpha=alpha,
        spline=idx.empty_spline(),
        b_effect=rng.normal(0.0, 0.1, size=idx.m_b),
        tau=rng.normal(0.0, 0.05, size=len(idx.products)),
        beta=np.zeros(idx.K),
        gamma=(rng.uniform(size=idx.K) < hyper.w).astype(int),
        theta_L=min(theta_L, 1e8),
        theta_A=100.0,
        theta_B=100.0,
        theta_H=hyper.theta_h_value,
    )
    return state


def draw_precisions(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> None:
    """Conjugate Gamma draws for the three sampled precisions.

    The shape counts must be the number of observations, products and
    country-year cells respectively; anything looser breaks joint
    consistency between the forward and Gibbs simulators.
    """
    idx = ctx.index
    resid = ctx.z - state.lam[idx.obs_site] * (1.0 - idx.q / state.alpha[idx.obs_pair])
    s_obs = float(resid @ resid)
    s_tau = float(state.tau @ state.tau)
    b_resid = state.b_effect - idx.X @ (state.gamma * state.beta)
    s_b = float(b_resid @ b_resid)
    if not (math.isfinite(s_obs) and math.isfinite(s_tau) and math.isfinite(s_b)):
        raise NumericalError(
            f"non-finite residual sums: obs={s_obs}, tau={s_tau}, b={s_b}"
        )
    a0, b0 = hyper.precision_shape, hyper.precision_rate
    state.theta_L = rng.gamma(a0 + idx.n_obs / 2.0, 1.0 / (b0 + s_obs / 2.0))
    state.theta_A = rng.gamma(a0 + len(idx.products) / 2.0, 1.0 / (b0 + s_tau / 2.0))
    state.theta_B = rng.gamma(a0 + idx.m_b / 2.0, 1.0 / (b0 + s_b / 2.0))


def tau_conditional(state: ModelState, ctx: FitContext, hyper: HyperParams):
    """Posterior mean and precision of each product effect."""
    idx = ctx.index
    f_obs = ctx.f_obs(state.spline)
    v = state.lam[idx.obs_site] - f_obs - state.b_effect[idx.obs_b]
    sums = np.bincount(idx.obs_product, weights=v, minlength=len(idx.products))
    precision = state.theta_A + idx.obs_count_product * hyper.theta_h_precision
    mean = hyper.theta_h_precision * sums / precision
    return mean, precision


def b_conditional(state: ModelState, ctx: FitContext, hyper: HyperParams):
    """Posterior mean and precision of each country-year effect."""
    idx = ctx.index
    f_obs = ctx.f_obs(state.spline)
    v = state.lam[idx.obs_site] - f_obs - state.tau[idx.obs_product]
    sums = np.bincount(idx.obs_b, weights=v, minlength=idx.m_b)
    predictor = idx.X @ (state.gamma * state.beta)
    precision = state.theta_B + idx.obs_count_b * hyper.theta_h_precision
    mean = (state.theta_B * predictor + hyper.theta_h_precision * sums) / precision
    return mean, precision


def draw_random_effects(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> None:
    mean, precision = tau_conditional(state, ctx, hyper)
    state.tau = mean + rng.standard_normal(len(mean)) / np.sqrt(precision)
    mean_b, precision_b = b_conditional(state, ctx, hyper)
    state.b_effect = mean_b + rng.standard_normal(len(mean_b)) / np.sqrt(precision_b)


def update_gamma(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> None:
    order = rng.permutation(ctx.index.K)
    state.gamma = selection.gamma_full_conditional(
        state.b_effect, ctx.index.X, hyper, order, rng, state.gamma, xtx=ctx.xtx, R=ctx.R
    )


def update_beta(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> None:
    state.beta = selection.beta_full_conditional(
        state.b_effect, ctx.index.X, state.gamma, state.theta_B, hyper, rng, R=ctx.R
    )


def update_spline(state: ModelState, ctx: FitContext, hyper: HyperParams, rng, stats: dict) -> None:
    target = ctx.spline_target(state, hyper)
    proposal = bars.propose_move(state.spline, rng, hyper.poisson_rate, hyper.k_max)
    state.spline = bars.accept_move(state.spline, proposal, target, hyper, rng, stats)
    state.spline = bars.draw_coefficients(state.spline, target, rng)


def mh_alpha(state: ModelState, ctx: FitContext, hyper: HyperParams, rng) -> int:
    """Independence MH on each ceiling, proposing from its uniform prior."""
    idx = ctx.index
    proposal = idx.alpha_lower + (1.0 - idx.alpha_lower) * rng.uniform(size=idx.n_pairs)
    lam_obs = state.lam[idx.obs_site]
    resid_cur = ctx.z - lam_obs * (1.0 - idx.q / state.alpha[idx.obs_pair])
    resid_prop = ctx.z - lam_obs * (1.0 - idx.q / proposal[idx.obs_pair])
    ssq_cur = np.bincount(idx.obs_pair, weights=resid_cur**2, minlength=idx.n_pairs)
    ssq_prop = np.bincount(idx.obs_pair, weights=resid_prop**2, minlength=idx.n_pairs)
    log_ratio = -0.5 * state.theta_L * (ssq_prop - ssq_cur)
    accept = np.log(rng.uniform(size=idx.n_pairs)) < log_ratio
    state.alpha = np.where(accept, proposal, state.alpha)
    return int(accept.sum())


def _lambda_log_prior(lam: np.ndarray, hyper: HyperParams) -> np.ndarray:
    if hyper.lambda_prior_shape is None:
        return np.zeros_like(lam)
    return (hyper.lambda_prior_shape - 1.0) * np.log(lam) - lam / hyper.lambda_prior_scale


def _lambda_log_target(lam: np.ndarray, state: ModelState, ctx: FitContext, hyper: HyperParams, pull_mean) -> np.ndarray:
    idx = ctx.index
    resid = ctx.z - lam[idx.obs_site] * (1.0 - idx.q / state.alpha[idx.obs_pair])
    obs_term = np.bincount(idx.obs_site, weights=resid**2, minlength=idx.n_sites)
    pull = np.bincount(
        idx.obs_site, weights=(lam[idx.obs_site] - pull_mean) ** 2, minlength=idx.n_sites
    )
    return (
        -0.5 * state.theta_L * obs_term
        - 0.5 * hyper.theta_h_precision * pull
        + _lambda_log_prior(lam, hyper)
    )


def mh_lambda(state: ModelState, ctx: FitContext, hyper: HyperParams, rng, rw_step: float | None = None) -> int:
    """Sitewise random-walk MH on the speed field.

    The target combines the observation term, the Gaussian pull toward
    f + B + tau and, unless disabled, the diffuse positive prior; proposals
    at or below zero are rejected outright under that prior.
    """
    idx = ctx.index
    step = hyper.rw_step if rw_step is None else rw_step
    f_obs = ctx.f_obs(state.spline)
    pull_mean = f_obs + state.b_effect[idx.obs_b] + state.tau[idx.obs_product]
    proposal = state.lam + step * rng.standard_normal(idx.n_sites)
    in_support = proposal > 0 if hyper.lambda_prior_shape is not None else np.ones(idx.n_sites, bool)
    safe = np.where(in_support, proposal, state.lam)
    log_ratio = _lambda_log_target(safe, state, ctx, hyper, pull_mean) - _lambda_log_target(
        state.lam, state, ctx, hyper, pull_mean
    )
    accept = in_support & (np.log(rng.uniform(size=idx.n_sites)) < log_ratio)
    state.lam = np.where(accept, proposal, state.lam)
    return int(accept.sum())


def _expected_steps(variant: str):
    if variant == VARIANT_INVARIANT:
        return tuple(s for s in GIBBS_STEPS if s != "spline")
    return GIBBS_STEPS


def run_chain(
    data: PanelDataset,
    hyper: HyperParams,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    ctx: FitContext | None = None,
    seed: int | None = None,
) -> ChainOutput:
    """Run one chain; deterministic given the seed, storing thinned draws."""
    config.validate()
    hyper.validate()
    if ctx is None:
        ctx = FitContext(PanelIndex(data, config.model_variant))
    if rng is None:
        seed = config.rng_seed if seed is None else seed
        rng = np.random.default_rng(seed)
    state = initial_state(ctx, hyper, rng)

    rw_step = hyper.rw_step
    spline_stats: dict = {}
    accepted_alpha = accepted_lambda = 0
    tune_accepted = 0
    post_alpha = post_lambda = post_iterations = 0
    draws, deviance = [], []
    expected = _expected_steps(config.model_variant)

    for iteration in range(config.n_iterations):
        step_log = []
        in_burn = iteration < config.burn_in
        try:
            draw_precisions(state, ctx, hyper, rng)
            step_log.append("precisions")
            draw_random_effects(state, ctx, hyper, rng)
            step_log.append("random_effects")
            update_gamma(state, ctx, hyper, rng)
            step_log.append("gamma")
            update_beta(state, ctx, hyper, rng)
            step_log.append("beta")
            if config.model_variant != VARIANT_INVARIANT:
                update_spline(state, ctx, hyper, rng, spline_stats if not in_burn else {})
                step_log.append("spline")
            accepted_alpha = mh_alpha(state, ctx, hyper, rng)
            step_log.append("alpha")
            accepted_lambda = mh_lambda(state, ctx, hyper, rng, rw_step)
            step_log.append("lambda")
        except NumericalError as exc:
            raise NumericalError(f"iteration {iteration}: {exc}") from exc
        assert tuple(step_log) == expected, f"update order violated at iteration {iteration}"

        tune_accepted += accepted_lambda
        if in_burn and config.tune_lambda_step and (iteration + 1) % TUNE_INTERVAL == 0:
            rate = tune_accepted / (TUNE_INTERVAL * ctx.index.n_sites)
            rw_step = float(np.clip(rw_step * math.exp(0.8 * (rate - TARGET_ACCEPTANCE)), 1e-5, 2.0))
            tune_accepted = 0
        if not in_burn:
            post_iterations += 1
            post_alpha += accepted_alpha
            post_lambda += accepted_lambda
            if (iteration - config.burn_in) % config.thin == 0:
                snapshot = state.copy()
                snapshot.validate(ctx.index, require_positive_lambda=hyper.lambda_prior_shape is not None)
                draws.append(snapshot)
                deviance.append(-2.0 * ctx.log_likelihood(snapshot))

    rates = {}
    if post_iterations:
        rates["alpha"] = post_alpha / (post_iterations * ctx.index.n_pairs)
        rates["lambda"] = post_lambda / (post_iterations * ctx.index.n_sites)
        for kind in (bars.BIRTH, bars.DEATH, bars.RELOCATE):
            proposed = spline_stats.get(f"proposed_{kind}", 0)
            if proposed:
                rates[f"spline_{kind}"] = spline_stats.get(f"accepted_{kind}", 0) / proposed
        rates["spline_ill_conditioned"] = spline_stats.get("ill_conditioned", 0)
    return ChainOutput(
        draws=draws,
        deviance=np.array(deviance),
        acceptance_rates=rates,
        seed=seed if seed is not None else config.rng_seed,
        burn_in=config.burn_in,
        thin=config.thin,
        variant=config.model_variant,
        rw_step=rw_step,
        index=ctx.index,
    )


def run_chains(data: PanelDataset, hyper: HyperParams, config: SamplerConfig) -> list:
    """Run config.n_chains chains sequentially with independent spawned RNG streams."""
    config.validate()
    index = PanelIndex(data, config.model_variant)
    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.n_chains)
    chains = []
    for c, seq in enumerate(seeds):
        ctx = FitContext(index)
        rng = np.random.default_rng(seq)
        chains.append(run_chain(data, hyper, config, rng=rng, ctx=ctx, seed=config.rng_seed + c))
    return chains


def scalar_series(chain: ChainOutput, selector) -> np.ndarray:
    if callable(selector):
        return np.array([float(selector(s)) for s in chain.draws])
    return np.array([float(getattr(s, selector)) for s in chain.draws])


def psrf(series: list) -> float:
    """Potential scale reduction over >= 2 equal-length scalar series, floored at 1."""
    if len(series) < 2:
        raise ValueError("potential scale reduction needs n_chains >= 2")
    series = [np.asarray(s, dtype=float) for s in series]
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise ValueError("chains must have equal post-burn-in lengths")
    n = lengths.pop()
    if n < 2:
        raise ValueError("chains too short for the diagnostic")
    within = float(np.mean([np.var(s, ddof=1) for s in series]))
    means = np.array([np.mean(s) for s in series])
    between_over_n = float(np.var(means, ddof=1))
    if within == 0.0:
        return 1.0 if between_over_n == 0.0 else math.inf
    pooled = (n - 1) / n * within + between_over_n
    return max(1.0, math.sqrt(pooled / within))


def gelman_rubin(chains: list, selector) -> float:
    """Potential scale reduction of one scalar across chains of stored draws."""
    if len(chains) < 2:
        raise ValueError("potential scale reduction needs n_chains >= 2")
    return psrf([scalar_series(c, selector) for c in chains])
