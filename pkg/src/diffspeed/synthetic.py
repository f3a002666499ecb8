"""Synthetic panel generator with recorded ground truth.

Adoption panels of this kind are licensed data and cannot ship with the
code, so recovery tests and the CLI default to a synthetic analogue: 31
countries by four products (two long series, two short ones truncated at
seven years), staggered introduction years, ten country covariates of which
two drive the speed field, a U-shaped shared time effect over years since
introduction, and ceilings in the 0.68-0.80 range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Covariate,
    PanelDataset,
    Series,
    TIME_AXIS_SINCE_INTRO,
    diffusion_hazard,
)

__all__ = ["GeneratorConfig", "SyntheticTruth", "SimulationResult", "simulate_panel", "roll_series"]

MAX_RESAMPLES = 50


@dataclass
class GeneratorConfig:
    n_countries: int = 31
    n_products: int = 4
    n_covariates: int = 10
    n_time_varying: int = 6
    active_betas: tuple = (0.123, -0.081)
    long_length: int = 17
    short_length: int = 7
    product_base_years: tuple = (1980, 1983, 1987, 1990)
    last_year: int = 2004
    intro_spread: int = 9  # country-level stagger of introduction years
    alpha_range: tuple = (0.68, 0.80)
    f_mid: float = 0.35
    f_depth: float = 0.25
    theta_L: float = 1e4  # observation precision; math.inf turns noise off
    theta_A: float = 400.0
    theta_B: float = 400.0
    theta_H: float = 1e-4  # variance of the speed-field residual
    seed_penetration: float = 0.002
    population_range: tuple = (5e5, 5e7)
    constant_lambda: float | None = None  # overrides the hierarchical speed field
    lambda_floor: float = 0.02


@dataclass
class SyntheticTruth:
    beta: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    alpha: dict  # pair -> float
    b_effect: dict  # (country, year) -> float
    lam: dict  # pair -> ndarray over the pair's years
    intro: dict  # pair -> introduction year
    theta_L: float
    theta_A: float
    theta_B: float
    theta_H: float
    f_mid: float
    f_depth: float
    horizon: float

    def f(self, s):
        """U-shaped shared time effect over years since introduction."""
        s = np.asarray(s, dtype=float)
        half = self.horizon / 2.0
        value = self.f_mid + self.f_depth * ((s - half) / half) ** 2
        return float(value) if value.ndim == 0 else value


@dataclass
class SimulationResult:
    data: PanelDataset
    truth: SyntheticTruth
    truncation_events: int = 0


def roll_series(lam, alpha, population, y0, theta_L, rng=None):
    """Roll one adoption trajectory forward from seed adopters y0.

    Returns (adopters, cum_prev, truncations); counts are integers and the
    cumulative total never exceeds population * alpha (noise is resampled,
    then clamped, when it would).
    """
    lam = np.asarray(lam, dtype=float)
    T = len(lam)
    pop = np.broadcast_to(np.asarray(population, dtype=float), (T,))
    adopters = np.zeros(T)
    cum_prev = np.zeros(T)
    cum = float(y0)
    truncations = 0
    sigma = 0.0 if math.isinf(theta_L) else 1.0 / math.sqrt(theta_L)
    for t in range(T):
        cum_prev[t] = cum
        ceiling = pop[t] * alpha
        mean_ratio = diffusion_hazard(lam[t], cum, pop[t], alpha)
        y = None
        for _ in range(MAX_RESAMPLES):
            ratio = mean_ratio if sigma == 0.0 else mean_ratio + sigma * rng.standard_normal()
            candidate = round(ratio * cum)
            if 0 <= candidate <= ceiling - cum:
                y = candidate
                break
        if y is None:
            y = min(max(round(mean_ratio * cum), 0), int(ceiling - cum))
            truncations += 1
        adopters[t] = y
        cum += y
    return adopters, cum_prev, truncations


def simulate_panel(config: GeneratorConfig = None, seed: int = 0) -> SimulationResult:
    """Generate a panel plus its ground truth; deterministic given the seed."""
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    countries = [f"C{i + 1:02d}" for i in range(config.n_countries)]
    products = [f"P{j + 1}" for j in range(config.n_products)]

    # Introduction years staggered by country so the since-introduction and
    # calendar time axes genuinely differ.
    country_offset = rng.integers(0, config.intro_spread, size=config.n_countries)
    intro = {}
    lengths = {}
    for j, product in enumerate(products):
        base = config.product_base_years[j % len(config.product_base_years)]
        long_series = j < config.n_products / 2
        for i, country in enumerate(countries):
            year0 = base + int(country_offset[i]) + int(rng.integers(0, 3))
            target = config.long_length if long_series else config.short_length
            length = min(target, config.last_year - year0 + 1)
            intro[(country, product)] = year0
            lengths[(country, product)] = max(length, config.short_length)

    population = {
        c: float(int(rng.uniform(*config.population_range))) for c in countries
    }

    # Country-year support: every series year is usable because adoption is
    # seeded at introduction.
    years_by_country = {c: set() for c in countries}
    for (c, p), year0 in intro.items():
        years_by_country[c].update(range(year0, year0 + lengths[(c, p)]))
    years_by_country = {c: np.array(sorted(v), dtype=int) for c, v in years_by_country.items()}

    covariates = _draw_covariates(config, countries, years_by_country, rng)
    x_std = _standardized_lookup(covariates, countries, years_by_country)

    K = config.n_covariates
    beta = np.zeros(K)
    gamma = np.zeros(K, dtype=int)
    for k, value in enumerate(config.active_betas):
        beta[k] = value
        gamma[k] = 1
    tau = rng.normal(0.0, 1.0 / math.sqrt(config.theta_A), size=config.n_products)

    horizon = float(max(lengths.values()) - 1)
    truth = SyntheticTruth(
        beta=beta,
        gamma=gamma,
        tau=tau,
        alpha={},
        b_effect={},
        lam={},
        intro=dict(intro),
        theta_L=config.theta_L,
        theta_A=config.theta_A,
        theta_B=config.theta_B,
        theta_H=config.theta_H,
        f_mid=config.f_mid,
        f_depth=config.f_depth,
        horizon=horizon,
    )

    sd_b = 1.0 / math.sqrt(config.theta_B)
    for c in countries:
        for year in years_by_country[c]:
            predictor = float(x_std[(c, int(year))] @ (gamma * beta))
            truth.b_effect[(c, int(year))] = predictor + rng.normal(0.0, sd_b)

    series = {}
    truncations = 0
    sd_h = math.sqrt(config.theta_H)
    for (c, p) in sorted(intro.keys()):
        year0 = intro[(c, p)]
        years = np.arange(year0, year0 + lengths[(c, p)])
        n_idx = products.index(p)
        if config.constant_lambda is not None:
            lam = np.full(len(years), config.constant_lambda)
        else:
            base = truth.f(years - year0) + np.array(
                [truth.b_effect[(c, int(y))] for y in years]
            ) + tau[n_idx]
            lam = base + rng.normal(0.0, sd_h, size=len(years))
            for _ in range(MAX_RESAMPLES):
                bad = lam < config.lambda_floor
                if not bad.any():
                    break
                lam[bad] = base[bad] + rng.normal(0.0, sd_h, size=int(bad.sum()))
            lam = np.maximum(lam, config.lambda_floor)
        alpha = float(rng.uniform(*config.alpha_range))
        M = population[c]
        y0 = max(1.0, round(config.seed_penetration * M * alpha))
        adopters, cum_prev, trunc = roll_series(lam, alpha, M, y0, config.theta_L, rng)
        truncations += trunc
        truth.alpha[(c, p)] = alpha
        truth.lam[(c, p)] = lam
        series[(c, p)] = Series(
            country=c,
            product=p,
            years=years,
            adopters=adopters,
            cum_prev=cum_prev,
            population=np.full(len(years), M),
            introduction_year=int(year0),
        )

    data = PanelDataset(
        countries=countries,
        products=products,
        series=series,
        covariates=covariates,
        time_axis_mode=TIME_AXIS_SINCE_INTRO,
    ).finalize()
    return SimulationResult(data=data, truth=truth, truncation_events=truncations)


def _draw_covariates(config, countries, years_by_country, rng):
    covariates = []
    all_years = sorted({int(y) for ys in years_by_country.values() for y in ys})
    for k in range(config.n_covariates):
        name = f"X{k + 1:02d}"
        if k < config.n_time_varying:
            values = {}
            for c in countries:
                level = 0.0
                per_year = {}
                for year in all_years:
                    level = 0.85 * level + math.sqrt(1 - 0.85**2) * rng.standard_normal()
                    per_year[year] = 50.0 + 10.0 * level
                values[c] = per_year
            covariates.append(Covariate(name=name, time_varying=True, values=values))
        else:
            values = {c: 100.0 + 20.0 * rng.standard_normal() for c in countries}
            covariates.append(Covariate(name=name, time_varying=False, values=values))
    return covariates


def _standardized_lookup(covariates, countries, years_by_country):
    """Standardize raw covariates over the country-year support, as the loader does."""
    support = [(c, int(y)) for c in countries for y in years_by_country[c]]
    lookup = {cell: np.zeros(len(covariates)) for cell in support}
    for k, cov in enumerate(covariates):
        raw = np.array([cov.raw_value(c, y) for c, y in support])
        mean, std = raw.mean(), raw.std(ddof=0)
        for cell, value in zip(support, (raw - mean) / std):
            lookup[cell][k] = value
    return lookup
