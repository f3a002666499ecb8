"""Panel data model, hierarchical parameter state and observation likelihood.

The observed quantity for pair (country, product) in year t is the adoption
ratio y(t)/Y(t-1).  Its model mean is the logistic hazard
lambda * (1 - Y(t-1) / (M(t) * alpha)) and the error is Gaussian with
precision theta_L.  The speed field decomposes additively into a shared time
effect f(t), a country-year effect B, a product effect tau and a small
Gaussian residual whose variance theta_H is held fixed.

All Normal distributions in the sampler are parameterised by precision;
theta_H is stored as a variance and converted where needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .splines import SplineState

__all__ = [
    "Series",
    "Covariate",
    "PanelDataset",
    "HyperParams",
    "ModelState",
    "PanelIndex",
    "diffusion_hazard",
    "log_likelihood",
    "VARIANT_SINCE_INTRO",
    "VARIANT_CALENDAR",
    "VARIANT_INVARIANT",
]

VARIANT_SINCE_INTRO = "since_intro"
VARIANT_CALENDAR = "calendar"
VARIANT_INVARIANT = "invariant"
VARIANTS = (VARIANT_SINCE_INTRO, VARIANT_CALENDAR, VARIANT_INVARIANT)

TIME_AXIS_CALENDAR = "calendar_year"
TIME_AXIS_SINCE_INTRO = "years_since_introduction"

STANDARDIZATION_TOL = 1e-10


@dataclass
class Series:
    """Adoption record for one (country, product) pair.

    adopters[t] is y(t), cum_prev[t] is Y(t-1) and population[t] is M(t);
    years are calendar years, sorted and strictly increasing.
    """

    country: str
    product: str
    years: np.ndarray
    adopters: np.ndarray
    cum_prev: np.ndarray
    population: np.ndarray
    introduction_year: int = 0

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.adopters = np.asarray(self.adopters, dtype=float)
        self.cum_prev = np.asarray(self.cum_prev, dtype=float)
        self.population = np.asarray(self.population, dtype=float)
        if self.introduction_year == 0:
            self.introduction_year = self._derive_introduction_year()

    @property
    def first_year(self) -> int:
        return int(self.years[0])

    def _derive_introduction_year(self) -> int:
        # File format carries no launch column; the launch year is the first
        # year with any cumulative adoption on record.
        positive = (self.cum_prev > 0) | (self.adopters > 0)
        if positive.any():
            return int(self.years[np.argmax(positive)])
        return self.first_year

    @property
    def usable(self) -> np.ndarray:
        """Mask of years where the adoption ratio is defined (Y(t-1) > 0)."""
        return self.cum_prev > 0

    def max_penetration(self) -> float:
        """Largest observed cumulative adoption share; lower bound of the ceiling prior."""
        return float(np.max((self.cum_prev + self.adopters) / self.population))

    def validate(self):
        tag = f"series ({self.country}, {self.product})"
        if len(self.years) < 3:
            raise DataError(f"{tag}: needs at least 3 time points, has {len(self.years)}")
        if np.any(np.diff(self.years) <= 0):
            raise DataError(f"{tag}: years must be strictly increasing")
        if np.any(self.population <= 0):
            raise DataError(f"{tag}: population must be positive")
        if np.any(self.adopters < 0):
            row = int(self.years[np.argmax(self.adopters < 0)])
            raise DataError(f"{tag}: negative adopters in year {row}")
        if np.any(np.diff(self.cum_prev) < 0):
            row = int(self.years[1:][np.argmax(np.diff(self.cum_prev) < 0)])
            raise DataError(f"{tag}: cumulative adopters decrease at year {row}")
        if np.any(self.cum_prev > self.population):
            row = int(self.years[np.argmax(self.cum_prev > self.population)])
            raise DataError(f"{tag}: cumulative adopters exceed population at year {row}")
        if np.any(self.cum_prev + self.adopters > self.population * (1 + 1e-12)):
            row = int(self.years[np.argmax(self.cum_prev + self.adopters > self.population)])
            raise DataError(f"{tag}: adoption exceeds population at year {row}")
        if not self.usable.any():
            raise DataError(f"{tag}: no year with positive cumulative adoption")


@dataclass
class Covariate:
    """One country-level covariate, either annual or a per-country constant."""

    name: str
    time_varying: bool
    values: dict  # country -> {year: value} when time-varying, else country -> value

    def raw_value(self, country: str, year: int) -> float:
        if country not in self.values:
            raise DataError(f"covariate {self.name}: no value for country {country}")
        if self.time_varying:
            per_year = self.values[country]
            if year not in per_year:
                raise DataError(
                    f"covariate {self.name}: missing value for ({country}, {year})"
                )
            return float(per_year[year])
        return float(self.values[country])


@dataclass
class PanelDataset:
    countries: list
    products: list
    series: dict  # (country, product) -> Series
    covariates: list  # list[Covariate]
    time_axis_mode: str = TIME_AXIS_SINCE_INTRO
    standardization: dict = field(default_factory=dict)  # name -> (mean, std)
    model_years: dict = field(default_factory=dict)  # country -> ndarray of years

    @property
    def covariate_names(self) -> list:
        return [c.name for c in self.covariates]

    @property
    def n_covariates(self) -> int:
        return len(self.covariates)

    def finalize(self) -> "PanelDataset":
        """Validate series, compute the country-year support and standardize covariates."""
        if self.time_axis_mode not in (TIME_AXIS_CALENDAR, TIME_AXIS_SINCE_INTRO):
            raise DataError(f"unknown time_axis_mode {self.time_axis_mode!r}")
        for key, s in self.series.items():
            if s.country not in self.countries:
                raise DataError(f"series {key}: unknown country {s.country!r}")
            if s.product not in self.products:
                raise DataError(f"series {key}: unknown product {s.product!r}")
            s.validate()
        self.model_years = {}
        for country in self.countries:
            years = set()
            for product in self.products:
                s = self.series.get((country, product))
                if s is not None:
                    years.update(s.years[s.usable].tolist())
            if years:
                self.model_years[country] = np.array(sorted(years), dtype=int)
        self._standardize()
        return self

    def _support(self):
        for country, years in self.model_years.items():
            for year in years:
                yield country, int(year)

    def _standardize(self):
        self.standardization = {}
        support = list(self._support())
        if not support:
            raise DataError("panel has no usable (country, year) cells")
        for cov in self.covariates:
            raw = np.array([cov.raw_value(c, y) for c, y in support])
            mean = raw.mean()
            std = raw.std(ddof=0)
            if std == 0:
                raise DataError(f"covariate {cov.name}: constant over the panel support")
            self.standardization[cov.name] = (float(mean), float(std))

    def std_value(self, cov: Covariate, country: str, year: int) -> float:
        mean, std = self.standardization[cov.name]
        return (cov.raw_value(country, year) - mean) / std

    def design_matrix(self):
        """Standardized design over the country-year support.

        Returns (X, cells) where X is (n_cells, K) and cells lists the
        (country, year) pair for each row.
        """
        cells = list(self._support())
        X = np.empty((len(cells), self.n_covariates))
        for j, cov in enumerate(self.covariates):
            X[:, j] = [self.std_value(cov, c, y) for c, y in cells]
        return X, cells

    def check_invariants(self):
        for s in self.series.values():
            s.validate()
        X, _ = self.design_matrix()
        for j, name in enumerate(self.covariate_names):
            if abs(X[:, j].mean()) > STANDARDIZATION_TOL:
                raise DataError(f"covariate {name}: standardized mean off zero")
            if abs(X[:, j].std(ddof=0) - 1.0) > STANDARDIZATION_TOL:
                raise DataError(f"covariate {name}: standardized sd off one")


@dataclass
class HyperParams:
    """Fixed prior constants for the whole sampler."""

    upsilon: float = 7.0
    w: float = 0.1
    poisson_rate: float = 2.0
    precision_shape: float = 1e-5
    precision_rate: float = 1e-5
    theta_h_value: float = 1e-4  # variance of the speed-field residual
    lambda_prior_shape: float | None = 0.001  # None disables the positivity factor
    lambda_prior_scale: float = 1000.0
    rw_step: float = 0.05
    k_max: int = 20

    def validate(self):
        positive = {
            "upsilon": self.upsilon,
            "poisson_rate": self.poisson_rate,
            "precision_shape": self.precision_shape,
            "precision_rate": self.precision_rate,
            "theta_h_value": self.theta_h_value,
            "lambda_prior_scale": self.lambda_prior_scale,
            "rw_step": self.rw_step,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {value}")
        if not 0 < self.w < 1:
            raise ValueError(f"prior inclusion probability w must be in (0,1), got {self.w}")
        if self.lambda_prior_shape is not None and not self.lambda_prior_shape > 0:
            raise ValueError("lambda_prior_shape must be positive or None")

    @property
    def theta_h_precision(self) -> float:
        return 1.0 / self.theta_h_value


def diffusion_hazard(lam, cum_prev, population, alpha):
    """Expected adoption ratio lambda * (1 - Y(t-1) / (M * alpha))."""
    lam = np.asarray(lam, dtype=float)
    cum_prev = np.asarray(cum_prev, dtype=float)
    population = np.asarray(population, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    ceiling = population * alpha
    if np.any(ceiling == 0):
        raise ValueError("M * alpha is zero; hazard undefined")
    value = lam * (1.0 - cum_prev / ceiling)
    return float(value) if value.ndim == 0 else value


class PanelIndex:
    """Flattened view of a panel for a given model variant.

    Observation-level arrays stack every usable (country, product, year)
    triple; B-level arrays stack the (country, year) support.  The speed
    field has one site per observation under the time-varying variants and
    one site per pair under the time-invariant variant.
    """

    def __init__(self, data: PanelDataset, variant: str = VARIANT_SINCE_INTRO):
        if variant not in VARIANTS:
            raise ValueError(f"unknown model variant {variant!r}")
        self.data = data
        self.variant = variant
        self.countries = list(data.countries)
        self.products = list(data.products)
        if not data.model_years:
            data.finalize()

        country_id = {c: i for i, c in enumerate(self.countries)}
        product_id = {p: i for i, p in enumerate(self.products)}

        # B-level support
        b_slot = {}
        b_country, b_year = [], []
        for country in self.countries:
            for year in data.model_years.get(country, ()):
                b_slot[(country, int(year))] = len(b_country)
                b_country.append(country_id[country])
                b_year.append(int(year))
        self.b_country = np.array(b_country, dtype=int)
        self.b_year = np.array(b_year, dtype=int)
        self.m_b = len(b_country)

        # Observation level
        pairs = sorted(data.series.keys())
        self.pairs = pairs
        pair_id = {pair: i for i, pair in enumerate(pairs)}
        self.pair_country = np.array([country_id[c] for c, _ in pairs], dtype=int)
        self.pair_product = np.array([product_id[p] for _, p in pairs], dtype=int)
        self.alpha_lower = np.array(
            [data.series[pair].max_penetration() for pair in pairs]
        )

        obs_pair, obs_product, obs_b, obs_year, z, q = [], [], [], [], [], []
        obs_abs = []
        for pair in pairs:
            s = data.series[pair]
            mask = s.usable
            for year, y, yc, m in zip(
                s.years[mask], s.adopters[mask], s.cum_prev[mask], s.population[mask]
            ):
                obs_pair.append(pair_id[pair])
                obs_product.append(product_id[pair[1]])
                obs_b.append(b_slot[(pair[0], int(year))])
                obs_year.append(int(year))
                z.append(y / yc)
                q.append(yc / m)
                if variant == VARIANT_CALENDAR:
                    obs_abs.append(float(year))
                else:
                    obs_abs.append(float(int(year) - s.introduction_year))
        self.obs_pair = np.array(obs_pair, dtype=int)
        self.obs_product = np.array(obs_product, dtype=int)
        self.obs_b = np.array(obs_b, dtype=int)
        self.obs_year = np.array(obs_year, dtype=int)
        self.z = np.array(z)
        self.q = np.array(q)
        self.n_obs = len(z)
        self.n_pairs = len(pairs)

        if variant == VARIANT_INVARIANT:
            self.obs_site = self.obs_pair
            self.n_sites = self.n_pairs
        else:
            self.obs_site = np.arange(self.n_obs)
            self.n_sites = self.n_obs

        abs_arr = np.array(obs_abs)
        self.unique_abs, self.obs_abs_slot = np.unique(abs_arr, return_inverse=True)
        # Boundary abscissae sit half a grid unit outside the data range.
        self.spline_a = float(self.unique_abs.min() - 0.5)
        self.spline_b = float(self.unique_abs.max() + 0.5)

        self.obs_count_site = np.bincount(self.obs_site, minlength=self.n_sites)
        self.obs_count_b = np.bincount(self.obs_b, minlength=self.m_b)
        self.obs_count_product = np.bincount(self.obs_product, minlength=len(self.products))

        X, cells = data.design_matrix()
        assert [c for c, _ in cells] == [self.countries[i] for i in self.b_country]
        self.X = X
        self.K = X.shape[1]

    def f_values(self, spline: SplineState) -> np.ndarray:
        """Time-effect value for every observation (zero under the invariant variant)."""
        if self.variant == VARIANT_INVARIANT:
            return np.zeros(self.n_obs)
        from .splines import basis_matrix

        at_unique = basis_matrix(spline, self.unique_abs) @ spline.omega
        return at_unique[self.obs_abs_slot]

    def empty_spline(self) -> SplineState:
        return SplineState.empty(self.spline_a, self.spline_b)


@dataclass
class ModelState:
    """Full parameter state of one chain, flattened against a PanelIndex."""

    lam: np.ndarray  # one entry per site (observation or pair)
    alpha: np.ndarray  # per pair
    spline: SplineState
    b_effect: np.ndarray  # per (country, year) cell
    tau: np.ndarray  # per product
    beta: np.ndarray  # per covariate
    gamma: np.ndarray  # inclusion indicators, per covariate
    theta_L: float
    theta_A: float
    theta_B: float
    theta_H: float  # fixed residual variance

    def copy(self) -> "ModelState":
        return ModelState(
            lam=self.lam.copy(),
            alpha=self.alpha.copy(),
            spline=self.spline,
            b_effect=self.b_effect.copy(),
            tau=self.tau.copy(),
            beta=self.beta.copy(),
            gamma=self.gamma.copy(),
            theta_L=self.theta_L,
            theta_A=self.theta_A,
            theta_B=self.theta_B,
            theta_H=self.theta_H,
        )

    def validate(self, index: PanelIndex, require_positive_lambda: bool = True):
        if np.any(self.alpha <= index.alpha_lower) or np.any(self.alpha > 1.0):
            raise ValueError("adoption ceiling outside its prior support")
        for name, value in (("theta_L", self.theta_L), ("theta_A", self.theta_A), ("theta_B", self.theta_B)):
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if require_positive_lambda and np.any(self.lam <= 0):
            raise ValueError("speed field must be positive")
        if len(self.lam) != index.n_sites:
            raise ValueError("speed field length does not match the index")


def log_likelihood(data: PanelDataset, state: ModelState, index: PanelIndex | None = None) -> float:
    """Gaussian log density of the adoption ratios given the current state.

    Years with Y(t-1) = 0 carry no likelihood term.  Returns -inf when any
    ceiling sits outside its support.
    """
    if index is None:
        variant = VARIANT_INVARIANT if len(state.lam) == len(data.series) else VARIANT_SINCE_INTRO
        index = PanelIndex(data, variant)
    if np.any(state.alpha <= index.alpha_lower) or np.any(state.alpha > 1.0):
        return -math.inf
    alpha_obs = state.alpha[index.obs_pair]
    hazard = state.lam[index.obs_site] * (1.0 - index.q / alpha_obs)
    resid = index.z - hazard
    n = index.n_obs
    return 0.5 * n * (math.log(state.theta_L) - math.log(2.0 * math.pi)) - 0.5 * state.theta_L * float(
        resid @ resid
    )
