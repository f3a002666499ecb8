"""Posterior post-processing: DIC comparison, speed trajectories and
time-to-penetration calculators.

The deviance information criterion is D_bar + P_D with P_D the gap between
the mean deviance and the deviance at a plug-in state (posterior means of
the speed field, ceilings and observation precision, indicators at their
modal configuration).  Time-to-penetration solves
integral of lambda(t) dt = ln[(1-p1) p2 / ((1-p2) p1)] in closed form for
constant and linear-in-t speeds and by adaptive quadrature otherwise.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import NumericalError
from .model import ModelState, PanelDataset, log_likelihood
from .splines import basis_matrix

__all__ = [
    "DicResult",
    "PenetrationQuery",
    "Trajectory",
    "plug_in_state",
    "compute_dic",
    "speed_trajectory",
    "penetration_log_odds",
    "time_to_penetration_constant",
    "time_to_penetration_linear",
    "time_to_penetration_numeric",
    "time_to_penetration_trajectory",
]

SPEED_CONSTANT = "constant"
SPEED_LINEAR = "linear"
SPEED_TRAJECTORY = "posterior_trajectory"

TRANSFORM_LINEAR = "linear_sum"
TRANSFORM_EXP = "exponentiated_sum"


@dataclass(frozen=True)
class DicResult:
    d_bar: float
    p_d: float
    dic: float
    variant: str = ""

    def __post_init__(self):
        if not math.isclose(self.dic, self.d_bar + self.p_d, rel_tol=0.0, abs_tol=0.0):
            raise ValueError("dic must equal d_bar + p_d exactly")

    @classmethod
    def from_components(cls, d_bar: float, p_d: float, variant: str = "") -> "DicResult":
        return cls(d_bar=d_bar, p_d=p_d, dic=d_bar + p_d, variant=variant)


@dataclass(frozen=True)
class PenetrationQuery:
    p1: float
    p2: float
    speed_spec: str = SPEED_CONSTANT

    def validate(self):
        if not 0.0 < self.p1 <= self.p2 < 1.0:
            raise ValueError("penetration levels must satisfy 0 < p1 <= p2 < 1")
        if self.speed_spec not in (SPEED_CONSTANT, SPEED_LINEAR, SPEED_TRAJECTORY):
            raise ValueError(f"unknown speed spec {self.speed_spec!r}")


def _pooled(chains):
    if isinstance(chains, (list, tuple)):
        draws = [d for c in chains for d in c.draws]
        deviance = np.concatenate([c.deviance for c in chains])
        index = chains[0].index
    else:
        draws, deviance, index = chains.draws, chains.deviance, chains.index
    if len(draws) == 0:
        raise ValueError("chain holds no stored draws")
    return draws, deviance, index


def plug_in_state(chains) -> ModelState:
    """Posterior-mean state for the plug-in deviance.

    Continuous parameters are averaged across draws; the indicator vector is
    set to its most frequent configuration.  The spline is taken from the
    last draw (it does not enter the observation likelihood)."""
    draws, _, _ = _pooled(chains)
    gamma_mode = Counter(tuple(d.gamma.tolist()) for d in draws).most_common(1)[0][0]
    return ModelState(
        lam=np.mean([d.lam for d in draws], axis=0),
        alpha=np.mean([d.alpha for d in draws], axis=0),
        spline=draws[-1].spline,
        b_effect=np.mean([d.b_effect for d in draws], axis=0),
        tau=np.mean([d.tau for d in draws], axis=0),
        beta=np.mean([d.beta for d in draws], axis=0),
        gamma=np.array(gamma_mode, dtype=int),
        theta_L=float(np.mean([d.theta_L for d in draws])),
        theta_A=float(np.mean([d.theta_A for d in draws])),
        theta_B=float(np.mean([d.theta_B for d in draws])),
        theta_H=draws[0].theta_H,
    )


def compute_dic(chains, data: PanelDataset, mean_state: ModelState | None = None, variant: str | None = None) -> DicResult:
    draws, deviance, index = _pooled(chains)
    if mean_state is None:
        mean_state = plug_in_state(chains)
    d_bar = float(np.mean(deviance))
    plug_in = -2.0 * log_likelihood(data, mean_state, index)
    if not (math.isfinite(d_bar) and math.isfinite(plug_in)):
        raise NumericalError(
            f"non-finite deviance: mean={d_bar}, plug-in={plug_in}; "
            f"theta_L={mean_state.theta_L}, ceilings in "
            f"[{mean_state.alpha.min()}, {mean_state.alpha.max()}]"
        )
    label = variant if variant is not None else (index.variant if index is not None else "")
    return DicResult.from_components(d_bar=d_bar, p_d=d_bar - plug_in, variant=label)


@dataclass
class Trajectory:
    country: str
    product: str
    years: np.ndarray
    abscissa: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    transform: str


def speed_trajectory(chains, country: str, product: str, transform: str = TRANSFORM_LINEAR) -> Trajectory:
    """Pointwise posterior mean and 95% band of the speed components
    f(t) + B + tau for one pair, optionally exponentiated."""
    if transform not in (TRANSFORM_LINEAR, TRANSFORM_EXP):
        raise ValueError(f"unknown transform {transform!r}")
    draws, _, index = _pooled(chains)
    if (country, product) not in index.pairs:
        raise ValueError(f"unknown pair ({country!r}, {product!r})")
    pair_id = index.pairs.index((country, product))
    mask = index.obs_pair == pair_id
    years = index.obs_year[mask]
    abscissa = index.unique_abs[index.obs_abs_slot[mask]]
    b_slots = index.obs_b[mask]
    product_id = index.obs_product[mask][0]

    samples = np.empty((len(draws), len(years)))
    for d, state in enumerate(draws):
        if index.variant == "invariant":
            f_vals = np.zeros(len(years))
        else:
            f_vals = basis_matrix(state.spline, abscissa) @ state.spline.omega
        samples[d] = f_vals + state.b_effect[b_slots] + state.tau[product_id]
    if transform == TRANSFORM_EXP:
        samples = np.exp(samples)
    return Trajectory(
        country=country,
        product=product,
        years=years,
        abscissa=abscissa,
        mean=samples.mean(axis=0),
        lower=np.percentile(samples, 2.5, axis=0),
        upper=np.percentile(samples, 97.5, axis=0),
        transform=transform,
    )


def penetration_log_odds(p1: float, p2: float) -> float:
    """ln[(1 - p1) p2 / ((1 - p2) p1)], the integrated-speed requirement."""
    if not 0.0 < p1 <= p2 < 1.0:
        raise ValueError("penetration levels must satisfy 0 < p1 <= p2 < 1")
    return math.log((1.0 - p1) * p2 / ((1.0 - p2) * p1))


def time_to_penetration_constant(lam: float, p1: float, p2: float) -> float:
    if not lam > 0:
        raise ValueError("constant speed must be positive")
    return penetration_log_odds(p1, p2) / lam


def time_to_penetration_linear(lambda_slope: float, t1: float, p1: float, p2: float) -> float:
    """Elapsed time under lambda(t) = slope * t, starting from t1 > 0."""
    if not lambda_slope > 0 or not t1 > 0:
        raise ValueError("linear speed requires slope > 0 and t1 > 0")
    log_odds = penetration_log_odds(p1, p2)
    radicand = t1 * t1 + 2.0 * log_odds / lambda_slope
    if radicand < 0:
        raise NumericalError("no positive root for the linear-speed crossing time")
    return math.sqrt(radicand) - t1


def time_to_penetration_numeric(lambda_fn, p1: float, p2: float, t1: float = 0.0) -> float:
    """Solve integral_{t1}^{t1+dt} lambda(t) dt = log-odds by quadrature and bracketing."""
    log_odds = penetration_log_odds(p1, p2)
    if log_odds == 0.0:
        return 0.0

    def integrated(dt):
        value, _ = quad(lambda_fn, t1, t1 + dt, epsabs=1e-10, epsrel=1e-10, limit=500)
        return value - log_odds

    hi = 1.0
    for _ in range(80):
        probe = np.linspace(t1, t1 + hi, 33)
        speeds = np.array([lambda_fn(t) for t in probe])
        if np.any(speeds <= 0) or not np.all(np.isfinite(speeds)):
            raise NumericalError("speed function must be positive and finite over the bracket")
        if integrated(hi) > 0:
            return float(brentq(integrated, 0.0, hi, xtol=1e-12, rtol=8.9e-16))
        hi *= 2.0
    raise NumericalError("failed to bracket the crossing time; speed integral grows too slowly")


def time_to_penetration_trajectory(trajectory: Trajectory, p1: float, p2: float) -> float:
    """Time-to-penetration along the posterior-mean speed path (point summary)."""
    axis = trajectory.years.astype(float)
    speeds = trajectory.mean
    if np.any(speeds <= 0):
        raise NumericalError("posterior-mean speed path is not positive everywhere")

    def lambda_fn(t):
        return float(np.interp(t, axis, speeds))

    return time_to_penetration_numeric(lambda_fn, p1, p2, t1=float(axis[0]))
