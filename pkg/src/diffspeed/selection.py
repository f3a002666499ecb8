"""Spike-and-slab selection of the country covariates driving the speed field.

Each covariate coefficient carries a binary inclusion indicator.  The
indicator sweep uses the collapsed two-point density

    |X~'X~|^{-1/2} |D R D|^{-1/2} (2e-5 + S^2)^{-(m + 1e-5)/2} p(gamma)

evaluated on the active-coordinate submatrices, where X~ stacks the design
over D R D, S^2 is the residual quadratic form of that augmented system and
the small constants come from the precision prior.  The full D R D matrix is
singular whenever any indicator is zero, so determinants and quadratic forms
are restricted to the active set.  Coefficients for excluded covariates are
exact zeros in the linear predictor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .model import HyperParams

__all__ = [
    "SelectionState",
    "build_correlation",
    "log_gamma_weight",
    "gamma_conditional_probability",
    "gamma_full_conditional",
    "beta_full_conditional",
    "calibrate_hyperparams",
    "CalibrationResult",
    "inclusion_probabilities",
]

RIDGE_JITTER = 1e-10


@dataclass
class SelectionState:
    """Bundled selection state: indicators, coefficients and prior scale structure.

    d_gamma holds the diagonal of the squared scale matrix: 0 for excluded
    covariates, upsilon for included ones.
    """

    gamma: np.ndarray
    beta: np.ndarray
    upsilon: float
    R: np.ndarray
    d_gamma: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=int)
        self.beta = np.asarray(self.beta, dtype=float)
        self.d_gamma = self.upsilon * self.gamma.astype(float)

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.gamma == 1)

    def drd_active(self) -> np.ndarray:
        idx = self.active()
        return self.upsilon * self.R[np.ix_(idx, idx)]

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return X @ (self.gamma * self.beta)


def build_correlation(X: np.ndarray) -> np.ndarray:
    """Prior structure matrix (X'X)^-1 on the standardized design, ridge-guarded."""
    k = X.shape[1]
    xtx = X.T @ X + RIDGE_JITTER * np.eye(k)
    R = np.linalg.inv(xtx)
    return (R + R.T) / 2.0


def log_gamma_weight(
    gamma: np.ndarray,
    xtx: np.ndarray,
    xtb: np.ndarray,
    btb: float,
    m: int,
    hyper: HyperParams,
    R: np.ndarray,
) -> float:
    """Log of the collapsed density of one indicator configuration.

    xtx = X'X, xtb = X'B over the m stacked country-year cells.  Returns
    -inf (with a warning) when the active system is numerically singular.
    """
    idx = np.flatnonzero(gamma == 1)
    n_active = len(idx)
    log_prior = n_active * math.log(hyper.w) + (len(gamma) - n_active) * math.log1p(-hyper.w)
    if n_active == 0:
        s2 = btb
        logdet_aug = 0.0
        logdet_drd = 0.0
    else:
        drd = hyper.upsilon * R[np.ix_(idx, idx)]
        augmented = xtx[np.ix_(idx, idx)] + drd @ drd
        try:
            cho_aug = cho_factor(augmented, lower=True)
            cho_drd = cho_factor(drd, lower=True)
        except np.linalg.LinAlgError:
            warnings.warn("singular active-set system; configuration weighted zero")
            return -math.inf
        rhs = xtb[idx]
        s2 = max(btb - float(rhs @ cho_solve(cho_aug, rhs)), 0.0)
        logdet_aug = 2.0 * np.sum(np.log(np.diag(cho_aug[0])))
        logdet_drd = 2.0 * np.sum(np.log(np.diag(cho_drd[0])))
    exponent = -(m + hyper.precision_shape) / 2.0
    return (
        -0.5 * logdet_aug
        - 0.5 * logdet_drd
        + exponent * math.log(2.0 * hyper.precision_rate + s2)
        + log_prior
    )


def _two_point_probability(w_off: float, w_on: float) -> float:
    """P(indicator on) from the two log weights; log-weight gaps can exceed
    the exp overflow range, so the tail cases short-circuit."""
    if w_on == -math.inf:
        return 0.0
    if w_off == -math.inf:
        return 1.0
    gap = w_off - w_on
    if gap > 700.0:
        return 0.0
    if gap < -700.0:
        return 1.0
    return 1.0 / (1.0 + math.exp(gap))


def gamma_conditional_probability(
    working_response: np.ndarray,
    design: np.ndarray,
    hyper: HyperParams,
    gamma: np.ndarray,
    k: int,
    xtx: np.ndarray | None = None,
    R: np.ndarray | None = None,
) -> float:
    """Two-point conditional probability of including covariate k given the rest."""
    if xtx is None:
        xtx = design.T @ design
    if R is None:
        R = build_correlation(design)
    xtb = design.T @ working_response
    btb = float(working_response @ working_response)
    m = len(working_response)
    trial = gamma.copy()
    trial[k] = 0
    w0 = log_gamma_weight(trial, xtx, xtb, btb, m, hyper, R)
    trial[k] = 1
    w1 = log_gamma_weight(trial, xtx, xtb, btb, m, hyper, R)
    return _two_point_probability(w0, w1)


def gamma_full_conditional(
    working_response: np.ndarray,
    design: np.ndarray,
    hyper: HyperParams,
    order: np.ndarray,
    rng: np.random.Generator,
    gamma: np.ndarray,
    xtx: np.ndarray | None = None,
    R: np.ndarray | None = None,
) -> np.ndarray:
    """One sweep over the indicators in the given order; returns the updated vector."""
    if xtx is None:
        xtx = design.T @ design
    if R is None:
        R = build_correlation(design)
    xtb = design.T @ working_response
    btb = float(working_response @ working_response)
    m = len(working_response)
    gamma = gamma.astype(int).copy()
    for k in order:
        gamma[k] = 0
        w0 = log_gamma_weight(gamma, xtx, xtb, btb, m, hyper, R)
        gamma[k] = 1
        w1 = log_gamma_weight(gamma, xtx, xtb, btb, m, hyper, R)
        gamma[k] = 1 if rng.uniform() < _two_point_probability(w0, w1) else 0
    return gamma


def beta_full_conditional(
    working_response: np.ndarray,
    design: np.ndarray,
    gamma: np.ndarray,
    theta_B: float,
    hyper: HyperParams,
    rng: np.random.Generator,
    R: np.ndarray | None = None,
) -> np.ndarray:
    """Conjugate coefficient draw on the active set; excluded coordinates stay zero.

    The slab restricted to the active set is N(0, upsilon * R_AA), so the
    posterior precision is theta_B * X_A'X_A + (upsilon * R_AA)^-1.
    """
    K = design.shape[1]
    beta = np.zeros(K)
    idx = np.flatnonzero(np.asarray(gamma) == 1)
    if len(idx) == 0:
        return beta
    if R is None:
        R = build_correlation(design)
    X_a = design[:, idx]
    slab = hyper.upsilon * R[np.ix_(idx, idx)]
    slab_precision = np.linalg.inv(slab)
    slab_precision = (slab_precision + slab_precision.T) / 2.0
    posterior_precision = theta_B * (X_a.T @ X_a) + slab_precision
    cho = cho_factor(posterior_precision, lower=True)
    mean = cho_solve(cho, theta_B * (X_a.T @ working_response))
    noise = solve_triangular(cho[0].T, rng.standard_normal(len(idx)), lower=False)
    beta[idx] = mean + noise
    return beta


@dataclass
class CalibrationResult:
    kappa: float
    nu: float
    upsilon: float
    s_beta: float
    s2_ls: float
    s2_b: float
    default_upsilon: float = 7.0
    default_w: float = 0.1


def calibrate_hyperparams(pilot_B: np.ndarray, design: np.ndarray) -> CalibrationResult:
    """Suggest (kappa, nu, upsilon) from a pilot run of the country-year effects.

    kappa is the least-squares residual variance; nu maximizes the inverse
    gamma prior mass on the interval between that and the pilot variance of
    the effects; upsilon is the spread of the least-squares coefficients
    over the residual variance.  A degenerate pilot falls back to the
    standard defaults with a warning.
    """
    pilot_B = np.asarray(pilot_B, dtype=float)
    m, K = design.shape
    s2_b = float(np.var(pilot_B, ddof=1)) if len(pilot_B) > 1 else 0.0
    beta_hat, *_ = np.linalg.lstsq(design, pilot_B, rcond=None)
    resid = pilot_B - design @ beta_hat
    dof = max(m - K, 1)
    s2_ls = float(resid @ resid) / dof
    if s2_ls <= 0 or s2_b <= 0:
        warnings.warn("degenerate pilot run; falling back to standard defaults")
        return CalibrationResult(
            kappa=s2_ls, nu=2.0, upsilon=7.0, s_beta=0.0, s2_ls=s2_ls, s2_b=s2_b
        )
    s_beta = float(np.std(beta_hat, ddof=1)) if K > 1 else float(abs(beta_hat[0]))
    lower, upper = sorted((s2_ls, s2_b))
    nu_grid = np.concatenate([np.linspace(0.1, 5, 50), np.linspace(5.5, 50, 90)])
    mass = [
        stats.invgamma(nu / 2.0, scale=nu * s2_ls / 2.0).cdf(upper)
        - stats.invgamma(nu / 2.0, scale=nu * s2_ls / 2.0).cdf(lower)
        for nu in nu_grid
    ]
    nu = float(nu_grid[int(np.argmax(mass))])
    return CalibrationResult(
        kappa=s2_ls,
        nu=nu,
        upsilon=s_beta / s2_ls,
        s_beta=s_beta,
        s2_ls=s2_ls,
        s2_b=s2_b,
    )


def inclusion_probabilities(chain) -> np.ndarray:
    """Per-covariate share of post-burn-in draws with the indicator on.

    Accepts a chain of stored states, a plain iterable of states, or an
    iterable of indicator vectors."""
    items = chain.draws if hasattr(chain, "draws") else list(chain)
    draws = [item.gamma if hasattr(item, "gamma") else item for item in items]
    if len(draws) == 0:
        raise ValueError("no indicator draws available")
    return np.mean(np.asarray(draws, dtype=float), axis=0)
