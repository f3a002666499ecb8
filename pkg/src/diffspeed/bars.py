"""Reversible-jump moves on the free-knot spline for the time effect.

Each step proposes one of three moves -- birth, death or relocation of an
interior knot -- and accepts it with a Metropolis-Hastings-Green ratio in
which the coefficient vector has been integrated out against its N(0, I)
prior.  Accepted states (and, once per sweep, the current state) get their
coefficients redrawn from the exact Gaussian conditional, so the pair
(knots, coefficients) is sampled as a partially collapsed Gibbs step.

Priors: knot count ~ Poisson(rate) truncated to [0, k_max], locations
uniform on (a, b), coefficients standard normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import HyperParams
from .splines import SplineState, basis_matrix

__all__ = [
    "BIRTH",
    "DEATH",
    "RELOCATE",
    "MoveProposal",
    "SplineTarget",
    "move_probabilities",
    "propose_move",
    "candidate_knots",
    "log_acceptance",
    "accept_move",
    "draw_coefficients",
]

BIRTH = "birth"
DEATH = "death"
RELOCATE = "relocate"

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class MoveProposal:
    """One candidate move.

    log_proposal_ratio carries the knot-structure part of the MHG ratio
    (prior ratio on (k, xi) times reverse/forward proposal densities); the
    collapsed coefficient marginal is added at acceptance time.
    """

    kind: str
    target_index: int | None = None
    new_location: float | None = None
    log_proposal_ratio: float = 0.0


@dataclass
class SplineTarget:
    """Working regression the spline is fit against.

    response holds the speed-field values net of country and product
    effects at abscissae t; precision is the residual precision (zero or
    negative disables the likelihood, leaving the prior).  When weights is
    given, response[i] is the mean of weights[i] observations sharing
    abscissa t[i], which is an equivalent, cheaper parameterisation."""

    t: np.ndarray
    response: np.ndarray
    precision: float
    weights: np.ndarray | None = None


def move_probabilities(k: int, k_max: int = 20):
    """(birth, death, relocate) probabilities at knot count k."""
    if k == 0:
        return 1.0, 0.0, 0.0
    if k >= k_max:
        return 0.0, 0.5, 0.5
    return 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0


def _draw_interior(rng, low: float, high: float, taken: np.ndarray) -> float:
    while True:
        x = rng.uniform(low, high)
        if low < x < high and not np.any(taken == x):
            return float(x)


def propose_move(
    state: SplineState,
    rng: np.random.Generator,
    poisson_rate: float = 2.0,
    k_max: int = 20,
) -> MoveProposal:
    k = state.k
    p_b, p_d, p_r = move_probabilities(k, k_max)
    u = rng.uniform()
    if u < p_b:
        location = _draw_interior(rng, state.a, state.b, state.xi)
        p_d_up = move_probabilities(k + 1, k_max)[1]
        log_ratio = math.log(poisson_rate / (k + 1)) + math.log(p_d_up / p_b)
        return MoveProposal(BIRTH, new_location=location, log_proposal_ratio=log_ratio)
    if u < p_b + p_d:
        j = int(rng.integers(k))
        p_b_down = move_probabilities(k - 1, k_max)[0]
        log_ratio = math.log(k / poisson_rate) + math.log(p_b_down / p_d)
        return MoveProposal(DEATH, target_index=j, log_proposal_ratio=log_ratio)
    j = int(rng.integers(k))
    left = state.xi[j - 1] if j > 0 else state.a
    right = state.xi[j + 1] if j < k - 1 else state.b
    location = _draw_interior(rng, left, right, state.xi)
    return MoveProposal(RELOCATE, target_index=j, new_location=location)


def candidate_knots(state: SplineState, proposal: MoveProposal) -> np.ndarray:
    if proposal.kind == BIRTH:
        return np.sort(np.append(state.xi, proposal.new_location))
    if proposal.kind == DEATH:
        return np.delete(state.xi, proposal.target_index)
    xi = state.xi.copy()
    xi[proposal.target_index] = proposal.new_location
    return np.sort(xi)


def _collapsed_terms(a: float, b: float, xi: np.ndarray, target: SplineTarget):
    """State-dependent part of the log marginal with coefficients integrated out.

    Returns (log_marginal_part, cho, rhs) where cho factors the posterior
    precision p * N'N + I and rhs = p * N'r; terms constant across knot
    configurations are dropped.
    """
    p = len(xi) + 2
    if target.precision <= 0:
        return 0.0, None, np.zeros(p)
    design = basis_matrix(SplineState(a, b, xi, np.zeros(p)), target.t)
    weights = np.ones(len(target.t)) if target.weights is None else target.weights
    weighted = design * np.sqrt(weights)[:, None]
    if np.linalg.cond(weighted) > CONDITION_LIMIT:
        raise np.linalg.LinAlgError("ill-conditioned spline basis")
    precision_mat = target.precision * (weighted.T @ weighted) + np.eye(p)
    cho = cho_factor(precision_mat, lower=True)
    rhs = target.precision * (design.T @ (weights * target.response))
    solved = cho_solve(cho, rhs)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    return 0.5 * float(rhs @ solved) - 0.5 * logdet, cho, rhs


def log_acceptance(
    state: SplineState,
    proposal: MoveProposal,
    target: SplineTarget,
    hyper: HyperParams,
) -> float:
    """Log MHG acceptance ratio for the move; raises LinAlgError on a degenerate candidate."""
    new_xi = candidate_knots(state, proposal)
    current, _, _ = _collapsed_terms(state.a, state.b, state.xi, target)
    candidate, _, _ = _collapsed_terms(state.a, state.b, new_xi, target)
    return candidate - current + proposal.log_proposal_ratio


def _draw_omega(a, b, xi, target, rng) -> np.ndarray:
    _, cho, rhs = _collapsed_terms(a, b, xi, target)
    p = len(xi) + 2
    noise = rng.standard_normal(p)
    if cho is None:
        return noise  # prior draw
    mean = cho_solve(cho, rhs)
    # cho[0] holds L with A = L L'; solve L' x = noise gives x ~ N(0, A^-1)
    from scipy.linalg import solve_triangular

    return mean + solve_triangular(cho[0].T, noise, lower=False)


def accept_move(
    state: SplineState,
    proposal: MoveProposal,
    target: SplineTarget,
    hyper: HyperParams,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> SplineState:
    """Run the MHG accept/reject step; returns the new state (current on rejection)."""
    try:
        log_alpha = log_acceptance(state, proposal, target, hyper)
    except np.linalg.LinAlgError:
        if stats is not None:
            stats["ill_conditioned"] = stats.get("ill_conditioned", 0) + 1
        return state
    if stats is not None:
        stats[f"proposed_{proposal.kind}"] = stats.get(f"proposed_{proposal.kind}", 0) + 1
    if math.log(rng.uniform()) >= log_alpha:
        return state
    new_xi = candidate_knots(state, proposal)
    omega = _draw_omega(state.a, state.b, new_xi, target, rng)
    if stats is not None:
        stats[f"accepted_{proposal.kind}"] = stats.get(f"accepted_{proposal.kind}", 0) + 1
    return SplineState(a=state.a, b=state.b, xi=new_xi, omega=omega)


def draw_coefficients(
    state: SplineState, target: SplineTarget, rng: np.random.Generator
) -> SplineState:
    """Gibbs refresh of the coefficients under the current knots."""
    return state.with_omega(_draw_omega(state.a, state.b, state.xi, target, rng))
