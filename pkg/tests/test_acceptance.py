"""Acceptance suite.

Each test prints one `[PASS]/[FAIL]` line for its criterion, with the
measured quantities, and fails loudly if the stated tolerance is missed.
"""

import itertools
import math
import time

import numpy as np
from scipy import stats

import _geweke
from diffspeed.analytics import (
    compute_dic,
    time_to_penetration_constant,
    time_to_penetration_linear,
    time_to_penetration_numeric,
)
from diffspeed.bars import SplineTarget, accept_move, propose_move
from diffspeed.cli import main
from diffspeed.engine import gelman_rubin
from diffspeed.model import HyperParams, PanelIndex
from diffspeed.selection import (
    build_correlation,
    gamma_full_conditional,
    inclusion_probabilities,
    log_gamma_weight,
)
from diffspeed.splines import SplineState, basis_matrix


def check(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_criterion_1_prior_recovery():
    hyper = HyperParams()
    rng = np.random.default_rng(5)
    state = SplineState.empty(0.0, 10.0)
    target = SplineTarget(t=np.array([5.0]), response=np.array([0.0]), precision=0.0)
    start = time.time()
    burn, keep = 2_000, 50_000
    counts = np.zeros(hyper.k_max + 1)
    for i in range(burn + keep):
        proposal = propose_move(state, rng, hyper.poisson_rate, hyper.k_max)
        state = accept_move(state, proposal, target, hyper, rng)
        if i >= burn:
            counts[state.k] += 1
    elapsed = time.time() - start
    empirical = counts / counts.sum()
    support = np.arange(hyper.k_max + 1)
    prior = stats.poisson(hyper.poisson_rate).pmf(support)
    prior /= prior.sum()
    tv = 0.5 * float(np.abs(empirical - prior).sum())
    check(
        "criterion 1 (knot-count prior recovery)",
        tv < 0.05 and elapsed < 120.0,
        f"TV distance {tv:.4f} (< 0.05) over {keep} draws in {elapsed:.1f}s (< 120s)",
    )


def test_criterion_2_geweke_joint_consistency():
    start = time.time()
    ctx = _geweke.toy_context(seed=0)
    hyper = _geweke.toy_hyper()
    marginal = _geweke.run_marginal(ctx, hyper, 60_000, seed=11)
    successive = _geweke.run_successive(ctx, hyper, 60_000, burn_in=3_000, seed=12)
    comparisons = _geweke.compare_moments(marginal, successive)
    elapsed = time.time() - start
    inside = [c for c in comparisons if abs(c.z) < 3.0]
    fraction = len(inside) / len(comparisons)
    worst = max(comparisons, key=lambda c: abs(c.z))
    check(
        "criterion 2 (Geweke joint consistency)",
        fraction >= 0.95 and elapsed < 600.0,
        f"{len(inside)}/{len(comparisons)} moments with |z|<3 "
        f"(worst {worst.name} z={worst.z:+.2f}) in {elapsed:.0f}s (< 600s)",
    )


def test_criterion_3_gamma_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(6, 2))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    B = 0.8 * X[:, 0] + rng.normal(0, 0.5, size=6)
    hyper = HyperParams()
    xtx, R = X.T @ X, build_correlation(X)
    xtb, btb = X.T @ B, float(B @ B)
    configs = [np.array(g) for g in itertools.product([0, 1], repeat=2)]
    weights = np.array([log_gamma_weight(g, xtx, xtb, btb, 6, hyper, R) for g in configs])
    enumerated = np.exp(weights - weights.max())
    enumerated /= enumerated.sum()

    sweeps = 100_000
    gamma = np.zeros(2, dtype=int)
    visits = np.zeros(4)
    for _ in range(sweeps):
        gamma = gamma_full_conditional(B, X, hyper, rng.permutation(2), rng, gamma, xtx=xtx, R=R)
        visits[int(gamma[0]) * 2 + int(gamma[1])] += 1
    empirical = visits / sweeps
    gap = float(np.abs(empirical - enumerated).max())
    check(
        "criterion 3 (indicator sweep vs enumeration)",
        gap < 0.02,
        f"max |empirical - enumerated| = {gap:.4f} (< 0.02) over {sweeps} sweeps",
    )


def test_criterion_4_closed_form_vs_quadrature():
    rng = np.random.default_rng(4)
    worst_constant = worst_linear = 0.0
    for _ in range(100):
        lam = float(rng.uniform(0.05, 2.0))
        p1 = float(rng.uniform(0.01, 0.6))
        p2 = float(rng.uniform(p1, 0.99))
        closed = time_to_penetration_constant(lam, p1, p2)
        numeric = time_to_penetration_numeric(lambda t, lam=lam: lam, p1, p2)
        worst_constant = max(worst_constant, abs(closed - numeric))
    for _ in range(100):
        slope = float(rng.uniform(0.01, 0.5))
        t1 = float(rng.uniform(0.2, 3.0))
        p1 = float(rng.uniform(0.01, 0.6))
        p2 = float(rng.uniform(p1, 0.99))
        closed = time_to_penetration_linear(slope, t1, p1, p2)
        numeric = time_to_penetration_numeric(lambda t, s=slope: s * t, p1, p2, t1=t1)
        worst_linear = max(worst_linear, abs(closed - numeric))
    reference = time_to_penetration_constant(0.5, 0.1, 0.9)
    reference_gap = abs(reference - 2.0 * math.log(81.0))
    check(
        "criterion 4 (closed forms vs quadrature)",
        worst_constant < 1e-8 and worst_linear < 1e-8 and reference_gap < 1e-9,
        f"constant gap {worst_constant:.2e}, linear gap {worst_linear:.2e} (< 1e-8); "
        f"reference case {reference:.5f} = 2 ln 81 within {reference_gap:.1e}",
    )


def test_criterion_5_spline_correctness():
    rng = np.random.default_rng(7)
    dims_ok = True
    for k in range(0, 11):
        xi = np.linspace(1.0, 9.0, k) if k else np.empty(0)
        state = SplineState(0.0, 10.0, xi, np.zeros(k + 2))
        dims_ok &= basis_matrix(state, np.linspace(0, 10, 30)).shape[1] == k + 2

    worst_boundary = 0.0
    for seed in range(5):
        local = np.random.default_rng(seed)
        k = int(local.integers(0, 6))
        xi = np.sort(local.uniform(2.0, 8.0, size=k))
        state = SplineState(0.0, 10.0, xi, local.standard_normal(k + 2))
        h = 0.05 if k == 0 else min(0.05, (xi[0] - 0.0) / 4, (10.0 - xi[-1]) / 4)
        for x, direction in ((0.0, +1), (10.0, -1)):
            t = x + direction * h * np.arange(4)
            f = basis_matrix(state, t) @ state.omega
            second = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
            worst_boundary = max(worst_boundary, abs(second))

    state = SplineState(-0.5, 10.5, np.array([2.5, 5.0, 7.5]), np.zeros(5))
    t = np.linspace(0.0, 10.0, 50)
    design = basis_matrix(state, t)
    coef, *_ = np.linalg.lstsq(design, t, rcond=None)
    linear_gap = float(np.max(np.abs(design @ coef - t)))
    check(
        "criterion 5 (natural spline correctness)",
        dims_ok and worst_boundary < 1e-8 and linear_gap < 1e-9,
        f"dim=k+2 for k in 0..10: {dims_ok}; |f''(boundary)| <= {worst_boundary:.1e} (< 1e-8); "
        f"linear reproduction error {linear_gap:.1e} (< 1e-9)",
    )


def test_criterion_6_synthetic_recovery(big_sim, big_fits):
    chains = big_fits["fits"]["since_intro"]
    elapsed = big_fits["timings"]["since_intro"]
    index = chains[0].index
    draws = [d for c in chains for d in c.draws]

    inclusion = inclusion_probabilities(draws)
    active = np.flatnonzero(big_sim.truth.gamma == 1)
    null = np.flatnonzero(big_sim.truth.gamma == 0)
    actives_found = bool(np.all(inclusion[active] > 0.5))
    nulls_quiet = int(np.sum(inclusion[null] < 0.5))

    alpha_draws = np.array([d.alpha for d in draws])
    lower, upper = np.percentile(alpha_draws, [5.0, 95.0], axis=0)
    truth = np.array([big_sim.truth.alpha[pair] for pair in index.pairs])
    covered = int(np.sum((lower <= truth) & (truth <= upper)))

    selectors = ["theta_L", "theta_A", "theta_B"] + [
        (lambda s, k=k: s.beta[k]) for k in range(index.K)
    ]
    rhats = [gelman_rubin(chains, s) for s in selectors]
    worst_rhat = max(rhats)

    ok = (
        actives_found
        and nulls_quiet >= 6
        and covered >= math.ceil(0.8 * len(index.pairs))
        and worst_rhat < 1.1
        and elapsed < 1800.0
    )
    check(
        "criterion 6 (synthetic end-to-end recovery)",
        ok,
        f"active inclusion {np.round(inclusion[active], 3).tolist()} (> 0.5); "
        f"{nulls_quiet}/8 nulls < 0.5 (>= 6); ceilings covered {covered}/124 (>= 100); "
        f"max R-hat {worst_rhat:.3f} (< 1.1); wall clock {elapsed:.0f}s (< 1800s)",
    )


def test_criterion_7_dic_ordering(big_sim, big_fits):
    dics = {}
    additive = True
    for variant, chains in big_fits["fits"].items():
        result = compute_dic(chains, big_sim.data, variant=variant)
        dics[variant] = result.dic
        additive &= result.dic == result.d_bar + result.p_d
    ordered = dics["since_intro"] < dics["calendar"] < dics["invariant"]
    check(
        "criterion 7 (DIC ordering across variants)",
        ordered and additive,
        f"DIC since-intro {dics['since_intro']:.1f} < calendar {dics['calendar']:.1f} "
        f"< invariant {dics['invariant']:.1f}; additivity exact: {additive}",
    )


def test_criterion_8_hyperparameter_monotonicity(big_sim):
    index = PanelIndex(big_sim.data)
    countries = index.countries
    b_true = np.array(
        [big_sim.truth.b_effect[(countries[ci], int(y))] for ci, y in zip(index.b_country, index.b_year)]
    )
    X = index.X
    xtx, R = X.T @ X, build_correlation(X)
    K = X.shape[1]
    upsilon_grid = [1, 5, 7, 10, 15, 20, 25, 50, 100, 500]
    w_grid = [0.1, 0.3, 0.5]

    table = np.zeros((len(upsilon_grid), len(w_grid)))
    for ui, upsilon in enumerate(upsilon_grid):
        for wi, w in enumerate(w_grid):
            cell = []
            for seed in range(3):
                hyper = HyperParams(upsilon=upsilon, w=w)
                rng = np.random.default_rng(1000 + seed)  # common random numbers per seed
                gamma = np.zeros(K, dtype=int)
                running = 0.0
                burn, keep = 150, 900
                for i in range(burn + keep):
                    gamma = gamma_full_conditional(
                        b_true, X, hyper, rng.permutation(K), rng, gamma, xtx=xtx, R=R
                    )
                    if i >= burn:
                        running += gamma.mean()
                cell.append(running / keep)
            table[ui, wi] = float(np.mean(cell))

    down_in_upsilon = all(
        table[i, wi] >= table[i + 1, wi]
        for wi in range(len(w_grid))
        for i in range(len(upsilon_grid) - 1)
    )
    up_in_w = all(
        table[ui, j] <= table[ui, j + 1]
        for ui in range(len(upsilon_grid))
        for j in range(len(w_grid) - 1)
    )
    check(
        "criterion 8 (inclusion monotone in slab scale and prior weight)",
        down_in_upsilon and up_in_w,
        f"non-increasing in upsilon: {down_in_upsilon}; non-decreasing in w: {up_in_w}; "
        f"corners {table[0, 0]:.3f}/{table[0, -1]:.3f} -> {table[-1, 0]:.3f}/{table[-1, -1]:.3f}",
    )


def test_criterion_9_cli_determinism(tmp_path):
    config = tmp_path / "config.txt"
    config.write_text(
        "adoption = sim/adoption.csv\ncovariates = sim/covariates.csv\n"
        "iterations = 400\nburn_in = 150\nthin = 10\nchains = 2\nseed = 31\n"
        "sim_countries = 5\nsim_products = 2\nsim_covariates = 4\n",
        encoding="utf-8",
    )
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "sim")]) == 0
    assert main(["fit", "--config", str(config), "--out", str(tmp_path / "run1")]) == 0
    assert main(["fit", "--config", str(config), "--out", str(tmp_path / "run2")]) == 0
    names = [
        "draws_scalars.csv",
        "draws_alpha.csv",
        "draws_b.csv",
        "draws_tau.csv",
        "draws_f.csv",
        "acceptance.csv",
        "dic.csv",
        "run_meta.json",
    ]
    identical = {
        name: (tmp_path / "run1" / name).read_bytes() == (tmp_path / "run2" / name).read_bytes()
        for name in names
    }
    check(
        "criterion 9 (bit-identical repeated fits)",
        all(identical.values()),
        f"{sum(identical.values())}/{len(names)} output files byte-identical across reruns",
    )
