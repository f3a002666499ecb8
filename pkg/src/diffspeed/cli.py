"""Batch command-line interface.

Subcommands: simulate, fit, compare, ttp, report.  Every run is
deterministic given its seed and config; failures exit with a
machine-readable category (2 config, 3 data, 4 numerical).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytics, reports
from .engine import run_chains
from .errors import ConfigError, DataError, DiffspeedError, NumericalError
from .panel_io import (
    VARIANT_ALIASES,
    load_fit,
    load_settings,
    load_panel,
    save_chains,
    save_panel,
    write_table,
)
from .synthetic import simulate_panel


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffspeed",
        description="Semiparametric Bayesian estimation of new-product diffusion speed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic panel with recorded truth")
    sim.add_argument("--config", type=Path)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", type=Path, required=True)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the sampler on a panel")
    fit.add_argument("--config", type=Path, required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--iterations", type=int)
    fit.add_argument("--variant", choices=sorted(set(VARIANT_ALIASES)))
    fit.add_argument("--out", type=Path, required=True)
    fit.set_defaults(func=cmd_fit)

    cmp_ = sub.add_parser("compare", help="rank fitted variants by DIC")
    cmp_.add_argument("fits", nargs="+", type=Path)
    cmp_.add_argument("--out", type=Path, required=True)
    cmp_.set_defaults(func=cmd_compare)

    ttp = sub.add_parser("ttp", help="time from one penetration level to another")
    ttp.add_argument("--p1", type=float, required=True)
    ttp.add_argument("--p2", type=float, required=True)
    ttp.add_argument("--mode", choices=["constant", "linear", "trajectory"], default="constant")
    ttp.add_argument("--lam", type=float, help="constant speed")
    ttp.add_argument("--slope", type=float, help="slope of a linear-in-time speed")
    ttp.add_argument("--t1", type=float, default=0.0, help="starting time")
    ttp.add_argument("--fit", type=Path, help="fit directory for trajectory mode")
    ttp.add_argument("--country")
    ttp.add_argument("--product")
    ttp.set_defaults(func=cmd_ttp)

    rep = sub.add_parser("report", help="render tables and figures from a fit")
    rep.add_argument("--fit", type=Path, required=True)
    rep.add_argument("--out", type=Path, required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def cmd_simulate(args) -> int:
    settings = load_settings(args.config)
    seed = args.seed if args.seed is not None else settings.sampler.rng_seed
    result = simulate_panel(settings.generator, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_panel(result.data, out / "adoption.csv", out / "covariates.csv")
    truth = result.truth
    payload = {
        "seed": seed,
        "beta": list(truth.beta),
        "gamma": [int(g) for g in truth.gamma],
        "tau": list(truth.tau),
        "alpha": {f"{c}:{p}": v for (c, p), v in sorted(truth.alpha.items())},
        "intro": {f"{c}:{p}": int(v) for (c, p), v in sorted(truth.intro.items())},
        "theta_L": truth.theta_L,
        "theta_A": truth.theta_A,
        "theta_B": truth.theta_B,
        "theta_H": truth.theta_H,
        "f_mid": truth.f_mid,
        "f_depth": truth.f_depth,
        "horizon": truth.horizon,
        "truncation_events": result.truncation_events,
    }
    (out / "truth.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    lengths = [len(s.years) for s in result.data.series.values()]
    print(
        f"simulated {len(result.data.countries)} countries x {len(result.data.products)} products, "
        f"series lengths {min(lengths)}-{max(lengths)}, "
        f"{result.truncation_events} truncation events -> {out}"
    )
    return 0


def cmd_fit(args) -> int:
    settings = load_settings(args.config)
    if args.seed is not None:
        settings.sampler.rng_seed = args.seed
    if args.chains is not None:
        settings.sampler.n_chains = args.chains
    if args.iterations is not None:
        settings.sampler.n_iterations = args.iterations
        settings.sampler.burn_in = min(settings.sampler.burn_in, args.iterations // 2)
    if args.variant is not None:
        settings.sampler.model_variant = VARIANT_ALIASES[args.variant]
    if settings.adoption is None or settings.covariates is None:
        raise ConfigError("fit needs adoption and covariates paths in the config file")
    try:
        settings.sampler.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = load_panel(settings.adoption, settings.covariates, settings.time_axis)
    chains = run_chains(data, settings.hyper, settings.sampler)
    dic = analytics.compute_dic(chains, data)
    save_chains(
        args.out,
        chains,
        data,
        settings,
        dic_rows=[[dic.variant, dic.d_bar, dic.p_d, dic.dic]],
    )
    stored = sum(len(c.draws) for c in chains)
    print(
        f"fit {settings.sampler.model_variant}: {len(chains)} chain(s), {stored} stored draws, "
        f"DIC={dic.dic:.3f} (D_bar={dic.d_bar:.3f}, P_D={dic.p_d:.3f}) -> {args.out}"
    )
    return 0


def cmd_compare(args) -> int:
    if len(args.fits) < 2:
        raise ConfigError("compare needs at least two fitted variants")
    rows = []
    for fit_dir in args.fits:
        bundle = load_fit(fit_dir)
        if not bundle.dic:
            raise DataError(f"{fit_dir}: fit has no dic.csv; rerun the fit")
        for variant, d_bar, p_d, dic in bundle.dic:
            rows.append([variant, d_bar, p_d, dic])
    rows.sort(key=lambda r: r[3])
    out = Path(args.out)
    write_table(out / "dic_table.csv", ["variant", "d_bar", "p_d", "dic"], rows)
    print("variant         d_bar          p_d            dic")
    for variant, d_bar, p_d, dic in rows:
        print(f"{variant:<15} {d_bar:<14.4f} {p_d:<14.4f} {dic:.4f}")
    return 0


def cmd_ttp(args) -> int:
    spec = {
        "constant": analytics.SPEED_CONSTANT,
        "linear": analytics.SPEED_LINEAR,
        "trajectory": analytics.SPEED_TRAJECTORY,
    }[args.mode]
    try:
        analytics.PenetrationQuery(args.p1, args.p2, speed_spec=spec).validate()
        if args.mode == "constant":
            if args.lam is None:
                raise ConfigError("constant mode needs --lam")
            dt = analytics.time_to_penetration_constant(args.lam, args.p1, args.p2)
        elif args.mode == "linear":
            if args.slope is None:
                raise ConfigError("linear mode needs --slope (and usually --t1)")
            dt = analytics.time_to_penetration_linear(args.slope, args.t1, args.p1, args.p2)
        else:
            if args.fit is None or args.country is None or args.product is None:
                raise ConfigError("trajectory mode needs --fit, --country and --product")
            bundle = load_fit(args.fit)
            pair = f"{args.country}:{args.product}"
            if pair not in bundle.meta["pairs"]:
                raise DataError(f"pair {pair} not in fit {args.fit}")
            years, draws = reports.pair_speed_draws(bundle, pair)
            path = draws.mean(axis=0)
            if np.any(path <= 0):
                raise NumericalError("posterior-mean speed path is not positive everywhere")
            dt = analytics.time_to_penetration_numeric(
                lambda t: float(np.interp(t, years.astype(float), path)),
                args.p1,
                args.p2,
                t1=float(years[0]),
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"{dt:.5f}")
    return 0


def cmd_report(args) -> int:
    written = reports.write_report(args.fit, args.out)
    print(f"wrote {len(written)} report files -> {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DiffspeedError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
