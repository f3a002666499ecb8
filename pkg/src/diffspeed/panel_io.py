"""Delimited-text ingestion and serialization.

Adoption files carry one row per (country, product, year) with integer
counts; covariate files carry one row per (covariate, country[, year]) with
a time-varying flag; config files are flat `key = value` text.  Floats are
written with shortest round-trip formatting so that save/load cycles and
repeated runs with the same seed are bit-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SamplerConfig
from .errors import ConfigError, DataError
from .model import (
    Covariate,
    HyperParams,
    PanelDataset,
    Series,
    TIME_AXIS_CALENDAR,
    TIME_AXIS_SINCE_INTRO,
    VARIANT_CALENDAR,
    VARIANT_INVARIANT,
    VARIANT_SINCE_INTRO,
)
from .splines import basis_matrix
from .synthetic import GeneratorConfig

ADOPTION_COLUMNS = ["country", "product", "year", "adopters", "cumulative_prev", "population"]
COVARIATE_COLUMNS = ["covariate", "country", "year", "value", "time_varying"]

VARIANT_ALIASES = {
    "since-intro": VARIANT_SINCE_INTRO,
    "since_intro": VARIANT_SINCE_INTRO,
    "calendar": VARIANT_CALENDAR,
    "invariant": VARIANT_INVARIANT,
}
TIME_AXIS_ALIASES = {
    "since_introduction": TIME_AXIS_SINCE_INTRO,
    "years_since_introduction": TIME_AXIS_SINCE_INTRO,
    "calendar": TIME_AXIS_CALENDAR,
    "calendar_year": TIME_AXIS_CALENDAR,
}


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def read_table(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    except StopIteration:
        raise DataError(f"{path}: empty file, expected a header row") from None
    return header, rows


def _parse_count(value: str, what: str, where: str) -> float:
    try:
        number = float(value)
    except ValueError as exc:
        raise DataError(f"{where}: {what} {value!r} is not a number") from exc
    if number < 0 or number != int(number):
        raise DataError(f"{where}: {what} {value!r} must be a non-negative integer")
    return float(int(number))


def _parse_year(value: str, where: str) -> int:
    if not value.isdigit() or len(value) != 4:
        raise DataError(f"{where}: year {value!r} must be a 4-digit integer")
    return int(value)


def load_panel(adoption_path, covariates_path, time_axis_mode=TIME_AXIS_SINCE_INTRO) -> PanelDataset:
    """Parse and validate a panel; rejects schema violations with row-level messages."""
    adoption_path, covariates_path = Path(adoption_path), Path(covariates_path)
    for path in (adoption_path, covariates_path):
        if not path.exists():
            raise DataError(f"input file not found: {path}")

    header, rows = read_table(adoption_path)
    if header != ADOPTION_COLUMNS:
        raise DataError(f"{adoption_path}: expected header {ADOPTION_COLUMNS}, got {header}")
    records = {}
    for lineno, row in enumerate(rows, start=2):
        where = f"{adoption_path}:{lineno}"
        if len(row) != len(ADOPTION_COLUMNS) or any(cell == "" for cell in row):
            raise DataError(f"{where}: missing value")
        country, product, year_s, adopters_s, cum_s, pop_s = row
        year = _parse_year(year_s, where)
        key = (country, product)
        records.setdefault(key, []).append(
            (
                year,
                _parse_count(adopters_s, "adopters", where),
                _parse_count(cum_s, "cumulative_prev", where),
                _parse_count(pop_s, "population", where),
                lineno,
            )
        )

    series = {}
    for (country, product), entries in records.items():
        entries.sort(key=lambda e: e[0])
        years = [e[0] for e in entries]
        if len(set(years)) != len(years):
            raise DataError(f"{adoption_path}: duplicate year for ({country}, {product})")
        series[(country, product)] = Series(
            country=country,
            product=product,
            years=np.array(years),
            adopters=np.array([e[1] for e in entries]),
            cum_prev=np.array([e[2] for e in entries]),
            population=np.array([e[3] for e in entries]),
        )
    if not series:
        raise DataError(f"{adoption_path}: no adoption rows")
    countries = sorted({c for c, _ in series})
    products = sorted({p for _, p in series})

    header, rows = read_table(covariates_path)
    if header != COVARIATE_COLUMNS:
        raise DataError(f"{covariates_path}: expected header {COVARIATE_COLUMNS}, got {header}")
    flags, tables = {}, {}
    for lineno, row in enumerate(rows, start=2):
        where = f"{covariates_path}:{lineno}"
        if len(row) != len(COVARIATE_COLUMNS):
            raise DataError(f"{where}: wrong column count")
        name, country, year_s, value_s, flag_s = row
        if name == "" or country == "" or value_s == "" or flag_s == "":
            raise DataError(f"{where}: missing value")
        if country not in countries:
            raise DataError(f"{where}: unknown country {country!r}")
        if flag_s not in ("0", "1"):
            raise DataError(f"{where}: time_varying flag must be 0 or 1")
        time_varying = flag_s == "1"
        if name in flags and flags[name] != time_varying:
            raise DataError(f"{where}: covariate {name!r} mixes time-varying flags")
        flags[name] = time_varying
        try:
            value = float(value_s)
        except ValueError as exc:
            raise DataError(f"{where}: value {value_s!r} is not a number") from exc
        if time_varying:
            if year_s == "":
                raise DataError(f"{where}: time-varying covariate needs a year")
            year = _parse_year(year_s, where)
            tables.setdefault(name, {}).setdefault(country, {})[year] = value
        else:
            if year_s != "":
                raise DataError(f"{where}: time-invariant covariate must leave year blank")
            tables.setdefault(name, {})[country] = value

    covariates = [
        Covariate(name=name, time_varying=flags[name], values=tables[name])
        for name in sorted(tables)
    ]
    data = PanelDataset(
        countries=countries,
        products=products,
        series=series,
        covariates=covariates,
        time_axis_mode=time_axis_mode,
    ).finalize()
    data.check_invariants()
    return data


def save_panel(data: PanelDataset, adoption_path, covariates_path):
    rows = []
    for (country, product) in sorted(data.series):
        s = data.series[(country, product)]
        for year, y, yc, m in zip(s.years, s.adopters, s.cum_prev, s.population):
            rows.append([country, product, year, y, yc, m])
    write_table(adoption_path, ADOPTION_COLUMNS, rows)

    cov_rows = []
    for cov in data.covariates:
        if cov.time_varying:
            for country in sorted(cov.values):
                for year in sorted(cov.values[country]):
                    cov_rows.append(
                        [cov.name, country, year, cov.values[country][year], "1"]
                    )
        else:
            for country in sorted(cov.values):
                cov_rows.append([cov.name, country, "", cov.values[country], "0"])
    write_table(covariates_path, COVARIATE_COLUMNS, cov_rows)


# ---------------------------------------------------------------------------
# Config files


@dataclass
class RunSettings:
    hyper: HyperParams = field(default_factory=HyperParams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    adoption: Path | None = None
    covariates: Path | None = None
    time_axis: str = TIME_AXIS_SINCE_INTRO


_HYPER_KEYS = {
    "upsilon": ("upsilon", float),
    "w": ("w", float),
    "poisson_rate": ("poisson_rate", float),
    "precision_shape": ("precision_shape", float),
    "precision_rate": ("precision_rate", float),
    "theta_h": ("theta_h_value", float),
    "lambda_scale": ("lambda_prior_scale", float),
    "rw_step": ("rw_step", float),
    "k_max": ("k_max", int),
}
_SAMPLER_KEYS = {
    "iterations": ("n_iterations", int),
    "burn_in": ("burn_in", int),
    "thin": ("thin", int),
    "chains": ("n_chains", int),
    "seed": ("rng_seed", int),
}
_GENERATOR_KEYS = {
    "sim_countries": ("n_countries", int),
    "sim_products": ("n_products", int),
    "sim_covariates": ("n_covariates", int),
    "sim_theta_l": ("theta_L", float),
    "sim_long_length": ("long_length", int),
    "sim_short_length": ("short_length", int),
    "sim_constant_lambda": ("constant_lambda", float),
}


def parse_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8 ({exc})") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def build_settings(config_values: dict, base_dir: Path | None = None) -> RunSettings:
    settings = RunSettings()
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    for key, raw in config_values.items():
        try:
            if key in _HYPER_KEYS:
                attr, cast = _HYPER_KEYS[key]
                setattr(settings.hyper, attr, cast(raw))
            elif key in _SAMPLER_KEYS:
                attr, cast = _SAMPLER_KEYS[key]
                setattr(settings.sampler, attr, cast(raw))
            elif key in _GENERATOR_KEYS:
                attr, cast = _GENERATOR_KEYS[key]
                setattr(settings.generator, attr, cast(raw))
            elif key == "lambda_shape":
                settings.hyper.lambda_prior_shape = None if raw.lower() == "none" else float(raw)
            elif key == "variant":
                if raw not in VARIANT_ALIASES:
                    raise ConfigError(f"unknown variant {raw!r}")
                settings.sampler.model_variant = VARIANT_ALIASES[raw]
            elif key == "time_axis":
                if raw not in TIME_AXIS_ALIASES:
                    raise ConfigError(f"unknown time_axis {raw!r}")
                settings.time_axis = TIME_AXIS_ALIASES[raw]
            elif key == "adoption":
                settings.adoption = base_dir / raw
            elif key == "covariates":
                settings.covariates = base_dir / raw
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: bad value {raw!r} ({exc})") from exc
    if settings.time_axis == TIME_AXIS_CALENDAR and "variant" not in config_values:
        settings.sampler.model_variant = VARIANT_CALENDAR
    try:
        settings.hyper.validate()
        settings.sampler.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return settings


def load_settings(config_path=None, base_dir=None) -> RunSettings:
    if config_path is None:
        return RunSettings()
    config_path = Path(config_path)
    return build_settings(parse_config(config_path), base_dir or config_path.parent)


# ---------------------------------------------------------------------------
# Fit output persistence


def _pair_label(pair) -> str:
    return f"{pair[0]}:{pair[1]}"


def save_chains(out_dir, chains, data: PanelDataset, settings: RunSettings, dic_rows=None):
    """Write draw files, acceptance rates and metadata for a finished fit."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = chains[0].index
    cov_names = data.covariate_names

    scalar_header = (
        ["chain", "draw", "theta_L", "theta_A", "theta_B", "knots", "deviance"]
        + [f"beta_{n}" for n in cov_names]
        + [f"gamma_{n}" for n in cov_names]
    )
    scalar_rows = []
    alpha_rows = []
    b_rows = []
    tau_rows = []
    f_rows = []
    for c, chain in enumerate(chains):
        for d, state in enumerate(chain.draws):
            scalar_rows.append(
                [c, d, state.theta_L, state.theta_A, state.theta_B, state.spline.k, chain.deviance[d]]
                + list(state.beta)
                + [int(g) for g in state.gamma]
            )
            alpha_rows.append([c, d] + list(state.alpha))
            b_rows.append([c, d] + list(state.b_effect))
            tau_rows.append([c, d] + list(state.tau))
            if chain.variant != VARIANT_INVARIANT:
                f_vals = basis_matrix(state.spline, index.unique_abs) @ state.spline.omega
                f_rows.append([c, d] + list(f_vals))
    write_table(out_dir / "draws_scalars.csv", scalar_header, scalar_rows)
    write_table(
        out_dir / "draws_alpha.csv",
        ["chain", "draw"] + [_pair_label(p) for p in index.pairs],
        alpha_rows,
    )
    write_table(
        out_dir / "draws_b.csv",
        ["chain", "draw"]
        + [f"{index.countries[ci]}:{y}" for ci, y in zip(index.b_country, index.b_year)],
        b_rows,
    )
    write_table(out_dir / "draws_tau.csv", ["chain", "draw"] + list(index.products), tau_rows)
    if f_rows:
        write_table(
            out_dir / "draws_f.csv",
            ["chain", "draw"] + [f"f@{_fmt(t)}" for t in index.unique_abs],
            f_rows,
        )

    acc_rows = []
    for c, chain in enumerate(chains):
        for block, rate in sorted(chain.acceptance_rates.items()):
            acc_rows.append([c, block, rate])
    write_table(out_dir / "acceptance.csv", ["chain", "block", "value"], acc_rows)

    if dic_rows:
        write_table(out_dir / "dic.csv", ["variant", "d_bar", "p_d", "dic"], dic_rows)

    pair_years = {}
    pair_abscissae = {}
    for pid, pair in enumerate(index.pairs):
        mask = index.obs_pair == pid
        pair_years[_pair_label(pair)] = [int(y) for y in index.obs_year[mask]]
        pair_abscissae[_pair_label(pair)] = [
            float(t) for t in index.unique_abs[index.obs_abs_slot[mask]]
        ]
    meta = {
        "variant": chains[0].variant,
        "seed": settings.sampler.rng_seed,
        "iterations": settings.sampler.n_iterations,
        "burn_in": settings.sampler.burn_in,
        "thin": settings.sampler.thin,
        "chains": len(chains),
        "covariates": cov_names,
        "pairs": [_pair_label(p) for p in index.pairs],
        "products": list(index.products),
        "countries": list(index.countries),
        "unique_abscissae": [float(t) for t in index.unique_abs],
        "pair_years": pair_years,
        "pair_abscissae": pair_abscissae,
        "rw_step": [chain.rw_step for chain in chains],
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


@dataclass
class FitBundle:
    """Fit outputs read back from disk for reporting and comparison."""

    meta: dict
    scalars: dict  # column -> ndarray
    alpha: dict
    b_effect: dict
    tau: dict
    f_grid: dict | None
    dic: list  # rows of (variant, d_bar, p_d, dic)


def _table_as_columns(path):
    header, rows = read_table(path)
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def load_fit(fit_dir) -> FitBundle:
    fit_dir = Path(fit_dir)
    meta_path = fit_dir / "run_meta.json"
    if not meta_path.exists():
        raise DataError(f"{fit_dir} does not contain a fit (missing run_meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    scalars = _table_as_columns(fit_dir / "draws_scalars.csv")
    alpha = _table_as_columns(fit_dir / "draws_alpha.csv")
    b_effect = _table_as_columns(fit_dir / "draws_b.csv")
    tau = _table_as_columns(fit_dir / "draws_tau.csv")
    f_path = fit_dir / "draws_f.csv"
    f_grid = _table_as_columns(f_path) if f_path.exists() else None
    dic = []
    dic_path = fit_dir / "dic.csv"
    if dic_path.exists():
        _, rows = read_table(dic_path)
        dic = [(r[0], float(r[1]), float(r[2]), float(r[3])) for r in rows]
    return FitBundle(meta=meta, scalars=scalars, alpha=alpha, b_effect=b_effect, tau=tau, f_grid=f_grid, dic=dic)
