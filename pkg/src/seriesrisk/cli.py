"""Command-line pipeline around the library.

Subcommands: featurize, ingest, train, predict, evaluate, synth,
tune-baselines. All of them read one flat key=value config file; --set
flags override single keys and win over the file. Failures exit nonzero
with a one-line JSON error on stderr. Given a fixed seed, reruns produce
byte-identical numerical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import synth as synthmod
from .background import DEFAULT_BANDWIDTH_CELLS, DEFAULT_WINDOW_DAYS, fit_background
from .baselines import (
    BANDWIDTH_CANDIDATES_CELLS,
    WINDOW_CANDIDATES_DAYS,
    tune_baseline,
)
from .evaluation import (
    AblationKernelModel,
    BackgroundWindowModel,
    EvalContext,
    NearestNeighborModel,
    SelfExcitingModel,
    SeriesKdeModel,
    emit_report,
    evaluate,
)
from .events import (
    prediction_time,
    read_events_csv,
    split_train_test,
    write_rejections,
)
from .grid import (
    GeoGrid,
    aggregate_features,
    build_grid,
    grid_shape_for,
    load_land_use,
    load_stations,
    read_feature_csv,
    standardize,
    write_feature_csv,
)
from .kernel import KernelParams, read_params, write_params
from .risk import risk_map, write_risk_csv, write_risk_geojson
from .training import TrainConfig, prepare_training_data, train

ALL_MODELS = (
    "self_exciting",
    "ablation_kernel",
    "series_kde",
    "nearest_neighbor",
    "background_window",
)


class CliError(Exception):
    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = {"error": message, **payload}


# -- config -------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {n}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | None, overrides: list[str]) -> dict[str, str]:
    cfg: dict[str, str] = {}
    if path:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        with open(path) as fh:
            cfg.update(parse_config_text(fh.read()))
    for item in overrides:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _get(cfg, key, cast, default):
    if key not in cfg or cfg[key] == "":
        if default is None:
            raise CliError(f"missing config key {key!r}")
        return default
    try:
        return cast(cfg[key])
    except ValueError as exc:
        raise CliError(f"invalid config value for {key!r}: {cfg[key]!r} ({exc})")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError("expected a boolean")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def grid_from_config(cfg: dict[str, str]) -> GeoGrid:
    return build_grid(
        (_get(cfg, "grid.lat_min", float, None), _get(cfg, "grid.lon_min", float, None)),
        (_get(cfg, "grid.lat_max", float, None), _get(cfg, "grid.lon_max", float, None)),
        _get(cfg, "grid.u", int, None),
        _get(cfg, "grid.v", int, None),
    )


def grid_for_resolution(cfg: dict[str, str], n_cells: int) -> GeoGrid:
    base = grid_from_config(cfg)
    width, height = base.size_m
    u, v = grid_shape_for(n_cells, aspect=width / height)
    return replace(base, u=u, v=v)


def train_config_from(cfg: dict[str, str], freeze_beta: bool = False) -> TrainConfig:
    return TrainConfig(
        learning_rate=_get(cfg, "train.learning_rate", float, 0.01),
        momentum=_get(cfg, "train.momentum", float, 0.9),
        lambda_beta=_get(cfg, "train.lambda_beta", float, 0.01),
        iterations=_get(cfg, "train.iterations", int, 50_000),
        seed=_get(cfg, "train.seed", int, 0),
        init_c=_get(cfg, "train.init_c", float, 1.0),
        init_d=_get(cfg, "train.init_d", float, 1.0),
        init_beta0=_get(cfg, "train.init_beta0", float, 1.0),
        freeze_beta=freeze_beta,
        feature_diff=_get(cfg, "kernel.feature_diff", str, "signed"),
        clamp=_get(cfg, "kernel.clamp", _bool, False),
        log_every=_get(cfg, "train.log_every", int, 500),
    )


def synth_spec_from(cfg: dict[str, str]) -> synthmod.SynthSpec:
    n_features = _get(cfg, "synth.n_features", int, 4)
    theta = None
    if "synth.theta_beta" in cfg:
        theta = KernelParams(
            c=_get(cfg, "synth.theta_c", float, 1.0),
            d=_get(cfg, "synth.theta_d", float, 0.5),
            beta=np.array(_get(cfg, "synth.theta_beta", _floats, None)),
        )
    bbox = synthmod.DEFAULT_BBOX
    if "grid.lat_min" in cfg:
        bbox = (
            (_get(cfg, "grid.lat_min", float, None), _get(cfg, "grid.lon_min", float, None)),
            (_get(cfg, "grid.lat_max", float, None), _get(cfg, "grid.lon_max", float, None)),
        )
    return synthmod.SynthSpec(
        seed=_get(cfg, "synth.seed", int, 0),
        u=_get(cfg, "grid.u", int, 30),
        v=_get(cfg, "grid.v", int, 30),
        bbox=bbox,
        n_features=n_features,
        n_waves=_get(cfg, "synth.n_waves", int, 6),
        n_mixture=_get(cfg, "synth.n_mixture", int, 3),
        n_background=_get(cfg, "synth.n_background", int, 2000),
        n_series=_get(cfg, "synth.n_series", int, 40),
        series_length=_get(cfg, "synth.series_length", int, 6),
        theta_true=theta,
        tau=_get(cfg, "synth.tau", float, 0.2),
        span_days=_get(cfg, "synth.span_days", float, 365.0),
    )


def _background_args(cfg, grid) -> tuple[float, float]:
    window = _get(cfg, "background.window_days", float, DEFAULT_WINDOW_DAYS)
    bw = _get(cfg, "background.bandwidth_cells", float, DEFAULT_BANDWIDTH_CELLS)
    return window, bw * grid.cell_side_m


def _out_dir(cfg: dict[str, str]) -> str:
    out = _get(cfg, "output_dir", str, "out")
    os.makedirs(out, exist_ok=True)
    return out


def _load_store(cfg: dict[str, str], grid: GeoGrid):
    path = _get(cfg, "events", str, None)
    if not os.path.exists(path):
        raise CliError(f"events file not found: {path}")
    return read_events_csv(path, grid)


def _load_features(cfg: dict[str, str], grid: GeoGrid):
    path = _get(cfg, "features", str, None)
    if not os.path.exists(path):
        raise CliError(f"features file not found: {path}")
    table = read_feature_csv(path, grid)
    return table if table.standardized else standardize(table)


# -- commands -------------------------------------------------------------------


def cmd_synth(cfg: dict[str, str]) -> dict:
    spec = synth_spec_from(cfg)
    paths = synthmod.write_synth_dataset(spec, _out_dir(cfg))
    return {"command": "synth", **paths}


def cmd_featurize(cfg: dict[str, str]) -> dict:
    grid = grid_from_config(cfg)
    land_use = load_land_use(_get(cfg, "land_use", str, None))
    stations_path = cfg.get("stations")
    stations = load_stations(stations_path) if stations_path else []
    result = aggregate_features(grid, land_use, stations)
    out = _get(cfg, "features", str, os.path.join(_out_dir(cfg), "features.csv"))
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_feature_csv(result.features, out)
    summary = {
        "command": "featurize",
        "features": out,
        "n_records": len(land_use),
        "n_rejected": result.n_rejected,
        "rejected": [{"record": i, "reason": r} for i, r in result.rejected],
    }
    with open(os.path.join(_out_dir(cfg), "featurize_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


def cmd_ingest(cfg: dict[str, str]) -> dict:
    grid = grid_from_config(cfg)
    result = _load_store(cfg, grid)
    out = _out_dir(cfg)
    write_rejections(result.rejected, os.path.join(out, "rejections.jsonl"))
    split = split_train_test(result.store)
    summary = {
        "command": "ingest",
        "accepted": len(result.store),
        "rejected": len(result.rejected),
        "n_series": result.store.n_series,
        "n_singletons": len(result.store.singletons),
        "n_test_cases": len(split.test_cases),
        "skipped_series": list(split.skipped_series),
    }
    with open(os.path.join(out, "ingest_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


def _train_params(cfg, grid, features, train_store, freeze_beta, log_path=None):
    window, bandwidth = _background_args(cfg, grid)
    horizon = max(c.t for c in train_store.crimes) + 1.0
    background = fit_background(grid, train_store.crimes, horizon, window, bandwidth)
    data = prepare_training_data(train_store, grid, background, features)
    return train(train_config_from(cfg, freeze_beta=freeze_beta), data, log_path=log_path)


def cmd_train(cfg: dict[str, str]) -> dict:
    grid = grid_from_config(cfg)
    features = _load_features(cfg, grid)
    store = _load_store(cfg, grid).store
    split = split_train_test(store)
    out = _out_dir(cfg)
    params = _train_params(
        cfg, grid, features, split.train, freeze_beta=False,
        log_path=os.path.join(out, "train_log.jsonl"),
    )
    theta_path = os.path.join(out, "theta.json")
    write_params(params, theta_path)
    return {"command": "train", "theta": theta_path, "c": params.c, "d": params.d}


def cmd_predict(cfg: dict[str, str], series: int) -> dict:
    grid = grid_from_config(cfg)
    features = _load_features(cfg, grid)
    store = _load_store(cfg, grid).store
    params_path = _get(cfg, "params", str, os.path.join(_get(cfg, "output_dir", str, "out"), "theta.json"))
    if not os.path.exists(params_path):
        raise CliError(f"trained parameters not found: {params_path}")
    params = read_params(params_path)
    if series not in store.series_ids:
        raise CliError("unknown series id", series=series)
    priors = store.series_events(series)
    t = prediction_time(priors)
    window, bandwidth = _background_args(cfg, grid)
    background = fit_background(grid, store.crimes, t, window, bandwidth)
    rm = risk_map(
        background, params, features, priors, t, series=series,
        feature_diff=_get(cfg, "kernel.feature_diff", str, "signed"),
        clamp=_get(cfg, "kernel.clamp", _bool, False),
    )
    out = _out_dir(cfg)
    csv_path = os.path.join(out, f"risk_series_{series}.csv")
    write_risk_csv(rm, csv_path)
    artifacts = {"risk_csv": csv_path}
    if _get(cfg, "predict.geojson", _bool, False):
        geo_path = os.path.join(out, f"risk_series_{series}.geojson")
        write_risk_geojson(rm, geo_path)
        artifacts["risk_geojson"] = geo_path
    top = int(np.argmax(rm.values))
    return {"command": "predict", "series": series, "top_cell": top, **artifacts}


def _provider_for(cfg: dict[str, str]):
    """Data provider for a requested cell count: grid, standardized features,
    and the event store re-located on that grid."""
    synth_mode = "land_use" not in cfg
    city = synthmod.SynthCity(synth_spec_from(cfg)) if synth_mode else None

    def provide(n_cells: int):
        if synth_mode:
            grid = city.grid_for_cells(n_cells)
            features = city.features_for(grid)
        else:
            grid = grid_for_resolution(cfg, n_cells)
            land_use = load_land_use(_get(cfg, "land_use", str, None))
            stations_path = cfg.get("stations")
            stations = load_stations(stations_path) if stations_path else []
            features = standardize(aggregate_features(grid, land_use, stations).features)
        store = _load_store(cfg, grid).store
        return grid, features, store

    return provide


def _tuning_candidates(cfg, grid, kind) -> list[dict[str, float]]:
    side = grid.cell_side_m
    bandwidths = [
        k * side for k in _get(cfg, "tune.bandwidth_cells", _floats, list(BANDWIDTH_CANDIDATES_CELLS))
    ]
    if kind == "series_kde":
        return [{"bandwidth_m": bw} for bw in bandwidths]
    windows = _get(cfg, "tune.window_days", _floats, list(WINDOW_CANDIDATES_DAYS))
    return [{"window_days": T, "bandwidth_m": bw} for T in windows for bw in bandwidths]


def _models_for_resolution(cfg, grid, features, split):
    """Build every requested model on one resolution's training split."""
    wanted = _get(cfg, "eval.models", _names, list(ALL_MODELS))
    unknown = set(wanted) - set(ALL_MODELS)
    if unknown:
        raise CliError(f"unknown model names: {sorted(unknown)}")
    window, bandwidth = _background_args(cfg, grid)
    vsplit = split_train_test(split.train)
    val_ctx = EvalContext(grid=grid, features=features, train=vsplit.train)

    models = []
    for name in wanted:
        if name == "self_exciting":
            params = _train_params(cfg, grid, features, split.train, freeze_beta=False)
            model = SelfExcitingModel(
                params=params, window_days=window, bandwidth_m=bandwidth,
                feature_diff=_get(cfg, "kernel.feature_diff", str, "signed"),
                clamp=_get(cfg, "kernel.clamp", _bool, False),
            )
            tuned = {"c": params.c, "d": params.d, "beta": [float(b) for b in params.beta]}
        elif name == "ablation_kernel":
            params = _train_params(cfg, grid, features, split.train, freeze_beta=True)
            model = AblationKernelModel(c=params.c, d=params.d,
                                        window_days=window, bandwidth_m=bandwidth)
            tuned = {"c": params.c, "d": params.d}
        elif name == "series_kde":
            tuned = tune_baseline(
                "series_kde", vsplit.test_cases, _tuning_candidates(cfg, grid, "series_kde"),
                val_ctx,
            )
            model = SeriesKdeModel(bandwidth_m=tuned["bandwidth_m"])
        elif name == "nearest_neighbor":
            model, tuned = NearestNeighborModel(), {}
        else:  # background_window
            tuned = tune_baseline(
                "background_window", vsplit.test_cases,
                _tuning_candidates(cfg, grid, "background_window"), val_ctx,
            )
            model = BackgroundWindowModel(
                window_days=tuned["window_days"], bandwidth_m=tuned.get("bandwidth_m")
            )
        models.append((model, tuned))
    return models


def cmd_evaluate(cfg: dict[str, str]) -> dict:
    resolutions = _get(cfg, "eval.resolutions", _ints, [])
    provider = _provider_for(cfg) if resolutions else None
    reports = []
    if resolutions:
        for n_cells in resolutions:
            grid, features, store = provider(n_cells)
            split = split_train_test(store)
            ctx = EvalContext(grid=grid, features=features, train=split.train)
            for model, tuned in _models_for_resolution(cfg, grid, features, split):
                reports.append(evaluate(model, split.test_cases, ctx, tuned_params=tuned))
    else:
        grid = grid_from_config(cfg)
        features = _load_features(cfg, grid)
        store = _load_store(cfg, grid).store
        split = split_train_test(store)
        ctx = EvalContext(grid=grid, features=features, train=split.train)
        for model, tuned in _models_for_resolution(cfg, grid, features, split):
            reports.append(evaluate(model, split.test_cases, ctx, tuned_params=tuned))
    json_path, csv_path = emit_report(reports, _out_dir(cfg))
    return {"command": "evaluate", "report": json_path, "cases": csv_path,
            "n_reports": len(reports)}


def cmd_tune_baselines(cfg: dict[str, str]) -> dict:
    grid = grid_from_config(cfg)
    features = _load_features(cfg, grid)
    store = _load_store(cfg, grid).store
    split = split_train_test(store)
    vsplit = split_train_test(split.train)
    val_ctx = EvalContext(grid=grid, features=features, train=vsplit.train)
    tuned = {
        kind: tune_baseline(kind, vsplit.test_cases, _tuning_candidates(cfg, grid, kind), val_ctx)
        for kind in ("series_kde", "background_window")
    }
    out_path = os.path.join(_out_dir(cfg), "tuned_baselines.json")
    with open(out_path, "w") as fh:
        json.dump(tuned, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return {"command": "tune-baselines", "tuned": out_path, **tuned}


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seriesrisk",
        description="Grid-based next-location prediction for crime series",
    )
    parser.add_argument("command", choices=[
        "featurize", "ingest", "train", "predict", "evaluate", "synth", "tune-baselines",
    ])
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="override train.seed and synth.seed")
    parser.add_argument("--resolution", type=int,
                        help="override eval.resolutions with a single cell count")
    parser.add_argument("--output-dir", help="override output_dir")
    parser.add_argument("--series", type=int, help="series id (predict)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["train.seed"] = str(args.seed)
            cfg["synth.seed"] = str(args.seed)
        if args.output_dir is not None:
            cfg["output_dir"] = args.output_dir
        if args.resolution is not None:
            cfg["eval.resolutions"] = str(args.resolution)

        if args.command == "synth":
            result = cmd_synth(cfg)
        elif args.command == "featurize":
            result = cmd_featurize(cfg)
        elif args.command == "ingest":
            result = cmd_ingest(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "predict":
            if args.series is None:
                raise CliError("predict requires --series")
            result = cmd_predict(cfg, args.series)
        elif args.command == "evaluate":
            result = cmd_evaluate(cfg)
        else:
            result = cmd_tune_baselines(cfg)
    except CliError as exc:
        print(json.dumps(exc.payload, sort_keys=True), file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": str(exc)}, sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
