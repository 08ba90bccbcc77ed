"""Held-out evaluation: rank each series' true next cell in model risk maps.

A model is any object with a `name` and a method
`risk_values(series, priors, t, ctx) -> np.ndarray` returning one risk per
cell. For each test case the risk map is built at the prediction time (one
day after the last prior), the true cell is ranked pessimistically against
ties, and the rank is normalized by the cell count: the fraction of the map
that must be searched before reaching the truth.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .background import (
    DEFAULT_BANDWIDTH_CELLS,
    DEFAULT_WINDOW_DAYS,
    BackgroundField,
    fit_background,
)
from .baselines import (
    BaselineSpec,
    ablation_values,
    nearest_neighbor_values,
    series_kde_values,
)
from .events import EventStore, TestCase, prediction_time, split_train_test
from .grid import FeatureTable, GeoGrid
from .kernel import KernelParams
from .risk import rank_of_values, risk_map


@dataclass(eq=False)
class EvalContext:
    """Shared evaluation state: grid, standardized features, and the training
    events every model may condition on. Background fits are cached per
    (time, window, bandwidth)."""

    grid: GeoGrid
    features: FeatureTable
    train: EventStore
    _cache: dict = field(default_factory=dict, repr=False)

    def background(
        self,
        t: float,
        window_days: float = DEFAULT_WINDOW_DAYS,
        bandwidth_m: float | None = None,
    ) -> BackgroundField:
        if bandwidth_m is None:
            bandwidth_m = DEFAULT_BANDWIDTH_CELLS * self.grid.cell_side_m
        key = (t, window_days, bandwidth_m)
        if key not in self._cache:
            self._cache[key] = fit_background(
                self.grid, self.train.crimes, t, window_days, bandwidth_m
            )
        return self._cache[key]


# -- models -------------------------------------------------------------------


@dataclass(frozen=True)
class SelfExcitingModel:
    """Background KDE plus the learned triggering kernel."""

    params: KernelParams
    window_days: float = DEFAULT_WINDOW_DAYS
    bandwidth_m: float | None = None
    feature_diff: str = "signed"
    clamp: bool = False
    name: str = "self_exciting"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        background = ctx.background(t, self.window_days, self.bandwidth_m)
        return risk_map(
            background, self.params, ctx.features, priors, t,
            series=series, feature_diff=self.feature_diff, clamp=self.clamp,
        ).values


@dataclass(frozen=True)
class AblationKernelModel:
    """Same composition with the kernel numerator fixed to 1 (no geography)."""

    c: float
    d: float
    window_days: float = DEFAULT_WINDOW_DAYS
    bandwidth_m: float | None = None
    name: str = "ablation_kernel"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        background = ctx.background(t, self.window_days, self.bandwidth_m)
        return ablation_values(self.c, self.d, background, priors, t)


@dataclass(frozen=True)
class SeriesKdeModel:
    bandwidth_m: float
    name: str = "series_kde"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        return series_kde_values(ctx.grid, priors, self.bandwidth_m)


@dataclass(frozen=True)
class NearestNeighborModel:
    name: str = "nearest_neighbor"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        return nearest_neighbor_values(ctx.grid, priors)


@dataclass(frozen=True)
class BackgroundWindowModel:
    window_days: float = DEFAULT_WINDOW_DAYS
    bandwidth_m: float | None = None
    name: str = "background_window"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        return ctx.background(t, self.window_days, self.bandwidth_m).mu


@dataclass(frozen=True, eq=False)
class OracleModel:
    """Scores 1 on the known true cell, 0 elsewhere; a protocol check only."""

    true_cells: dict  # series -> cell index
    name: str = "oracle"

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        values = np.zeros(ctx.grid.n_cells)
        values[self.true_cells[series]] = 1.0
        return values


@dataclass(eq=False)
class RandomRiskModel:
    """I.i.d. uniform risks; its normalized ranks average to ~0.5."""

    seed: int = 0
    name: str = "random"

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    def risk_values(self, series, priors, t, ctx: EvalContext) -> np.ndarray:
        return self._rng.random(ctx.grid.n_cells)


def make_baseline_model(spec: BaselineSpec):
    p = dict(spec.params)
    if spec.kind == "ablation_kernel":
        return AblationKernelModel(c=p["c"], d=p["d"],
                                   window_days=p.get("window_days", DEFAULT_WINDOW_DAYS),
                                   bandwidth_m=p.get("bandwidth_m"))
    if spec.kind == "series_kde":
        return SeriesKdeModel(bandwidth_m=p["bandwidth_m"])
    if spec.kind == "nearest_neighbor":
        return NearestNeighborModel()
    if spec.kind == "background_window":
        return BackgroundWindowModel(window_days=p["window_days"],
                                     bandwidth_m=p.get("bandwidth_m"))
    raise ValueError(f"unknown baseline kind {spec.kind!r}")


# -- protocol -------------------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    model: str
    resolution: int
    series: int
    rank: int
    cells: int
    normalized_rank: float


@dataclass(frozen=True, eq=False)
class EvalReport:
    model: str
    resolution: int
    tuned_params: dict
    cases: tuple[CaseResult, ...]
    summary: dict


def _summarize(normalized: Sequence[float]) -> dict:
    if not normalized:
        return {"mean": None, "median": None, "q1": None, "q3": None, "min": None, "max": None}
    arr = np.asarray(normalized)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "q1": float(np.percentile(arr, 25)),
        "q3": float(np.percentile(arr, 75)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def evaluate(
    model,
    test_cases: Sequence[TestCase],
    ctx: EvalContext,
    tuned_params: dict | None = None,
) -> EvalReport:
    """Run the ranking protocol for one model over the held-out cases."""
    results = []
    n = ctx.grid.n_cells
    for case in test_cases:
        try:
            priors = ctx.train.series_events(case.series)
        except KeyError:
            priors = ()
        if not priors:
            warnings.warn(f"series {case.series}: no training priors, case skipped")
            continue
        t = prediction_time(priors)
        values = model.risk_values(case.series, priors, t, ctx)
        rank = rank_of_values(values, case.crime.cell)
        results.append(
            CaseResult(
                model=model.name,
                resolution=n,
                series=case.series,
                rank=rank,
                cells=n,
                normalized_rank=rank / n,
            )
        )
    return EvalReport(
        model=model.name,
        resolution=n,
        tuned_params=dict(tuned_params or {}),
        cases=tuple(results),
        summary=_summarize([r.normalized_rank for r in results]),
    )


ModelFactory = Callable[[EventStore, EvalContext], object]
DataProvider = Callable[[int], tuple[GeoGrid, FeatureTable, EventStore]]


def resolution_sweep(
    factories: Sequence[ModelFactory],
    resolutions: Sequence[int],
    provider: DataProvider,
) -> list[EvalReport]:
    """Re-run the whole protocol per grid resolution.

    The provider returns (grid, features, full store) for a requested cell
    count; factories build (train, refit) each model on the per-resolution
    training split.
    """
    reports = []
    for n_cells in resolutions:
        grid, features, store = provider(n_cells)
        if grid.n_cells != n_cells:
            raise ValueError(f"provider returned {grid.n_cells} cells for resolution {n_cells}")
        split = split_train_test(store)
        ctx = EvalContext(grid=grid, features=features, train=split.train)
        for factory in factories:
            model = factory(split.train, ctx)
            reports.append(evaluate(model, split.test_cases, ctx))
    return reports


# -- report files ---------------------------------------------------------------


def emit_report(reports: Sequence[EvalReport], out_dir: str) -> tuple[str, str]:
    """Write report.json (summaries) and cases.csv (per-case normalized ranks).

    The CSV is the plotting surface: one row per (model, resolution, case).
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "cases.csv")

    doc = {
        "reports": [
            {
                "model": r.model,
                "resolution": r.resolution,
                "tuned_params": r.tuned_params,
                "summary": r.summary,
                "cases": [
                    {
                        "series": c.series,
                        "rank": c.rank,
                        "cells": c.cells,
                        "normalized_rank": c.normalized_rank,
                    }
                    for c in r.cases
                ],
            }
            for r in reports
        ]
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "resolution", "series", "rank", "cells", "normalized_rank"])
        for r in reports:
            for c in r.cases:
                writer.writerow(
                    [c.model, c.resolution, c.series, c.rank, c.cells, repr(c.normalized_rank)]
                )
    return json_path, csv_path


def read_cases_csv(path: str) -> list[CaseResult]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                CaseResult(
                    model=rec["model"],
                    resolution=int(rec["resolution"]),
                    series=int(rec["series"]),
                    rank=int(rec["rank"]),
                    cells=int(rec["cells"]),
                    normalized_rank=float(rec["normalized_rank"]),
                )
            )
    return out
