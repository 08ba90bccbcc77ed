"""Per-cell risk: background intensity plus kernel terms triggered by priors.

The spatial gap for a triggered term is measured between cell centers (a
prior offense is quantized to its cell), in kilometers. Feature differences
default to the signed form candidate_cell - prior_cell; an absolute-value
mode is available for symmetric similarity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .background import BackgroundField
from .events import CrimeInstance
from .grid import FeatureTable
from .kernel import KernelParams, kernel_eval

FEATURE_DIFF_MODES = ("signed", "absolute")


@dataclass(frozen=True, eq=False)
class RiskMap:
    """Risk values over every grid cell for one series at one evaluation time."""

    grid: "object"
    series: int | None
    t: float
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.flags.writeable = False


def _check_inputs(
    background: BackgroundField,
    params: KernelParams,
    features: FeatureTable,
    priors: Sequence[CrimeInstance],
    t: float,
    feature_diff: str,
) -> None:
    if feature_diff not in FEATURE_DIFF_MODES:
        raise ValueError(f"feature_diff must be one of {FEATURE_DIFF_MODES}")
    if features.grid.n_cells != background.grid.n_cells:
        raise ValueError("feature table and background field use different grids")
    if params.n_features != features.dim:
        raise ValueError(
            f"kernel expects {params.n_features} features, table has {features.dim}"
        )
    for c in priors:
        if not c.t < t:
            raise ValueError(f"prior crime {c.id} at t={c.t} is not before t={t}")


def _triggered(
    params: KernelParams,
    features: FeatureTable,
    priors: Sequence[CrimeInstance],
    t: float,
    cells: np.ndarray,
    feature_diff: str,
    clamp: bool,
) -> np.ndarray:
    grid = features.grid
    centers = grid.centers_xy
    total = np.zeros(len(cells))
    for prior in priors:
        ds_km = np.linalg.norm(centers[cells] - centers[prior.cell], axis=1) / 1000.0
        dw = features.values[cells] - features.values[prior.cell]
        if feature_diff == "absolute":
            dw = np.abs(dw)
        total += kernel_eval(params, ds_km, t - prior.t, dw, clamp=clamp)
    return total


def risk_cell(
    background: BackgroundField,
    params: KernelParams,
    features: FeatureTable,
    priors: Sequence[CrimeInstance],
    t: float,
    l: int,
    feature_diff: str = "signed",
    clamp: bool = False,
) -> float:
    """Risk of cell l at time t for the series whose past offenses are `priors`."""
    _check_inputs(background, params, features, priors, t, feature_diff)
    if not 0 <= l < background.grid.n_cells:
        raise IndexError(f"cell index {l} outside [0, {background.grid.n_cells})")
    triggered = _triggered(params, features, priors, t, np.array([l]), feature_diff, clamp)
    return float(background.mu[l] + triggered[0])


def risk_map(
    background: BackgroundField,
    params: KernelParams,
    features: FeatureTable,
    priors: Sequence[CrimeInstance],
    t: float,
    series: int | None = None,
    feature_diff: str = "signed",
    clamp: bool = False,
) -> RiskMap:
    """Full per-cell risk map (risk_cell applied to every cell, vectorized)."""
    _check_inputs(background, params, features, priors, t, feature_diff)
    cells = np.arange(background.grid.n_cells)
    values = background.mu + _triggered(params, features, priors, t, cells, feature_diff, clamp)
    return RiskMap(grid=background.grid, series=series, t=t, values=values)


def rank_of_values(values: np.ndarray, l_true: int) -> int:
    """1-based rank of the true cell with pessimistic ties: every cell scoring
    at least as high as the true cell counts against it."""
    if not 0 <= l_true < len(values):
        raise IndexError(f"cell index {l_true} outside [0, {len(values)})")
    v = values[l_true]
    return int((values > v).sum() + (values == v).sum())


def rank_true_cell(riskmap: RiskMap, l_true: int) -> int:
    return rank_of_values(riskmap.values, l_true)


def write_risk_csv(riskmap: RiskMap, path: str) -> None:
    grid = riskmap.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "center_lat", "center_lon", "risk"])
        for l in range(grid.n_cells):
            row, col = grid.cell_rowcol(l)
            lat, lon = grid.cell_center(l)
            writer.writerow([row, col, repr(lat), repr(lon), repr(float(riskmap.values[l]))])


def risk_geojson(riskmap: RiskMap) -> dict:
    """Risk map as a GeoJSON FeatureCollection of cell polygons."""
    grid = riskmap.grid
    features = []
    for l in range(grid.n_cells):
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [grid.cell_ring(l)]},
                "properties": {"cell": l, "risk": float(riskmap.values[l])},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_risk_geojson(riskmap: RiskMap, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(risk_geojson(riskmap), fh)
        fh.write("\n")
