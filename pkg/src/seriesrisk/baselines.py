"""Comparison models over the same grid and ranking protocol.

Four baselines: the geography-free ablation of the triggering kernel
(numerator fixed to 1), a KDE over the series' own prior offenses, a
nearest-neighbor distance score, and the trailing-window background KDE on
its own. Kernel bandwidths and the window length are tuned on a validation
split by mean normalized rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .background import BackgroundField, fit_background
from .events import CrimeInstance
from .grid import GeoGrid

BASELINE_KINDS = ("ablation_kernel", "series_kde", "nearest_neighbor", "background_window")

WINDOW_CANDIDATES_DAYS = (30.0, 90.0, 180.0, 365.0, 730.0)
BANDWIDTH_CANDIDATES_CELLS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    params: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if any(v <= 0 for v in self.params.values()):
            raise ValueError("baseline parameters must be positive")


def ablation_values(
    c: float,
    d: float,
    background: BackgroundField,
    priors: Sequence[CrimeInstance],
    t: float,
) -> np.ndarray:
    """Risk over all cells with the kernel numerator replaced by 1."""
    grid = background.grid
    centers = grid.centers_xy
    values = background.mu.copy()
    for prior in priors:
        if not prior.t < t:
            raise ValueError(f"prior crime {prior.id} at t={prior.t} is not before t={t}")
        ds_km = np.linalg.norm(centers - centers[prior.cell], axis=1) / 1000.0
        values += 1.0 / ((t - prior.t + c) ** 2 * (ds_km + d) ** 2)
    return values


def ablation_risk(
    c: float,
    d: float,
    background: BackgroundField,
    priors: Sequence[CrimeInstance],
    t: float,
    l: int,
) -> float:
    return float(ablation_values(c, d, background, priors, t)[l])


def series_kde_values(
    grid: GeoGrid, priors: Sequence[CrimeInstance], bandwidth_m: float
) -> np.ndarray:
    """Gaussian KDE over the series' own prior locations, normalized over cells."""
    if not priors:
        raise ValueError("series KDE needs at least one prior offense")
    if bandwidth_m <= 0:
        raise ValueError("bandwidth_m must be positive")
    xy = np.array([grid.project(p.lat, p.lon) for p in priors])
    d2 = ((grid.centers_xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    raw = np.exp(-d2 / (2.0 * bandwidth_m**2)).sum(axis=1)
    return raw / raw.sum()


def series_kde_risk(
    grid: GeoGrid, priors: Sequence[CrimeInstance], bandwidth_m: float, l: int
) -> float:
    return float(series_kde_values(grid, priors, bandwidth_m)[l])


def nearest_neighbor_values(grid: GeoGrid, priors: Sequence[CrimeInstance]) -> np.ndarray:
    """Score = minus the summed distance (km) from each cell center to every
    prior offense; higher score means higher risk."""
    if not priors:
        raise ValueError("nearest-neighbor score needs at least one prior offense")
    xy = np.array([grid.project(p.lat, p.lon) for p in priors])
    dist = np.sqrt(((grid.centers_xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    return -dist.sum(axis=1) / 1000.0


def nearest_neighbor_risk(grid: GeoGrid, priors: Sequence[CrimeInstance], l: int) -> float:
    return float(nearest_neighbor_values(grid, priors)[l])


def background_window_values(
    grid: GeoGrid,
    events: Sequence[CrimeInstance],
    t: float,
    window_days: float,
    bandwidth_m: float | None = None,
) -> np.ndarray:
    """Background KDE fitted on the trailing window of length T = window_days."""
    return fit_background(grid, events, t, window_days=window_days, bandwidth_m=bandwidth_m).mu


def background_window_risk(
    grid: GeoGrid,
    events: Sequence[CrimeInstance],
    t: float,
    window_days: float,
    bandwidth_m: float | None,
    l: int,
) -> float:
    return float(background_window_values(grid, events, t, window_days, bandwidth_m)[l])


def default_candidates(kind: str, grid: GeoGrid) -> list[dict[str, float]]:
    """Candidate parameter grid for validation tuning of one baseline kind."""
    side = grid.cell_side_m
    bandwidths = [k * side for k in BANDWIDTH_CANDIDATES_CELLS]
    if kind == "series_kde":
        return [{"bandwidth_m": bw} for bw in bandwidths]
    if kind == "background_window":
        return [
            {"window_days": T, "bandwidth_m": bw}
            for T in WINDOW_CANDIDATES_DAYS
            for bw in bandwidths
        ]
    if kind in ("nearest_neighbor", "ablation_kernel"):
        return [{}]
    raise ValueError(f"unknown baseline kind {kind!r}")


def tune_baseline(
    kind: str,
    validation_cases,
    candidates: Sequence[Mapping[str, float]],
    ctx,
) -> dict[str, float]:
    """Pick the candidate parameters with the lowest mean normalized rank on
    the validation cases; ties resolve to the smallest parameters."""
    from .evaluation import evaluate, make_baseline_model

    if not candidates:
        raise ValueError("no candidate parameters to tune over")
    best_params: dict[str, float] | None = None
    best_score = np.inf
    for params in sorted(candidates, key=lambda d: sorted(d.items())):
        model = make_baseline_model(BaselineSpec(kind=kind, params=dict(params)))
        report = evaluate(model, validation_cases, ctx)
        score = report.summary["mean"]
        if score < best_score:
            best_score = score
            best_params = dict(params)
    assert best_params is not None
    return best_params
