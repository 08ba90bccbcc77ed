"""Cohort-wide background risk: Gaussian KDE over a trailing event window."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .grid import GeoGrid
from .events import CrimeInstance

DEFAULT_WINDOW_DAYS = 730.0  # most recent two years
DEFAULT_BANDWIDTH_CELLS = 2.0

_CHUNK = 1024  # events per distance block, bounds the (cells x events) matrix


@dataclass(frozen=True, eq=False)
class BackgroundField:
    """Per-cell background intensity at evaluation time t.

    `mu` is normalized to sum to 1 over cells; `raw` keeps the unnormalized
    Gaussian sums (useful for monotonicity checks and diagnostics).
    """

    grid: GeoGrid
    t: float
    window_days: float
    bandwidth_m: float
    mu: np.ndarray
    raw: np.ndarray

    def __post_init__(self) -> None:
        self.mu.flags.writeable = False
        self.raw.flags.writeable = False


def fit_background(
    grid: GeoGrid,
    events: Iterable[CrimeInstance],
    t: float,
    window_days: float = DEFAULT_WINDOW_DAYS,
    bandwidth_m: float | None = None,
) -> BackgroundField:
    """Fit the background field from events in the half-open window [t - w, t).

    Each in-window event contributes a Gaussian bump exp(-dist^2 / (2 bw^2))
    evaluated at every cell center; the summed field is normalized to a unit
    total. With no in-window events the field is uniform.
    """
    if window_days <= 0:
        raise ValueError("window_days must be positive")
    if bandwidth_m is None:
        bandwidth_m = DEFAULT_BANDWIDTH_CELLS * grid.cell_side_m
    if bandwidth_m <= 0:
        raise ValueError("bandwidth_m must be positive")

    window = [e for e in events if t - window_days <= e.t < t]
    centers = grid.centers_xy
    raw = np.zeros(grid.n_cells)
    if window:
        xy = np.array([grid.project(e.lat, e.lon) for e in window])
        inv = 1.0 / (2.0 * bandwidth_m**2)
        for lo in range(0, len(xy), _CHUNK):
            block = xy[lo : lo + _CHUNK]
            d2 = ((centers[:, None, :] - block[None, :, :]) ** 2).sum(axis=2)
            raw += np.exp(-d2 * inv).sum(axis=1)
        mu = raw / raw.sum()
    else:
        mu = np.full(grid.n_cells, 1.0 / grid.n_cells)
    return BackgroundField(
        grid=grid, t=t, window_days=window_days, bandwidth_m=bandwidth_m, mu=mu, raw=raw
    )


def eval_background(field: BackgroundField, l: int) -> float:
    if not 0 <= l < field.grid.n_cells:
        raise IndexError(f"cell index {l} outside [0, {field.grid.n_cells})")
    return float(field.mu[l])


def write_background_csv(field: BackgroundField, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "mu"])
        for l in range(field.grid.n_cells):
            row, col = field.grid.cell_rowcol(l)
            writer.writerow([row, col, repr(float(field.mu[l]))])
