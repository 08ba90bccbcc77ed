import numpy as np
import pytest

from seriesrisk.background import fit_background
from seriesrisk.events import CrimeInstance, EventStore
from seriesrisk.grid import FeatureTable, GeoGrid, build_grid, standardize


def small_grid(u=5, v=5) -> GeoGrid:
    # ~5.5 km square box; cells well under a kilometer at 5x5
    return build_grid((42.0, -71.0), (42.05, -70.9323), u, v)


def crime(grid, cid, cell, t, series):
    lat, lon = grid.cell_center(cell)
    return CrimeInstance(id=cid, lat=lat, lon=lon, t=t, series=series, cell=cell)


def store_from_cells(grid, series_cells: dict[int, list[int]], t0=0.0, gap=1.0,
                     singles: list[tuple[int, float]] = ()) -> EventStore:
    """Build a store with each series visiting the given cells one gap apart."""
    crimes = []
    for p, cells in series_cells.items():
        for k, cell in enumerate(cells):
            crimes.append(crime(grid, f"s{p}c{k}", cell, t0 + k * gap, p))
    for i, (cell, t) in enumerate(singles):
        crimes.append(crime(grid, f"bg{i}", cell, t, 0))
    return EventStore(crimes)


def random_features(grid, n_features, seed=0) -> FeatureTable:
    rng = np.random.default_rng(seed)
    names = tuple(f"f{j}" for j in range(n_features))
    raw = FeatureTable(grid=grid, names=names,
                       values=rng.normal(size=(grid.n_cells, n_features)))
    return standardize(raw)


def uniform_background(grid, t=100.0):
    return fit_background(grid, [], t)


@pytest.fixture
def grid5():
    return small_grid(5, 5)
