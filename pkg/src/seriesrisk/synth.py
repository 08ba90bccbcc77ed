"""Synthetic ground truth: a seeded city with smooth feature fields, a
background event cloud from a Gaussian mixture, and crime series grown from
a known kernel parameterization.

Feature fields and the background mixture are continuous functions of
projected space, so the same seeded city can be sampled at any grid
resolution. Each series hit is drawn from a softmax over the true risk map;
the temperature recovers the argmax cell as it goes to zero.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .background import fit_background
from .events import CrimeInstance, EventStore, write_events_csv
from .grid import FeatureTable, GeoGrid, build_grid, grid_shape_for, standardize, write_feature_csv
from .kernel import KernelParams, write_params
from .risk import risk_map

DEFAULT_BBOX = ((42.36, -71.14), (42.40, -71.08))  # ~4.4 x 4.9 km


def default_theta(n_features: int) -> KernelParams:
    """Ground-truth parameters with a strong geographic preference."""
    weights = [2.0, -2.0, 1.5, -1.0, 1.0, -1.5]
    if n_features > len(weights):
        raise ValueError(f"no default weights beyond {len(weights)} features")
    return KernelParams(c=1.0, d=0.5, beta=np.array([1.0, *weights[:n_features]]))


@dataclass(frozen=True, eq=False)
class SynthSpec:
    seed: int = 0
    u: int = 30
    v: int = 30
    bbox: tuple[tuple[float, float], tuple[float, float]] = DEFAULT_BBOX
    n_features: int = 4
    n_waves: int = 6  # cosine components per feature field
    n_mixture: int = 3  # background intensity components
    n_background: int = 2000
    n_series: int = 40
    series_length: int = 6
    theta_true: KernelParams | None = None  # None -> default_theta(n_features)
    tau: float = 0.2
    span_days: float = 365.0
    background_span_days: float | None = None  # None: background times span the whole run
    window_days: float = 730.0
    bandwidth_m: float | None = None

    def __post_init__(self) -> None:
        if min(self.u, self.v, self.n_mixture, self.n_background, self.n_series,
               self.series_length) < 1:
            raise ValueError("all synthetic counts must be >= 1")
        if self.n_features < 0 or self.n_waves < 1:
            raise ValueError("n_features must be >= 0 and n_waves >= 1")
        if self.tau <= 0:
            raise ValueError("softmax temperature must be positive")
        if self.theta_true is not None and self.theta_true.n_features != self.n_features:
            raise ValueError("theta_true feature count does not match n_features")

    @property
    def theta(self) -> KernelParams:
        return self.theta_true if self.theta_true is not None else default_theta(self.n_features)


def null_signal_spec(spec: SynthSpec) -> SynthSpec:
    """Same city, but series generated with the geographic weights zeroed."""
    theta = spec.theta
    beta = np.zeros_like(theta.beta)
    beta[0] = theta.beta[0]
    return replace(spec, theta_true=replace(theta, beta=beta))


class SynthCity:
    """Deterministic continuous city derived from the spec seed: per-feature
    wave fields plus a Gaussian mixture for the background intensity."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        base = self.grid()
        width, height = base.size_m
        scale = min(width, height)
        rng = np.random.default_rng([spec.seed, 0])

        j, m = spec.n_features, spec.n_waves
        amp = rng.normal(size=(j, m))
        angle = rng.uniform(0.0, 2.0 * np.pi, size=(j, m))
        wavelength = rng.uniform(0.2, 0.8, size=(j, m)) * scale
        self._wave_amp = amp
        self._wave_k = 2.0 * np.pi / wavelength
        self._wave_dir = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        self._wave_phase = rng.uniform(0.0, 2.0 * np.pi, size=(j, m))

        x0, y0 = base.project(base.lat_min, base.lon_min)
        x1, y1 = base.project(base.lat_max, base.lon_max)
        self._xy_bounds = (x0, y0, x1, y1)
        margin = 0.1
        self._mix_means = np.column_stack(
            [
                rng.uniform(x0 + margin * width, x1 - margin * width, spec.n_mixture),
                rng.uniform(y0 + margin * height, y1 - margin * height, spec.n_mixture),
            ]
        )
        self._mix_sigma = rng.uniform(0.08, 0.2, spec.n_mixture) * scale
        w = rng.uniform(0.5, 1.5, spec.n_mixture)
        self._mix_weights = w / w.sum()

    def grid(self, u: int | None = None, v: int | None = None) -> GeoGrid:
        (lat0, lon0), (lat1, lon1) = self.spec.bbox
        return build_grid((lat0, lon0), (lat1, lon1), u or self.spec.u, v or self.spec.v)

    def grid_for_cells(self, n_cells: int) -> GeoGrid:
        base = self.grid()
        width, height = base.size_m
        u, v = grid_shape_for(n_cells, aspect=width / height)
        return self.grid(u, v)

    def field_values(self, xy: np.ndarray) -> np.ndarray:
        """Raw feature fields at (n, 2) projected points -> (n, J)."""
        # phase(n, J, M) = k * (xy . dir) + offset
        proj = np.einsum("nc,jmc->njm", xy, self._wave_dir)
        phase = self._wave_k[None, :, :] * proj + self._wave_phase[None, :, :]
        return (self._wave_amp[None, :, :] * np.cos(phase)).sum(axis=2)

    def features_for(self, grid: GeoGrid) -> FeatureTable:
        names = tuple(f"synth_{j}" for j in range(self.spec.n_features))
        raw = FeatureTable(grid=grid, names=names, values=self.field_values(grid.centers_xy))
        return standardize(raw)

    def sample_background_xy(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Mixture samples clipped to the bbox by rejection."""
        x0, y0, x1, y1 = self._xy_bounds
        out = np.empty((n, 2))
        filled = 0
        while filled < n:
            comp = rng.choice(len(self._mix_weights), size=n - filled, p=self._mix_weights)
            pts = self._mix_means[comp] + rng.normal(size=(n - filled, 2)) * self._mix_sigma[
                comp, None
            ]
            ok = (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
            kept = pts[ok]
            out[filled : filled + len(kept)] = kept
            filled += len(kept)
        return out


def gen_city(spec: SynthSpec) -> tuple[GeoGrid, FeatureTable]:
    """Grid plus standardized synthetic feature fields at the spec resolution."""
    city = SynthCity(spec)
    grid = city.grid()
    return grid, city.features_for(grid)


def choice_probabilities(values: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over risk values with temperature tau (max-shifted for stability)."""
    z = (values - values.max()) / tau
    w = np.exp(z)
    return w / w.sum()


def _uniform_point_in_cell(grid: GeoGrid, cell: int, rng: np.random.Generator) -> tuple[float, float]:
    # keep away from cell edges so float rounding cannot flip the cell
    row, col = grid.cell_rowcol(cell)
    dlat = (grid.lat_max - grid.lat_min) / grid.v
    dlon = (grid.lon_max - grid.lon_min) / grid.u
    lat = grid.lat_min + (row + 0.01 + 0.98 * rng.random()) * dlat
    lon = grid.lon_min + (col + 0.01 + 0.98 * rng.random()) * dlon
    return lat, lon


def gen_events_and_series(
    spec: SynthSpec,
    grid: GeoGrid | None = None,
    features: FeatureTable | None = None,
) -> EventStore:
    """Sample the background cloud, then grow each series hit by hit from the
    true risk map (softmax choice over cells, uniform location inside the
    chosen cell, next hit one day after the last)."""
    city = SynthCity(spec)
    if grid is None:
        grid = city.grid()
    if features is None:
        features = city.features_for(grid)
    theta = spec.theta
    rng = np.random.default_rng([spec.seed, 1])

    crimes: list[CrimeInstance] = []
    xy = city.sample_background_xy(rng, spec.n_background)
    bg_span = spec.background_span_days or spec.span_days
    times = np.sort(rng.uniform(0.0, bg_span, spec.n_background))
    for i in range(spec.n_background):
        lat, lon = grid.unproject(xy[i, 0], xy[i, 1])
        crimes.append(
            CrimeInstance(
                id=f"bg{i:05d}",
                lat=lat,
                lon=lon,
                t=float(times[i]),
                series=0,
                cell=grid.locate(lat, lon),
            )
        )
    background_events = list(crimes)

    starts = rng.uniform(0.1 * spec.span_days, 0.8 * spec.span_days, spec.n_series)
    for p in range(1, spec.n_series + 1):
        first_xy = city.sample_background_xy(rng, 1)[0]
        lat, lon = grid.unproject(first_xy[0], first_xy[1])
        hits = [
            CrimeInstance(
                id=f"s{p:03d}h01",
                lat=lat,
                lon=lon,
                t=float(starts[p - 1]),
                series=p,
                cell=grid.locate(lat, lon),
            )
        ]
        for k in range(2, spec.series_length + 1):
            t = max(h.t for h in hits) + 1.0
            field = fit_background(
                grid, background_events, t, spec.window_days, spec.bandwidth_m
            )
            values = risk_map(field, theta, features, hits, t, series=p).values
            probs = choice_probabilities(values, spec.tau)
            cell = int(rng.choice(grid.n_cells, p=probs))
            lat, lon = _uniform_point_in_cell(grid, cell, rng)
            hits.append(
                CrimeInstance(
                    id=f"s{p:03d}h{k:02d}",
                    lat=lat,
                    lon=lon,
                    t=t,
                    series=p,
                    cell=grid.locate(lat, lon),
                )
            )
        crimes.extend(hits)
    return EventStore(crimes)


def write_synth_dataset(spec: SynthSpec, out_dir: str) -> dict[str, str]:
    """Emit events.csv, features.csv, and theta_true.json for the pipeline."""
    os.makedirs(out_dir, exist_ok=True)
    grid, features = gen_city(spec)
    store = gen_events_and_series(spec, grid, features)
    paths = {
        "events": os.path.join(out_dir, "events.csv"),
        "features": os.path.join(out_dir, "features.csv"),
        "theta_true": os.path.join(out_dir, "theta_true.json"),
    }
    write_events_csv(store, paths["events"])
    write_feature_csv(features, paths["features"])
    write_params(
        replace(spec.theta, feature_names=features.names), paths["theta_true"]
    )
    return paths
