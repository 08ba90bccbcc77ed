"""Grid discretization of a city region and per-cell geographic features.

The region of interest is an axis-aligned lat/lon bounding box split into
u columns x v rows of equal cells. All metric computations use a local
equirectangular projection about the bbox center, which is accurate to
well under a meter at city scale and keeps the module dependency-free.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Land-use subtype vocabulary; configurable per dataset.
DEFAULT_SUBTYPES = (
    "open_space",
    "single_family",
    "two_family",
    "apartment",
    "commercial",
    "transportation",
)

ASSET_FEATURE = "asset_value"
STATION_FEATURE = "station_distance"


class GeometryError(ValueError):
    """Raised for degenerate bboxes and invalid polygons."""


class OutOfRegionError(ValueError):
    """Raised when a point falls outside the grid's bounding box."""


@dataclass(frozen=True)
class GeoGrid:
    """Equirectangular grid over a lat/lon bbox: u columns (east) x v rows (north).

    Cell indices run row-major from the southwest corner: l = row * u + col,
    0 <= l < u * v.
    """

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    u: int
    v: int

    def __post_init__(self) -> None:
        vals = (self.lat_min, self.lat_max, self.lon_min, self.lon_max)
        if not all(math.isfinite(x) for x in vals):
            raise GeometryError("bbox coordinates must be finite")
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise GeometryError("bbox must have strictly positive width and height")
        if self.u < 1 or self.v < 1:
            raise GeometryError("grid needs at least one cell along each axis")

    # -- geometry ---------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.u * self.v

    @property
    def origin(self) -> tuple[float, float]:
        """Projection origin: bbox center (lat, lon)."""
        return (0.5 * (self.lat_min + self.lat_max), 0.5 * (self.lon_min + self.lon_max))

    @cached_property
    def _meters_per_degree(self) -> tuple[float, float]:
        lat0 = math.radians(self.origin[0])
        m_lat = EARTH_RADIUS_M * math.pi / 180.0
        return (m_lat, m_lat * math.cos(lat0))

    def project(self, lat: float, lon: float) -> tuple[float, float]:
        """Map (lat, lon) to local meters (x east, y north) about the bbox center."""
        lat0, lon0 = self.origin
        m_lat, m_lon = self._meters_per_degree
        return ((lon - lon0) * m_lon, (lat - lat0) * m_lat)

    def unproject(self, x: float, y: float) -> tuple[float, float]:
        lat0, lon0 = self.origin
        m_lat, m_lon = self._meters_per_degree
        return (lat0 + y / m_lat, lon0 + x / m_lon)

    @property
    def size_m(self) -> tuple[float, float]:
        """(width, height) of the bbox in projected meters."""
        m_lat, m_lon = self._meters_per_degree
        return ((self.lon_max - self.lon_min) * m_lon, (self.lat_max - self.lat_min) * m_lat)

    @property
    def cell_size_m(self) -> tuple[float, float]:
        w, h = self.size_m
        return (w / self.u, h / self.v)

    @property
    def cell_side_m(self) -> float:
        """Mean cell side; cells are square only when the bbox aspect matches u/v."""
        w, h = self.cell_size_m
        return 0.5 * (w + h)

    # -- indexing ---------------------------------------------------------

    def cell_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.v and 0 <= col < self.u):
            raise OutOfRegionError(f"cell (row={row}, col={col}) outside {self.v}x{self.u} grid")
        return row * self.u + col

    def cell_rowcol(self, l: int) -> tuple[int, int]:
        if not 0 <= l < self.n_cells:
            raise OutOfRegionError(f"cell index {l} outside [0, {self.n_cells})")
        return divmod(l, self.u)

    def locate(self, lat: float, lon: float) -> int:
        """Cell index containing the point.

        Interior edges belong to the lower-indexed cell; the bbox max edges
        belong to the last row/column.
        """
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise OutOfRegionError(f"non-finite point ({lat}, {lon})")
        fx = (lon - self.lon_min) / (self.lon_max - self.lon_min) * self.u
        fy = (lat - self.lat_min) / (self.lat_max - self.lat_min) * self.v
        if not (0.0 <= fx <= self.u and 0.0 <= fy <= self.v):
            raise OutOfRegionError(f"point ({lat}, {lon}) outside bbox")
        col = min(math.ceil(fx) - 1, self.u - 1) if fx > 0 else 0
        row = min(math.ceil(fy) - 1, self.v - 1) if fy > 0 else 0
        return self.cell_index(row, col)

    def cell_center(self, l: int) -> tuple[float, float]:
        """(lat, lon) of the center of cell l."""
        row, col = self.cell_rowcol(l)
        lat = self.lat_min + (row + 0.5) * (self.lat_max - self.lat_min) / self.v
        lon = self.lon_min + (col + 0.5) * (self.lon_max - self.lon_min) / self.u
        return (lat, lon)

    @cached_property
    def centers_xy(self) -> np.ndarray:
        """(n_cells, 2) array of cell centers in projected meters, row-major."""
        w, h = self.cell_size_m
        x0, y0 = self.project(self.lat_min, self.lon_min)
        cols = x0 + (np.arange(self.u) + 0.5) * w
        rows = y0 + (np.arange(self.v) + 0.5) * h
        xx, yy = np.meshgrid(cols, rows)
        out = np.column_stack([xx.ravel(), yy.ravel()])
        out.flags.writeable = False
        return out

    def cell_bounds_xy(self, l: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of cell l in projected meters."""
        row, col = self.cell_rowcol(l)
        w, h = self.cell_size_m
        x0, y0 = self.project(self.lat_min, self.lon_min)
        return (x0 + col * w, y0 + row * h, x0 + (col + 1) * w, y0 + (row + 1) * h)

    def cell_ring(self, l: int) -> list[tuple[float, float]]:
        """Closed (lon, lat) ring of cell l, for GeoJSON export."""
        x0, y0, x1, y1 = self.cell_bounds_xy(l)
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
        return [(lon, lat) for lat, lon in (self.unproject(x, y) for x, y in corners)]


def build_grid(
    bbox_min: tuple[float, float], bbox_max: tuple[float, float], u: int, v: int
) -> GeoGrid:
    """Build a u x v grid over the bbox given as (lat, lon) corners."""
    return GeoGrid(
        lat_min=bbox_min[0],
        lat_max=bbox_max[0],
        lon_min=bbox_min[1],
        lon_max=bbox_max[1],
        u=u,
        v=v,
    )


def grid_shape_for(n_cells: int, aspect: float) -> tuple[int, int]:
    """Pick (u, v) with u * v == n_cells and u / v closest to the given aspect.

    Used by resolution sweeps where only the total cell count is prescribed.
    """
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    best = None
    for u in range(1, n_cells + 1):
        if n_cells % u:
            continue
        v = n_cells // u
        err = abs(math.log(u / v) - math.log(aspect))
        if best is None or err < best[0]:
            best = (err, u, v)
    return best[1], best[2]


# -- polygons --------------------------------------------------------------


def _clean_ring(polygon: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Validate and normalize a (lat, lon) ring: drop the closing vertex, require >= 3."""
    pts = [(float(a), float(b)) for a, b in polygon]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    deduped = [p for i, p in enumerate(pts) if p != pts[i - 1] or i == 0]
    if len(deduped) < 3:
        raise GeometryError("polygon needs at least 3 distinct vertices")
    if not all(math.isfinite(a) and math.isfinite(b) for a, b in deduped):
        raise GeometryError("polygon has non-finite vertices")
    return deduped


def _shoelace(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper crossing test for segments p1p2 and q1q2 (shared endpoints excluded)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def _check_simple(xy: np.ndarray) -> None:
    n = len(xy)
    for i in range(n):
        a1, a2 = xy[i], xy[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex
            b1, b2 = xy[j], xy[(j + 1) % n]
            if _segments_cross(a1, a2, b1, b2):
                raise GeometryError("self-intersecting polygon")


def clip_polygon_rect(
    xy: Sequence[tuple[float, float]], x0: float, y0: float, x1: float, y1: float
) -> list[tuple[float, float]]:
    """Clip a polygon to an axis-aligned rectangle (Sutherland-Hodgman)."""
    half_planes = (
        (lambda p: p[0] >= x0, lambda a, b: _cross_x(a, b, x0)),
        (lambda p: p[0] <= x1, lambda a, b: _cross_x(a, b, x1)),
        (lambda p: p[1] >= y0, lambda a, b: _cross_y(a, b, y0)),
        (lambda p: p[1] <= y1, lambda a, b: _cross_y(a, b, y1)),
    )
    pts = list(xy)
    for inside, intersect in half_planes:
        if not pts:
            return []
        out: list[tuple[float, float]] = []
        prev = pts[-1]
        prev_in = inside(prev)
        for cur in pts:
            cur_in = inside(cur)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
            prev, prev_in = cur, cur_in
        pts = out
    return pts


def _cross_x(a, b, x):
    t = (x - a[0]) / (b[0] - a[0])
    return (x, a[1] + t * (b[1] - a[1]))


def _cross_y(a, b, y):
    t = (y - a[1]) / (b[1] - a[1])
    return (a[0] + t * (b[0] - a[0]), y)


def polygon_area_m2(grid: GeoGrid, polygon: Sequence[tuple[float, float]]) -> float:
    """Area of a (lat, lon) polygon in projected square meters."""
    ring = _clean_ring(polygon)
    xy = np.array([grid.project(lat, lon) for lat, lon in ring])
    _check_simple(xy)
    area = abs(_shoelace(xy))
    if area <= 0.0:
        raise GeometryError("polygon has zero area")
    return area


def polygon_cell_overlap(
    grid: GeoGrid, polygon: Sequence[tuple[float, float]]
) -> dict[int, float]:
    """Fraction of the polygon's area falling in each grid cell.

    Fractions sum to the portion of the polygon inside the bbox (1.0 for a
    polygon fully inside). Cells with zero overlap are omitted.
    """
    ring = _clean_ring(polygon)
    xy = np.array([grid.project(lat, lon) for lat, lon in ring])
    _check_simple(xy)
    poly_area = abs(_shoelace(xy))
    if poly_area <= 0.0:
        raise GeometryError("polygon has zero area")

    w, h = grid.cell_size_m
    gx0, gy0 = grid.project(grid.lat_min, grid.lon_min)
    col_lo = max(int(math.floor((xy[:, 0].min() - gx0) / w)) - 1, 0)
    col_hi = min(int(math.floor((xy[:, 0].max() - gx0) / w)) + 1, grid.u - 1)
    row_lo = max(int(math.floor((xy[:, 1].min() - gy0) / h)) - 1, 0)
    row_hi = min(int(math.floor((xy[:, 1].max() - gy0) / h)) + 1, grid.v - 1)

    pts = [tuple(p) for p in xy]
    out: dict[int, float] = {}
    for row in range(row_lo, row_hi + 1):
        for col in range(col_lo, col_hi + 1):
            x0, y0 = gx0 + col * w, gy0 + row * h
            clipped = clip_polygon_rect(pts, x0, y0, x0 + w, y0 + h)
            if len(clipped) < 3:
                continue
            area = abs(_shoelace(np.array(clipped)))
            if area > 0.0:
                out[row * grid.u + col] = area / poly_area
    return out


# -- features ---------------------------------------------------------------


@dataclass(frozen=True)
class LandUseRecord:
    """One land-use polygon: a (lat, lon) ring, a subtype tag, optional asset value."""

    polygon: tuple[tuple[float, float], ...]
    subtype: str
    asset_value: float | None = None

    def __post_init__(self) -> None:
        if self.asset_value is not None and not (
            math.isfinite(self.asset_value) and self.asset_value >= 0
        ):
            raise ValueError("asset_value must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-cell geographic feature matrix with named columns."""

    grid: GeoGrid
    names: tuple[str, ...]
    values: np.ndarray  # (n_cells, d) float64
    standardized: bool = False

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_cells, len(self.names)):
            raise ValueError(
                f"feature matrix shape {self.values.shape} does not match "
                f"{self.grid.n_cells} cells x {len(self.names)} names"
            )
        self.values.flags.writeable = False

    @property
    def dim(self) -> int:
        return len(self.names)

    def cell(self, l: int) -> dict[str, float]:
        """Feature vector of cell l as a name -> value mapping."""
        row, _ = self.grid.cell_rowcol(l)  # validates l
        return dict(zip(self.names, self.values[l]))


@dataclass(frozen=True)
class AggregationResult:
    features: FeatureTable
    rejected: tuple[tuple[int, str], ...]  # (record position, reason)

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def aggregate_features(
    grid: GeoGrid,
    land_use: Iterable[LandUseRecord],
    stations: Sequence[tuple[float, float]] = (),
    subtypes: Sequence[str] = DEFAULT_SUBTYPES,
) -> AggregationResult:
    """Aggregate land-use polygons and transit stations into per-cell features.

    Per subtype: total overlapped area (m^2) and fractional building count.
    Asset values are split across cells by overlap fraction. Station distance
    is the projected distance from each cell center to the nearest station;
    the column is dropped entirely when no stations are given. Records with
    unknown subtypes or invalid geometry are skipped and reported.
    """
    subtypes = tuple(subtypes)
    n = grid.n_cells
    areas = {st: np.zeros(n) for st in subtypes}
    counts = {st: np.zeros(n) for st in subtypes}
    assets = np.zeros(n)
    rejected: list[tuple[int, str]] = []

    for idx, rec in enumerate(land_use):
        if rec.subtype not in areas:
            rejected.append((idx, f"unknown subtype {rec.subtype!r}"))
            continue
        try:
            fractions = polygon_cell_overlap(grid, rec.polygon)
            poly_area = polygon_area_m2(grid, rec.polygon)
        except GeometryError as exc:
            rejected.append((idx, str(exc)))
            continue
        for l, frac in fractions.items():
            areas[rec.subtype][l] += frac * poly_area
            counts[rec.subtype][l] += frac
            if rec.asset_value is not None:
                assets[l] += frac * rec.asset_value

    columns = []
    names: list[str] = []
    for st in subtypes:
        columns.append(areas[st])
        names.append(f"{st}_area")
        columns.append(counts[st])
        names.append(f"{st}_count")
    columns.append(assets)
    names.append(ASSET_FEATURE)

    if stations:
        st_xy = np.array([grid.project(lat, lon) for lat, lon in stations])
        diff = grid.centers_xy[:, None, :] - st_xy[None, :, :]
        columns.append(np.sqrt((diff**2).sum(axis=2)).min(axis=1))
        names.append(STATION_FEATURE)

    table = FeatureTable(
        grid=grid, names=tuple(names), values=np.column_stack(columns), standardized=False
    )
    return AggregationResult(features=table, rejected=tuple(rejected))


def standardize(table: FeatureTable, eps: float = 1e-12) -> FeatureTable:
    """Z-score each feature column across cells; zero-variance columns map to 0."""
    mean = table.values.mean(axis=0)
    std = table.values.std(axis=0)
    centered = table.values - mean
    safe = np.where(std > eps, std, 1.0)
    z = np.where(std > eps, centered / safe, 0.0)
    return FeatureTable(grid=table.grid, names=table.names, values=z, standardized=True)


# -- file interfaces --------------------------------------------------------


def load_land_use(path: str) -> list[LandUseRecord]:
    """Read land-use polygons from a GeoJSON FeatureCollection.

    Each feature must be a single-ring Polygon with a `subtype` property and
    an optional numeric `asset_value`. Holes and MultiPolygons are rejected.
    """
    with open(path) as fh:
        doc = json.load(fh)
    records = []
    for i, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise GeometryError(f"feature {i}: expected Polygon, got {geom.get('type')!r}")
        rings = geom.get("coordinates") or []
        if len(rings) != 1:
            raise GeometryError(f"feature {i}: polygons with holes are not supported")
        props = feature.get("properties") or {}
        if "subtype" not in props:
            raise GeometryError(f"feature {i}: missing subtype property")
        asset = props.get("asset_value")
        records.append(
            LandUseRecord(
                polygon=tuple((lat, lon) for lon, lat in rings[0]),
                subtype=str(props["subtype"]),
                asset_value=None if asset is None else float(asset),
            )
        )
    return records


def load_stations(path: str) -> list[tuple[float, float]]:
    """Read transit station points (lat, lon) from a GeoJSON FeatureCollection."""
    with open(path) as fh:
        doc = json.load(fh)
    points = []
    for i, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Point":
            raise GeometryError(f"feature {i}: expected Point, got {geom.get('type')!r}")
        lon, lat = geom["coordinates"][:2]
        points.append((float(lat), float(lon)))
    return points


def write_feature_csv(table: FeatureTable, path: str) -> None:
    """Write the feature matrix as CSV with header row,col,<feature names...>."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", *table.names])
        for l in range(table.grid.n_cells):
            row, col = table.grid.cell_rowcol(l)
            writer.writerow([row, col, *(repr(float(x)) for x in table.values[l])])


def read_feature_csv(path: str, grid: GeoGrid, standardized: bool = False) -> FeatureTable:
    """Read a feature matrix written by write_feature_csv for the given grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["row", "col"]:
            raise ValueError(f"unexpected feature CSV header: {header[:2]}")
        names = tuple(header[2:])
        values = np.zeros((grid.n_cells, len(names)))
        seen = 0
        for parts in reader:
            l = grid.cell_index(int(parts[0]), int(parts[1]))
            values[l] = [float(x) for x in parts[2:]]
            seen += 1
    if seen != grid.n_cells:
        raise ValueError(f"feature CSV has {seen} rows, grid has {grid.n_cells} cells")
    return FeatureTable(grid=grid, names=names, values=values, standardized=standardized)
