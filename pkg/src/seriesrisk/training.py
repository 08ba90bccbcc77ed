"""Kernel parameter learning: pairwise hinge ranking loss minimized by
bootstrap-sampled stochastic subgradient descent with momentum.

For every crime with at least one earlier offense in its series, every other
cell is compared against the true cell: scoring it at or above the true cell
incurs hinge loss max(0, r_l - r_true). The full objective adds an l2
penalty on the feature weights (the intercept is not penalized). Training
samples one (series, crime, cell) triple per step; each step also applies
the regularizer's per-sample share, 2*lambda*beta / n_hinge_terms, so that
one epoch of samples accounts for the full penalty gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .background import BackgroundField
from .events import CrimeInstance, EventStore, prediction_time
from .grid import FeatureTable, GeoGrid
from .kernel import EPS_C, EPS_D, KernelParams


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    lambda_beta: float = 0.01
    iterations: int = 50_000
    seed: int = 0
    eps_c: float = EPS_C
    eps_d: float = EPS_D
    init_c: float = 1.0
    init_d: float = 1.0
    init_beta0: float = 1.0
    freeze_beta: bool = False  # ablation: fix beta = (1, 0, ...), train c and d only
    feature_diff: str = "signed"
    clamp: bool = False
    log_every: int = 500

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lambda_beta < 0:
            raise ValueError("lambda_beta must be nonnegative")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.eps_c <= 0 or self.eps_d <= 0:
            raise ValueError("projection floors must be positive")


@dataclass(frozen=True)
class TrainState:
    theta: np.ndarray  # (c, d, beta_0, ..., beta_J)
    velocity: np.ndarray
    iteration: int
    loss_ma: float | None  # exponential moving average of sampled losses

    def params(self, feature_names: Sequence[str] = ()) -> KernelParams:
        return KernelParams.from_vector(self.theta, feature_names)


@dataclass(frozen=True)
class TrainUnit:
    """One rankable crime: its true cell plus the arrays describing its priors."""

    series: int
    crime_id: str
    true_cell: int
    t: float  # evaluation time: one day after the last prior
    prior_cells: np.ndarray
    prior_dt: np.ndarray  # t - t_k, all >= 1


@dataclass(frozen=True)
class TrainData:
    grid: GeoGrid
    background: BackgroundField
    features: FeatureTable
    units: tuple[TrainUnit, ...]
    series_units: tuple[tuple[int, ...], ...]  # unit indices grouped by series
    n_hinge_terms: int

    def unit_for(self, p: int, crime_id: str) -> TrainUnit:
        for unit in self.units:
            if unit.series == p and unit.crime_id == crime_id:
                return unit
        raise KeyError(f"no eligible crime {crime_id!r} in series {p}")


def _eligible_units(store: EventStore) -> list[tuple[int, CrimeInstance, tuple[CrimeInstance, ...]]]:
    """(series, crime, priors) for every crime with a nonempty strict-prior set."""
    out = []
    for p in store.series_ids:
        for crime in store.series_events(p):
            priors = store.priors(p, crime.t)
            if priors:
                out.append((p, crime, priors))
    return out


def prepare_training_data(
    store: EventStore,
    grid: GeoGrid,
    background: BackgroundField,
    features: FeatureTable,
) -> TrainData:
    """Index the training store into per-crime units usable by the sampler."""
    units = []
    groups: dict[int, list[int]] = {}
    for p, crime, priors in _eligible_units(store):
        t = prediction_time(priors)
        units.append(
            TrainUnit(
                series=p,
                crime_id=crime.id,
                true_cell=crime.cell,
                t=t,
                prior_cells=np.array([c.cell for c in priors], dtype=int),
                prior_dt=np.array([t - c.t for c in priors]),
            )
        )
        groups.setdefault(p, []).append(len(units) - 1)
    if not units:
        raise ValueError("no series contains a crime with a nonempty prior set")
    series_units = tuple(tuple(groups[p]) for p in sorted(groups))
    return TrainData(
        grid=grid,
        background=background,
        features=features,
        units=tuple(units),
        series_units=series_units,
        n_hinge_terms=len(units) * (grid.n_cells - 1),
    )


# -- objective ----------------------------------------------------------------


def hinge_loss(r_l: float, r_star: float) -> float:
    """Ranking violation: how far cell l scores above the true cell."""
    if not (math.isfinite(r_l) and math.isfinite(r_star)):
        raise ValueError("hinge loss needs finite risks")
    return max(0.0, r_l - r_star)


def full_objective(
    params: KernelParams,
    store: EventStore,
    grid: GeoGrid,
    background: BackgroundField,
    features: FeatureTable,
    lambda_beta: float = 0.0,
    feature_diff: str = "signed",
    clamp: bool = False,
) -> float:
    """Exact ranking objective: the hinge sum over every eligible
    (series, crime, cell) triple plus the l2 penalty on feature weights.

    Exhaustive over cells, so intended for small instances and monitoring.
    """
    from .risk import risk_map  # local import to avoid a module cycle

    total = 0.0
    for p, crime, priors in _eligible_units(store):
        t = prediction_time(priors)
        values = risk_map(
            background, params, features, priors, t,
            series=p, feature_diff=feature_diff, clamp=clamp,
        ).values
        margins = values - values[crime.cell]
        margins[crime.cell] = 0.0
        total += float(np.maximum(margins, 0.0).sum())
    return total + lambda_beta * float(params.beta[1:] @ params.beta[1:])


# -- sampling and steps --------------------------------------------------------


def sample_triple(
    rng: np.random.Generator,
    store: EventStore,
    grid: GeoGrid,
    eligible: dict[int, list[CrimeInstance]] | None = None,
) -> tuple[int, str, int]:
    """Draw a (series, crime id, cell) triple for one stochastic step.

    The series is uniform over series owning at least one eligible crime, the
    crime uniform within the series, and the cell uniform over all cells
    except the crime's true cell.
    """
    if eligible is None:
        eligible = {}
        for p, crime, _ in _eligible_units(store):
            eligible.setdefault(p, []).append(crime)
    if not eligible:
        raise ValueError("no series contains a crime with a nonempty prior set")
    series_ids = sorted(eligible)
    p = series_ids[rng.integers(len(series_ids))]
    crimes = eligible[p]
    crime = crimes[rng.integers(len(crimes))]
    r = int(rng.integers(grid.n_cells - 1))
    l = r + (r >= crime.cell)
    return (p, crime.id, l)


def _cell_sums(
    theta: np.ndarray,
    data: TrainData,
    unit: TrainUnit,
    cell: int,
    feature_diff: str,
    clamp: bool,
    want_grad: bool,
) -> tuple[float, np.ndarray | None]:
    """Triggered risk at one cell and, optionally, its gradient over theta."""
    c, d = theta[0], theta[1]
    beta = theta[2:]
    centers = data.grid.centers_xy
    ds = np.linalg.norm(centers[unit.prior_cells] - centers[cell], axis=1) / 1000.0
    dw = data.features.values[cell] - data.features.values[unit.prior_cells]
    if feature_diff == "absolute":
        dw = np.abs(dw)

    numer = beta[0] + dw @ beta[1:]
    tc = unit.prior_dt + c
    sd = ds + d
    inv_denom = 1.0 / (tc**2 * sd**2)
    vals = numer * inv_denom
    active = vals >= 0.0 if clamp else None
    value = float(vals.clip(min=0.0).sum() if clamp else vals.sum())
    if not want_grad:
        return value, None

    grad = np.empty_like(theta)
    if clamp:
        inv_denom = np.where(active, inv_denom, 0.0)
    weighted = numer * inv_denom
    grad[0] = -2.0 * float((weighted / tc).sum())
    grad[1] = -2.0 * float((weighted / sd).sum())
    grad[2] = float(inv_denom.sum())
    grad[3:] = dw.T @ inv_denom
    return value, grad


def triple_margin_and_grad(
    theta: np.ndarray,
    data: TrainData,
    unit: TrainUnit,
    l: int,
    feature_diff: str = "signed",
    clamp: bool = False,
    want_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Margin r_l - r_true for one triple and the hinge subgradient over theta.

    The gradient is zero when the hinge is inactive (including at the kink).
    """
    mu = data.background.mu
    v_l, g_l = _cell_sums(theta, data, unit, l, feature_diff, clamp, want_grad)
    v_t, g_t = _cell_sums(theta, data, unit, unit.true_cell, feature_diff, clamp, want_grad)
    margin = (mu[l] + v_l) - (mu[unit.true_cell] + v_t)
    if not want_grad:
        return margin, None
    if margin <= 0.0:
        return margin, np.zeros_like(theta)
    return margin, g_l - g_t


def _apply_step(
    theta: np.ndarray,
    velocity: np.ndarray,
    grad: np.ndarray,
    config: TrainConfig,
) -> None:
    velocity *= config.momentum
    velocity -= config.learning_rate * grad
    theta += velocity
    theta[0] = max(theta[0], config.eps_c)
    theta[1] = max(theta[1], config.eps_d)


def _triple_grad(
    theta: np.ndarray,
    data: TrainData,
    unit: TrainUnit,
    l: int,
    config: TrainConfig,
) -> tuple[float, np.ndarray]:
    margin, grad = triple_margin_and_grad(
        theta, data, unit, l, config.feature_diff, config.clamp, want_grad=True
    )
    if config.lambda_beta > 0 and not config.freeze_beta:
        grad[3:] += 2.0 * config.lambda_beta * theta[3:] / data.n_hinge_terms
    if config.freeze_beta:
        grad[2:] = 0.0
    if not np.isfinite(grad).all():
        raise RuntimeError(
            f"non-finite gradient for series {unit.series} crime {unit.crime_id} "
            f"cell {l} at theta={theta.tolist()}"
        )
    return max(0.0, margin), grad


def sgd_step(
    state: TrainState,
    config: TrainConfig,
    triple: tuple[int, str, int],
    data: TrainData,
) -> TrainState:
    """One momentum subgradient step on the sampled triple, then projection of
    the offsets c and d onto [eps, inf)."""
    p, crime_id, l = triple
    unit = data.unit_for(p, crime_id)
    theta = state.theta.copy()
    velocity = state.velocity.copy()
    loss, grad = _triple_grad(theta, data, unit, l, config)
    _apply_step(theta, velocity, grad, config)
    ma = loss if state.loss_ma is None else 0.99 * state.loss_ma + 0.01 * loss
    return TrainState(theta=theta, velocity=velocity, iteration=state.iteration + 1, loss_ma=ma)


def initial_state(config: TrainConfig, n_features: int) -> TrainState:
    beta = np.zeros(n_features + 1)
    beta[0] = 1.0 if config.freeze_beta else config.init_beta0
    theta = np.concatenate([[config.init_c, config.init_d], beta])
    return TrainState(theta=theta, velocity=np.zeros_like(theta), iteration=0, loss_ma=None)


def train(config: TrainConfig, data: TrainData, log_path: str | None = None) -> KernelParams:
    """Run the configured number of sampled subgradient steps and return the
    learned parameters. Fully determined by the config seed."""
    rng = np.random.default_rng(config.seed)
    state = initial_state(config, data.features.dim)
    theta = state.theta.copy()
    velocity = state.velocity.copy()
    loss_ma = None
    n_cells = data.grid.n_cells

    log_fh = open(log_path, "w") if log_path else None
    try:
        for it in range(config.iterations):
            group = data.series_units[rng.integers(len(data.series_units))]
            unit = data.units[group[rng.integers(len(group))]]
            r = int(rng.integers(n_cells - 1))
            l = r + (r >= unit.true_cell)

            loss, grad = _triple_grad(theta, data, unit, l, config)
            _apply_step(theta, velocity, grad, config)
            loss_ma = loss if loss_ma is None else 0.99 * loss_ma + 0.01 * loss

            if log_fh and ((it + 1) % config.log_every == 0 or it + 1 == config.iterations):
                log_fh.write(
                    json.dumps(
                        {
                            "iter": it + 1,
                            "sampled_loss_ma": loss_ma,
                            "c": theta[0],
                            "d": theta[1],
                            "beta_norm": float(np.linalg.norm(theta[3:])),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    finally:
        if log_fh:
            log_fh.close()
    return KernelParams.from_vector(theta, data.features.names)
