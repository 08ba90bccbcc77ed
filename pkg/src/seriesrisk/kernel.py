"""Triggering kernel: geographic similarity scaled by space-time decay.

One prior offense raises the risk at a candidate cell by

    (beta_0 + sum_j beta_j dw_j) / ((dt + c)^2 (ds + d)^2)

with dt the gap to the evaluation time in days, ds the cell-center distance
in kilometers, and dw the per-feature difference between the candidate cell
and the prior crime's cell (standardized units). c and d are learnable
offsets, floored away from zero so the denominator stays bounded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS_C = 1e-3
EPS_D = 1e-3


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Learnable kernel parameters: temporal offset c (days), spatial offset d
    (km), and weights beta with beta[0] the intercept."""

    c: float
    d: float
    beta: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        if beta.size < 1:
            raise ValueError("beta must contain at least the intercept")
        if not (math.isfinite(self.c) and math.isfinite(self.d) and np.isfinite(beta).all()):
            raise ValueError("kernel parameters must be finite")
        if self.c < EPS_C or self.d < EPS_D:
            raise ValueError(f"offsets must satisfy c >= {EPS_C}, d >= {EPS_D}")
        if self.feature_names and len(self.feature_names) != self.n_features:
            raise ValueError(
                f"{len(self.feature_names)} feature names for {self.n_features} weights"
            )

    @property
    def n_features(self) -> int:
        return self.beta.size - 1

    def as_vector(self) -> np.ndarray:
        """Flat parameter vector (c, d, beta_0, ..., beta_J) used by the trainer."""
        return np.concatenate([[self.c, self.d], self.beta])

    @classmethod
    def from_vector(cls, vec: np.ndarray, feature_names: Sequence[str] = ()) -> "KernelParams":
        vec = np.asarray(vec, dtype=float)
        return cls(c=float(vec[0]), d=float(vec[1]), beta=vec[2:].copy(),
                   feature_names=tuple(feature_names))


def _prepare(params: KernelParams, ds, dt, dw) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ds = np.asarray(ds, dtype=float)
    dt = np.asarray(dt, dtype=float)
    dw = np.asarray(dw, dtype=float)
    j = params.n_features
    if dw.ndim == 0 and j == 0:
        dw = dw.reshape(0)
    if dw.shape[-1:] != (j,):
        raise ValueError(f"feature difference has trailing size {dw.shape[-1:]}, expected {j}")
    if not (np.isfinite(ds).all() and np.isfinite(dt).all() and np.isfinite(dw).all()):
        raise ValueError("kernel inputs must be finite")
    if (ds < 0).any() or (dt < 0).any():
        raise ValueError("distances and time gaps must be nonnegative")
    return ds, dt, dw


def kernel_eval(params: KernelParams, ds, dt, dw, clamp: bool = False):
    """Kernel value for spatial gap ds (km), temporal gap dt (days), feature
    difference dw. Broadcasts over leading axes; dw carries the feature axis
    last. `clamp` truncates negative values at zero.
    """
    ds, dt, dw = _prepare(params, ds, dt, dw)
    numer = params.beta[0] + dw @ params.beta[1:]
    denom = (dt + params.c) ** 2 * (ds + params.d) ** 2
    value = numer / denom
    if clamp:
        value = np.maximum(value, 0.0)
    return float(value) if np.ndim(value) == 0 else value


def kernel_grad(params: KernelParams, ds, dt, dw, clamp: bool = False) -> np.ndarray:
    """Gradient of the kernel w.r.t. (c, d, beta_0, ..., beta_J).

    Output shape is the broadcast input shape plus a trailing parameter axis.
    In clamp mode the subgradient is zero wherever the value is clamped.
    """
    ds, dt, dw = _prepare(params, ds, dt, dw)
    numer = params.beta[0] + dw @ params.beta[1:]
    tc = dt + params.c
    sd = ds + params.d
    inv_denom = 1.0 / (tc**2 * sd**2)

    batch = np.broadcast(numer, inv_denom).shape
    out = np.empty(batch + (2 + params.beta.size,))
    out[..., 0] = -2.0 * numer * inv_denom / np.broadcast_to(tc, batch)
    out[..., 1] = -2.0 * numer * inv_denom / np.broadcast_to(sd, batch)
    out[..., 2] = np.broadcast_to(inv_denom, batch)
    out[..., 3:] = np.broadcast_to(dw, batch + (params.n_features,)) * np.broadcast_to(
        inv_denom, batch
    )[..., None]
    if clamp:
        out[np.broadcast_to(numer * inv_denom, batch) < 0.0] = 0.0
    return out


# -- serialization -----------------------------------------------------------


def params_to_json(params: KernelParams) -> str:
    doc = {
        "c": params.c,
        "d": params.d,
        "beta": [float(b) for b in params.beta],
        "feature_names": list(params.feature_names),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def params_from_json(text: str) -> KernelParams:
    doc = json.loads(text)
    return KernelParams(
        c=float(doc["c"]),
        d=float(doc["d"]),
        beta=np.array(doc["beta"], dtype=float),
        feature_names=tuple(doc.get("feature_names", ())),
    )


def write_params(params: KernelParams, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(params_to_json(params))


def read_params(path: str) -> KernelParams:
    with open(path) as fh:
        return params_from_json(fh.read())
