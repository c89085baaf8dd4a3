"""Closed-form rectified-flow velocity for isotropic Gaussian mixtures.

For a mixture prior over z0 and standard-normal eps, the marginal of
z_t = (1-t) z0 + t eps per component k is N((1-t) mu_k, ((1-t)^2 s_k^2 + t^2) I),
and the exact velocity is the posterior-weighted conditional expectation of
(eps - z0).  This makes every guidance claim testable without training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_LOG_DENSITY_FLOOR = float(np.log(1e-300))


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class MixturePrior:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    stds: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        s = np.asarray(self.stds, dtype=float)
        if w.ndim != 1 or mu.ndim != 2 or s.ndim != 1:
            raise OracleError("weights (K,), means (K,d), stds (K,) expected")
        if not (len(w) == len(mu) == len(s)):
            raise OracleError("component count mismatch")
        if np.any(w <= 0):
            raise OracleError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise OracleError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
        if np.any(s < 0):
            raise OracleError("stds must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return len(self.weights)

    def to_json(self) -> str:
        return json.dumps(
            {"weights": self.weights.tolist(), "means": self.means.tolist(), "stds": self.stds.tolist()},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MixturePrior":
        d = json.loads(text)
        return cls(np.asarray(d["weights"]), np.asarray(d["means"]), np.asarray(d["stds"]))


def oracle_velocity(prior: MixturePrior, z: np.ndarray, t: float) -> np.ndarray:
    """Exact velocity E[eps - z0 | z_t = z] for the mixture prior.

    Undefined at t=0 (integration never evaluates there).  Accepts a single
    d-vector or a batch (n, d).
    """
    if t <= 0.0:
        raise OracleError("oracle velocity is undefined at t <= 0")
    if t > 1.0:
        raise OracleError(f"t={t} outside (0, 1]")
    z_arr = np.asarray(z, dtype=float)
    single = z_arr.ndim == 1
    zb = np.atleast_2d(z_arr)  # (n, d)
    if zb.shape[1] != prior.dim:
        raise OracleError(f"dimension mismatch: z has {zb.shape[1]}, prior has {prior.dim}")

    om = 1.0 - t
    centers = om * prior.means  # (K, d)
    var = om**2 * prior.stds**2 + t**2  # (K,)
    diff = zb[:, None, :] - centers[None, :, :]  # (n, K, d)
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    log_dens = -0.5 * (sq / var + prior.dim * np.log(2 * np.pi * var))
    log_post = np.maximum(log_dens, _LOG_DENSITY_FLOOR) + np.log(prior.weights)
    log_post -= log_post.max(axis=1, keepdims=True)
    resp = np.exp(log_post)
    resp /= resp.sum(axis=1, keepdims=True)  # (n, K)

    e_z0 = prior.means[None, :, :] + (om * prior.stds**2 / var)[None, :, None] * diff  # (n, K, d)
    e_eps = (zb[:, None, :] - om * e_z0) / t
    v = np.einsum("nk,nkd->nd", resp, e_eps - e_z0)
    return v[0] if single else v


@dataclass(frozen=True)
class OracleField:
    """VelocityField adapter; the condition token is ignored."""

    prior: MixturePrior

    def evaluate(self, z, t, condition=None):
        return oracle_velocity(self.prior, z, t)


def exact_sample(prior: MixturePrior, n: int, seed: int = 0) -> np.ndarray:
    """n i.i.d. draws: component by weight, then isotropic Gaussian."""
    if n < 1:
        raise OracleError("need at least one sample")
    rng = np.random.default_rng(seed)
    comp = rng.choice(prior.k, size=n, p=prior.weights)
    normal = rng.standard_normal((n, prior.dim))
    return prior.means[comp] + prior.stds[comp, None] * normal
