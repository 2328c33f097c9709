"""Network geometry and large-scale fading.

APs and users are dropped uniformly in a square. Each link gets a distance
path loss plus a shadowing term that is log-normal, correlated across users
seen from the same AP and independent across APs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .seeding import PLACEMENT, SHADOWING, stream

SHADOW_STD_DB = 4.0
SHADOW_CORR_DIST = 9.0  # meters; correlation halves per this distance
MIN_DIST = 1.0  # meters; floor so the path-loss model stays bounded


@dataclass(frozen=True)
class Geometry:
    """AP and user coordinates in meters, all inside [0, area_side]^2."""

    ap_positions: np.ndarray  # (N, 2)
    unicast_positions: np.ndarray  # (U, 2)
    multicast_positions: tuple[np.ndarray, ...]  # per group, (K_m, 2)

    @property
    def n_aps(self) -> int:
        return self.ap_positions.shape[0]

    def all_user_positions(self) -> np.ndarray:
        """Stack every user: unicast first, then group users in group order."""
        parts = [self.unicast_positions] + list(self.multicast_positions)
        return np.concatenate([p.reshape(-1, 2) for p in parts], axis=0)


@dataclass(frozen=True)
class LargeScaleFading:
    """Linear-scale channel gains; strictly positive and finite."""

    beta: np.ndarray  # (N, U)
    beta_bar: tuple[np.ndarray, ...]  # per group, (N, K_m)


def place_network(cfg: SystemConfig, rng: np.random.Generator | None = None) -> Geometry:
    """Drop all APs and users independently and uniformly in the square.

    With rng omitted, positions are a pure function of cfg.rng_seed.
    """
    if rng is None:
        rng = stream(cfg.rng_seed, PLACEMENT)
    side = cfg.area_side
    ap = rng.uniform(0.0, side, size=(cfg.n_aps, 2))
    uni = rng.uniform(0.0, side, size=(cfg.n_unicast, 2))
    groups = tuple(rng.uniform(0.0, side, size=(k, 2)) for k in cfg.group_sizes)
    return Geometry(ap_positions=ap, unicast_positions=uni, multicast_positions=groups)


def _user_block(geom: Geometry) -> np.ndarray:
    """Shadowing covariance among all users as seen from one AP (G x G, dB^2)."""
    pos = geom.all_user_positions()
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    cov = SHADOW_STD_DB**2 * np.exp2(-dist / SHADOW_CORR_DIST)
    return _clip_psd(cov)


def _clip_psd(cov: np.ndarray) -> np.ndarray:
    """Zero out numerically negative eigenvalues (below -1e-9 * spectral norm)."""
    w, v = np.linalg.eigh(cov)
    tol = -1e-9 * np.max(np.abs(w))
    if w[0] >= 0.0:
        return cov
    w = np.where(w < tol, 0.0, np.maximum(w, 0.0))
    return (v * w) @ v.T


def shadowing_covariance(geom: Geometry) -> np.ndarray:
    """Joint shadowing covariance over (AP, user) pairs, AP-major ordering.

    Entry [n*G + g, j*G + g'] is Cov{F_{n,g}, F_{j,g'}}: zero across APs,
    and 16 * 2^(-dist(g, g')/9 m) within one AP. Symmetric PSD.
    """
    block = _user_block(geom)
    n = geom.n_aps
    return np.kron(np.eye(n), block)


def sample_shadowing(geom: Geometry, rng: np.random.Generator) -> np.ndarray:
    """Draw jointly Gaussian shadowing, one row per AP, in dB. Shape (N, G)."""
    block = _user_block(geom)
    # eigh-based factor: cholesky can fail on the clipped (singular) matrix
    w, v = np.linalg.eigh(block)
    factor = v * np.sqrt(np.maximum(w, 0.0))
    z = rng.standard_normal((geom.n_aps, block.shape[0]))
    return z @ factor.T


def pathloss_db(dist_m: np.ndarray) -> np.ndarray:
    return -30.5 - 36.7 * np.log10(np.maximum(dist_m, MIN_DIST))


def compute_large_scale(
    geom: Geometry,
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
    shadowing: bool = True,
) -> LargeScaleFading:
    """Large-scale gains beta = 10^((PL + F)/10) for every AP-user link.

    With rng omitted, gains are a pure function of cfg.rng_seed. shadowing=False
    forces F = 0 (pure path loss).
    """
    if rng is None:
        rng = stream(cfg.rng_seed, SHADOWING)
    users = geom.all_user_positions()
    diff = geom.ap_positions[:, None, :] - users[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))  # (N, G)
    gain_db = pathloss_db(dist)
    if shadowing:
        gain_db = gain_db + sample_shadowing(geom, rng)
    gains = 10.0 ** (gain_db / 10.0)

    beta = gains[:, : cfg.n_unicast]
    beta_bar = []
    start = cfg.n_unicast
    for k in cfg.group_sizes:
        beta_bar.append(gains[:, start : start + k])
        start += k
    return LargeScaleFading(beta=beta, beta_bar=tuple(beta_bar))
