"""Instance builders shared across the test modules.

Everything here is deterministic in the seed so failures replay exactly.
"""

from itertools import product

import numpy as np

from cellfree.config import SystemConfig, validate_config
from cellfree.experiments import build_instance
from cellfree.rates import build_coeffs

DESK = dict(antennas_per_ap=12, n_unicast=3, n_groups=2, group_sizes=(2, 2))


def desk_config(precoder="mr", seed=0, **overrides):
    params = dict(DESK)
    params.update(overrides)
    return validate_config(SystemConfig(rng_seed=seed, **params), precoder=precoder)


def small_instance(precoder="mr", seed=0, **overrides):
    """cfg, fading, stats, coeffs for a compact network; fast to build."""
    overrides.setdefault("n_aps", 4)
    cfg = desk_config(precoder=precoder, seed=seed, **overrides)
    _, fading, stats = build_instance(cfg)
    coeffs = build_coeffs(stats, fading, cfg, precoder)
    return cfg, fading, stats, coeffs


def ball_qp_oracle(v, radius):
    """Exact projection onto {x >= 0, ||x||^2 <= radius^2} by active-set
    enumeration: every support's stationarity candidate, keep the feasible
    ones, return the closest. Independent of the clip-then-scale route."""
    d = v.size
    best, best_d = np.zeros(d), float(v @ v)
    for mask in product((False, True), repeat=d):
        sup = np.array(mask)
        if not sup.any():
            continue
        vs = v[sup]
        if np.any(vs <= 0):
            continue
        lam = max(0.0, float(np.linalg.norm(vs)) / radius - 1.0)
        x = np.zeros(d)
        x[sup] = vs / (1.0 + lam)
        dist = float((x - v) @ (x - v))
        if dist < best_d:
            best, best_d = x, dist
    return best


def interior_point(cfg, coeffs, rng, margin=0.95):
    """A strictly feasible point of the projection set, away from the kinks."""
    from cellfree.apg import project

    n_th = cfg.n_aps * cfg.n_entities
    raw = np.empty(2 * n_th)
    raw[:n_th] = rng.uniform(0.05, 1.0, n_th)
    raw[n_th:] = rng.uniform(0.1, 0.9, n_th)
    v = project(raw, cfg, coeffs)
    v[:n_th] *= margin
    v[n_th:] = np.clip(v[n_th:], 0.05, 0.9)
    return v
