"""Placement, path loss, and spatially correlated shadowing."""

import numpy as np
import pytest

from cellfree.config import SystemConfig, validate_config
from cellfree.network import (
    Geometry,
    compute_large_scale,
    pathloss_db,
    place_network,
    sample_shadowing,
    shadowing_covariance,
)

CFG = validate_config(SystemConfig(n_aps=6, rng_seed=9))


def single_ap_geometry(user_xy):
    """One AP at the origin serving unicast users at the given coordinates."""
    return Geometry(
        ap_positions=np.array([[0.0, 0.0]]),
        unicast_positions=np.asarray(user_xy, dtype=float),
        multicast_positions=(),
    )


def test_placement_is_deterministic_in_the_seed():
    a = place_network(CFG)
    b = place_network(CFG)
    assert np.array_equal(a.ap_positions, b.ap_positions)
    assert np.array_equal(a.unicast_positions, b.unicast_positions)
    for ga, gb in zip(a.multicast_positions, b.multicast_positions):
        assert np.array_equal(ga, gb)


def test_placement_respects_counts_and_area():
    cfg = validate_config(
        SystemConfig(n_aps=60, n_unicast=7, n_groups=4, group_sizes=(12,) * 4, pilot_len=11)
    )
    geom = place_network(cfg)
    assert geom.ap_positions.shape == (60, 2)
    assert geom.unicast_positions.shape == (7, 2)
    assert tuple(g.shape[0] for g in geom.multicast_positions) == (12, 12, 12, 12)
    everyone = np.vstack([geom.ap_positions, geom.all_user_positions()])
    assert everyone.min() >= 0.0
    assert everyone.max() <= cfg.area_side


def test_pathloss_at_one_and_ten_meters():
    geom = single_ap_geometry([[0.0, 1.0], [0.0, 10.0]])
    fading = compute_large_scale(geom, CFG, shadowing=False)
    assert fading.beta[0, 0] == pytest.approx(10 ** (-30.5 / 10), rel=1e-12)
    assert fading.beta[0, 1] == pytest.approx(10 ** (-67.2 / 10), rel=1e-12)


def test_pathloss_clamps_below_one_meter():
    assert pathloss_db(0.05) == pathloss_db(1.0)


def test_gain_decreases_with_distance_without_shadowing():
    geom = single_ap_geometry([[0.0, d] for d in (2.0, 5.0, 20.0, 90.0, 400.0)])
    fading = compute_large_scale(geom, CFG, shadowing=False)
    assert np.all(np.diff(fading.beta[0]) < 0)
    assert np.all(fading.beta > 0)


def test_shadowing_covariance_examples():
    # same AP, users 9 m apart: 16 * 2^(-9/9) = 8; across APs: independent
    geom = Geometry(
        ap_positions=np.array([[0.0, 0.0], [500.0, 0.0]]),
        unicast_positions=np.array([[100.0, 0.0], [109.0, 0.0]]),
        multicast_positions=(),
    )
    cov = shadowing_covariance(geom)
    assert cov.shape == (4, 4)
    assert cov[0, 0] == pytest.approx(16.0)
    assert cov[0, 1] == pytest.approx(8.0)
    assert cov[2, 3] == pytest.approx(8.0)
    assert cov[0, 2] == 0.0
    assert cov[1, 3] == 0.0


def test_shadowing_covariance_is_symmetric_psd():
    geom = place_network(CFG)
    cov = shadowing_covariance(geom)
    assert np.allclose(cov, cov.T, rtol=0.0, atol=1e-10)
    w = np.linalg.eigvalsh(cov)
    assert w.min() >= -1e-8 * w.max()


def test_shadowing_sample_variance_matches_model():
    # rows of the sample are independent across APs, so many APs stand in
    # for many draws
    geom = Geometry(
        ap_positions=np.zeros((10**4, 2)),
        unicast_positions=np.array([[100.0, 0.0], [109.0, 0.0]]),
        multicast_positions=(),
    )
    sample = sample_shadowing(geom, np.random.default_rng(3))
    assert sample.shape == (10**4, 2)
    var = sample.var(axis=0, ddof=1)
    assert abs(var[0] - 16.0) <= 0.5
    assert abs(var[1] - 16.0) <= 0.5
    cross = np.cov(sample[:, 0], sample[:, 1])[0, 1]
    assert abs(cross - 8.0) <= 0.5


def test_shadowed_gain_variance_through_the_full_pipeline():
    geom = Geometry(
        ap_positions=np.tile([[200.0, 300.0]], (10**4, 1)),
        unicast_positions=np.array([[500.0, 500.0]]),
        multicast_positions=(),
    )
    with_sh = compute_large_scale(geom, CFG)
    without = compute_large_scale(geom, CFG, shadowing=False)
    db = 10.0 * (np.log10(with_sh.beta) - np.log10(without.beta))
    assert abs(db.var(ddof=1) - 16.0) <= 0.5


def test_large_scale_is_deterministic_in_the_seed():
    geom = place_network(CFG)
    a = compute_large_scale(geom, CFG)
    b = compute_large_scale(geom, CFG)
    assert np.array_equal(a.beta, b.beta)
    for ga, gb in zip(a.beta_bar, b.beta_bar):
        assert np.array_equal(ga, gb)
