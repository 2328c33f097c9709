"""Closed-form SE machinery.

The load-bearing test here is the dual-route equivalence: the theta-space
expressions used by the optimizer must agree with an independent evaluation
written directly over (a, eta), looped per AP and user.
"""

import numpy as np
import pytest

from cellfree.channel import EstimationStats
from cellfree.config import SystemConfig, ZfDimensionError, validate_config
from cellfree.network import LargeScaleFading
from cellfree.rates import (
    AssociationPower,
    DecisionVars,
    build_coeffs,
    epa_power,
    full_association,
    power_from_theta,
    se_and_sse,
    se_from_sinr,
    sinr_multicast,
    sinr_multicast_reference,
    sinr_unicast,
    sinr_unicast_reference,
    theta_from_power,
    zf_dof,
)
from conftest import small_instance


def one_link_setup(beta, gamma):
    cfg = validate_config(
        SystemConfig(n_aps=1, antennas_per_ap=12, n_unicast=1, n_groups=0,
                     group_sizes=(), pilot_len=1)
    )
    stats = EstimationStats(
        gamma=np.array([[gamma]]), gamma_bar=(), zeta=np.zeros((1, 0))
    )
    fading = LargeScaleFading(beta=np.array([[beta]]), beta_bar=())
    return cfg, stats, fading


def test_mr_signal_coefficient_example():
    cfg, stats, fading = one_link_setup(beta=0.3, gamma=0.25)
    coeffs = build_coeffs(stats, fading, cfg, "mr")
    assert coeffs.Lambda[0, 0] == pytest.approx(6.0, rel=1e-15)
    assert coeffs.Theta[0, 0] == pytest.approx(12 * 0.3, rel=1e-15)
    assert coeffs.rho == pytest.approx(1.0 / 12, rel=1e-15)


def test_zf_interference_vanishes_when_estimation_is_perfect():
    cfg = validate_config(
        SystemConfig(n_aps=1, antennas_per_ap=12, n_unicast=1, n_groups=1, group_sizes=(1,))
    )
    stats = EstimationStats(
        gamma=np.array([[0.2]]),
        gamma_bar=(np.array([[0.2]]),),
        zeta=np.array([[0.25]]),
    )
    fading = LargeScaleFading(beta=np.array([[0.2]]), beta_bar=(np.array([[0.25]]),))
    coeffs = build_coeffs(stats, fading, cfg, "zf")
    assert np.all(coeffs.Theta == 0.0)
    assert coeffs.rho == 12 - 2


def test_zf_budget_at_the_paper_scale():
    cfg = validate_config(
        SystemConfig(antennas_per_ap=12, n_unicast=7, n_groups=4,
                     group_sizes=(12,) * 4, pilot_len=11),
        precoder="zf",
    )
    assert zf_dof(cfg) == 1


def test_zf_dof_rejects_too_many_entities():
    cfg = validate_config(
        SystemConfig(antennas_per_ap=12, n_unicast=10, n_groups=4, group_sizes=(1,) * 4)
    )
    with pytest.raises(ZfDimensionError):
        zf_dof(cfg)


def test_coefficient_tables_follow_the_definitions():
    for precoder in ("mr", "zf"):
        cfg, fading, stats, coeffs = small_instance(precoder, seed=11)
        ell = cfg.antennas_per_ap
        if precoder == "mr":
            assert np.allclose(coeffs.Lambda, ell * np.sqrt(stats.gamma), rtol=1e-14)
            assert np.allclose(coeffs.Theta, ell * fading.beta, rtol=1e-14)
            for m in range(cfg.n_groups):
                assert np.allclose(coeffs.Lambda_bar[m], ell * np.sqrt(stats.gamma_bar[m]), rtol=1e-14)
                assert np.allclose(coeffs.Theta_bar[m], ell * fading.beta_bar[m], rtol=1e-14)
            assert coeffs.rho == pytest.approx(1.0 / ell, rel=1e-15)
        else:
            dof = ell - cfg.n_entities
            assert np.allclose(coeffs.Lambda, np.sqrt(stats.gamma), rtol=1e-14)
            assert np.allclose(coeffs.Theta, (fading.beta - stats.gamma) / dof, rtol=1e-14)
            for m in range(cfg.n_groups):
                assert np.allclose(coeffs.Lambda_bar[m], np.sqrt(stats.gamma_bar[m]), rtol=1e-14)
                assert np.allclose(
                    coeffs.Theta_bar[m],
                    (fading.beta_bar[m] - stats.gamma_bar[m]) / dof,
                    rtol=1e-14,
                )
            assert coeffs.rho == dof


def test_power_to_theta_example():
    cfg, stats, fading = one_link_setup(beta=0.3, gamma=0.25)
    ap = AssociationPower(
        a=np.array([[1]]), a_bar=np.zeros((1, 0), dtype=int),
        eta=np.array([[4.0]]), eta_bar=np.zeros((1, 0)),
    )
    dv = theta_from_power(ap, stats, "mr")
    assert dv.theta[0, 0] == pytest.approx(1.0, rel=1e-15)


def random_feasible_power(cfg, stats, precoder, rng):
    """Random covered association with per-AP budget met by down-scaling."""
    ents = cfg.n_entities
    assoc = (rng.random((cfg.n_aps, ents)) < 0.6).astype(int)
    for e in range(ents):
        if not assoc[:, e].any():
            assoc[rng.integers(cfg.n_aps), e] = 1
    a, a_bar = assoc[:, : cfg.n_unicast], assoc[:, cfg.n_unicast :]
    eta = rng.random(a.shape) * a
    eta_bar = rng.random(a_bar.shape) * a_bar
    if precoder == "mr":
        load = (eta * stats.gamma).sum(1) + (eta_bar * stats.zeta).sum(1)
        rho = 1.0 / cfg.antennas_per_ap
    else:
        with np.errstate(invalid="ignore"):
            load = (eta / stats.gamma).sum(1) + (eta_bar / stats.zeta).sum(1)
        rho = float(zf_dof(cfg))
    scale = np.minimum(1.0, rho / np.maximum(load, 1e-300))
    return AssociationPower(a=a, a_bar=a_bar, eta=eta * scale[:, None],
                            eta_bar=eta_bar * scale[:, None])


def test_theta_route_matches_direct_association_power_route():
    for precoder in ("mr", "zf"):
        for seed in (0, 1, 2):
            cfg, fading, stats, coeffs = small_instance(precoder, seed=seed)
            rng = np.random.default_rng(100 + seed)
            ap = random_feasible_power(cfg, stats, precoder, rng)
            dv = theta_from_power(ap, stats, precoder)

            via_theta = sinr_unicast(dv, coeffs, cfg.p_dl_norm)
            direct = sinr_unicast_reference(ap, stats, fading, cfg, precoder)
            assert np.allclose(via_theta, direct, rtol=1e-12)

            mt = sinr_multicast(dv, coeffs, cfg.p_dl_norm)
            md = sinr_multicast_reference(ap, stats, fading, cfg, precoder)
            for s_t, s_d in zip(mt, md):
                assert np.allclose(s_t, s_d, rtol=1e-12)


def test_power_theta_round_trip():
    for precoder in ("mr", "zf"):
        cfg, fading, stats, coeffs = small_instance(precoder, seed=7)
        ap = random_feasible_power(cfg, stats, precoder, np.random.default_rng(5))
        back = power_from_theta(theta_from_power(ap, stats, precoder), stats)
        assert np.array_equal(back.a, ap.a)
        assert np.array_equal(back.a_bar, ap.a_bar)
        assert np.allclose(back.eta, ap.eta, rtol=1e-12, atol=0.0)
        assert np.allclose(back.eta_bar, ap.eta_bar, rtol=1e-12, atol=0.0)


def test_equal_power_sits_on_the_per_ap_ball():
    for precoder in ("mr", "zf"):
        cfg, fading, stats, coeffs = small_instance(precoder, seed=9)
        a, a_bar = full_association(cfg)
        a[0, :] = 0  # an AP serving nothing gets no power
        a_bar[0, :] = 0
        ap = epa_power(a, a_bar, stats, cfg, precoder)
        dv = theta_from_power(ap, stats, precoder)
        load = (dv.theta**2).sum(1) + (dv.theta_bar**2).sum(1)
        assert load[0] == 0.0
        assert np.allclose(load[1:], coeffs.rho, rtol=1e-12)


def test_spectral_efficiency_prelog_example():
    assert se_from_sinr(1.0, (200 - 11) / 200) == pytest.approx(0.945, rel=1e-12)


def test_boosting_one_user_never_helps_the_others():
    for precoder in ("mr", "zf"):
        cfg, fading, stats, coeffs = small_instance(precoder, seed=13)
        ap = random_feasible_power(cfg, stats, precoder, np.random.default_rng(3))
        dv = theta_from_power(ap, stats, precoder)
        base_u = sinr_unicast(dv, coeffs, cfg.p_dl_norm)
        base_m = sinr_multicast(dv, coeffs, cfg.p_dl_norm)

        theta = dv.theta.copy()
        theta[:, 0] = np.maximum(theta[:, 0], 1e-4) * 1.5
        boosted = DecisionVars(theta=theta, theta_bar=dv.theta_bar, z=dv.z,
                               z_bar=dv.z_bar, precoder=precoder)
        after_u = sinr_unicast(boosted, coeffs, cfg.p_dl_norm)
        after_m = sinr_multicast(boosted, coeffs, cfg.p_dl_norm)

        assert after_u[0] > base_u[0]
        assert np.all(after_u[1:] <= base_u[1:] * (1 + 1e-12))
        for b, aft in zip(base_m, after_m):
            assert np.all(aft <= b * (1 + 1e-12))


def test_silence_means_zero_rate():
    cfg, fading, stats, coeffs = small_instance("mr", seed=1)
    shape = (cfg.n_aps, cfg.n_unicast)
    shape_m = (cfg.n_aps, cfg.n_groups)
    dv = DecisionVars(theta=np.zeros(shape), theta_bar=np.zeros(shape_m),
                      z=np.ones(shape), z_bar=np.ones(shape_m), precoder="mr")
    rep = se_and_sse(dv, coeffs, cfg)
    assert rep.sse == 0.0
    assert np.all(rep.se_unicast == 0.0)


def test_weights_gate_each_service():
    cfg, fading, stats, coeffs = small_instance("mr", seed=2, w1=0.0, w2=1.0)
    a, a_bar = full_association(cfg)
    dv = theta_from_power(epa_power(a, a_bar, stats, cfg, "mr"), stats, "mr")
    rep = se_and_sse(dv, coeffs, cfg)
    assert rep.sse == pytest.approx(sum(s.sum() for s in rep.se_multicast), rel=1e-12)
    assert rep.se_unicast.sum() > 0.0  # per-user rates still reported
