"""Simulation-side checks: precoder structure, moment identities, and the
statistical behaviour of the estimators."""

import csv

import numpy as np
import pytest

from cellfree.channel import sample_channel_batch, sample_channels
from cellfree.montecarlo import (
    VALIDATION_COLUMNS,
    build_precoders,
    certify_closed_form,
    moment_identity_suite,
    write_validation_csv,
)
from conftest import small_instance


def test_mr_precoders_are_the_estimates():
    cfg, fading, stats, _ = small_instance("mr", seed=0, n_aps=2, antennas_per_ap=6)
    real = sample_channels(fading, cfg)
    b, b_bar = build_precoders(real, "mr", cfg)
    assert b is real.c_hat
    assert b_bar is real.t_hat_group


def test_zf_nulls_estimated_cross_links():
    cfg, fading, stats, _ = small_instance("zf", seed=1, n_aps=2, antennas_per_ap=12)
    real = sample_channels(fading, cfg)
    b, b_bar = build_precoders(real, "zf", cfg)
    ests = np.concatenate([real.c_hat, real.t_hat_group], axis=-2)  # (N, E, L)
    pres = np.concatenate([b, b_bar], axis=-2)
    inner = np.einsum("nel,nfl->nef", ests.conj(), pres)
    eye = np.eye(cfg.n_entities)
    for n in range(cfg.n_aps):
        assert np.max(np.abs(inner[n] - eye)) < 1e-9


def test_moment_identities_clear_three_sigma():
    cfg, fading, stats, _ = small_instance("zf", seed=0, n_aps=3)
    checks = moment_identity_suite(cfg, fading, trials=4000)
    names = {c.name for c in checks}
    assert "zf_precoder_energy" in names  # the surplus-antenna identity runs
    for c in checks:
        assert c.passed, f"{c.name}: {c.estimate} vs {c.expected} ({c.n_sigma:.1f} sigma)"
        assert c.std_error > 0.0


def test_moment_suite_expected_values_use_the_closed_forms():
    # spot arithmetic: L=12, gamma=0.3 gives L(L+1)gamma^2 = 14.04; the ZF
    # energy at gamma=0.2 with 7 surplus dimensions is 1/1.4
    assert 12 * 13 * 0.3**2 == pytest.approx(14.04)
    assert 1.0 / (7 * 0.2) == pytest.approx(1.0 / 1.4)
    cfg, fading, stats, _ = small_instance("zf", seed=2, n_aps=2)
    checks = {c.name: c for c in moment_identity_suite(cfg, fading, trials=500)}
    ell, gamma = cfg.antennas_per_ap, stats.gamma[0, 0]
    assert checks["estimate_energy"].expected == pytest.approx(ell * gamma, rel=1e-12)
    assert checks["estimate_energy_sq"].expected == pytest.approx(
        ell * (ell + 1) * gamma**2, rel=1e-12
    )
    dof = ell - cfg.n_entities
    assert checks["zf_precoder_energy"].expected == pytest.approx(
        1.0 / (dof * gamma), rel=1e-12
    )


def test_monte_carlo_error_shrinks_with_sample_size():
    cfg, fading, stats, _ = small_instance("mr", seed=3, n_aps=1, antennas_per_ap=4)
    rng = np.random.default_rng(17)
    reps = 40

    def spread(trials):
        batch = sample_channel_batch(fading, cfg, rng, reps * trials)
        energy = np.sum(np.abs(batch.c_hat[:, 0, 0, :]) ** 2, axis=-1)
        return energy.reshape(reps, trials).mean(axis=1).std(ddof=1)

    ratio = spread(256) / spread(4 * 256)
    assert 1.5 < ratio < 2.7  # quadrupling the draws halves the spread


def test_certification_rows_cover_every_user(tmp_path):
    cfg, fading, stats, _ = small_instance("mr", seed=5, n_aps=2, antennas_per_ap=6)
    rows, mc, closed = certify_closed_form(cfg, fading, "mr", trials=1500)
    assert [r["user_id"] for r in rows] == ["u0", "u1", "u2", "m0k0", "m0k1", "m1k0", "m1k1"]
    assert all(r["trials"] == 1500 for r in rows)
    assert all(r["se_mc"] > 0.0 for r in rows)
    for r in rows:
        assert r["rel_err"] == pytest.approx(
            abs(r["se_mc"] - r["se_closed"]) / r["se_closed"], rel=1e-12
        )

    out = tmp_path / "validation.csv"
    write_validation_csv(str(out), rows)
    with open(out, newline="") as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == VALIDATION_COLUMNS
    assert len(got) == 1 + len(rows)


def test_certification_is_deterministic_without_an_rng():
    cfg, fading, stats, _ = small_instance("mr", seed=6, n_aps=2, antennas_per_ap=6)
    a, _, _ = certify_closed_form(cfg, fading, "mr", trials=600)
    b, _, _ = certify_closed_form(cfg, fading, "mr", trials=600)
    assert [r["se_mc"] for r in a] == [r["se_mc"] for r in b]
