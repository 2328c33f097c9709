"""Monte Carlo simulation of the downlink: precoders, received-signal terms,
and empirical checks of the closed-form rate expressions and moment identities.

The hardening bound treats the mean effective gain as the useful signal and
everything else (gain fluctuation plus cross links) as noise, so the desired
term is estimated as |sample mean of the inner product| squared, while the
fluctuation term is the sample variance of that inner product.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelRealization,
    estimation_stats,
    sample_channel_batch,
)
from .config import SystemConfig
from .network import LargeScaleFading
from .rates import (
    AssociationPower,
    RateReport,
    build_coeffs,
    epa_power,
    full_association,
    se_and_sse,
    se_from_sinr,
    theta_from_power,
    zf_dof,
)
from .seeding import MONTECARLO, stream

COND_LIMIT = 1e12
_CHUNK = 2000


class SingularGramError(RuntimeError):
    """An estimated-channel Gram matrix was numerically singular; resample."""


def build_precoders(
    real: ChannelRealization, precoder: str, cfg: SystemConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-AP precoding vectors (unnormalized) for one batch of realizations.

    MR returns the channel estimates themselves. ZF stacks each AP's unicast
    and group estimates into one matrix and takes pseudo-inverse columns, so
    estimated cross links are nulled exactly.
    """
    precoder = precoder.lower()
    if precoder == "mr":
        return real.c_hat, real.t_hat_group
    zf_dof(cfg)
    g = np.concatenate([real.c_hat, real.t_hat_group], axis=-2)  # (..., N, E, L)
    gram = np.einsum("...el,...fl->...ef", g.conj(), g)
    eig = np.linalg.eigvalsh(gram)
    smallest = eig[..., 0]
    largest = eig[..., -1]
    if np.any(smallest <= 0.0) or np.any(largest > COND_LIMIT * smallest):
        raise SingularGramError("estimated-channel Gram matrix is ill conditioned")
    pinv_cols = np.einsum("...fl,...fe->...el", g, np.linalg.inv(gram))
    n_uni = cfg.n_unicast
    return pinv_cols[..., :n_uni, :], pinv_cols[..., n_uni:, :]


@dataclass(frozen=True)
class UatfEstimate:
    """Empirical signal-model terms per target user.

    ds is |mean inner product|^2, bu the variance of that inner product, ui
    the mean squared inner product against each unicast transmission, mi the
    same against each group transmission. Unicast targets zero their own ui
    diagonal; multicast targets zero their own group's mi column.
    """

    ds: np.ndarray  # (U,)
    bu: np.ndarray  # (U,)
    ui: np.ndarray  # (U, U), diagonal zero
    mi: np.ndarray  # (U, M)
    ds_bar: tuple[np.ndarray, ...]  # per group, (K_m,)
    bu_bar: tuple[np.ndarray, ...]
    ui_bar: tuple[np.ndarray, ...]  # per group, (K_m, U)
    mi_bar: tuple[np.ndarray, ...]  # per group, (K_m, M), own column zero
    n_trials: int
    se_mc_unicast: np.ndarray
    se_mc_multicast: tuple[np.ndarray, ...]


def _sample_precoded(fading, cfg, precoder, rng, chunk):
    """One chunk of realizations plus precoders, resampling singular draws."""
    for _ in range(8):
        real = sample_channel_batch(fading, cfg, rng, chunk)
        try:
            b, b_bar = build_precoders(real, precoder, cfg)
        except SingularGramError:
            continue
        return real, b, b_bar
    raise SingularGramError("persistent ill-conditioned draws")


def estimate_uatf_terms(
    cfg: SystemConfig,
    fading: LargeScaleFading,
    ap: AssociationPower,
    precoder: str,
    trials: int,
    rng: np.random.Generator | None = None,
    chunk: int = _CHUNK,
) -> UatfEstimate:
    """Estimate the hardening-bound terms by simulating `trials` downlinks."""
    if rng is None:
        rng = stream(cfg.rng_seed, MONTECARLO)
    p = cfg.p_dl_norm
    n_uni, n_grp = cfg.n_unicast, cfg.n_groups

    w_u = ap.a * np.sqrt(ap.eta)  # (N, U)
    w_m = ap.a_bar * np.sqrt(ap.eta_bar)  # (N, M)

    sum_self = np.zeros(n_uni, dtype=complex)
    sumsq_uni = np.zeros((n_uni, n_uni))
    sumsq_um = np.zeros((n_uni, n_grp))
    sum_self_g = [np.zeros(k, dtype=complex) for k in cfg.group_sizes]
    sumsq_self_g = [np.zeros(k) for k in cfg.group_sizes]
    sumsq_gm = [np.zeros((k, n_grp)) for k in cfg.group_sizes]
    sumsq_gu = [np.zeros((k, n_uni)) for k in cfg.group_sizes]

    done = 0
    while done < trials:
        take = min(chunk, trials - done)
        real, b, b_bar = _sample_precoded(fading, cfg, precoder, rng, take)
        wb = b * w_u[None, :, :, None]
        wb_bar = b_bar * w_m[None, :, :, None]

        inner_uu = np.einsum("tnul,tnvl->tuv", real.c.conj(), wb)
        inner_um = np.einsum("tnul,tnml->tum", real.c.conj(), wb_bar)
        idx = np.arange(n_uni)
        sum_self += inner_uu[:, idx, idx].sum(axis=0)
        sumsq_uni += (np.abs(inner_uu) ** 2).sum(axis=0)
        sumsq_um += (np.abs(inner_um) ** 2).sum(axis=0)

        for m in range(n_grp):
            inner_gm = np.einsum("tnkl,tnvl->tkv", real.t[m].conj(), wb_bar)
            inner_gu = np.einsum("tnkl,tnvl->tkv", real.t[m].conj(), wb)
            sum_self_g[m] += inner_gm[:, :, m].sum(axis=0)
            sumsq_self_g[m] += (np.abs(inner_gm[:, :, m]) ** 2).sum(axis=0)
            sumsq_gm[m] += (np.abs(inner_gm) ** 2).sum(axis=0)
            sumsq_gu[m] += (np.abs(inner_gu) ** 2).sum(axis=0)
        done += take

    mean_self = sum_self / trials
    ds = p * np.abs(mean_self) ** 2
    bu = p * (np.diag(sumsq_uni) / trials - np.abs(mean_self) ** 2)
    ui = p * sumsq_uni / trials
    np.fill_diagonal(ui, 0.0)
    mi = p * sumsq_um / trials
    den = bu + ui.sum(axis=1) + mi.sum(axis=1) + 1.0
    se_u = se_from_sinr(ds / den, cfg.prelog)

    ds_bar, bu_bar, ui_bar, mi_bar, se_m = [], [], [], [], []
    for m in range(n_grp):
        mean_g = sum_self_g[m] / trials
        dsg = p * np.abs(mean_g) ** 2
        bug = p * (sumsq_self_g[m] / trials - np.abs(mean_g) ** 2)
        mig = p * sumsq_gm[m] / trials
        mig[:, m] = 0.0
        uig = p * sumsq_gu[m] / trials
        deng = bug + mig.sum(axis=1) + uig.sum(axis=1) + 1.0
        ds_bar.append(dsg)
        bu_bar.append(bug)
        ui_bar.append(uig)
        mi_bar.append(mig)
        se_m.append(se_from_sinr(dsg / deng, cfg.prelog))

    return UatfEstimate(
        ds=ds,
        bu=bu,
        ui=ui,
        mi=mi,
        ds_bar=tuple(ds_bar),
        bu_bar=tuple(bu_bar),
        ui_bar=tuple(ui_bar),
        mi_bar=tuple(mi_bar),
        n_trials=trials,
        se_mc_unicast=se_u,
        se_mc_multicast=tuple(se_m),
    )


# ---- moment identities ----

@dataclass(frozen=True)
class MomentCheck:
    name: str
    estimate: float
    expected: float
    std_error: float
    n_sigma: float
    passed: bool


def _check(name, samples, expected) -> MomentCheck:
    est = float(np.mean(samples))
    se = float(np.std(samples) / np.sqrt(samples.size))
    n_sigma = abs(est - expected) / se if se > 0 else (0.0 if est == expected else np.inf)
    return MomentCheck(
        name=name,
        estimate=est,
        expected=expected,
        std_error=se,
        n_sigma=n_sigma,
        passed=bool(n_sigma <= 3.0),
    )


def moment_identity_suite(
    cfg: SystemConfig,
    fading: LargeScaleFading,
    trials: int,
    rng: np.random.Generator | None = None,
) -> list[MomentCheck]:
    """Second- and fourth-moment identities behind the closed forms, each
    verified to within 3 standard errors on one representative link."""
    if rng is None:
        rng = stream(cfg.rng_seed, MONTECARLO)
    stats = estimation_stats(fading, cfg)
    ell = cfg.antennas_per_ap

    x_energy = np.empty(trials)
    x_energy_sq = np.empty(trials)
    x_err_cross = np.empty(trials)
    x_split = np.empty(trials)
    x_split_sq = np.empty(trials)
    with_zf = cfg.antennas_per_ap > cfg.n_entities
    x_zf = np.empty(trials) if with_zf else None

    done = 0
    while done < trials:
        take = min(_CHUNK, trials - done)
        real = sample_channel_batch(fading, cfg, rng, take)
        sl = slice(done, done + take)

        c_hat = real.c_hat[:, 0, 0, :]
        energy = np.sum(np.abs(c_hat) ** 2, axis=1)
        x_energy[sl] = energy
        x_energy_sq[sl] = energy**2
        cross = np.einsum("tl,tl->t", real.c_err[:, 0, 0, :].conj(), c_hat)
        x_err_cross[sl] = np.abs(cross) ** 2

        t_user = real.t_hat_user[0][:, 0, 0, :]
        t_group = real.t_hat_group[:, 0, 0, :]
        split = np.einsum("tl,tl->t", t_user.conj(), t_group)
        x_split[sl] = split.real
        x_split_sq[sl] = np.abs(split) ** 2

        if with_zf:
            b, _ = build_precoders(real, "zf", cfg)
            x_zf[sl] = np.sum(np.abs(b[:, 0, 0, :]) ** 2, axis=1)
        done += take

    gamma = stats.gamma[0, 0]
    beta = fading.beta[0, 0]
    gamma_bar = stats.gamma_bar[0][0, 0]
    zeta = stats.zeta[0, 0]

    checks = [
        _check("estimate_energy", x_energy, ell * gamma),
        _check("estimate_energy_sq", x_energy_sq, ell * (ell + 1) * gamma**2),
        _check("error_estimate_cross", x_err_cross, ell * gamma * (beta - gamma)),
        _check("split_group_inner", x_split, ell * np.sqrt(zeta * gamma_bar)),
        _check("split_group_inner_sq", x_split_sq, ell * (ell + 1) * gamma_bar * zeta),
    ]
    if with_zf:
        dof = zf_dof(cfg)
        checks.append(_check("zf_precoder_energy", x_zf, 1.0 / (dof * gamma)))
    return checks


# ---- closed-form certification ----

def certify_closed_form(
    cfg: SystemConfig,
    fading: LargeScaleFading,
    precoder: str,
    trials: int,
    rng: np.random.Generator | None = None,
) -> tuple[list[dict], UatfEstimate, RateReport]:
    """Compare closed-form SEs against the simulated ones under equal power
    with every AP serving everyone; returns per-user rows for the CSV."""
    stats = estimation_stats(fading, cfg)
    coeffs = build_coeffs(stats, fading, cfg, precoder)
    a, a_bar = full_association(cfg)
    ap = epa_power(a, a_bar, stats, cfg, precoder)
    dv = theta_from_power(ap, stats, precoder)
    closed = se_and_sse(dv, coeffs, cfg)
    mc = estimate_uatf_terms(cfg, fading, ap, precoder, trials, rng=rng)

    rows = []
    for u in range(cfg.n_unicast):
        se_cl = float(closed.se_unicast[u])
        se_mc = float(mc.se_mc_unicast[u])
        rows.append(
            {
                "user_id": f"u{u}",
                "kind": "unicast",
                "precoder": precoder,
                "se_closed": se_cl,
                "se_mc": se_mc,
                "rel_err": abs(se_mc - se_cl) / se_cl if se_cl else 0.0,
                "trials": trials,
            }
        )
    for m in range(cfg.n_groups):
        for k in range(cfg.group_sizes[m]):
            se_cl = float(closed.se_multicast[m][k])
            se_mc = float(mc.se_mc_multicast[m][k])
            rows.append(
                {
                    "user_id": f"m{m}k{k}",
                    "kind": "multicast",
                    "precoder": precoder,
                    "se_closed": se_cl,
                    "se_mc": se_mc,
                    "rel_err": abs(se_mc - se_cl) / se_cl if se_cl else 0.0,
                    "trials": trials,
                }
            )
    return rows, mc, closed


VALIDATION_COLUMNS = ("user_id", "kind", "precoder", "se_closed", "se_mc", "rel_err", "trials")


def write_validation_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VALIDATION_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row["user_id"],
                    row["kind"],
                    row["precoder"],
                    f"{row['se_closed']:.12g}",
                    f"{row['se_mc']:.12g}",
                    f"{row['rel_err']:.12g}",
                    row["trials"],
                ]
            )
