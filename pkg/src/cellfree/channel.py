"""MMSE channel estimation: error-variance statistics and sampled realizations.

Unicast users get orthogonal pilots; each multicast group shares one pilot, so
an AP can only estimate the superposition of the group's channels and splits
it into per-user MMSE estimates that share the same observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .network import LargeScaleFading
from .seeding import CHANNEL, stream


@dataclass(frozen=True)
class EstimationStats:
    """Per-element variances of the MMSE estimates (noise-normalized).

    gamma[n, u] is the unicast estimate variance, gamma_bar[m][n, k] the
    per-user multicast one, zeta[n, m] the variance of the summed group
    estimate. Always zeta[n, m] >= max_k gamma_bar[m][n, k].
    """

    gamma: np.ndarray  # (N, U)
    gamma_bar: tuple[np.ndarray, ...]  # per group, (N, K_m)
    zeta: np.ndarray  # (N, M)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of channels, MMSE estimates, and estimation errors.

    c = c_hat + c_err and t = t_hat_user + t_err hold exactly elementwise.
    Arrays may carry a leading trials axis when produced in a batch.
    """

    c: np.ndarray  # (..., N, U, L)
    t: tuple[np.ndarray, ...]  # per group, (..., N, K_m, L)
    c_hat: np.ndarray
    t_hat_user: tuple[np.ndarray, ...]
    t_hat_group: np.ndarray  # (..., N, M, L)
    c_err: np.ndarray
    t_err: tuple[np.ndarray, ...]


def mmse_variance_unicast(beta, pilot_len: int, p_ul_norm: float):
    """Variance of the MMSE unicast estimate: tau*p*beta^2 / (tau*p*beta + 1)."""
    tp = pilot_len * p_ul_norm
    beta = np.asarray(beta, dtype=float)
    return tp * beta**2 / (tp * beta + 1.0)


def mmse_variance_multicast(betas_in_group, pilot_len: int, p_ul_norm: float):
    """Per-user and group estimate variances under a shared pilot.

    betas_in_group has the group axis last. Returns (gamma_bar, zeta) where
    gamma_bar_k = tau*p*beta_k^2 / (tau*p*sum_t beta_t + 1) and
    zeta = tau*p*(sum_k beta_k)^2 / (tau*p*sum_t beta_t + 1).
    """
    tp = pilot_len * p_ul_norm
    betas = np.asarray(betas_in_group, dtype=float)
    total = betas.sum(axis=-1)
    denom = tp * total + 1.0
    gamma_bar = tp * betas**2 / denom[..., None]
    zeta = tp * total**2 / denom
    return gamma_bar, zeta


def estimation_stats(fading: LargeScaleFading, cfg: SystemConfig) -> EstimationStats:
    gamma = mmse_variance_unicast(fading.beta, cfg.pilot_len, cfg.p_ul_norm)
    gamma_bar = []
    zeta_cols = []
    for bb in fading.beta_bar:
        gb, z = mmse_variance_multicast(bb, cfg.pilot_len, cfg.p_ul_norm)
        gamma_bar.append(gb)
        zeta_cols.append(z)
    zeta = np.stack(zeta_cols, axis=1) if zeta_cols else np.zeros((cfg.n_aps, 0))
    return EstimationStats(gamma=gamma, gamma_bar=tuple(gamma_bar), zeta=zeta)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex normal, unit variance per element."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(0.5) * (re + 1j * im)


def sample_channel_batch(
    fading: LargeScaleFading,
    cfg: SystemConfig,
    rng: np.random.Generator,
    trials: int,
) -> ChannelRealization:
    """Draw `trials` independent realizations with a leading trials axis.

    Each trial runs the pilot phase with unit-variance training noise. Pilots
    are the identity book, so projecting the received block onto a pilot just
    selects that pilot's noise column; distinct pilots see independent noise.
    """
    n, u = fading.beta.shape
    ell = cfg.antennas_per_ap
    tp = cfg.pilot_len * cfg.p_ul_norm
    sq_tp = np.sqrt(tp)

    c = np.sqrt(fading.beta)[None, :, :, None] * _crandn(rng, (trials, n, u, ell))
    t = tuple(
        np.sqrt(bb)[None, :, :, None] * _crandn(rng, (trials, n, bb.shape[1], ell))
        for bb in fading.beta_bar
    )

    # unicast: y = sqrt(tau p) c + noise, c_hat = coef * y
    y_u = sq_tp * c + _crandn(rng, (trials, n, u, ell))
    coef_u = sq_tp * fading.beta / (tp * fading.beta + 1.0)
    c_hat = coef_u[None, :, :, None] * y_u
    c_err = c - c_hat

    t_hat_user = []
    t_err = []
    group_cols = []
    for m, bb in enumerate(fading.beta_bar):
        y_m = sq_tp * t[m].sum(axis=2) + _crandn(rng, (trials, n, ell))  # (trials, N, L)
        denom = tp * bb.sum(axis=1) + 1.0  # (N,)
        coef = sq_tp * bb / denom[:, None]  # (N, K_m)
        th = coef[None, :, :, None] * y_m[:, :, None, :]
        t_hat_user.append(th)
        t_err.append(t[m] - th)
        group_cols.append(th.sum(axis=2))
    t_hat_group = (
        np.stack(group_cols, axis=2)
        if group_cols
        else np.zeros((trials, n, 0, ell), dtype=complex)
    )

    return ChannelRealization(
        c=c,
        t=t,
        c_hat=c_hat,
        t_hat_user=tuple(t_hat_user),
        t_hat_group=t_hat_group,
        c_err=c_err,
        t_err=tuple(t_err),
    )


def sample_channels(
    fading: LargeScaleFading,
    cfg: SystemConfig,
    rng: np.random.Generator | None = None,
) -> ChannelRealization:
    """One realization (no trials axis); rng defaults to the channel stream."""
    if rng is None:
        rng = stream(cfg.rng_seed, CHANNEL)
    batch = sample_channel_batch(fading, cfg, rng, trials=1)
    take = lambda a: a[0]
    return ChannelRealization(
        c=take(batch.c),
        t=tuple(take(x) for x in batch.t),
        c_hat=take(batch.c_hat),
        t_hat_user=tuple(take(x) for x in batch.t_hat_user),
        t_hat_group=take(batch.t_hat_group),
        c_err=take(batch.c_err),
        t_err=tuple(take(x) for x in batch.t_err),
    )
