"""Closed-form downlink SINR and spectral efficiency for MR and ZF precoding.

Two equivalent parameterizations coexist here. The solver-facing one uses
theta variables (per-AP square roots of allocated power, scaled so the power
budget becomes a per-AP ball of radius sqrt(rho)). The reference one uses the
binary association a and raw powers eta; it is kept as an independent
evaluation path for cross-checking, not for optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import EstimationStats
from .config import SystemConfig, ZfDimensionError
from .network import LargeScaleFading

LN2 = np.log(2.0)

PRECODERS = ("mr", "zf")


@dataclass(frozen=True)
class CoeffTable:
    """Precoder-specific SINR coefficients.

    Lambda scales the coherent signal sum, Theta the interference load an AP
    leaks onto a user. rho is the per-AP power-ball radius squared for the
    theta parameterization. Multicast entries are ragged per group.
    """

    precoder: str
    rho: float
    Lambda: np.ndarray  # (N, U)
    Theta: np.ndarray  # (N, U)
    Lambda_bar: tuple[np.ndarray, ...]  # per group, (N, K_m)
    Theta_bar: tuple[np.ndarray, ...]  # per group, (N, K_m)
    prelog: float


@dataclass(frozen=True)
class DecisionVars:
    """Solver variables: nonnegative theta, and z in [0,1] mirroring a.

    Per AP: sum(theta^2) + sum(theta_bar^2) <= rho and
    sum(z^2) + sum(z_bar^2) <= assoc_cap.
    """

    theta: np.ndarray  # (N, U)
    theta_bar: np.ndarray  # (N, M)
    z: np.ndarray  # (N, U)
    z_bar: np.ndarray  # (N, M)
    precoder: str


@dataclass(frozen=True)
class AssociationPower:
    """Binary association plus raw power allocation; eta = 0 wherever a = 0."""

    a: np.ndarray  # (N, U) in {0, 1}
    a_bar: np.ndarray  # (N, M) in {0, 1}
    eta: np.ndarray  # (N, U) >= 0
    eta_bar: np.ndarray  # (N, M) >= 0


@dataclass(frozen=True)
class RateReport:
    se_unicast: np.ndarray  # (U,)
    se_multicast: tuple[np.ndarray, ...]  # per group, (K_m,)
    sse: float


def zf_dof(cfg: SystemConfig) -> int:
    """ZF degrees of freedom L - U - M; positive or ZF is undefined."""
    dof = cfg.antennas_per_ap - cfg.n_entities
    if dof <= 0:
        raise ZfDimensionError(
            f"ZF needs L > U+M, got L={cfg.antennas_per_ap}, U+M={cfg.n_entities}"
        )
    return dof


def build_coeffs(
    stats: EstimationStats,
    fading: LargeScaleFading,
    cfg: SystemConfig,
    precoder: str,
) -> CoeffTable:
    """Coefficient table for one precoder.

    MR: Lambda = L*sqrt(gamma), Theta = L*beta, rho = 1/L (bar terms with
    gamma_bar/beta_bar). ZF: Lambda = sqrt(gamma), Theta = (beta-gamma)/dof,
    rho = dof, with dof = L-U-M. The ZF group beam inverts the aggregate
    group estimate, so member k keeps only its share of the coherent gain:
    the mean inner product is sqrt(gamma_bar_k / zeta) and the amplitude
    coefficient against theta_bar = sqrt(eta_bar/zeta) comes out as
    sqrt(gamma_bar_k), mirroring the MR case up to the L factor.
    """
    precoder = precoder.lower()
    ell = cfg.antennas_per_ap
    if precoder == "mr":
        return CoeffTable(
            precoder="mr",
            rho=1.0 / ell,
            Lambda=ell * np.sqrt(stats.gamma),
            Theta=ell * fading.beta,
            Lambda_bar=tuple(ell * np.sqrt(gb) for gb in stats.gamma_bar),
            Theta_bar=tuple(ell * bb for bb in fading.beta_bar),
            prelog=cfg.prelog,
        )
    if precoder == "zf":
        dof = zf_dof(cfg)
        lam_bar = tuple(np.sqrt(gb) for gb in stats.gamma_bar)
        theta_bar = tuple(
            (bb - gb) / dof for bb, gb in zip(fading.beta_bar, stats.gamma_bar)
        )
        return CoeffTable(
            precoder="zf",
            rho=float(dof),
            Lambda=np.sqrt(stats.gamma),
            Theta=(fading.beta - stats.gamma) / dof,
            Lambda_bar=lam_bar,
            Theta_bar=theta_bar,
            prelog=cfg.prelog,
        )
    raise ValueError(f"unknown precoder {precoder!r}")


# ---- parameterization mapping ----

def theta_from_power(
    ap: AssociationPower, stats: EstimationStats, precoder: str
) -> DecisionVars:
    """Map (a, eta) to theta variables; z mirrors the binary a."""
    precoder = precoder.lower()
    if precoder == "mr":
        theta = np.sqrt(ap.eta * stats.gamma)
        theta_bar = np.sqrt(ap.eta_bar * stats.zeta)
    else:
        theta = np.sqrt(ap.eta / stats.gamma)
        theta_bar = np.sqrt(ap.eta_bar / stats.zeta)
    return DecisionVars(
        theta=theta,
        theta_bar=theta_bar,
        z=ap.a.astype(float),
        z_bar=ap.a_bar.astype(float),
        precoder=precoder,
    )


def power_from_theta(dv: DecisionVars, stats: EstimationStats) -> AssociationPower:
    """Inverse of theta_from_power; a = 1 where z >= 0.5."""
    if dv.precoder == "mr":
        eta = dv.theta**2 / stats.gamma
        eta_bar = dv.theta_bar**2 / stats.zeta
    else:
        eta = dv.theta**2 * stats.gamma
        eta_bar = dv.theta_bar**2 * stats.zeta
    return AssociationPower(
        a=(dv.z >= 0.5).astype(int),
        a_bar=(dv.z_bar >= 0.5).astype(int),
        eta=eta,
        eta_bar=eta_bar,
    )


# ---- theta-form SINR and SE ----

def _interference_load(dv: DecisionVars) -> np.ndarray:
    """Total squared theta per AP; every user sees it through its own Theta."""
    return (dv.theta**2).sum(axis=1) + (dv.theta_bar**2).sum(axis=1)


def sinr_unicast(dv: DecisionVars, coeffs: CoeffTable, p_dl_norm: float) -> np.ndarray:
    """Unicast SINRs, shape (U,). The serving user's own power stays in the
    interference sum; no effective-SINR rearrangement."""
    p = p_dl_norm
    num = p * (dv.theta * coeffs.Lambda).sum(axis=0) ** 2
    den = p * _interference_load(dv) @ coeffs.Theta + 1.0
    return num / den


def sinr_multicast(
    dv: DecisionVars, coeffs: CoeffTable, p_dl_norm: float
) -> tuple[np.ndarray, ...]:
    """Per-group arrays of per-user SINRs, shape (K_m,) each."""
    p = p_dl_norm
    load = _interference_load(dv)
    out = []
    for m, (lam, th) in enumerate(zip(coeffs.Lambda_bar, coeffs.Theta_bar)):
        num = p * (dv.theta_bar[:, m : m + 1] * lam).sum(axis=0) ** 2
        den = p * load @ th + 1.0
        out.append(num / den)
    return tuple(out)


def se_from_sinr(sinr, prelog: float):
    return prelog * np.log1p(sinr) / LN2


def se_and_sse(dv: DecisionVars, coeffs: CoeffTable, cfg: SystemConfig) -> RateReport:
    """Per-user SEs and the weighted sum w1*sum(unicast) + w2*sum(multicast)."""
    se_u = se_from_sinr(sinr_unicast(dv, coeffs, cfg.p_dl_norm), coeffs.prelog)
    se_m = tuple(
        se_from_sinr(s, coeffs.prelog)
        for s in sinr_multicast(dv, coeffs, cfg.p_dl_norm)
    )
    sse = cfg.w1 * se_u.sum() + cfg.w2 * sum(s.sum() for s in se_m)
    return RateReport(se_unicast=se_u, se_multicast=se_m, sse=float(sse))


# ---- reference (a, eta) evaluators, kept as an independent cross-check ----

def sinr_unicast_reference(
    ap: AssociationPower,
    stats: EstimationStats,
    fading: LargeScaleFading,
    cfg: SystemConfig,
    precoder: str,
) -> np.ndarray:
    p = cfg.p_dl_norm
    ell = cfg.antennas_per_ap
    n_aps, n_uni = fading.beta.shape
    a, eta = ap.a, ap.eta
    ab, etab = ap.a_bar, ap.eta_bar
    out = np.zeros(n_uni)
    for u in range(n_uni):
        if precoder == "mr":
            sig = sum(
                a[n, u] * np.sqrt(eta[n, u]) * stats.gamma[n, u] for n in range(n_aps)
            )
            num = p * (ell * sig) ** 2
            uni = sum(
                a[n, up] * eta[n, up] * fading.beta[n, u] * stats.gamma[n, up]
                for up in range(n_uni)
                for n in range(n_aps)
            )
            mul = sum(
                ab[n, m] * etab[n, m] * fading.beta[n, u] * stats.zeta[n, m]
                for m in range(cfg.n_groups)
                for n in range(n_aps)
            )
            den = p * ell * (uni + mul) + 1.0
        else:
            dof = zf_dof(cfg)
            sig = sum(a[n, u] * np.sqrt(eta[n, u]) for n in range(n_aps))
            num = p * sig**2
            gap = fading.beta[:, u] - stats.gamma[:, u]
            uni = sum(
                a[n, up] * eta[n, up] * gap[n] / (dof * stats.gamma[n, up])
                for up in range(n_uni)
                for n in range(n_aps)
            )
            mul = sum(
                ab[n, m] * etab[n, m] * gap[n] / (dof * stats.zeta[n, m])
                for m in range(cfg.n_groups)
                for n in range(n_aps)
            )
            den = p * (uni + mul) + 1.0
        out[u] = num / den
    return out


def sinr_multicast_reference(
    ap: AssociationPower,
    stats: EstimationStats,
    fading: LargeScaleFading,
    cfg: SystemConfig,
    precoder: str,
) -> tuple[np.ndarray, ...]:
    p = cfg.p_dl_norm
    ell = cfg.antennas_per_ap
    n_aps, n_uni = fading.beta.shape
    a, eta = ap.a, ap.eta
    ab, etab = ap.a_bar, ap.eta_bar
    out = []
    for m, bb in enumerate(fading.beta_bar):
        k_m = bb.shape[1]
        vals = np.zeros(k_m)
        for k in range(k_m):
            if precoder == "mr":
                sig = sum(
                    ab[n, m]
                    * np.sqrt(etab[n, m])
                    * np.sqrt(stats.zeta[n, m] * stats.gamma_bar[m][n, k])
                    for n in range(n_aps)
                )
                num = p * (ell * sig) ** 2
                mul = sum(
                    ab[n, mp] * etab[n, mp] * bb[n, k] * stats.zeta[n, mp]
                    for mp in range(cfg.n_groups)
                    for n in range(n_aps)
                )
                uni = sum(
                    a[n, u] * eta[n, u] * bb[n, k] * stats.gamma[n, u]
                    for u in range(n_uni)
                    for n in range(n_aps)
                )
                den = p * ell * (mul + uni) + 1.0
            else:
                dof = zf_dof(cfg)
                # each member sees sqrt(gamma_bar_k/zeta) of the unit group beam
                sig = sum(
                    ab[n, m]
                    * np.sqrt(etab[n, m])
                    * np.sqrt(stats.gamma_bar[m][n, k] / stats.zeta[n, m])
                    for n in range(n_aps)
                )
                num = p * sig**2
                gap = bb[:, k] - stats.gamma_bar[m][:, k]
                mul = sum(
                    ab[n, mp] * etab[n, mp] * gap[n] / (dof * stats.zeta[n, mp])
                    for mp in range(cfg.n_groups)
                    for n in range(n_aps)
                )
                uni = sum(
                    a[n, u] * eta[n, u] * gap[n] / (dof * stats.gamma[n, u])
                    for u in range(n_uni)
                    for n in range(n_aps)
                )
                den = p * (mul + uni) + 1.0
            vals[k] = num / den
        out.append(vals)
    return tuple(out)


# ---- equal power allocation ----

def epa_power(
    a: np.ndarray,
    a_bar: np.ndarray,
    stats: EstimationStats,
    cfg: SystemConfig,
    precoder: str,
) -> AssociationPower:
    """Equal power per served entity at each AP, budget met with equality.

    APs serving nothing get zero power. In theta space the resulting point
    sits exactly on the per-AP ball for every serving AP.
    """
    precoder = precoder.lower()
    ell = cfg.antennas_per_ap
    if precoder == "mr":
        cost = ell * ((a * stats.gamma).sum(axis=1) + (a_bar * stats.zeta).sum(axis=1))
        budget = 1.0
    else:
        dof = zf_dof(cfg)
        cost = (a / stats.gamma).sum(axis=1) + (a_bar / stats.zeta).sum(axis=1)
        budget = float(dof)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(cost > 0.0, budget / cost, 0.0)
    return AssociationPower(
        a=a.astype(int),
        a_bar=a_bar.astype(int),
        eta=a * share[:, None],
        eta_bar=a_bar * share[:, None],
    )


def full_association(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Every AP serves everyone."""
    return (
        np.ones((cfg.n_aps, cfg.n_unicast), dtype=int),
        np.ones((cfg.n_aps, cfg.n_groups), dtype=int),
    )
