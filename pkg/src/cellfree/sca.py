"""Benchmark solver: epigraph reformulation with successive convex surrogates.

The association/power problem is rewritten with per-user rate epigraph
variables, a denominator slack per user, and relaxed association variables
in [0, 1] whose distance from binary is charged through a multiplier.  Each
outer iteration freezes an expansion point, replaces every nonconvex piece
by a convex surrogate that is tight at that point, and solves the resulting
convex program.  The built-in subproblem backend is an accelerated projected
gradient on an augmented penalty of the surrogate constraints (valid because
every surrogate is convex); a conic backend can be plugged in instead.

Slack convention: the rate of target t is prelog*log2(1 + U_t^2/w_t) when
w_t equals the true denominator V_t(theta).  Accepted iterates always store
w = V(theta) exactly.  Inside a subproblem the achievable side uses a slack
bounded below by the convex V (so the concave minorant under-estimates the
true rate), while the fronthaul side uses a second slack bounded above by an
affine minorant of V (so the convex majorant over-estimates it).  Both
collapse to the stored w at the expansion point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .apg import SolutionReport, report_from_vars
from .config import SystemConfig
from .rates import CoeffTable, DecisionVars

LN2 = math.log(2.0)
W_FLOOR = 1e-9


class SubproblemInfeasible(RuntimeError):
    """Rate floors and fronthaul caps cannot be met at this linearization."""


# ---- scalar surrogate forms (shared by the solver and the tests) ----

def rate_from_slack(u_amp, w, prelog):
    """Rate written against a denominator slack; exact when w = V(theta)."""
    return prelog * np.log1p(u_amp**2 / w) / LN2


def rate_lower_surrogate(u_amp, w, u0, w0, prelog):
    """Concave minorant of rate_from_slack, tight at (u0, w0)."""
    sinr0 = u0**2 / w0
    val = (
        np.log1p(sinr0)
        - sinr0
        + 2.0 * u0 * u_amp / w0
        - u0**2 * (u_amp**2 + w) / (w0 * (u0**2 + w0))
    )
    return prelog * val / LN2


def rate_upper_surrogate(u_amp, w, u0, w0, prelog):
    """Convex majorant of rate_from_slack, tight at (u0, w0)."""
    x0 = u0**2 + w0
    val = np.log(x0) + (u_amp**2 + w) / x0 - 1.0 - np.log(w)
    return prelog * val / LN2


def binariness_gap(a):
    return a - a**2


def binariness_surrogate(a, a0):
    """Affine majorant of a - a^2, tight at a0."""
    return a - 2.0 * a * a0 + a0**2


def fronthaul_load_true(a_uni, t_hat_uni, a_grp, t_hat_group_sum):
    """Per-AP fronthaul consumption with relaxed association weights."""
    return a_uni @ t_hat_uni + a_grp @ t_hat_group_sum


def fronthaul_load_surrogate(a_uni, t_hat_uni, a_grp, t_hat_group_sum,
                             a0_uni, t0_uni, a0_grp, t0_grp):
    """Convex majorant of the bilinear load, tight at the expansion point.

    Uses a*t = 0.25[(a+t)^2 - (a-t)^2] and linearizes the concave square.
    """
    d0u = a0_uni - t0_uni[None, :]
    d0g = a0_grp - t0_grp[None, :]
    du = a_uni - t_hat_uni[None, :]
    dg = a_grp - t_hat_group_sum[None, :]
    part_u = (a_uni + t_hat_uni[None, :]) ** 2 - 2.0 * d0u * du + d0u**2
    part_g = (a_grp + t_hat_group_sum[None, :]) ** 2 - 2.0 * d0g * dg + d0g**2
    return 0.25 * (part_u.sum(axis=1) + part_g.sum(axis=1))


# ---- point and subproblem containers ----

@dataclass(frozen=True)
class ScaPoint:
    """One iterate: powers, relaxed association, denominator slacks, and the
    epigraph rate variables (t lower side, t_hat fronthaul side).

    Invariants at accepted iterates: V(theta) >= w > 0 (stored with
    equality), t >= the rate floors.
    """

    theta: np.ndarray  # (N, U)
    theta_bar: np.ndarray  # (N, M)
    a: np.ndarray  # (N, U), relaxed in [0, 1]
    a_bar: np.ndarray  # (N, M)
    w: np.ndarray  # (U,)
    w_bar: tuple[np.ndarray, ...]  # per group, (K_m,)
    t: np.ndarray  # (U,)
    t_bar: tuple[np.ndarray, ...]
    t_hat: np.ndarray  # (U,)
    t_hat_bar: tuple[np.ndarray, ...]
    lam: float


@dataclass(frozen=True)
class _Stacks:
    """Target-major views of the deterministic-equivalent coefficients:
    unicast users first, then every group member in group order."""

    amp: np.ndarray  # (N, T) signal amplitudes per target
    leak: np.ndarray  # (N, T) interference weights per target
    col_map: np.ndarray  # (T,) entity column feeding each target's signal
    scat: np.ndarray  # (T, E) one-hot col_map matrix
    group_mask: np.ndarray  # (T, M) one-hot group membership (zero rows for unicast)
    weight: np.ndarray  # (T,) objective weight (w1 unicast, w2 multicast)
    qos: np.ndarray  # (T,) rate floors


def _build_stacks(coeffs: CoeffTable, cfg: SystemConfig) -> _Stacks:
    n_uni, n_grp = cfg.n_unicast, cfg.n_groups
    ents = cfg.n_entities
    amp = [coeffs.Lambda]
    leak = [coeffs.Theta]
    cols = list(range(n_uni))
    groups = [-1] * n_uni
    for m in range(n_grp):
        amp.append(coeffs.Lambda_bar[m])
        leak.append(coeffs.Theta_bar[m])
        cols.extend([n_uni + m] * cfg.group_sizes[m])
        groups.extend([m] * cfg.group_sizes[m])
    amp = np.hstack(amp)
    leak = np.hstack(leak)
    col_map = np.array(cols, dtype=int)
    n_t = col_map.size
    scat = np.zeros((n_t, ents))
    scat[np.arange(n_t), col_map] = 1.0
    group_mask = np.zeros((n_t, n_grp))
    for i, m in enumerate(groups):
        if m >= 0:
            group_mask[i, m] = 1.0
    weight = np.where(np.array(groups) < 0, cfg.w1, cfg.w2)
    qos = np.where(np.array(groups) < 0, cfg.se_qos_unicast, cfg.se_qos_multicast)
    return _Stacks(amp, leak, col_map, scat, group_mask, weight, qos)


def _theta_full(theta, theta_bar):
    return np.hstack([theta, theta_bar])


def _regroup(vec: np.ndarray, cfg: SystemConfig):
    uni = vec[: cfg.n_unicast]
    parts, pos = [], cfg.n_unicast
    for k in cfg.group_sizes:
        parts.append(vec[pos : pos + k])
        pos += k
    return uni, tuple(parts)


def _amps(theta_full, st: _Stacks, p):
    return math.sqrt(p) * (st.amp * theta_full[:, st.col_map]).sum(axis=0)


def _denoms(theta_full, st: _Stacks, p):
    load = (theta_full**2).sum(axis=1)
    return 1.0 + p * st.leak.T @ load


def sca_point_from_vars(
    dv: DecisionVars, cfg: SystemConfig, coeffs: CoeffTable, lam: float = 10.0
) -> ScaPoint:
    """Seed an iterate from a power/selection point: slacks tight (w = V),
    epigraph variables at the rates that point actually achieves."""
    st = _build_stacks(coeffs, cfg)
    full = _theta_full(dv.theta, dv.theta_bar)
    u_amp = _amps(full, st, cfg.p_dl_norm)
    v_den = _denoms(full, st, cfg.p_dl_norm)
    se = rate_from_slack(u_amp, v_den, coeffs.prelog)
    w_u, w_b = _regroup(v_den, cfg)
    t_u, t_b = _regroup(se, cfg)
    return ScaPoint(
        theta=dv.theta.copy(),
        theta_bar=dv.theta_bar.copy(),
        a=dv.z.astype(float).copy(),
        a_bar=dv.z_bar.astype(float).copy(),
        w=w_u.copy(),
        w_bar=tuple(x.copy() for x in w_b),
        t=t_u.copy(),
        t_bar=tuple(x.copy() for x in t_b),
        t_hat=t_u.copy(),
        t_hat_bar=tuple(x.copy() for x in t_b),
        lam=lam,
    )


def true_objective(point: ScaPoint, cfg: SystemConfig) -> float:
    """Objective of the epigraph problem at a point: negative weighted sum of
    the epigraph rates plus the multiplier-weighted binariness gap."""
    rate_part = cfg.w1 * point.t.sum() + cfg.w2 * sum(t.sum() for t in point.t_bar)
    gap = binariness_gap(point.a).sum() + binariness_gap(point.a_bar).sum()
    return float(-rate_part + point.lam * gap)


def binariness_residual(point: ScaPoint) -> float:
    return float(binariness_gap(point.a).sum() + binariness_gap(point.a_bar).sum())


@dataclass(frozen=True)
class ScaSubproblem:
    """Convex program frozen at one expansion point.

    Every constraint is affine, convex quadratic, or a linearization of the
    offending term; `describe()` lists them. Variable vector layout:
    [theta (N*E)] [a (N*E)] [w_lo (T)] [t (T)] and, with a finite fronthaul
    cap, [w_hi... named w_dn (T)] [t_hat (T)].
    """

    cfg: SystemConfig
    coeffs: CoeffTable
    st: _Stacks
    lam: float
    finite_cap: bool
    # expansion-point data
    theta0: np.ndarray  # (N, E)
    a0: np.ndarray  # (N, E)
    u0: np.ndarray  # (T,)
    w0: np.ndarray  # (T,) equals V(theta0)
    t_hat0: np.ndarray  # (T,)
    # frozen surrogate coefficients
    k_const: np.ndarray  # (T,)
    k_amp: np.ndarray  # (T,)
    k_quad: np.ndarray  # (T,)
    x0: np.ndarray  # (T,) u0^2 + w0
    vlin_const: np.ndarray  # (T,)
    d0_uni: np.ndarray  # (N, U)
    d0_grp: np.ndarray  # (N, M)
    t_hat0_grp: np.ndarray  # (M,)

    @property
    def n_targets(self) -> int:
        return self.st.col_map.size

    @property
    def dim(self) -> int:
        base = 2 * self.theta0.size + 2 * self.n_targets
        return base + (2 * self.n_targets if self.finite_cap else 0)

    def describe(self) -> tuple[tuple[str, str], ...]:
        rows = [
            ("theta_nonneg", "affine"),
            ("per_ap_power_ball", "convex quadratic"),
            ("assoc_box", "affine"),
            ("mask_power_under_assoc", "convex quadratic"),
            ("coverage_floor", "affine"),
            ("per_ap_assoc_cap", "affine"),
            ("rate_floor", "affine"),
            ("denominator_below_slack", "convex quadratic"),
            ("rate_below_concave_minorant", "convex quadratic"),
        ]
        if self.finite_cap:
            rows += [
                ("slack_below_linearized_denominator", "linearized"),
                ("convex_majorant_below_t_hat", "convex"),
                ("fronthaul_load_surrogate", "convex quadratic"),
            ]
        return tuple(rows)

    # -- variable packing --

    def slices(self):
        ne = self.theta0.size
        n_t = self.n_targets
        pos = 0
        out = {}
        for name, size in (
            ("theta", ne),
            ("a", ne),
            ("w_lo", n_t),
            ("t", n_t),
        ):
            out[name] = slice(pos, pos + size)
            pos += size
        if self.finite_cap:
            for name in ("w_dn", "t_hat"):
                out[name] = slice(pos, pos + n_t)
                pos += n_t
        return out

    def pack(self, point: ScaPoint) -> np.ndarray:
        parts = [
            _theta_full(point.theta, point.theta_bar).ravel(),
            _theta_full(point.a, point.a_bar).ravel(),
            np.concatenate([point.w, *point.w_bar]) if point.w_bar else point.w,
            np.concatenate([point.t, *point.t_bar]) if point.t_bar else point.t,
        ]
        if self.finite_cap:
            parts.append(
                np.concatenate([point.w, *point.w_bar]) if point.w_bar else point.w
            )
            parts.append(
                np.concatenate([point.t_hat, *point.t_hat_bar])
                if point.t_hat_bar
                else point.t_hat
            )
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, x: np.ndarray) -> ScaPoint:
        """Variables back into a point, re-tightened for the next expansion:
        w = V(theta) exactly and t at the rate theta actually achieves (the
        subproblem's t sits at the conservative minorant value)."""
        cfg, st = self.cfg, self.st
        sl = self.slices()
        shape = self.theta0.shape
        full = x[sl["theta"]].reshape(shape)
        a_full = x[sl["a"]].reshape(shape)
        n_uni = cfg.n_unicast
        v_den = _denoms(full, st, cfg.p_dl_norm)
        t_all = rate_from_slack(_amps(full, st, cfg.p_dl_norm), v_den, self.coeffs.prelog)
        if self.finite_cap:
            t_hat_all = x[sl["t_hat"]]
        else:
            t_hat_all = t_all
        w_u, w_b = _regroup(v_den, cfg)
        t_u, t_b = _regroup(t_all, cfg)
        th_u, th_b = _regroup(t_hat_all, cfg)
        return ScaPoint(
            theta=full[:, :n_uni].copy(),
            theta_bar=full[:, n_uni:].copy(),
            a=a_full[:, :n_uni].copy(),
            a_bar=a_full[:, n_uni:].copy(),
            w=w_u,
            w_bar=w_b,
            t=t_u.copy(),
            t_bar=tuple(v.copy() for v in t_b),
            t_hat=th_u.copy(),
            t_hat_bar=tuple(v.copy() for v in th_b),
            lam=self.lam,
        )

    # -- smooth pieces --

    def objective(self, x: np.ndarray) -> float:
        sl = self.slices()
        a_full = x[sl["a"]].reshape(self.a0.shape)
        t_all = x[sl["t"]]
        gap = binariness_surrogate(a_full, self.a0).sum()
        return float(-(self.st.weight @ t_all) + self.lam * gap)

    def objective_grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros_like(x)
        sl = self.slices()
        g[sl["a"]] = (self.lam * (1.0 - 2.0 * self.a0)).ravel()
        g[sl["t"]] = -self.st.weight
        return g

    def hinge_values(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Inequality residuals h(x) (feasible where h <= 0), one array per
        constraint family handled by penalty rather than projection."""
        cfg, st = self.cfg, self.st
        p = cfg.p_dl_norm
        c_pre = self.coeffs.prelog / LN2
        sl = self.slices()
        full = x[sl["theta"]].reshape(self.theta0.shape)
        a_full = x[sl["a"]].reshape(self.a0.shape)
        w_lo = x[sl["w_lo"]]
        t_all = x[sl["t"]]

        u_amp = _amps(full, st, p)
        out = {
            "mask": (full**2 - a_full).ravel(),
            "coverage": 1.0 - a_full.sum(axis=0),
            "cap": a_full.sum(axis=1) - cfg.assoc_cap,
            "den_slack": _denoms(full, st, p) - w_lo,
            "rate_lo": t_all
            - c_pre
            * (self.k_const + self.k_amp * u_amp - self.k_quad * (u_amp**2 + w_lo)),
        }
        if self.finite_cap:
            w_dn = x[sl["w_dn"]]
            t_hat = x[sl["t_hat"]]
            s = (self.theta0 * full).sum(axis=1) - (self.theta0**2).sum(axis=1)
            v_lin = self.vlin_const + 2.0 * p * st.leak.T @ s
            upper = c_pre * (
                np.log(self.x0) + (u_amp**2 + w_dn) / self.x0 - 1.0 - np.log(w_dn)
            )
            n_uni = cfg.n_unicast
            t_hat_grp = st.group_mask.T @ t_hat
            load = fronthaul_load_surrogate(
                a_full[:, :n_uni],
                t_hat[:n_uni],
                a_full[:, n_uni:],
                t_hat_grp,
                self.a0[:, :n_uni],
                self.t_hat0[:n_uni],
                self.a0[:, n_uni:],
                self.t_hat0_grp,
            )
            out["slack_lin"] = w_dn - v_lin
            out["rate_hi"] = upper - t_hat
            out["fronthaul"] = load - cfg.fronthaul_cap
        return out

    def penalized(self, x, pen, mults):
        """Value and gradient of objective + augmented hinge penalties, where
        the active multiplier for family f is max(0, mults[f] + pen*h)."""
        cfg, st = self.cfg, self.st
        p = cfg.p_dl_norm
        c_pre = self.coeffs.prelog / LN2
        sl = self.slices()
        shape = self.theta0.shape
        full = x[sl["theta"]].reshape(shape)
        a_full = x[sl["a"]].reshape(shape)
        w_lo = x[sl["w_lo"]]
        u_amp = _amps(full, st, p)

        hv = self.hinge_values(x)
        val = self.objective(x)
        grad = self.objective_grad(x)
        act = {}
        for name, h in hv.items():
            lam_act = np.maximum(0.0, mults[name] + pen * h)
            act[name] = lam_act
            val += float((lam_act**2 - mults[name] ** 2).sum()) / (2.0 * pen)

        g_theta = np.zeros(shape)
        g_a = np.zeros(shape)
        g_wlo = np.zeros_like(w_lo)
        g_t = np.zeros_like(w_lo)

        m = act["mask"].reshape(shape)
        g_theta += 2.0 * m * full
        g_a -= m
        g_a -= act["coverage"][None, :]
        g_a += act["cap"][:, None]

        m = act["den_slack"]
        g_theta += 2.0 * p * full * (st.leak @ m)[:, None]
        g_wlo -= m

        m = act["rate_lo"]
        g_t += m
        amp_coef = -c_pre * m * (self.k_amp - 2.0 * self.k_quad * u_amp)
        g_theta += math.sqrt(p) * (st.amp * amp_coef[None, :]) @ st.scat
        g_wlo += c_pre * self.k_quad * m

        if self.finite_cap:
            w_dn = x[sl["w_dn"]]
            t_hat = x[sl["t_hat"]]
            g_wdn = np.zeros_like(w_dn)
            g_that = np.zeros_like(t_hat)

            m = act["slack_lin"]
            g_wdn += m
            g_theta -= 2.0 * p * self.theta0 * (st.leak @ m)[:, None]

            m = act["rate_hi"]
            amp_coef = c_pre * m * 2.0 * u_amp / self.x0
            g_theta += math.sqrt(p) * (st.amp * amp_coef[None, :]) @ st.scat
            g_wdn += c_pre * m * (1.0 / self.x0 - 1.0 / w_dn)
            g_that -= m

            m = act["fronthaul"]  # (N,)
            n_uni = cfg.n_unicast
            t_hat_grp = st.group_mask.T @ t_hat
            au, ag = a_full[:, :n_uni], a_full[:, n_uni:]
            d0u, d0g = self.d0_uni, self.d0_grp
            g_a[:, :n_uni] += 0.5 * m[:, None] * ((au + t_hat[None, :n_uni]) - d0u)
            g_a[:, n_uni:] += 0.5 * m[:, None] * ((ag + t_hat_grp[None, :]) - d0g)
            per_u = 0.5 * m[:, None] * ((au + t_hat[None, :n_uni]) + d0u)
            g_that[:n_uni] += per_u.sum(axis=0)
            per_g = 0.5 * m[:, None] * ((ag + t_hat_grp[None, :]) + d0g)
            g_that += st.group_mask @ per_g.sum(axis=0)

            grad[sl["w_dn"]] += g_wdn
            grad[sl["t_hat"]] += g_that

        grad[sl["theta"]] += g_theta.ravel()
        grad[sl["a"]] += g_a.ravel()
        grad[sl["w_lo"]] += g_wlo
        grad[sl["t"]] += g_t
        return val, grad

    def project(self, x: np.ndarray) -> np.ndarray:
        """Exact projection of the simple constraint blocks: nonnegative
        theta inside the per-AP ball, association box, slack floors, rate
        floors at the QoS levels."""
        out = x.copy()
        sl = self.slices()
        shape = self.theta0.shape
        full = np.maximum(out[sl["theta"]].reshape(shape), 0.0)
        radius = math.sqrt(self.coeffs.rho)
        norms = np.linalg.norm(full, axis=1, keepdims=True)
        scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        out[sl["theta"]] = (full * scale).ravel()
        out[sl["a"]] = np.clip(out[sl["a"]], 0.0, 1.0)
        out[sl["w_lo"]] = np.maximum(out[sl["w_lo"]], W_FLOOR)
        out[sl["t"]] = np.maximum(out[sl["t"]], self.st.qos)
        if self.finite_cap:
            out[sl["w_dn"]] = np.maximum(out[sl["w_dn"]], W_FLOOR)
            out[sl["t_hat"]] = np.maximum(out[sl["t_hat"]], 0.0)
        return out

    def max_violation(self, x: np.ndarray) -> float:
        worst = 0.0
        for h in self.hinge_values(x).values():
            if h.size:
                worst = max(worst, float(h.max()))
        return worst

    # -- reduced form (infinite fronthaul cap only) --
    #
    # The optimum pins every auxiliary variable: the objective increases in t
    # and only the concave rate minorant bounds it above, so t* equals the
    # minorant; the minorant decreases in w_lo and the denominator bounds it
    # below, so w_lo* = V(theta).  Substituting both leaves a problem in
    # (theta, a) alone with the same optimum, which the built-in backend
    # solves with far fewer and better-scaled variables.

    def reduced_pack(self, x: np.ndarray) -> np.ndarray:
        sl = self.slices()
        return np.concatenate([x[sl["theta"]], x[sl["a"]]])

    def reduced_expand(self, xr: np.ndarray) -> np.ndarray:
        ne = self.theta0.size
        full = xr[:ne].reshape(self.theta0.shape)
        return np.concatenate([
            xr[:ne],
            xr[ne:],
            _denoms(full, self.st, self.cfg.p_dl_norm),
            self.reduced_rate(full),
        ])

    def reduced_rate(self, full: np.ndarray) -> np.ndarray:
        """Concave rate minorant with the slack substituted out (w = V)."""
        p = self.cfg.p_dl_norm
        c_pre = self.coeffs.prelog / LN2
        u_amp = _amps(full, self.st, p)
        v_den = _denoms(full, self.st, p)
        return c_pre * (
            self.k_const + self.k_amp * u_amp - self.k_quad * (u_amp**2 + v_den)
        )

    def reduced_hinges(self, xr: np.ndarray) -> dict[str, np.ndarray]:
        ne = self.theta0.size
        shape = self.theta0.shape
        full = xr[:ne].reshape(shape)
        a_full = xr[ne:].reshape(shape)
        return {
            "mask": (full**2 - a_full).ravel(),
            "coverage": 1.0 - a_full.sum(axis=0),
            "cap": a_full.sum(axis=1) - self.cfg.assoc_cap,
            "qos": self.st.qos - self.reduced_rate(full),
        }

    def reduced_value_grad(self, xr, pen, mults):
        ne = self.theta0.size
        shape = self.theta0.shape
        full = xr[:ne].reshape(shape)
        a_full = xr[ne:].reshape(shape)
        st = self.st
        p = self.cfg.p_dl_norm
        c_pre = self.coeffs.prelog / LN2

        u_amp = _amps(full, st, p)
        v_den = _denoms(full, st, p)
        se = c_pre * (self.k_const + self.k_amp * u_amp - self.k_quad * (u_amp**2 + v_den))

        hv = {
            "mask": (full**2 - a_full).ravel(),
            "coverage": 1.0 - a_full.sum(axis=0),
            "cap": a_full.sum(axis=1) - self.cfg.assoc_cap,
            "qos": st.qos - se,
        }
        val = float(
            -(st.weight @ se) + self.lam * binariness_surrogate(a_full, self.a0).sum()
        )
        act = {}
        for name, h in hv.items():
            lam_act = np.maximum(0.0, mults[name] + pen * h)
            act[name] = lam_act
            val += float((lam_act**2 - mults[name] ** 2).sum()) / (2.0 * pen)

        # objective pulls rates up with its weights; the qos hinge adds the
        # active multipliers on top, through the identical rate gradient
        coef = -(st.weight + act["qos"])
        s = c_pre * coef * (self.k_amp - 2.0 * self.k_quad * u_amp)
        q = c_pre * coef * self.k_quad
        g_theta = math.sqrt(p) * (st.amp * s[None, :]) @ st.scat
        g_theta -= 2.0 * p * full * (st.leak @ q)[:, None]
        g_a = self.lam * (1.0 - 2.0 * self.a0)

        m = act["mask"].reshape(shape)
        g_theta += 2.0 * m * full
        g_a = g_a - m
        g_a = g_a - act["coverage"][None, :]
        g_a = g_a + act["cap"][:, None]
        return val, np.concatenate([g_theta.ravel(), g_a.ravel()])

    def reduced_project(self, xr: np.ndarray) -> np.ndarray:
        ne = self.theta0.size
        shape = self.theta0.shape
        full = np.maximum(xr[:ne].reshape(shape), 0.0)
        radius = math.sqrt(self.coeffs.rho)
        norms = np.linalg.norm(full, axis=1, keepdims=True)
        scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        return np.concatenate([
            (full * scale).ravel(),
            np.clip(xr[ne:], 0.0, 1.0),
        ])


def sca_surrogates(point: ScaPoint, coeffs: CoeffTable, cfg: SystemConfig) -> ScaSubproblem:
    """Freeze the convex subproblem at `point` (slacks assumed tight there)."""
    st = _build_stacks(coeffs, cfg)
    p = cfg.p_dl_norm
    theta0 = _theta_full(point.theta, point.theta_bar)
    a0 = _theta_full(point.a, point.a_bar)
    u0 = _amps(theta0, st, p)
    w0 = np.concatenate([point.w, *point.w_bar]) if point.w_bar else np.asarray(point.w)
    sinr0 = u0**2 / w0
    k_const = np.log1p(sinr0) - sinr0
    k_amp = 2.0 * u0 / w0
    k_quad = u0**2 / (w0 * (u0**2 + w0))
    finite = math.isfinite(cfg.fronthaul_cap)
    t_hat0 = (
        np.concatenate([point.t_hat, *point.t_hat_bar])
        if point.t_hat_bar
        else np.asarray(point.t_hat)
    )
    t_hat0_grp = st.group_mask.T @ t_hat0
    n_uni = cfg.n_unicast
    return ScaSubproblem(
        cfg=cfg,
        coeffs=coeffs,
        st=st,
        lam=point.lam,
        finite_cap=finite,
        theta0=theta0,
        a0=a0,
        u0=u0,
        w0=w0,
        t_hat0=t_hat0,
        k_const=k_const,
        k_amp=k_amp,
        k_quad=k_quad,
        x0=u0**2 + w0,
        vlin_const=_denoms(theta0, st, p),
        d0_uni=a0[:, :n_uni] - t_hat0[None, :n_uni],
        d0_grp=a0[:, n_uni:] - t_hat0_grp[None, :],
        t_hat0_grp=t_hat0_grp,
    )


# ---- subproblem backends ----

@dataclass(frozen=True)
class SubproblemSolution:
    x: np.ndarray
    objective: float
    grad_mapping_norm: float
    max_violation: float
    iterations: int


class SubproblemBackend:
    """Interface: minimize a frozen ScaSubproblem from a start vector."""

    def solve(self, sp: ScaSubproblem, x0: np.ndarray) -> SubproblemSolution:
        raise NotImplementedError


def _fista(value_grad, project, x, lip, tol, max_inner):
    """Monotone-restart FISTA with backtracking; returns (x, lip, iters)."""
    y = x.copy()
    x_prev = x.copy()
    f_prev = math.inf
    tk = 1.0
    it = 0
    for it in range(1, max_inner + 1):
        f_y, g_y = value_grad(y)
        while True:
            x_new = project(y - g_y / lip)
            diff = x_new - y
            f_new, _ = value_grad(x_new)
            quad = f_y + g_y @ diff + 0.5 * lip * (diff @ diff)
            if f_new <= quad + 1e-12 * max(1.0, abs(f_y)):
                break
            lip *= 2.0
            if lip > 1e18:
                break
        if lip * np.linalg.norm(x_new - y) <= tol * (1.0 + np.linalg.norm(x_new)):
            return x_new, lip, it
        if f_new > f_prev:  # momentum restart
            tk = 1.0
            y = x_new.copy()
        else:
            tk_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            y = x_new + ((tk - 1.0) / tk_next) * (x_new - x_prev)
            tk = tk_next
        x_prev = x_new
        f_prev = f_new
        lip = max(lip * 0.97, 1e-12)
    return x_prev, lip, it


@dataclass
class PenaltyApgBackend(SubproblemBackend):
    """Built-in backend: an augmented Lagrangian over the surrogate hinge
    constraints, each inner minimization an accelerated projected gradient
    run.  Inner tolerances start loose and tighten with the dual residual,
    and the penalty grows only while feasibility stalls.

    With an infinite fronthaul cap the epigraph variables are eliminated
    (see ScaSubproblem.reduced_*) and the loop runs over (theta, a) alone;
    finite caps keep the full variable stack.

    The instance keeps the last multipliers, penalty, and curvature estimate
    and reuses them when the next subproblem has the same shape; consecutive
    expansions barely move, so a warm solve needs only a short correction."""

    feas_tol: float = 1e-8
    feas_accept: float = 1e-6
    gm_tol: float = 3e-4
    max_inner: int = 600
    max_rounds: int = 20
    penalty0: float = 100.0
    penalty_growth: float = 3.0
    penalty_cap: float = 1e3

    def __post_init__(self):
        self._warm = None

    def solve(self, sp: ScaSubproblem, x0: np.ndarray) -> SubproblemSolution:
        x0 = np.asarray(x0, dtype=float)
        if sp.finite_cap:
            value_grad = sp.penalized
            hinges = sp.hinge_values
            project = sp.project
            expand = lambda x: x  # noqa: E731
            x = project(x0)
        else:
            value_grad = sp.reduced_value_grad
            hinges = sp.reduced_hinges
            project = sp.reduced_project
            expand = sp.reduced_expand
            x = project(sp.reduced_pack(x0))

        shapes = {k: v.shape for k, v in hinges(x).items()}
        mults = {k: np.zeros(s) for k, s in shapes.items()}
        pen = self.penalty0
        lip = 1.0
        if self._warm is not None:
            w_mults, w_pen, w_lip, w_shapes = self._warm
            if w_shapes == shapes:
                mults = {k: v.copy() for k, v in w_mults.items()}
                pen, lip = w_pen, w_lip

        total_iters = 0
        prev_res = math.inf
        prev_gm = math.inf
        res = math.inf
        gm = math.inf
        stall = 0
        tol = 1e-3
        floor = 0.3 * self.gm_tol
        for _ in range(self.max_rounds):
            vg = lambda v: value_grad(v, pen, mults)  # noqa: E731
            x, lip, iters = _fista(vg, project, x, lip, max(tol, floor), self.max_inner)
            total_iters += iters
            hv = hinges(x)
            res = max((float(h.max()) for h in hv.values() if h.size), default=0.0)
            for name, h in hv.items():
                mults[name] = np.maximum(0.0, mults[name] + pen * h)
            # stationarity of the Lagrangian at the updated multipliers; the
            # dual step leaves the augmented gradient equal to the plain one
            _, grad = value_grad(x, pen, mults)
            gm = float(np.linalg.norm(x - project(x - grad)))
            if res <= self.feas_tol and gm <= self.gm_tol * (1.0 + np.linalg.norm(x)):
                break
            if res <= self.feas_tol:
                # feasible but stationarity lagging: tighten, and stop once
                # the mapping norm hits the active-set conditioning floor
                stall = stall + 1 if gm > 0.5 * prev_gm else 0
                if stall >= 2:
                    break
                floor *= 0.2
            elif res > 0.5 * prev_res:
                pen = min(pen * self.penalty_growth, self.penalty_cap)
                lip *= self.penalty_growth
            prev_res = min(prev_res, res)
            prev_gm = min(prev_gm, gm)
            tol *= 0.2
        if res > self.feas_accept:
            raise SubproblemInfeasible(
                f"constraint residual {res:.3e} after penalty escalation"
            )
        self._warm = ({k: v.copy() for k, v in mults.items()}, pen, lip, shapes)
        x_full = expand(x)
        return SubproblemSolution(
            x=x_full,
            objective=sp.objective(x_full),
            grad_mapping_norm=gm,
            max_violation=res,
            iterations=total_iters,
        )


class CvxpyBackend(SubproblemBackend):
    """Optional conic backend; requires the cvxpy package.

    Keyword arguments are forwarded to ``Problem.solve`` so callers can pin
    a solver and its tolerances; the defaults are too loose to serve as a
    reference for anything below ~1e-4.
    """

    def __init__(self, **solve_kwargs):
        self.solve_kwargs = dict(solve_kwargs)

    def solve(self, sp: ScaSubproblem, x0: np.ndarray) -> SubproblemSolution:
        import cvxpy as cp

        cfg, st = sp.cfg, sp.st
        p = cfg.p_dl_norm
        c_pre = sp.coeffs.prelog / LN2
        n_ap, ents = sp.theta0.shape
        n_t = sp.n_targets
        n_uni = cfg.n_unicast

        theta = cp.Variable((n_ap, ents), nonneg=True)
        a_full = cp.Variable((n_ap, ents))
        w_lo = cp.Variable(n_t)
        t_all = cp.Variable(n_t)
        load = cp.sum(cp.square(theta), axis=1)
        u_amp = math.sqrt(p) * cp.sum(cp.multiply(st.amp, theta[:, st.col_map]), axis=0)
        cons = [
            cp.sum(cp.square(theta), axis=1) <= sp.coeffs.rho,
            a_full >= 0,
            a_full <= 1,
            cp.square(theta) <= a_full,
            cp.sum(a_full, axis=0) >= 1,
            cp.sum(a_full, axis=1) <= cfg.assoc_cap,
            t_all >= st.qos,
            1.0 + p * (st.leak.T @ load) <= w_lo,
            w_lo >= W_FLOOR,
            t_all
            <= c_pre
            * (sp.k_const + cp.multiply(sp.k_amp, u_amp)
               - cp.multiply(sp.k_quad, cp.square(u_amp) + w_lo)),
        ]
        obj = -(st.weight @ t_all) + sp.lam * cp.sum(
            cp.multiply(1.0 - 2.0 * sp.a0, a_full) + sp.a0**2
        )
        if sp.finite_cap:
            w_dn = cp.Variable(n_t)
            t_hat = cp.Variable(n_t, nonneg=True)
            s_lin = cp.sum(cp.multiply(sp.theta0, theta), axis=1) - (sp.theta0**2).sum(axis=1)
            cons += [
                w_dn >= W_FLOOR,
                w_dn <= sp.vlin_const + 2.0 * p * (st.leak.T @ s_lin),
                c_pre
                * (np.log(sp.x0) + (cp.square(u_amp) + w_dn) / sp.x0 - 1.0 - cp.log(w_dn))
                <= t_hat,
            ]
            t_hat_grp = st.group_mask.T @ t_hat
            for n in range(n_ap):
                du = a_full[n, :n_uni] - t_hat[:n_uni]
                dg = a_full[n, n_uni:] - t_hat_grp
                expr = cp.sum_squares(a_full[n, :n_uni] + t_hat[:n_uni]) + cp.sum_squares(
                    a_full[n, n_uni:] + t_hat_grp
                )
                expr += cp.sum(cp.multiply(-2.0 * sp.d0_uni[n], du)) + (sp.d0_uni[n] ** 2).sum()
                expr += cp.sum(cp.multiply(-2.0 * sp.d0_grp[n], dg)) + (sp.d0_grp[n] ** 2).sum()
                cons.append(0.25 * expr <= cfg.fronthaul_cap)
        prob = cp.Problem(cp.Minimize(obj), cons)
        prob.solve(**self.solve_kwargs)
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise SubproblemInfeasible(f"conic backend status {prob.status}")
        parts = [theta.value.ravel(), a_full.value.ravel(), w_lo.value, t_all.value]
        if sp.finite_cap:
            parts += [w_dn.value, t_hat.value]
        x = np.concatenate(parts)
        x = sp.project(x)
        return SubproblemSolution(
            x=x,
            objective=sp.objective(x),
            grad_mapping_norm=math.nan,
            max_violation=sp.max_violation(x),
            iterations=int(prob.solver_stats.num_iters or 0)
            if prob.solver_stats
            else 0,
        )


def solve_subproblem(
    sp: ScaSubproblem,
    start: ScaPoint | None = None,
    backend: SubproblemBackend | None = None,
) -> ScaPoint:
    """One convex step: minimize the frozen subproblem, return the next
    iterate with its denominator slack re-tightened."""
    if backend is None:
        backend = PenaltyApgBackend()
    if start is None:
        x0 = sp.pack(
            ScaPoint(
                theta=sp.theta0[:, : sp.cfg.n_unicast],
                theta_bar=sp.theta0[:, sp.cfg.n_unicast :],
                a=sp.a0[:, : sp.cfg.n_unicast],
                a_bar=sp.a0[:, sp.cfg.n_unicast :],
                w=_regroup(sp.w0, sp.cfg)[0],
                w_bar=_regroup(sp.w0, sp.cfg)[1],
                t=_regroup(np.maximum(sp.st.qos, 0.0), sp.cfg)[0],
                t_bar=_regroup(np.maximum(sp.st.qos, 0.0), sp.cfg)[1],
                t_hat=_regroup(sp.t_hat0, sp.cfg)[0],
                t_hat_bar=_regroup(sp.t_hat0, sp.cfg)[1],
                lam=sp.lam,
            )
        )
    else:
        x0 = sp.pack(start)
    sol = backend.solve(sp, x0)
    return sp.unpack(sol.x)


# ---- outer loop ----

def masked_equal_init(cfg: SystemConfig, coeffs: CoeffTable) -> DecisionVars:
    """Full association with the per-AP budget split equally across entities,
    capped at 1 so the starting point satisfies theta^2 <= a <= 1.  The cap
    only binds when rho exceeds the entity count (zero-forcing with many
    excess antennas); the surplus is better left unspent than infeasible."""
    val = min(math.sqrt(coeffs.rho / cfg.n_entities), 1.0)
    return DecisionVars(
        theta=np.full((cfg.n_aps, cfg.n_unicast), val),
        theta_bar=np.full((cfg.n_aps, cfg.n_groups), val),
        z=np.ones((cfg.n_aps, cfg.n_unicast)),
        z_bar=np.ones((cfg.n_aps, cfg.n_groups)),
        precoder=coeffs.precoder,
    )


def _strict_backend() -> PenaltyApgBackend:
    """Cold, tight backend for second opinions on stalled or non-monotone
    subproblem solves."""
    return PenaltyApgBackend(gm_tol=1e-7, max_inner=3000, max_rounds=25)


@dataclass(frozen=True)
class ScaOptions:
    lam: float = 10.0
    outer_eps: float = 1e-4
    max_outer: int = 100
    lam_residual: float = 1e-3
    max_lam_rounds: int = 8
    monotone_slack: float = 1e-8


def sca_solve(
    cfg: SystemConfig,
    coeffs: CoeffTable,
    init: DecisionVars | ScaPoint | None = None,
    opts: ScaOptions | None = None,
    backend: SubproblemBackend | None = None,
    trace_out: list | None = None,
) -> SolutionReport:
    """Iterate surrogate construction and convex solves until the objective
    settles, escalating the binariness multiplier if the relaxed association
    has not collapsed to near-binary; round and repair the final point."""
    if opts is None:
        opts = ScaOptions()
    if backend is None:
        backend = PenaltyApgBackend()
    if init is None:
        init = masked_equal_init(cfg, coeffs)
    if isinstance(init, ScaPoint):
        point = init
    else:
        point = sca_point_from_vars(init, cfg, coeffs, lam=opts.lam)

    # the epigraph rates of the seed are its achieved rates, so this is the
    # QoS part of the starting-point precondition; anything worse than the
    # feasibility slack means the floors themselves are out of reach here
    se0 = np.concatenate([point.t, *point.t_bar]) if point.t_bar else np.asarray(point.t)
    floors = np.concatenate(
        [
            np.full(cfg.n_unicast, cfg.se_qos_unicast),
            np.full(cfg.n_multicast_users, cfg.se_qos_multicast),
        ]
    )
    floor_gap = float(np.max(floors - se0, initial=0.0))
    if floor_gap > 1e-6:
        raise SubproblemInfeasible(
            f"rate floors unmet by {floor_gap:.3e} at the starting point"
        )

    g_curr = true_objective(point, cfg)
    if trace_out is not None:
        trace_out.append((0, point.lam, g_curr))
    lam_rounds = 0
    iters = 0
    for _ in range(opts.max_outer):
        sp = sca_surrogates(point, coeffs, cfg)
        try:
            try:
                nxt = solve_subproblem(sp, start=point, backend=backend)
            except SubproblemInfeasible:
                # the warm loop can stall just short of the feasibility slack
                # on a stiff expansion; one cold, tight solve settles whether
                # the subproblem is actually out of reach
                nxt = solve_subproblem(sp, start=point, backend=_strict_backend())
            g_next = true_objective(nxt, cfg)
            iters += 1
            if g_next > g_curr + opts.monotone_slack:
                # an exact convex step cannot regress; re-solve cold and tight
                # before concluding the expansion is a fixed point
                nxt = solve_subproblem(sp, start=point, backend=_strict_backend())
                g_next = true_objective(nxt, cfg)
        except SubproblemInfeasible:
            if iters == 0:
                raise
            # a late subproblem stalling numerically ends refinement; the
            # last accepted iterate is feasible and is what gets rounded
            break
        if g_next > g_curr + opts.monotone_slack:
            break
        converged = abs(g_next - g_curr) <= opts.outer_eps * max(1.0, abs(g_next))
        point, g_curr = nxt, g_next
        if trace_out is not None:
            trace_out.append((iters, point.lam, g_curr))
        if converged:
            if (
                binariness_residual(point) > opts.lam_residual
                and lam_rounds < opts.max_lam_rounds
            ):
                # association not binary enough: raise the multiplier and
                # keep iterating, with the objective rebased to the new lam
                lam_rounds += 1
                point = replace(point, lam=point.lam * 2.0)
                g_curr = true_objective(point, cfg)
                continue
            break

    dv = DecisionVars(
        theta=point.theta,
        theta_bar=point.theta_bar,
        z=point.a,
        z_bar=point.a_bar,
        precoder=coeffs.precoder,
    )
    return report_from_vars(dv, cfg, coeffs, iters=iters, final_g=g_curr)
