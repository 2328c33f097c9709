"""Joint AP association and power allocation by accelerated projected gradient.

The binary association is relaxed through auxiliary z variables (z^2 plays the
role of the association flag) and every coupling constraint is moved into a
smooth penalty. What remains is a box/ball-constrained minimization whose
projection has a closed form per AP, solved with a nonmonotone APG loop:
extrapolated steps are accepted against a relaxed envelope of past values, and
rejected steps fall back to a plain projected-gradient correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import SystemConfig
from .rates import (
    CoeffTable,
    DecisionVars,
    RateReport,
    epa_power,
    full_association,
    se_and_sse,
    theta_from_power,
)

LN2 = np.log(2.0)

FEAS_TOL = 1e-9  # how far an init may sit outside the feasible set
RESIDUAL_TOL = 1e-3  # rounded-solution residual triggering a penalty restart


class InfeasibleStartError(ValueError):
    """Initial point violates the projection set beyond tolerance."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights and APG loop controls.

    mu weighs the four penalty groups (QoS, binariness, coverage+masking,
    fronthaul); X scales them all. alpha_bar/alpha are the extrapolated and
    correction step sizes; None means estimate 1/L from the local gradient
    Lipschitz constant at the start. nu in [0,1) controls how nonmonotone the
    acceptance envelope is.
    """

    mu: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    X: float = 100.0
    alpha_bar: float | None = None
    alpha: float | None = None
    nu: float = 0.5
    epsilon: float = 1e-4
    max_iters: int = 5000


@dataclass
class OptimizerState:
    """APG loop state; vartheta is the stacked (theta, z) vector.

    All stored points lie in the projection set. g_history[o] is the penalty
    value of the accepted iterate at iteration o; f_history tracks the
    unpenalized objective (negative weighted sum SE).
    """

    vartheta: np.ndarray
    vartheta_tilde: np.ndarray
    vartheta_prev: np.ndarray
    q_prev: float
    q: float
    b: float
    c: float
    iter: int
    g_history: list[float] = field(default_factory=list)
    f_history: list[float] = field(default_factory=list)
    best_vartheta: np.ndarray | None = None
    best_g: float = math.inf
    alpha_bar: float = 0.0
    alpha: float = 0.0
    restarts: int = 0
    penalty: PenaltyConfig | None = None


# ---- packing ----

def pack_vars(dv: DecisionVars) -> np.ndarray:
    """Stack per-AP rows [theta_u.., theta_bar_m..] then the z mirror."""
    theta_part = np.hstack([dv.theta, dv.theta_bar]).ravel()
    z_part = np.hstack([dv.z, dv.z_bar]).ravel()
    return np.concatenate([theta_part, z_part])


def unpack_vars(vartheta: np.ndarray, cfg: SystemConfig, precoder: str) -> DecisionVars:
    n, u, m = cfg.n_aps, cfg.n_unicast, cfg.n_groups
    e = u + m
    theta_part = vartheta[: n * e].reshape(n, e)
    z_part = vartheta[n * e :].reshape(n, e)
    return DecisionVars(
        theta=theta_part[:, :u],
        theta_bar=theta_part[:, u:],
        z=z_part[:, :u],
        z_bar=z_part[:, u:],
        precoder=precoder,
    )


# ---- projection ----

def project(r: np.ndarray, cfg: SystemConfig, coeffs: CoeffTable) -> np.ndarray:
    """Per-AP projection: theta rows onto the nonnegative rho-ball, z rows
    onto the nonnegative cap-ball intersected with the unit box."""
    n, e = cfg.n_aps, cfg.n_entities
    theta_part = np.maximum(r[: n * e].reshape(n, e), 0.0)
    z_part = np.maximum(r[n * e :].reshape(n, e), 0.0)

    sq_rho = np.sqrt(coeffs.rho)
    norms = np.linalg.norm(theta_part, axis=1)
    theta_part = theta_part * (sq_rho / np.maximum(sq_rho, norms))[:, None]

    sq_cap = np.sqrt(float(cfg.assoc_cap))
    z_norms = np.linalg.norm(z_part, axis=1)
    z_part = z_part * (sq_cap / np.maximum(sq_cap, z_norms))[:, None]
    z_part = np.minimum(z_part, 1.0)

    return np.concatenate([theta_part.ravel(), z_part.ravel()])


# ---- penalty objective ----

@dataclass(frozen=True)
class _Stacked:
    """Coefficients flattened across all SE targets (unicast users first,
    then every multicast member) so value and gradient are plain matrix
    work; scat sums target quantities back onto their entity column."""

    lam: np.ndarray  # (N, T) coherent amplitude coefficients
    gain: np.ndarray  # (N, T) interference coefficients
    scat: np.ndarray  # (T, E) one-hot target -> entity
    col: np.ndarray  # (T,) entity column feeding each target
    weight: np.ndarray  # (T,) objective weights
    qos: np.ndarray  # (T,) SE floors
    prelog: float


def _stack_coeffs(cfg: SystemConfig, coeffs: CoeffTable) -> _Stacked:
    lam = np.hstack([coeffs.Lambda, *coeffs.Lambda_bar])
    gain = np.hstack([coeffs.Theta, *coeffs.Theta_bar])
    u = cfg.n_unicast
    cols = list(range(u))
    for m, k_m in enumerate(cfg.group_sizes):
        cols.extend([u + m] * k_m)
    col = np.asarray(cols, dtype=int)
    scat = np.zeros((col.size, cfg.n_entities))
    scat[np.arange(col.size), col] = 1.0
    n_mult = col.size - u
    weight = np.concatenate([np.full(u, cfg.w1), np.full(n_mult, cfg.w2)])
    qos = np.concatenate(
        [np.full(u, cfg.se_qos_unicast), np.full(n_mult, cfg.se_qos_multicast)]
    )
    return _Stacked(
        lam=lam, gain=gain, scat=scat, col=col, weight=weight, qos=qos,
        prelog=coeffs.prelog,
    )


def _eval_stacked(v, stk: _Stacked, cfg: SystemConfig, pen) -> tuple[float, float]:
    """Penalty value and the unpenalized weighted sum SE in one pass."""
    n, e = cfg.n_aps, cfg.n_entities
    ne = n * e
    th = v[:ne].reshape(n, e)
    z = v[ne:].reshape(n, e)
    p = cfg.p_dl_norm

    load = (th * th).sum(axis=1)
    amp = (stk.lam * th[:, stk.col]).sum(axis=0)
    sig = p * amp * amp
    vden = p * (load @ stk.gain) + 1.0
    se = stk.prelog * np.log1p(sig / vden) / LN2
    sse = float(stk.weight @ se)

    qos_h = np.maximum(0.0, stk.qos - se)
    c1 = float(qos_h @ qos_h)
    z2 = z * z
    c2 = float((z2 - z2 * z2).sum())
    cover = np.maximum(0.0, 1.0 - z2.sum(axis=0))
    mask = np.maximum(0.0, th * th - z2)
    c3 = float(cover @ cover + (mask * mask).sum())
    if math.isfinite(cfg.fronthaul_cap):
        over = np.maximum(0.0, z2 @ (se @ stk.scat) - cfg.fronthaul_cap)
        c4 = float(over @ over)
    else:
        c4 = 0.0
    mu = pen.mu
    g = -sse + pen.X * (mu[0] * c1 + mu[1] * c2 + mu[2] * c3 + mu[3] * c4)
    return float(g), sse


def _grad_stacked(v, stk: _Stacked, cfg: SystemConfig, pen) -> np.ndarray:
    n, e = cfg.n_aps, cfg.n_entities
    ne = n * e
    th = v[:ne].reshape(n, e)
    z = v[ne:].reshape(n, e)
    p = cfg.p_dl_norm
    x = pen.X
    mu1, mu2, mu3, mu4 = pen.mu
    c0 = 2.0 * p * stk.prelog / LN2

    load = (th * th).sum(axis=1)
    amp = (stk.lam * th[:, stk.col]).sum(axis=0)
    sig = p * amp * amp
    vden = p * (load @ stk.gain) + 1.0
    se = stk.prelog * np.log1p(sig / vden) / LN2
    qos_h = np.maximum(0.0, stk.qos - se)
    z2 = z * z
    cover = np.maximum(0.0, 1.0 - z2.sum(axis=0))
    mask = np.maximum(0.0, th * th - z2)

    # d(g)/d(SE_t): objective weight, QoS hinge, and the fronthaul hinge of
    # every AP that carries target t with weight z^2
    kappa = -stk.weight - 2.0 * x * mu1 * qos_h
    finite = math.isfinite(cfg.fronthaul_cap)
    if finite:
        se_ent = se @ stk.scat
        over = np.maximum(0.0, z2 @ se_ent - cfg.fronthaul_cap)
        kappa = kappa + 2.0 * x * mu4 * (over @ z2)[stk.col]

    inv_tot = 1.0 / (sig + vden)
    inv_v = 1.0 / vden
    # interference chain: every theta at AP n feeds every target through load
    w_ap = stk.gain @ (kappa * (inv_tot - inv_v))
    grad_th = c0 * (
        (stk.lam * (kappa * amp * inv_tot)[None, :]) @ stk.scat
        + th * w_ap[:, None]
    )
    grad_th += 4.0 * x * mu3 * mask * th

    grad_z = x * mu2 * (2.0 * z - 4.0 * z * z2)
    grad_z -= 4.0 * x * mu3 * cover[None, :] * z
    grad_z -= 4.0 * x * mu3 * mask * z
    if finite:
        grad_z += 4.0 * x * mu4 * over[:, None] * z * se_ent[None, :]
    return np.concatenate([grad_th.ravel(), grad_z.ravel()])


def penalty_value(vartheta, coeffs: CoeffTable, cfg: SystemConfig, pen: PenaltyConfig) -> float:
    """Penalized objective: negative weighted sum SE plus weighted penalties."""
    return _eval_stacked(vartheta, _stack_coeffs(cfg, coeffs), cfg, pen)[0]


def penalty_gradient(
    vartheta, coeffs: CoeffTable, cfg: SystemConfig, pen: PenaltyConfig
) -> np.ndarray:
    """Analytic gradient of penalty_value; same packing as the input vector.

    The chain through the SE terms collapses into one per-AP weight W so the
    cost stays linear in N times entities squared.
    """
    return _grad_stacked(vartheta, _stack_coeffs(cfg, coeffs), cfg, pen)


# ---- step-size estimation ----

def estimate_lipschitz(
    vartheta: np.ndarray,
    coeffs: CoeffTable,
    cfg: SystemConfig,
    pen: PenaltyConfig,
    rng: np.random.Generator,
    iters: int = 8,
) -> float:
    """Power iteration on finite-difference Hessian-vector products."""
    stk = _stack_coeffs(cfg, coeffs)
    g0 = _grad_stacked(vartheta, stk, cfg, pen)
    d = rng.standard_normal(vartheta.size)
    d /= np.linalg.norm(d)
    t = 1e-5 * max(1.0, np.linalg.norm(vartheta))
    lip = 1e-6
    for _ in range(iters):
        g1 = _grad_stacked(vartheta + t * d, stk, cfg, pen)
        hd = (g1 - g0) / t
        size = np.linalg.norm(hd)
        lip = max(lip, size)
        if size < 1e-12:
            break
        d = hd / size
    return lip


# ---- initialization ----

def default_init(cfg: SystemConfig, coeffs: CoeffTable, stats) -> np.ndarray:
    """All associations on, equal power per entity at each AP, z = 1."""
    a, a_bar = full_association(cfg)
    ap = epa_power(a, a_bar, stats, cfg, coeffs.precoder)
    dv = theta_from_power(ap, stats, coeffs.precoder)
    return project(pack_vars(dv), cfg, coeffs)


# ---- solver ----

def _check_start(init, cfg, coeffs):
    gap = np.linalg.norm(project(init, cfg, coeffs) - init)
    if gap > FEAS_TOL:
        raise InfeasibleStartError(f"init is {gap:.2e} outside the feasible set")


def _apg_inner(cfg, coeffs, pen, v0, alpha_bar, alpha, freeze_z, state):
    n_theta = cfg.n_aps * cfg.n_entities
    z0 = v0[n_theta:].copy()
    stk = _stack_coeffs(cfg, coeffs)

    def proj(r):
        out = project(r, cfg, coeffs)
        if freeze_z:
            out[n_theta:] = z0
        return out

    def grad(v):
        g = _grad_stacked(v, stk, cfg, pen)
        if freeze_z:
            g[n_theta:] = 0.0
        return g

    def evaluate(v):
        return _eval_stacked(v, stk, cfg, pen)

    v = v_tilde = v_prev = v0
    q_prev, q = 0.0, 1.0
    g_v, f_v = evaluate(v)
    b, c = 1.0, g_v
    state.g_history.append(g_v)
    state.f_history.append(-f_v)
    if g_v < state.best_g:
        state.best_g, state.best_vartheta = g_v, v.copy()

    for _ in range(pen.max_iters):
        state.iter += 1
        g_curr = state.g_history[-1]

        v_bar = v + (q_prev / q) * (v_tilde - v) + ((q_prev - 1.0) / q) * (v - v_prev)
        v_tilde_next = proj(v_bar - alpha_bar * grad(v_bar))
        g_tilde, f_tilde = evaluate(v_tilde_next)

        if g_tilde <= c - pen.nu * float(np.dot(v_tilde_next - v_bar, v_tilde_next - v_bar)):
            v_next, g_next, f_next = v_tilde_next, g_tilde, f_tilde
        else:
            step = alpha
            grad_v = grad(v)
            v_hat = proj(v - step * grad_v)
            g_hat, f_hat = evaluate(v_hat)
            for _ in range(20):
                if g_hat <= g_curr:
                    break
                step *= 0.5
                v_hat = proj(v - step * grad_v)
                g_hat, f_hat = evaluate(v_hat)
            if g_tilde <= g_hat:
                v_next, g_next, f_next = v_tilde_next, g_tilde, f_tilde
            else:
                v_next, g_next, f_next = v_hat, g_hat, f_hat

        q_next = 0.5 * (1.0 + math.sqrt(4.0 * q * q + 1.0))
        b_next = pen.nu * b + 1.0
        c = (pen.nu * b * c + g_curr) / b_next
        b = b_next

        v_prev, v, v_tilde = v, v_next, v_tilde_next
        q_prev, q = q, q_next
        state.g_history.append(g_next)
        state.f_history.append(-f_next)
        if g_next < state.best_g:
            state.best_g, state.best_vartheta = g_next, v_next.copy()

        hist = state.g_history
        fh = state.f_history
        window = 10
        if len(hist) > window:
            dg = abs(hist[-1] - hist[-1 - window])
            df = abs(fh[-1] - fh[-1 - window])
            if dg <= pen.epsilon * max(1.0, abs(hist[-1])) and df <= pen.epsilon * max(
                1.0, abs(fh[-1])
            ):
                break

    state.vartheta = v
    state.vartheta_tilde = v_tilde
    state.vartheta_prev = v_prev
    state.q_prev, state.q = q_prev, q
    state.b, state.c = b, c
    return state


def apg_solve(
    cfg: SystemConfig,
    coeffs: CoeffTable,
    pen: PenaltyConfig | None = None,
    init: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    freeze_z: bool = False,
    stats=None,
) -> OptimizerState:
    """Run the penalized APG solve, escalating the penalty scale if needed.

    init must lie in the projection set (within 1e-9). When the rounded
    solution still carries residuals above 1e-3, the penalty scale X doubles
    (up to 3 times) and the solve restarts warm from the incumbent. Returns
    the state with vartheta set to the best-penalty iterate seen.
    """
    if pen is None:
        pen = PenaltyConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if init is None:
        if stats is None:
            raise ValueError("need either an explicit init or stats to build one")
        init = default_init(cfg, coeffs, stats)
    _check_start(init, cfg, coeffs)
    v0 = project(init, cfg, coeffs)

    state = OptimizerState(
        vartheta=v0,
        vartheta_tilde=v0,
        vartheta_prev=v0,
        q_prev=0.0,
        q=1.0,
        b=1.0,
        c=0.0,
        iter=0,
    )

    for attempt in range(4):
        pen_used = replace(pen, X=pen.X * (2.0**attempt))
        if pen.alpha_bar is None or pen.alpha is None:
            lip = estimate_lipschitz(v0, coeffs, cfg, pen_used, rng)
            alpha_bar = pen.alpha_bar if pen.alpha_bar is not None else 1.0 / lip
            alpha = pen.alpha if pen.alpha is not None else 1.0 / lip
        else:
            alpha_bar, alpha = pen.alpha_bar, pen.alpha
        state.alpha_bar, state.alpha = alpha_bar, alpha
        state.penalty = pen_used
        # best-g values from a smaller X are not comparable; rescore per attempt
        state.best_g = math.inf
        state.best_vartheta = None
        state = _apg_inner(cfg, coeffs, pen_used, v0, alpha_bar, alpha, freeze_z, state)

        report = extract_solution(state, cfg, coeffs)
        if report.max_residual <= RESIDUAL_TOL:
            break
        v0 = state.best_vartheta.copy()
        state.restarts += 1

    state.vartheta = state.best_vartheta.copy()
    return state


# ---- rounding, repair, reporting ----

@dataclass(frozen=True)
class SolutionReport:
    """Rounded association + power with recomputed rates and residuals.

    residuals keys: qos, nonneg, power, fronthaul, coverage, cap. Each is the
    worst violation of the corresponding hard constraint at the rounded point.
    """

    dv: DecisionVars
    association: np.ndarray  # (N, U+M) binary
    rates: RateReport
    residuals: dict[str, float]
    qos_infeasible: bool
    iters: int
    final_g: float

    @property
    def sse(self) -> float:
        return self.rates.sse

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def min_user_se(self) -> float:
        parts = [self.rates.se_unicast.min()] if self.rates.se_unicast.size else []
        parts += [s.min() for s in self.rates.se_multicast if s.size]
        return float(min(parts)) if parts else 0.0

    def association_text(self) -> str:
        """Row per AP, unicast columns then group columns."""
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.association)


def round_and_repair(
    dv: DecisionVars, cfg: SystemConfig, coeffs: CoeffTable
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Threshold z at 0.5 into a binary association, then repair coverage and
    per-AP cap violations; returns (a, a_bar, theta, theta_bar)."""
    a = (dv.z >= 0.5).astype(int)
    a_bar = (dv.z_bar >= 0.5).astype(int)
    theta = dv.theta.copy()
    theta_bar = dv.theta_bar.copy()

    # coverage: every user and group needs at least one serving AP
    for u in range(cfg.n_unicast):
        if a[:, u].sum() == 0:
            a[int(np.argmax(theta[:, u])), u] = 1
    for m in range(cfg.n_groups):
        if a_bar[:, m].sum() == 0:
            a_bar[int(np.argmax(theta_bar[:, m])), m] = 1

    # cap: keep only the strongest assoc_cap entities per AP
    theta_all = np.hstack([theta, theta_bar])
    assoc_all = np.hstack([a, a_bar])
    for n in range(cfg.n_aps):
        served = np.flatnonzero(assoc_all[n])
        if served.size > cfg.assoc_cap:
            order = served[np.argsort(theta_all[n, served])]
            assoc_all[n, order[: served.size - cfg.assoc_cap]] = 0
    a = assoc_all[:, : cfg.n_unicast]
    a_bar = assoc_all[:, cfg.n_unicast :]

    theta = theta * a
    theta_bar = theta_bar * a_bar
    return a, a_bar, theta, theta_bar


def _residuals(a, a_bar, rates: RateReport, dv: DecisionVars, cfg, coeffs):
    res = {}
    qos_gap = 0.0
    if rates.se_unicast.size:
        qos_gap = max(qos_gap, float(np.max(cfg.se_qos_unicast - rates.se_unicast)))
    for s in rates.se_multicast:
        if s.size:
            qos_gap = max(qos_gap, float(np.max(cfg.se_qos_multicast - s)))
    res["qos"] = max(0.0, qos_gap)

    res["nonneg"] = max(
        0.0,
        float(-min(dv.theta.min(initial=0.0), dv.theta_bar.min(initial=0.0))),
    )

    ball = (dv.theta**2).sum(axis=1) + (dv.theta_bar**2).sum(axis=1)
    res["power"] = max(0.0, float(np.max(ball - coeffs.rho)))

    consumption = a @ rates.se_unicast if rates.se_unicast.size else np.zeros(cfg.n_aps)
    for m in range(cfg.n_groups):
        consumption = consumption + a_bar[:, m] * rates.se_multicast[m].sum()
    if np.isfinite(cfg.fronthaul_cap):
        res["fronthaul"] = max(0.0, float(np.max(consumption - cfg.fronthaul_cap)))
    else:
        res["fronthaul"] = 0.0

    counts = np.concatenate([a.sum(axis=0), a_bar.sum(axis=0)])
    res["coverage"] = max(0.0, float(np.max(1 - counts))) if counts.size else 0.0

    per_ap = a.sum(axis=1) + a_bar.sum(axis=1)
    res["cap"] = max(0.0, float(np.max(per_ap - cfg.assoc_cap)))
    return res


def report_from_vars(
    dv: DecisionVars,
    cfg: SystemConfig,
    coeffs: CoeffTable,
    iters: int = 0,
    final_g: float = math.nan,
) -> SolutionReport:
    """Round, repair, re-project the power onto the ball, and re-score."""
    a, a_bar, theta, theta_bar = round_and_repair(dv, cfg, coeffs)
    rounded = DecisionVars(
        theta=theta,
        theta_bar=theta_bar,
        z=a.astype(float),
        z_bar=a_bar.astype(float),
        precoder=dv.precoder,
    )
    packed = project(pack_vars(rounded), cfg, coeffs)
    rounded = unpack_vars(packed, cfg, dv.precoder)
    rounded = DecisionVars(
        theta=rounded.theta,
        theta_bar=rounded.theta_bar,
        z=a.astype(float),
        z_bar=a_bar.astype(float),
        precoder=dv.precoder,
    )
    rates = se_and_sse(rounded, coeffs, cfg)
    residuals = _residuals(a, a_bar, rates, rounded, cfg, coeffs)
    return SolutionReport(
        dv=rounded,
        association=np.hstack([a, a_bar]),
        rates=rates,
        residuals=residuals,
        qos_infeasible=residuals["qos"] > RESIDUAL_TOL,
        iters=iters,
        final_g=final_g,
    )


def extract_solution(
    state: OptimizerState, cfg: SystemConfig, coeffs: CoeffTable
) -> SolutionReport:
    vec = state.best_vartheta if state.best_vartheta is not None else state.vartheta
    dv = unpack_vars(vec, cfg, coeffs.precoder)
    final_g = state.best_g if state.best_g < math.inf else math.nan
    return report_from_vars(dv, cfg, coeffs, iters=state.iter, final_g=final_g)
