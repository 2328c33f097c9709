"""Baselines, sweep drivers, and result persistence.

A sweep walks the cartesian product of (value, seed, precoder, solver),
builds one network per (value, seed), runs the requested solver, and appends
one row per run to a CSV with a fixed column order. Aggregates (mean, std,
and the sorted SSE knots that define the empirical CDF) go to a side file
named <stem>_summary.csv. Row failures are recorded in the status column and
never abort the sweep.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from time import perf_counter

import numpy as np

from .apg import (
    SolutionReport,
    apg_solve,
    extract_solution,
    pack_vars,
    report_from_vars,
)
from .channel import estimation_stats
from .config import ConfigError, SystemConfig, validate_config
from .network import compute_large_scale, place_network
from .rates import build_coeffs, epa_power, theta_from_power
from .seeding import BASELINE, stream

SWEEP_VARS = ("n_aps", "antennas", "n_multicast_users", "n_unicast_users", "weights")
SOLVERS = ("apg", "sca", "epa_ras", "opa_ras")

RESULT_COLUMNS = (
    "run_id",
    "sweep_var",
    "sweep_value",
    "seed",
    "precoder",
    "solver",
    "sse",
    "se_min_unicast",
    "se_min_multicast",
    "qos_violations",
    "fronthaul_residual",
    "iters",
    "wall_time_ms",
    "status",
)

SUMMARY_COLUMNS = (
    "sweep_var",
    "sweep_value",
    "precoder",
    "solver",
    "n_ok",
    "sse_mean",
    "sse_std",
    "sse_knots",
)


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: which knob to turn, over which values, seeds, and methods.

    `base` keeps pilot length and association cap unresolved so each variant
    re-derives them from its own user counts.
    """

    sweep_var: str
    values: tuple[str, ...]
    seeds: tuple[int, ...]
    precoders: tuple[str, ...]
    solvers: tuple[str, ...]
    out: str
    base: SystemConfig

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"unknown sweep variable {self.sweep_var!r}")
        if not self.values or not self.seeds:
            raise ConfigError("sweep needs at least one value and one seed")
        bad = set(self.solvers) - set(SOLVERS)
        if bad or not self.solvers:
            raise ConfigError(f"unknown solvers {sorted(bad)!r}")
        bad = set(self.precoders) - {"mr", "zf"}
        if bad or not self.precoders:
            raise ConfigError(f"unknown precoders {sorted(bad)!r}")


def experiment_from_mapping(mapping: dict) -> ExperimentSpec:
    """Build a sweep from one flat key=value mapping that mixes plain config
    keys with the sweep keys (sweep_var, sweep_values, sweep_seeds,
    precoders, solvers, out)."""
    from .config import config_from_mapping

    def _list(key, default=None):
        raw = mapping.get(key, default)
        if raw is None:
            raise ConfigError(f"sweep file is missing {key!r}")
        return tuple(tok.strip() for tok in str(raw).split(",") if tok.strip())

    base = config_from_mapping(mapping)
    return ExperimentSpec(
        sweep_var=str(mapping.get("sweep_var", "")).strip(),
        values=_list("sweep_values"),
        seeds=tuple(int(s) for s in _list("sweep_seeds")),
        precoders=_list("precoders", "mr"),
        solvers=_list("solvers", "apg"),
        out=str(mapping.get("out", "sweep_results.csv")).strip(),
        base=base,
    )


def _split_even(total: int, n_groups: int) -> tuple[int, ...]:
    if total < n_groups:
        raise ConfigError(f"cannot split {total} multicast users over {n_groups} groups")
    quot, rem = divmod(total, n_groups)
    return tuple(quot + (1 if m < rem else 0) for m in range(n_groups))


def apply_sweep(base: SystemConfig, var: str, value: str) -> SystemConfig:
    """The unvalidated config for one sweep point."""
    if var == "n_aps":
        return replace(base, n_aps=int(value))
    if var == "antennas":
        return replace(base, antennas_per_ap=int(value))
    if var == "n_unicast_users":
        return replace(base, n_unicast=int(value))
    if var == "n_multicast_users":
        return replace(base, group_sizes=_split_even(int(value), base.n_groups))
    if var == "weights":
        w1_txt, _, w2_txt = value.partition(":")
        return replace(base, w1=float(w1_txt), w2=float(w2_txt))
    raise ConfigError(f"unknown sweep variable {var!r}")


# ---- baselines ----

def random_association(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random serving sets: every entity gets a nonempty random AP
    subset; per-AP caps fixed by resampling, then by moving entities to APs
    with spare capacity."""
    n_ap, ents, cap = cfg.n_aps, cfg.n_entities, cfg.assoc_cap
    if ents > n_ap * cap:
        raise ValueError("association cap cannot cover every entity")
    assoc = np.empty((n_ap, ents), dtype=int)
    for _ in range(100):
        assoc = rng.integers(0, 2, size=(n_ap, ents))
        for e in range(ents):
            while not assoc[:, e].any():
                assoc[:, e] = rng.integers(0, 2, size=n_ap)
        if (assoc.sum(axis=1) <= cap).all():
            return assoc
    # greedy fix: shed load from overfull APs, preferring entities that stay
    # covered elsewhere, else handing them to an AP with room
    for n in np.flatnonzero(assoc.sum(axis=1) > cap):
        while assoc[n].sum() > cap:
            served = np.flatnonzero(assoc[n])
            cover = assoc[:, served].sum(axis=0)
            order = served[np.argsort(-cover)]
            e = order[0]
            if assoc[:, e].sum() > 1:
                assoc[n, e] = 0
            else:
                room = np.flatnonzero(assoc.sum(axis=1) < cap)
                room = room[room != n]
                assoc[room[0], e] = 1
                assoc[n, e] = 0
    return assoc


def baseline_epa_ras(
    cfg: SystemConfig,
    coeffs,
    stats,
    rng: np.random.Generator | None = None,
) -> SolutionReport:
    """Random AP selection with the per-AP budget split equally over the
    entities each AP serves."""
    if rng is None:
        rng = stream(cfg.rng_seed, BASELINE)
    assoc = random_association(cfg, rng)
    a = assoc[:, : cfg.n_unicast]
    a_bar = assoc[:, cfg.n_unicast :]
    ap = epa_power(a, a_bar, stats, cfg, coeffs.precoder)
    dv = theta_from_power(ap, stats, coeffs.precoder)
    return report_from_vars(dv, cfg, coeffs, iters=0, final_g=math.nan)


def baseline_opa_ras(
    cfg: SystemConfig,
    coeffs,
    stats,
    rng: np.random.Generator | None = None,
) -> SolutionReport:
    """Same random association, powers then optimized with the selection
    frozen; shares the baseline random stream so EPA and OPA compare the
    same association."""
    if rng is None:
        rng = stream(cfg.rng_seed, BASELINE)
    assoc = random_association(cfg, rng)
    a = assoc[:, : cfg.n_unicast]
    a_bar = assoc[:, cfg.n_unicast :]
    ap = epa_power(a, a_bar, stats, cfg, coeffs.precoder)
    dv = theta_from_power(ap, stats, coeffs.precoder)
    state = apg_solve(cfg, coeffs, init=pack_vars(dv), freeze_z=True)
    return extract_solution(state, cfg, coeffs)


# ---- single runs and sweeps ----

def build_instance(cfg: SystemConfig):
    """Geometry, large-scale fading, and estimation statistics for one seed."""
    geom = place_network(cfg)
    fading = compute_large_scale(geom, cfg)
    stats = estimation_stats(fading, cfg)
    return geom, fading, stats


def solve_instance(cfg: SystemConfig, coeffs, stats, solver: str) -> SolutionReport:
    if solver == "apg":
        state = apg_solve(cfg, coeffs, stats=stats)
        return extract_solution(state, cfg, coeffs)
    if solver == "sca":
        from .sca import sca_solve

        return sca_solve(cfg, coeffs)
    if solver == "epa_ras":
        return baseline_epa_ras(cfg, coeffs, stats)
    if solver == "opa_ras":
        return baseline_opa_ras(cfg, coeffs, stats)
    raise ConfigError(f"unknown solver {solver!r}")


def qos_violation_count(report: SolutionReport, cfg: SystemConfig) -> int:
    count = int((report.rates.se_unicast < cfg.se_qos_unicast - 1e-9).sum())
    for se in report.rates.se_multicast:
        count += int((se < cfg.se_qos_multicast - 1e-9).sum())
    return count


def run_record(
    report: SolutionReport, cfg: SystemConfig, seed: int, precoder: str,
    solver: str, wall_ms: int = -1,
) -> dict:
    """Flat per-run record: headline numbers plus the worst residual of each
    constraint family, recomputed from the rounded solution."""
    rec = {
        "seed": seed,
        "precoder": precoder,
        "solver": solver,
        "iters": report.iters,
        "final_g": report.final_g,
        "sse": report.sse,
        "min_user_se": report.min_user_se,
        "wall_time_ms": wall_ms,
    }
    rec.update(report.residuals)
    return rec


def empty_row(var, value, seed, precoder, solver) -> dict:
    token = str(value).replace(":", "-")
    return {
        "run_id": f"{var}-{token}-s{seed}-{precoder}-{solver}",
        "sweep_var": var,
        "sweep_value": value,
        "seed": seed,
        "precoder": precoder,
        "solver": solver,
        "sse": "",
        "se_min_unicast": "",
        "se_min_multicast": "",
        "qos_violations": "",
        "fronthaul_residual": "",
        "iters": "",
        "wall_time_ms": -1,
        "status": "ok",
    }


def fill_row(row: dict, report: SolutionReport, cfg: SystemConfig, wall_ms: int = -1) -> dict:
    row["sse"] = _fmt(report.sse)
    if cfg.n_unicast:
        row["se_min_unicast"] = _fmt(report.rates.se_unicast.min())
    if cfg.n_multicast_users:
        row["se_min_multicast"] = _fmt(min(se.min() for se in report.rates.se_multicast))
    row["qos_violations"] = qos_violation_count(report, cfg)
    row["fronthaul_residual"] = _fmt(report.residuals["fronthaul"])
    row["iters"] = report.iters
    row["wall_time_ms"] = wall_ms
    if report.qos_infeasible:
        row["status"] = "qos_infeasible"
    return row


def _run_one(base: SystemConfig, var, value, seed, precoder, solver, timing):
    row = empty_row(var, value, seed, precoder, solver)
    try:
        raw = apply_sweep(base, var, str(value)) if var != "none" else base
        cfg = validate_config(replace(raw, rng_seed=int(seed)), precoder=precoder)
        _, fading, stats = build_instance(cfg)
        coeffs = build_coeffs(stats, fading, cfg, precoder)
        start = perf_counter()
        report = solve_instance(cfg, coeffs, stats, solver)
        wall_ms = int(round(1000.0 * (perf_counter() - start))) if timing else -1
        fill_row(row, report, cfg, wall_ms)
    except Exception as exc:  # noqa: BLE001 - row failures must not kill a sweep
        row["status"] = type(exc).__name__
    return row


def run_experiment(
    spec: ExperimentSpec, timing: bool = False, workers: int = 1
) -> list[dict]:
    """Run the sweep, write the results CSV and its summary; returns rows."""
    jobs = [
        (spec.base, spec.sweep_var, value, seed, precoder, solver, timing)
        for value in spec.values
        for seed in spec.seeds
        for precoder in spec.precoders
        for solver in spec.solvers
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda j: _run_one(*j), jobs))
    else:
        rows = [_run_one(*job) for job in jobs]
    write_result_csv(spec.out, rows)
    write_summary_csv(_summary_path(spec.out), summarize(rows))
    return rows


def _summary_path(out: str) -> str:
    path = Path(out)
    return str(path.with_name(path.stem + "_summary" + path.suffix))


def write_result_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([row[col] for col in RESULT_COLUMNS])


def summarize(rows: list[dict]) -> list[dict]:
    """Mean/std and the sorted SSE knots per (value, precoder, solver)."""
    groups: dict[tuple, list[float]] = {}
    meta: dict[tuple, dict] = {}
    for row in rows:
        key = (row["sweep_value"], row["precoder"], row["solver"])
        meta.setdefault(key, {"sweep_var": row["sweep_var"]})
        if row["status"] in ("ok", "qos_infeasible") and row["sse"] != "":
            groups.setdefault(key, []).append(float(row["sse"]))
        else:
            groups.setdefault(key, [])
    out = []
    for key in groups:
        values = sorted(groups[key])
        arr = np.array(values)
        out.append(
            {
                "sweep_var": meta[key]["sweep_var"],
                "sweep_value": key[0],
                "precoder": key[1],
                "solver": key[2],
                "n_ok": len(values),
                "sse_mean": _fmt(arr.mean()) if values else "",
                "sse_std": _fmt(arr.std(ddof=1)) if len(values) > 1 else "",
                "sse_knots": ";".join(_fmt(v) for v in values),
            }
        )
    return out


def write_summary_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([row[col] for col in SUMMARY_COLUMNS])
