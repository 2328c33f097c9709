"""Command-line front end: validate, optimize, sweep, case-study."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path
from time import perf_counter

from .apg import SolutionReport
from .config import SystemConfig, load_config, parse_kv_text, validate_config
from .experiments import (
    build_instance,
    empty_row,
    experiment_from_mapping,
    fill_row,
    run_experiment,
    solve_instance,
    write_result_csv,
)
from .montecarlo import certify_closed_form, write_validation_csv
from .rates import build_coeffs
from .sca import SubproblemInfeasible

CASE_DEFAULTS = dict(n_aps=5, n_unicast=3, n_groups=3, group_sizes=(2, 2, 2))


def _add_common(sub, *flags):
    if "config" in flags:
        sub.add_argument("--config", help="key = value config file")
    if "seed" in flags:
        sub.add_argument("--seed", type=int, help="override the config seed")
    if "precoder" in flags:
        sub.add_argument("--precoder", choices=("mr", "zf"), default="mr")
    if "solver" in flags:
        sub.add_argument(
            "--solver", choices=("apg", "sca", "epa-ras", "opa-ras"), default="apg"
        )
    if "out" in flags:
        sub.add_argument("--out", help="output CSV path")
    if "trials" in flags:
        sub.add_argument("--trials", type=int, default=2000)
    if "timing" in flags:
        sub.add_argument(
            "--timing",
            action="store_true",
            help="record wall time (makes CSV output run-dependent)",
        )


def _load_cfg(args, precoder: str | None = None, defaults: dict | None = None) -> SystemConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = SystemConfig(**(defaults or {}))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    return validate_config(cfg, precoder=precoder)


def _print_report(report: SolutionReport, cfg: SystemConfig, label: str) -> None:
    print(f"[{label}]")
    print(f"  weighted sum SE : {report.sse:.6f} bit/s/Hz")
    print(f"  min user SE     : {report.min_user_se:.6f} bit/s/Hz")
    print(f"  iterations      : {report.iters}")
    res = "  ".join(f"{k}={v:.3g}" for k, v in report.residuals.items())
    print(f"  residuals       : {res}")
    if report.qos_infeasible:
        print("  warning         : QoS floors not met after rounding")
    print("  association (rows = APs, columns = unicast then groups):")
    for line in report.association_text().splitlines():
        print(f"    {line}")


def _cmd_validate(args) -> int:
    cfg = _load_cfg(args, precoder=args.precoder)
    _, fading, _ = build_instance(cfg)
    rows, _, _ = certify_closed_form(cfg, fading, args.precoder, args.trials)
    out = args.out or "validation.csv"
    write_validation_csv(out, rows)
    worst = max(row["rel_err"] for row in rows)
    print(f"wrote {len(rows)} users to {out}")
    print(f"max |closed-form - simulated| / closed-form = {worst:.4%} at {args.trials} trials")
    return 0


def _cmd_optimize(args) -> int:
    solver = args.solver.replace("-", "_")
    cfg = _load_cfg(args, precoder=args.precoder)
    _, fading, stats = build_instance(cfg)
    coeffs = build_coeffs(stats, fading, cfg, args.precoder)
    start = perf_counter()
    try:
        report = solve_instance(cfg, coeffs, stats, solver)
    except SubproblemInfeasible as exc:
        print(f"{args.precoder}/{solver} seed={cfg.rng_seed} failed: {exc}")
        if args.out:
            row = empty_row("none", "", cfg.rng_seed, args.precoder, solver)
            row["status"] = type(exc).__name__
            write_result_csv(args.out, [row])
            print(f"wrote 1 row to {args.out}")
        return 1
    wall_ms = int(round(1000.0 * (perf_counter() - start))) if args.timing else -1
    _print_report(report, cfg, f"{args.precoder}/{solver} seed={cfg.rng_seed}")
    if args.out:
        row = empty_row("none", "", cfg.rng_seed, args.precoder, solver)
        fill_row(row, report, cfg, wall_ms)
        write_result_csv(args.out, [row])
        print(f"wrote 1 row to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    spec = experiment_from_mapping(parse_kv_text(text))
    if args.out:
        spec = replace(spec, out=args.out)
    rows = run_experiment(spec, timing=args.timing)
    failed = sum(1 for r in rows if r["status"] not in ("ok", "qos_infeasible"))
    print(f"wrote {len(rows)} rows to {spec.out} ({failed} failed)")
    return 0


def _cmd_case_study(args) -> int:
    solver = args.solver.replace("-", "_")
    cfg = _load_cfg(args, precoder=args.precoder, defaults=CASE_DEFAULTS)
    _, fading, stats = build_instance(cfg)
    coeffs = build_coeffs(stats, fading, cfg, args.precoder)
    solvers = ["epa_ras"] + ([solver] if solver != "epa_ras" else [])

    out = args.out or "case_study.csv"
    stem = Path(out)
    user_rows: list[list] = []
    run_rows: list[dict] = []
    blocks: list[str] = []
    for name in solvers:
        start = perf_counter()
        try:
            report = solve_instance(cfg, coeffs, stats, name)
        except SubproblemInfeasible as exc:
            print(f"{args.precoder}/{name} seed={cfg.rng_seed} failed: {exc}")
            row = empty_row("none", "", cfg.rng_seed, args.precoder, name)
            row["status"] = type(exc).__name__
            run_rows.append(row)
            blocks.append(f"[{name}]\nfailed: {type(exc).__name__}\n")
            continue
        wall_ms = int(round(1000.0 * (perf_counter() - start))) if args.timing else -1
        run_id = f"case-s{cfg.rng_seed}-{args.precoder}-{name}"
        for u in range(cfg.n_unicast):
            user_rows.append(
                [run_id, f"u{u}", "unicast", args.precoder, name,
                 f"{report.rates.se_unicast[u]:.12g}"]
            )
        for m in range(cfg.n_groups):
            for k in range(cfg.group_sizes[m]):
                user_rows.append(
                    [run_id, f"m{m}k{k}", "multicast", args.precoder, name,
                     f"{report.rates.se_multicast[m][k]:.12g}"]
                )
        run_rows.append(
            fill_row(empty_row("none", "", cfg.rng_seed, args.precoder, name),
                     report, cfg, wall_ms)
        )
        blocks.append(f"[{name}]\n{report.association_text()}\n")
        _print_report(report, cfg, f"{args.precoder}/{name} seed={cfg.rng_seed}")

    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run_id", "user_id", "kind", "precoder", "solver", "se"))
        writer.writerows(user_rows)
    write_result_csv(str(stem.with_name(stem.stem + "_runs" + stem.suffix)), run_rows)
    assoc_path = stem.with_name(stem.stem + "_association.txt")
    assoc_path.write_text("\n".join(blocks), encoding="utf-8")
    print(f"wrote {len(user_rows)} per-user rows to {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cellfree",
        description="Cell-free network simulator: spectral-efficiency "
        "certification and AP-association/power optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="Monte Carlo certification of the closed forms")
    _add_common(p, "config", "seed", "precoder", "trials", "out")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("optimize", help="solve one instance and print the solution")
    _add_common(p, "config", "seed", "precoder", "solver", "out", "timing")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("sweep", help="run an experiment sweep from a spec file")
    _add_common(p, "out", "timing")
    p.add_argument("--config", required=True, help="flat sweep spec file")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("case-study", help="per-user SE comparison on one topology")
    _add_common(p, "config", "seed", "precoder", "solver", "out", "timing")
    p.set_defaults(func=_cmd_case_study)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
