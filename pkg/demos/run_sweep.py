"""Run the bundled sweep spec and show what lands in the CSVs.

Same machinery as `cellfree sweep --config demos/configs/sweep_n_aps.cfg`;
kept as a script so the result rows are easy to poke at interactively.
The per-run CSV and its *_summary.csv sit next to this script afterwards
and feed the plotting package directly.
"""

from pathlib import Path

from cellfree.config import parse_kv_text
from cellfree.experiments import experiment_from_mapping, run_experiment

SPEC = Path(__file__).parent / "configs" / "sweep_n_aps.cfg"


def main():
    mapping = parse_kv_text(SPEC.read_text(encoding="utf-8"))
    spec = experiment_from_mapping(mapping)
    out = Path(__file__).parent / Path(spec.out).name
    spec = type(spec)(**{**spec.__dict__, "out": str(out)})

    rows = run_experiment(spec)
    failed = [r for r in rows if r["status"] not in ("ok", "qos_infeasible")]
    print(f"{len(rows)} runs -> {out} (+ {out.stem}_summary.csv), "
          f"{len(failed)} failed")
    for row in rows:
        print(f"  {row['run_id']:<28s} sse {row['sse']:>12s}  "
              f"status {row['status']}")


if __name__ == "__main__":
    main()
