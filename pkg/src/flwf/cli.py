"""Command-line front end: run one scenario, or compare finished runs.

``flwf run`` executes a preset or a YAML scenario and writes four files
into the output directory: ``metrics.csv`` (per-round accuracies, one
row per owner/metric/task), ``figure_data.csv`` (per-class accuracy
curves), ``summary.json`` (aggregate metrics plus the resolved config),
and ``resolved_config.yaml`` (re-parseable provenance copy).  The same
preset and seed always produce byte-identical files.

``flwf compare`` reads several ``summary.json`` files and prints an
aligned table of the headline numbers (general and personal accuracy of
the observed client, general accuracy of the generalized client and the
server, task-2 average accuracy and forgetting), next to a CSV copy.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import config as config_mod
from .config import ConfigError, CsvSource, ScenarioConfig
from .federation import ExperimentResult, run_experiment
from .metrics import SERVER

SUMMARY_NAME = "summary.json"
METRICS_NAME = "metrics.csv"
FIGURE_NAME = "figure_data.csv"
RESOLVED_NAME = "resolved_config.yaml"


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def summarize(result: ExperimentResult) -> dict:
    """Aggregate metrics document; keys are stable for comparison tooling."""
    ledger = result.ledger
    scenario = result.scenario
    owners: dict[str, dict] = {}
    if scenario.rounds > 0:
        for c in scenario.clients:
            entry: dict = {
                "A_gen": ledger.general_accuracy(c.name),
                "A_per": ledger.personal_accuracy(c.name),
                "A_task": {},
                "F": {},
            }
            for t in range(1, ledger.n_tasks(c.name) + 1):
                entry["A_task"][str(t)] = ledger.avg_task_accuracy(c.name, t)
                if t >= 2:
                    entry["F"][str(t)] = ledger.average_forgetting(c.name, t)
            owners[c.name] = entry
        owners[SERVER] = {"A_gen": ledger.general_accuracy(SERVER)}
    return {
        "label": scenario.label,
        "seed": scenario.seed,
        "client_order": [c.name for c in scenario.clients],
        "metrics": owners,
        "modes": {name: {str(r.round_index): r.modes[name]
                         for r in result.reports}
                  for name in (c.name for c in scenario.clients)},
        "config": config_mod.to_dict(scenario),
    }


def write_outputs(result: ExperimentResult, out_dir) -> list[str]:
    """Write the four artifacts; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, METRICS_NAME)
    _write_csv(path, ("owner", "round", "metric", "task", "value"),
               result.ledger.csv_rows())
    written.append(path)

    path = os.path.join(out_dir, FIGURE_NAME)
    _write_csv(path, ("round", "owner", "class", "accuracy"),
               result.ledger.figure_rows())
    written.append(path)

    path = os.path.join(out_dir, SUMMARY_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summarize(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    path = os.path.join(out_dir, RESOLVED_NAME)
    config_mod.save_config(result.scenario, path)
    written.append(path)
    return written


def _resolve_scenario(args) -> ScenarioConfig:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("run", "exactly one of --preset / --config is required")
    if args.preset is not None:
        scenario = config_mod.preset(args.preset,
                                     seed=0 if args.seed is None else args.seed)
    else:
        scenario = config_mod.parse_config(args.config, seed=args.seed)
    if args.data_csv is not None:
        scenario = dataclasses.replace(scenario, data=CsvSource(path=args.data_csv))
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = _resolve_scenario(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or os.path.join(
        "out", f"{scenario.label}-seed{scenario.seed}")
    written: list[str] = []
    try:
        result = run_experiment(scenario, parallel=args.parallel_clients)
        written = write_outputs(result, out_dir)
    except Exception as exc:  # partial outputs must not look like a finished run
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


COMPARE_COLUMNS = ("method", "seed", "A_gen_1", "A_gen_g", "A_gen_server",
                   "A_per_1", "A_2_1", "F_2_1")


def _load_summary(path) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, SUMMARY_NAME)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _shape_key(summary: dict):
    cfg = summary.get("config", {})
    return (cfg.get("rounds"), cfg.get("n_classes"),
            tuple(summary.get("client_order", ())),
            json.dumps([c.get("tasks") for c in cfg.get("clients", [])],
                       sort_keys=True))


def _compare_row(summary: dict) -> list:
    order = summary.get("client_order", [])
    metrics = summary.get("metrics", {})
    observed = metrics.get(order[0], {}) if order else {}
    general = metrics.get(order[1], {}) if len(order) > 1 else {}

    def fmt(value):
        return "" if value is None else f"{value:.4f}"

    return [
        summary.get("label", "?"),
        summary.get("seed", "?"),
        fmt(observed.get("A_gen")),
        fmt(general.get("A_gen")),
        fmt(metrics.get(SERVER, {}).get("A_gen")),
        fmt(observed.get("A_per")),
        fmt(observed.get("A_task", {}).get("2")),
        fmt(observed.get("F", {}).get("2")),
    ]


def cmd_compare(args) -> int:
    try:
        summaries = [_load_summary(p) for p in args.runs]
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    shapes = {_shape_key(s) for s in summaries}
    if len(shapes) > 1:
        print("warning: compared runs have different scenario shapes "
              "(rounds, clients, or task layouts differ)", file=sys.stderr)
    rows = [_compare_row(s) for s in summaries]

    table = [list(COMPARE_COLUMNS)] + [[str(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(COMPARE_COLUMNS))]
    for r in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())

    _write_csv(args.out, COMPARE_COLUMNS, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flwf",
        description="Federated continual-learning simulator with distillation.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one scenario")
    run_p.add_argument("--preset", choices=config_mod.PRESET_NAMES,
                       help="named scenario")
    run_p.add_argument("--config", help="path to a scenario YAML file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    run_p.add_argument("--out", default=None,
                       help="output directory (default out/<label>-seed<seed>)")
    run_p.add_argument("--parallel-clients", action="store_true",
                       help="train clients on a thread pool (same results)")
    run_p.add_argument("--data-csv", default=None,
                       help="replace the data source with this CSV file")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="tabulate finished runs")
    cmp_p.add_argument("runs", nargs="+",
                       help="run directories or summary.json paths (>= 2)")
    cmp_p.add_argument("--out", default="comparison.csv",
                       help="where to write the CSV copy of the table")
    cmp_p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare" and len(args.runs) < 2:
        print("error: compare needs at least two runs", file=sys.stderr)
        return 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
