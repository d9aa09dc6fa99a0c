"""Command-line entry point.

Commands
  generate   write an observation CSV (header ``t,x1,x2``) plus JSON sidecar
  train      fit one model to a data file; prints the stage table
  eval       score a trained model on the benchmark evaluation setups
  scenario   run a benchmark sweep (resume-aware) and emit its figures
  report     emit one figure's plot CSV and PNG from a results file

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, report
from .bench import EmptyGroup
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import ObservationSet
from .pipeline import AllStagesFailed, TrainedModel, train

DATA_HEADER = "t,x1,x2"


def _load(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return parse_config({})


def _raw_doc(args) -> dict:
    """The config file as written (before defaults), for pre-parse overrides."""
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {args.config}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(
                f"config file {args.config} is not valid JSON: {err}") from err
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        return doc
    return {}


def write_data_csv(path, data: ObservationSet) -> None:
    lines = [DATA_HEADER]
    for t, row in zip(data.times, data.states):
        lines.append(",".join(repr(float(v)) for v in (t, *row)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_data_csv(path) -> ObservationSet:
    """Load a data CSV plus its sidecar (x0/sigma/seed) when present."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != DATA_HEADER:
        raise ValueError(f"data file {path} must start with header {DATA_HEADER!r}")
    rows = np.asarray([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    sidecar = Path(path).with_suffix(".json")
    meta = {}
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    x0 = meta.get("x0", rows[0, 1:].tolist())
    return ObservationSet(times=rows[:, 0], states=rows[:, 1:],
                          x0=np.asarray(x0, dtype=float),
                          sigma=float(meta.get("sigma", 0.0)),
                          seed=int(meta.get("seed", 0)),
                          t0=float(meta.get("span", [rows[0, 0]])[0]))


def cmd_generate(args) -> int:
    cfg = _load(args)
    d = cfg.data
    seed = args.seed if args.seed is not None else d["seed"]
    data = bench.generate_data(n_obs=d["n_obs"], sigma=d["sigma"], seed=seed,
                               x0=tuple(d["x0"]), span=tuple(d["span"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_data_csv(out, data)
    sidecar = {"sigma": d["sigma"], "seed": seed, "x0": list(d["x0"]),
               "span": list(d["span"]), "n_obs": d["n_obs"]}
    out.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {data.times.size} observations to {out} "
          f"(sigma={d['sigma']:g}, seed={seed})")
    return 0


def _print_stage_table(model: TrainedModel) -> None:
    head = f"{'stage':<10} {'mode':<18} {'start':>12} {'end':>12} {'evals':>7} {'sec':>7}"
    print(head)
    print("-" * len(head))
    for s in model.stages:
        start = "-" if s.start_loss is None else f"{s.start_loss:.4e}"
        note = f"  [{s.note}]" if s.note else ""
        print(f"{s.name:<10} {s.mode:<18} {start:>12} {s.end_loss:.4e} "
              f"{s.evals:>7d} {s.seconds:>7.2f}{note}")


def cmd_train(args) -> int:
    cfg = _load(args)
    data = read_data_csv(args.data)
    pcfg = cfg.pipeline_config()
    if args.seed is not None:
        from dataclasses import replace

        pcfg = replace(pcfg, seed=args.seed)
    model = train(data, pcfg)
    _print_stage_table(model)
    mse = bench.evaluate(model, bench.SETUPS["ex_it"],
                         n_eval=cfg.scenario["n_eval"],
                         h_max=cfg.scenario["eval_h_max"])
    print(f"final loss: {model.final_loss:.6e}")
    print(f"ex-it mse:  {mse:.6e}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json() + "\n", encoding="utf-8")
    print(f"wrote model to {out}")
    return 0


def cmd_eval(args) -> int:
    model = TrainedModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    names = list(bench.SETUPS) if args.setup == "all" else [args.setup]
    scores = {}
    for name in names:
        setup = bench.SETUPS[name]
        mse = bench.evaluate(model, setup)
        scores[name] = mse
        print(f"{name}: mse={mse:.6e}  span=({setup.span[0]:g}, {setup.span[1]:g})"
              f"  x0=({setup.x0[0]:g}, {setup.x0[1]:g})")
    if args.out:
        Path(args.out).write_text(
            json.dumps(scores, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


def _scenario_figures(records, scenario_id: str, out_dir, render: bool) -> None:
    for fid in report.FIGURE_IDS:
        if not fid.startswith(scenario_id.lower() + "_"):
            continue
        try:
            paths = report.emit_figure(records, fid, out_dir, render=render)
        except EmptyGroup as err:
            print(f"  figure {fid}: skipped ({err})")
            continue
        print(f"  figure {fid}: " + ", ".join(str(p) for p in paths))


def cmd_scenario(args) -> int:
    doc = _raw_doc(args)
    if args.id:
        doc.setdefault("scenario", {})["id"] = args.id
    if args.workers is not None:
        doc.setdefault("scenario", {})["workers"] = args.workers
    if args.seed is not None:
        doc.setdefault("scenario", {})["seeds"] = [args.seed]
    cfg = parse_config(doc)
    settings = cfg.scenario_settings()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.jsonl"

    def progress(line: str) -> None:
        print(line, flush=True)

    if args.resume and results_path.exists():
        existing = bench.read_jsonl(results_path)
        records, n_fresh = bench.merge_resume(existing, settings, progress)
        print(f"resume: kept {len(existing)} records, ran {n_fresh} cells")
    else:
        records = bench.run_scenario(settings, progress=progress)
    bench.write_jsonl(results_path, records)
    bench.write_csv(out / "results.csv", records)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    failures = [r for r in records if r.error]
    print(f"{settings.scenario}: {len(records)} records -> {results_path}"
          + (f" ({len(failures)} cells recorded errors)" if failures else ""))
    _scenario_figures(records, settings.scenario, out,
                      render="png" in cfg.output["formats"])
    return 0


def cmd_report(args) -> int:
    records = bench.read_jsonl(args.results)
    out_dir = Path(args.out) if args.out else Path(args.results).parent
    ids = report.FIGURE_IDS if args.figure == "all" else (args.figure,)
    emitted = []
    skipped = []
    for fid in ids:
        try:
            emitted += report.emit_figure(records, fid, out_dir, render=True)
        except EmptyGroup as err:
            if args.figure != "all":
                raise
            skipped.append(f"{fid} ({err})")
    for path in emitted:
        print(f"wrote {path}")
    for note in skipped:
        print(f"skipped {note}")
    if not emitted:
        raise EmptyGroup("no figure had matching records")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odefit",
        description="Learn ODE right-hand sides from sparse noisy time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write an observation CSV + sidecar")
    p.add_argument("--config", help="JSON run file (defaults when omitted)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, help="override data.seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit one model to a data file")
    p.add_argument("--config", help="JSON run file (defaults when omitted)")
    p.add_argument("--data", required=True, help="observation CSV from generate")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--seed", type=int, help="override pipeline.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model")
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--setup", default="all",
                   choices=("all",) + tuple(bench.SETUPS),
                   help="evaluation setup (default: all)")
    p.add_argument("--out", help="optional JSON path for the scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scenario", help="run a benchmark sweep")
    p.add_argument("--config", help="JSON run file (defaults when omitted)")
    p.add_argument("--id", choices=("S1", "S2", "S3", "S4"),
                   help="override scenario.id")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="run a single seed instead of the grid")
    p.add_argument("--workers", type=int, help="override scenario.workers")
    p.add_argument("--resume", default=True, action=argparse.BooleanOptionalAction,
                   help="skip cells already present in results.jsonl")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("report", help="emit figure CSV + PNG from results")
    p.add_argument("--results", required=True, help="results.jsonl from scenario")
    p.add_argument("--figure", required=True,
                   choices=report.FIGURE_IDS + ("all",), metavar="ID",
                   help="figure id: " + ", ".join(report.FIGURE_IDS + ("all",)))
    p.add_argument("--out", help="output directory (default: alongside results)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename or err}", file=sys.stderr)
        return 2
    except AllStagesFailed as err:
        print(f"training failed: {err}", file=sys.stderr)
        return 3
    except EmptyGroup as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
