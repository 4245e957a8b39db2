"""Command-line entry point: ``sleeprules {score,explain,evaluate,render,synth}``.

Exit status is 0 on success and the ``exit_code`` of the raised
:class:`~sleeprules.errors.SleepRulesError` subclass otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import CONFIG_ENV_VAR, EngineConfig, resolve_config
from .errors import AlignmentError, EpochIndexError, RecipeError, SleepRulesError
from .evalkit import (
    accuracy,
    agreement_distribution,
    cohen_kappa,
    confusion_matrix,
    crop_analysis_period,
    leave_one_out_mad,
    mad_vs_consensus,
    majority_consensus,
    matrix_to_csv,
    read_hypnogram_csv,
    read_panel_dir,
    row_normalize,
    sleep_metrics,
)
from .explain import build_prompt_bundle, render_static
from .pipeline import load_run, score_edf, write_atomic, write_run
from .render import render_epoch_svg, render_hypnogram_svg
from .signal_io import read_edf
from .synthpsg import recipe_from_json, synthesize, write_edf

log = logging.getLogger("sleeprules")


def _score_one(edf: str, out_dir: str, config: EngineConfig, timestamp: bool) -> str:
    result, digest = score_edf(edf, config)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else None
    write_run(result, out_dir, config, edf_path=edf, input_hash=digest, timestamp=stamp)
    return out_dir


def cmd_score(args, config: EngineConfig) -> int:
    out = Path(args.out or config.output_dir or "run")
    inputs = [str(p) for p in args.edf]
    if len(inputs) == 1:
        targets = [(inputs[0], str(out))]
    else:
        targets = [(p, str(out / Path(p).stem)) for p in inputs]
    status = 0
    if args.jobs > 1 and len(targets) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(edf, pool.submit(_score_one, edf, d, config, args.timestamp)) for edf, d in targets]
            for edf, fut in futures:
                try:
                    print(fut.result())
                except SleepRulesError as exc:
                    log.error("%s: %s", edf, exc)
                    status = status or exc.exit_code
        return status
    for edf, d in targets:
        try:
            print(_score_one(edf, d, config, args.timestamp))
        except SleepRulesError as exc:
            if len(targets) == 1:
                raise
            log.error("%s: %s", edf, exc)
            status = status or exc.exit_code
    return status


def _epoch(run, index: int):
    if not 0 <= index < len(run.staged):
        raise EpochIndexError(f"epoch {index} outside 0..{len(run.staged) - 1}")
    return run.staged[index]


def cmd_explain(args, config: EngineConfig) -> int:
    run = load_run(args.run_dir)
    staged = _epoch(run, args.epoch)
    if args.format == "bundle":
        sys.stdout.write(build_prompt_bundle(staged, run.rule_catalog).to_json() + "\n")
    else:
        sys.stdout.write(render_static(staged).text() + "\n")
    return 0


def _csv_rows(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def evaluation_report(pred_path, scorer_dir) -> dict[str, str]:
    """All evaluation outputs as ``{file name: text}``."""
    pred_path = Path(pred_path)
    if pred_path.is_dir():
        pred_path = pred_path / "hypnogram.csv"
    predicted = read_hypnogram_csv(pred_path)
    scorers = read_panel_dir(scorer_dir)
    panel = majority_consensus(scorers)
    if len(predicted) != len(panel.consensus):
        raise AlignmentError(f"prediction has {len(predicted)} epochs, scorers have {len(panel.consensus)}")
    first, last = crop_analysis_period(panel)
    cropped = panel.crop(first, last)
    pred = predicted.crop(first, last)
    cm = confusion_matrix(pred, cropped.consensus)
    pct = row_normalize(cm)
    try:
        kappa = cohen_kappa(cm)
    except SleepRulesError as exc:
        kappa = None
        log.warning("kappa undefined: %s", exc)
    consensus_metrics = sleep_metrics(cropped.consensus)
    pred_metrics = sleep_metrics(pred)
    algo_mad = mad_vs_consensus([pred_metrics], consensus_metrics)
    human_mad = leave_one_out_mad(cropped.scorers) if len(scorers) >= 3 else None
    agree, disagree, edges = agreement_distribution(pred, cropped)
    report = {
        "analysis_period": {"first_epoch": first, "last_epoch": last, "epochs": last - first + 1},
        "scorers": len(scorers),
        "accuracy": accuracy(cm),
        "kappa": kappa,
        "confusion_counts": cm.counts.tolist(),
        "confusion_percent": pct.tolist(),
        "metrics": {"predicted": pred_metrics.as_dict(), "consensus": consensus_metrics.as_dict()},
        "mad": {"algorithm": algo_mad, "human_leave_one_out": human_mad},
        "tie_epochs": [int(t) + first for t in np.flatnonzero(cropped.tie_flags)],
        "agreement_histogram": {"edges": edges.tolist(), "agree": agree.tolist(), "disagree": disagree.tolist()},
    }
    metric_rows = [[name, pred_metrics.as_dict()[name], consensus_metrics.as_dict()[name], algo_mad[name],
                    human_mad[name] if human_mad else ""] for name in algo_mad]
    hist_rows = [[edges[i], edges[i + 1], agree[i], disagree[i]] for i in range(len(agree))]
    return {
        "report.json": json.dumps(report, indent=1, sort_keys=True) + "\n",
        "confusion_counts.csv": matrix_to_csv(cm.counts),
        "confusion_percent.csv": matrix_to_csv(pct, "{:.1f}"),
        "metrics.csv": _csv_rows(["metric", "predicted", "consensus", "mad_algorithm", "mad_human"], metric_rows),
        "agreement_histogram.csv": _csv_rows(["bin_lo", "bin_hi", "agree", "disagree"], hist_rows),
    }


def cmd_evaluate(args, config: EngineConfig) -> int:
    files = evaluation_report(args.predicted, args.scorer_dir)
    write_atomic(files, args.out or "evaluation")
    if args.format == "json":
        sys.stdout.write(files["report.json"])
    else:
        doc = json.loads(files["report.json"])
        kappa = "undefined" if doc["kappa"] is None else f"{doc['kappa']:.3f}"
        print(f"accuracy {doc['accuracy']:.4f}  kappa {kappa}  epochs {doc['analysis_period']['epochs']}")
    return 0


def cmd_render(args, config: EngineConfig) -> int:
    run = load_run(args.run_dir)
    out = Path(args.out or args.run_dir)
    files = {}
    if args.epoch is not None:
        staged = _epoch(run, args.epoch)
        edf = run.manifest.get("input")
        if not edf:
            raise SleepRulesError("run manifest does not name the input EDF")
        rec = read_edf(edf, config.roles)
        files[f"epoch_{args.epoch:05d}.svg"] = render_epoch_svg(rec, args.epoch, run.annotations, staged.stage)
    else:
        reference = agreement = None
        if args.reference is not None:
            panel = majority_consensus(read_panel_dir(args.reference))
            reference, agreement = panel.consensus, panel.agreement_ratio
        files["hypnogram.svg"] = render_hypnogram_svg(run.hypnogram, reference, agreement)
    write_atomic(files, out)
    for name in files:
        print(out / name)
    return 0


def cmd_synth(args, config: EngineConfig) -> int:
    recipe_path = Path(args.recipe)
    try:
        text = recipe_path.read_text()
    except OSError as exc:
        raise RecipeError(f"cannot read recipe {recipe_path}: {exc}") from None
    recipe = recipe_from_json(text)
    stem = args.name or recipe_path.stem
    rec, truth = synthesize(recipe, recording_id=stem)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    edf_bytes = write_edf(rec)
    # EDF is binary; write it through a temporary file as well.
    tmp = out / f".{stem}.edf.tmp"
    tmp.write_bytes(edf_bytes)
    write_atomic({f"{stem}.truth.json": truth.to_json() + "\n"}, out)
    tmp.replace(out / f"{stem}.edf")
    print(out / f"{stem}.edf")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sleeprules", description="Rule-based sleep staging with explanations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help=f"engine config JSON (default: ${CONFIG_ENV_VAR}, else built-in defaults)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("score", help="stage one or more EDF recordings")
    s.add_argument("edf", nargs="+")
    s.add_argument("--out", help="run directory (one subdirectory per input when several are given)")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--timestamp", action="store_true", help="record the wall-clock time in the manifest")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("explain", help="print the explanation of one epoch")
    e.add_argument("run_dir")
    e.add_argument("epoch", type=int)
    e.add_argument("--format", choices=("static", "bundle"), default="static")
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", help="compare a hypnogram with a panel of scorers")
    v.add_argument("predicted", help="hypnogram CSV or run directory")
    v.add_argument("scorer_dir", help="directory of scorer hypnogram CSVs")
    v.add_argument("--out", help="report directory (default: ./evaluation)")
    v.add_argument("--format", choices=("text", "json"), default="text")
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="draw SVG figures from a run")
    r.add_argument("run_dir")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--hypnogram", action="store_true", help="whole-night hypnogram (default)")
    g.add_argument("--epoch", type=int, help="traces and annotations of one epoch")
    r.add_argument("--reference", help="scorer directory for disagreement and agreement shading")
    r.add_argument("--out", help="output directory (default: the run directory)")
    r.set_defaults(func=cmd_render)

    y = sub.add_parser("synth", help="generate a synthetic EDF and its ground truth")
    y.add_argument("recipe")
    y.add_argument("--out")
    y.add_argument("--name", help="file stem (default: recipe file stem)")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        config = resolve_config(args.config)
        return args.func(args, config)
    except SleepRulesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
