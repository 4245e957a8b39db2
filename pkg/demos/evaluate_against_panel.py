"""Score a synthetic night and evaluate it against a simulated scorer panel.

Run from the repository root::

    python3 demos/evaluate_against_panel.py [output_dir]

Five simulated scorers copy the planned hypnogram and relabel a random 15%
of epochs, so they disagree with each other the way human scorers do.  The
demo forms their majority consensus, crops the analysis period, and reports
agreement, architecture metrics and the agreement-ratio distribution.  Two
SVG figures are written to ``output_dir``.
"""

import sys
from pathlib import Path

import numpy as np

from sleeprules import synthpsg as sp
from sleeprules.evalkit import (
    Hypnogram,
    accuracy,
    agreement_distribution,
    cohen_kappa,
    confusion_matrix,
    crop_analysis_period,
    leave_one_out_mad,
    mad_vs_consensus,
    majority_consensus,
    sleep_metrics,
)
from sleeprules.pipeline import score_recording
from sleeprules.render import render_epoch_svg, render_hypnogram_svg
from sleeprules.stager import STAGES

HERE = Path(__file__).resolve().parent


def noisy_scorer(truth: Hypnogram, rng: np.random.Generator, rate: float = 0.15) -> Hypnogram:
    codes = truth.codes().copy()
    flip = rng.random(codes.size) < rate
    codes[flip] = rng.integers(0, 5, int(flip.sum()))
    return Hypnogram(tuple(STAGES[c] for c in codes))


def main(out_dir: Path) -> None:
    recipe = sp.recipe_from_json((HERE / "recipes" / "demo_night.json").read_text())
    recording, truth = sp.synthesize(recipe, "demo_night")
    predicted = score_recording(recording).hypnogram

    rng = np.random.default_rng(7)
    scorers = [noisy_scorer(Hypnogram(truth.hypnogram), rng) for _ in range(5)]
    panel = majority_consensus(scorers)
    first, last = crop_analysis_period(panel)
    print(f"analysis period: epochs {first}..{last} of {len(predicted)}; tie epochs: {int(panel.tie_flags.sum())}")

    pred_c, cons_c = predicted.crop(first, last), panel.consensus.crop(first, last)
    cm = confusion_matrix(pred_c, cons_c)
    print(f"engine vs consensus: accuracy {accuracy(cm):.3f}, kappa {cohen_kappa(cm):.3f}")

    consensus_metrics = sleep_metrics(panel.consensus, (first, last))
    engine_mad = mad_vs_consensus([sleep_metrics(predicted, (first, last))], consensus_metrics)
    scorer_mad = leave_one_out_mad(scorers, (first, last))
    print(f"{'metric':22s} {'engine MAD':>10s} {'scorer MAD':>10s}")
    for key in engine_mad:
        print(f"{key:22s} {engine_mad[key]:10.2f} {scorer_mad[key]:10.2f}")

    agree, disagree, edges = agreement_distribution(pred_c, panel.crop(first, last))
    print("agreement ratio bin    engine agrees  engine disagrees")
    for lo, hi, a, d in zip(edges[:-1], edges[1:], agree, disagree):
        if a or d:
            print(f"[{lo:.1f}, {hi:.1f})          {a:13d}  {d:16d}")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "hypnogram.svg").write_text(render_hypnogram_svg(predicted, panel.consensus, panel.agreement_ratio))
    (out_dir / "epoch_00050.svg").write_text(render_epoch_svg(recording, 50, truth.annotations, predicted.stages[50]))
    print(f"figures written to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_figures"))
