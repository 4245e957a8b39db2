"""Synthesize a night with planted events, score it, and compare against the plan.

Run from the repository root::

    python3 demos/score_synthetic_night.py [output_dir]

The recipe in ``demos/recipes/demo_night.json`` describes 176 epochs of
W, N1, N2, N3 and R.  Because every event is planted, the ground-truth
hypnogram is known and the staging result can be scored against it.
"""

import sys
from collections import Counter
from pathlib import Path

from sleeprules import synthpsg as sp
from sleeprules.evalkit import Hypnogram, accuracy, cohen_kappa, confusion_matrix, row_normalize
from sleeprules.explain import render_static
from sleeprules.pipeline import score_recording, write_run

HERE = Path(__file__).resolve().parent


def main(out_dir: Path) -> None:
    recipe = sp.recipe_from_json((HERE / "recipes" / "demo_night.json").read_text())
    recording, truth = sp.synthesize(recipe, "demo_night")
    print(f"synthesized {recording.epoch_count} epochs, {len(recording.channels)} channels, "
          f"{len(truth.annotations)} planted events")

    result = score_recording(recording)
    print(f"alpha generator: {result.profile.generates_alpha_rhythm}, "
          f"detected annotations: {len(result.annotations)}")

    reference = Hypnogram(truth.hypnogram)
    cm = confusion_matrix(result.hypnogram, reference)
    print(f"accuracy vs plan {accuracy(cm):.3f}, kappa {cohen_kappa(cm):.3f}")
    print("row-normalized confusion (%), rows = planned W N1 N2 N3 R:")
    print(row_normalize(cm))

    provenance = Counter(s.provenance.value for s in result.staged)
    print("how each epoch was decided:", dict(sorted(provenance.items())))

    # One epoch per decision path.
    shown = set()
    for staged in result.staged:
        if staged.provenance in shown:
            continue
        shown.add(staged.provenance)
        print()
        print(render_static(staged).text())

    write_run(result, out_dir)
    print(f"\nrun artifacts written to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_run"))
