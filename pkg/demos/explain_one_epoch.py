"""Stage two hand-built epochs and explain the second one.

Run from the repository root::

    python3 demos/explain_one_epoch.py

The annotations are written by hand, so the staging trace can be checked
line by line: slow waves cover 3.8% of the second epoch, LAMF covers 22.6%,
one spindle starts in its first half and four start in the second half of
the previous epoch.  N3, W and R are rejected before N2 is accepted.
"""

from sleeprules.annotators import Kind, MicroAnnotation, build_epoch_index
from sleeprules.explain import build_prompt_bundle, render_static
from sleeprules.profile import EmgBaseline, NightProfile
from sleeprules.signal_io import Epoch, Role
from sleeprules.stager import stage_epochs


def annotations() -> list[MicroAnnotation]:
    a = lambda kind, start, end, role=Role.C4M1: MicroAnnotation(kind, start, end, role)
    out = [a(Kind.Spindle, s, s + 0.8) for s in (16.0, 19.0, 23.0, 27.0)]
    out += [
        a(Kind.SWA, 32.0, 33.14, Role.F4M1),
        a(Kind.LAMF, 40.0, 46.78),
        a(Kind.REM, 41.0, 41.1, Role.E1M2),
        a(Kind.LowEmgTone, 30.0, 60.0, Role.ChinEMG),
        a(Kind.Spindle, 35.0, 35.9),
    ]
    return out


def main() -> None:
    index = build_epoch_index(annotations(), [Epoch(0, 0.0), Epoch(1, 30.0)])
    profile = NightProfile(True, 120.0, EmgBaseline(1.0, 2.0, 3.0))
    staged = stage_epochs(index, profile)

    for s in staged:
        print(render_static(s).text())
        print()

    bundle = build_prompt_bundle(staged[1])
    print("prompt bundle for epoch 1 (truncated):")
    print(bundle.to_json()[:800], "...")


if __name__ == "__main__":
    main()
