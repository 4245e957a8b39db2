import sys

import numpy as np
import pytest

from sleeprules import synthpsg as sp
from sleeprules.annotators import Kind, MicroAnnotation, build_epoch_index
from sleeprules.profile import EmgBaseline, NightProfile
from sleeprules.signal_io import Channel, Epoch, Role


def make_channel(samples, fs=128.0, role=Role.Other, label=None, bound=None):
    x = np.asarray(samples, dtype=np.float64)
    if bound is None:
        bound = max(1.0, float(np.ceil(np.max(np.abs(x)) * 1.1 + 1))) if x.size else 1.0
    return Channel(label or role.value, fs, x, -bound, bound, role)


def ann(kind, start, end, role=Role.C4M1):
    return MicroAnnotation(kind, float(start), float(end), role)


def make_index(n_epochs, annotations):
    return build_epoch_index(annotations, [Epoch(i, 30.0 * i) for i in range(n_epochs)])


def profile(generates_alpha=True):
    return NightProfile(generates_alpha, 120.0 if generates_alpha else 0.0, EmgBaseline(1.0, 2.0, 3.0))


def worked_example_annotations():
    """Epoch 1 of this set reproduces the worked example: N3, W and R rejected, N2 accepted."""
    t0 = 30.0
    out = [ann(Kind.Spindle, s, s + 0.8) for s in (16.0, 19.0, 23.0, 27.0)]
    out += [
        ann(Kind.SWA, t0 + 2.0, t0 + 3.14, Role.F4M1),  # 1.14 s = 3.8%
        ann(Kind.LAMF, t0 + 10.0, t0 + 16.78),  # 6.78 s = 22.6%
        ann(Kind.REM, t0 + 11.0, t0 + 11.1, Role.E1M2),
        ann(Kind.LowEmgTone, t0, t0 + 30.0, Role.ChinEMG),
        ann(Kind.Spindle, t0 + 5.0, t0 + 5.9),
    ]
    return out


WORKED_LINES = (
    "Not definite N3 because only 3.8% of the epoch consists of slow wave activity.",
    "Not definite W because 0% of the epoch consists of alpha rhythm or other findings consistent with sleep stage W.",
    "Not definite R because only 22.6% of the epoch meets the criteria for sleep stage R.",
    "The epoch is definite N2. A spindle was found in the first half of the epoch, "
    "and 4 spindles were found in the second half of the previous epoch.",
)


@pytest.fixture(scope="session")
def small_night():
    stages = ["W"] * 8 + ["N1"] * 3 + ["N2"] * 12 + ["N3"] * 8 + ["N2"] * 4 + ["R"] * 10 + ["W"] * 3
    recipe = sp.plan_night(stages, 5)
    rec, truth = sp.synthesize(recipe)
    return recipe, rec, truth


@pytest.fixture(scope="session")
def small_edf(tmp_path_factory, small_night):
    _, rec, _ = small_night
    path = tmp_path_factory.mktemp("edf") / "small.edf"
    path.write_bytes(sp.write_edf(rec))
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.RESULTS, key=str):
        terminalreporter.write_line(module.RESULTS[key])
