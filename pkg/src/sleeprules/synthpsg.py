"""Synthetic PSG nights with planted events, and an EDF writer.

Signals are crude: coloured noise plus analytic templates whose amplitude,
duration and slope are known exactly. They exist to exercise the detectors
and the rule engine, not to look like real sleep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .annotators import Kind, MicroAnnotation
from .errors import CalibrationError, EmptyRecordingError, RecipeError
from .signal_io import EPOCH_SECONDS, Channel, Recording, Role
from .stager import Stage

__all__ = [
    "EventSpec",
    "EpochPlan",
    "NoiseSpec",
    "NightRecipe",
    "GroundTruth",
    "synthesize",
    "write_edf",
    "typical_events",
    "plan_night",
    "recipe_from_json",
    "recipe_to_json",
]

PLANTABLE = (Kind.Spindle, Kind.SWA, Kind.REM, Kind.Alpha, Kind.EyeBlink, Kind.KComplex)

# Where each template is drawn, and the role its truth annotation names.
_TARGET_ROLE = {
    Kind.Spindle: Role.C4M1,
    Kind.SWA: Role.F4M1,
    Kind.KComplex: Role.F4M1,
    Kind.Alpha: Role.O2M1,
    Kind.REM: Role.E1M2,
    Kind.EyeBlink: Role.E1M2,
}

_LABELS = {
    Role.F4M1: "EEG F4-M1",
    Role.C4M1: "EEG C4-M1",
    Role.O2M1: "EEG O2-M1",
    Role.E1M2: "EOG E1-M2",
    Role.E2M1: "EOG E2-M1",
    Role.ChinEMG: "EMG Chin",
}

_DEFAULTS = {
    # amplitude (uV), frequency (Hz)
    Kind.Spindle: (40.0, 13.0),
    Kind.SWA: (150.0, 1.0),
    Kind.KComplex: (120.0, None),
    Kind.Alpha: (40.0, 10.0),
    Kind.REM: (150.0, None),
    Kind.EyeBlink: (120.0, 1.0),
}

REM_RISE = 0.1
REM_DECAY = 0.5
BLINK_WIDTH = 0.3


@dataclass(frozen=True)
class EventSpec:
    """One planted event, timed relative to its epoch's start.

    ``frequency`` is the carrier for spindles and alpha, the wave frequency
    for slow waves and the repetition rate for blink trains.
    """

    kind: Kind
    onset: float
    duration: float
    amplitude: float | None = None
    frequency: float | None = None

    def resolved(self) -> "EventSpec":
        amp, freq = _DEFAULTS[self.kind]
        return replace(self, amplitude=self.amplitude if self.amplitude is not None else amp,
                       frequency=self.frequency if self.frequency is not None else freq)


@dataclass(frozen=True)
class EpochPlan:
    stage: Stage
    events: tuple[EventSpec, ...] = ()


@dataclass(frozen=True)
class NoiseSpec:
    """Background noise: ``color`` is "pink", "white" or "lowpass_pink"."""

    color: str
    amplitude: float
    knee: float = 1.0


DEFAULT_NOISE = {
    Role.F4M1: NoiseSpec("pink", 12.0),
    Role.C4M1: NoiseSpec("pink", 12.0),
    Role.O2M1: NoiseSpec("pink", 12.0),
    Role.E1M2: NoiseSpec("lowpass_pink", 5.0),
    Role.E2M1: NoiseSpec("lowpass_pink", 5.0),
    Role.ChinEMG: NoiseSpec("white", 10.0),
}

DEFAULT_RATES = {
    Role.F4M1: 128.0,
    Role.C4M1: 128.0,
    Role.O2M1: 128.0,
    Role.E1M2: 128.0,
    Role.E2M1: 128.0,
    Role.ChinEMG: 256.0,
}

# Per-stage multipliers of the EEG background and chin EMG amplitude.
DEFAULT_EEG_SCALE = {Stage.Wake: 1.0, Stage.N1: 0.25, Stage.N2: 1.0, Stage.N3: 1.0, Stage.R: 0.25}
DEFAULT_EMG_SCALE = {Stage.Wake: 2.0, Stage.N1: 1.2, Stage.N2: 1.0, Stage.N3: 1.0, Stage.R: 0.25}


@dataclass(frozen=True)
class NightRecipe:
    seed: int
    epoch_plan: tuple[EpochPlan, ...]
    noise: Mapping[Role, NoiseSpec] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    sample_rates: Mapping[Role, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    eeg_scale: Mapping[Stage, float] = field(default_factory=lambda: dict(DEFAULT_EEG_SCALE))
    emg_scale: Mapping[Stage, float] = field(default_factory=lambda: dict(DEFAULT_EMG_SCALE))

    @property
    def epoch_count(self) -> int:
        return len(self.epoch_plan)


@dataclass
class GroundTruth:
    hypnogram: tuple[Stage, ...]
    annotations: list[MicroAnnotation]

    def count(self, kind: Kind) -> int:
        return sum(1 for a in self.annotations if a.kind is kind)

    def to_json(self) -> str:
        return json.dumps({
            "hypnogram": [s.value for s in self.hypnogram],
            "annotations": [a.to_json() for a in self.annotations],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        doc = json.loads(text)
        return cls(tuple(Stage(s) for s in doc["hypnogram"]),
                   [MicroAnnotation.from_json(a, i) for i, a in enumerate(doc["annotations"])])


# Noise ------------------------------------------------------------------------

def _coloured_noise(rng: np.random.Generator, n: int, fs: float, spec: NoiseSpec) -> np.ndarray:
    white = rng.standard_normal(n)
    if spec.color == "white":
        x = white
    elif spec.color in ("pink", "lowpass_pink"):
        spec_w = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / fs)
        # Flat below the knee so the background carries little slow-wave power.
        shaping = 1.0 / np.sqrt(np.maximum(f, spec.knee))
        if spec.color == "lowpass_pink":
            shaping = shaping / np.sqrt(1.0 + (f / 2.0) ** 4)
        shaping[0] = 0.0
        x = np.fft.irfft(spec_w * shaping, n)
    else:
        raise RecipeError(f"unknown noise color {spec.color!r}")
    std = x.std()
    return x * (spec.amplitude / std) if std > 0 else x


# Templates --------------------------------------------------------------------

def _spindle(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    taper = signal.windows.tukey(t.size, 0.25)
    return ev.amplitude * taper * np.sin(2 * np.pi * ev.frequency * t)


def _alpha(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    taper = signal.windows.tukey(t.size, min(1.0, 0.2 / max(ev.duration, 0.2)))
    return ev.amplitude * taper * np.sin(2 * np.pi * ev.frequency * t)


def _slow_waves(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    # Whole cycles, negative phase first; amplitude is peak-to-peak.
    return -0.5 * ev.amplitude * np.sin(2 * np.pi * ev.frequency * t)


def _kcomplex(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    neg = ev.duration * 0.4
    y = np.where(t < neg, -ev.amplitude * np.sin(np.pi * t / neg),
                 0.6 * ev.amplitude * np.sin(np.pi * (t - neg) / (ev.duration - neg)))
    return y


def _rem(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    rise = np.clip(t / REM_RISE, 0, 1)
    decay = np.clip(1 - (t - REM_RISE) / REM_DECAY, 0, 1)
    return ev.amplitude * np.where(t < REM_RISE, rise, decay)


def _blink_train(t: np.ndarray, ev: EventSpec) -> np.ndarray:
    y = np.zeros_like(t)
    period = 1.0 / ev.frequency
    for k in range(_blink_count(ev)):
        u = (t - k * period) / BLINK_WIDTH
        inside = (u >= 0) & (u <= 1)
        y[inside] += ev.amplitude * np.sin(np.pi * u[inside]) ** 2
    return y


def _blink_count(ev: EventSpec) -> int:
    return int(math.floor((ev.duration - BLINK_WIDTH) * ev.frequency + 1e-9)) + 1


def _template_extent(ev: EventSpec) -> float:
    if ev.kind is Kind.REM:
        return REM_RISE + REM_DECAY
    return ev.duration


def _truth_span(ev: EventSpec) -> tuple[float, float]:
    if ev.kind is Kind.REM:
        return 0.0, REM_RISE
    if ev.kind is Kind.EyeBlink:
        return 0.0, (_blink_count(ev) - 1) / ev.frequency + BLINK_WIDTH
    return 0.0, ev.duration


def _validate(plan: Sequence[EpochPlan]) -> None:
    if not plan:
        raise RecipeError("epoch plan is empty")
    for t, ep in enumerate(plan):
        if ep.stage is Stage.Undefined:
            raise RecipeError(f"epoch {t}: stage must be one of W, N1, N2, N3, R")
        for ev in ep.events:
            if ev.kind not in PLANTABLE:
                raise RecipeError(f"epoch {t}: {ev.kind.value} cannot be planted")
            if ev.duration <= 0 or ev.onset < 0:
                raise RecipeError(f"epoch {t}: {ev.kind.value} needs onset >= 0 and duration > 0")
            if ev.onset + _template_extent(ev.resolved()) > EPOCH_SECONDS + 1e-9:
                raise RecipeError(
                    f"epoch {t}: {ev.kind.value} at {ev.onset} s lasting {ev.duration} s overflows the epoch"
                )
            if ev.kind is Kind.EyeBlink and _blink_count(ev.resolved()) < 1:
                raise RecipeError(f"epoch {t}: blink train shorter than one blink")


def _physical_range(x: np.ndarray) -> tuple[float, float]:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    bound = float(math.ceil(peak * 1.1 + 1.0))
    return -bound, bound


_TEMPLATES = {
    Kind.Spindle: _spindle,
    Kind.Alpha: _alpha,
    Kind.SWA: _slow_waves,
    Kind.KComplex: _kcomplex,
    Kind.REM: _rem,
    Kind.EyeBlink: _blink_train,
}


def synthesize(recipe: NightRecipe, recording_id: str = "synthetic") -> tuple[Recording, GroundTruth]:
    """Render a recipe into a role-mapped Recording plus its ground truth."""
    _validate(recipe.epoch_plan)
    rng = np.random.default_rng(recipe.seed)
    n_epochs = recipe.epoch_count
    duration = n_epochs * EPOCH_SECONDS
    stages = [ep.stage for ep in recipe.epoch_plan]

    data: dict[Role, np.ndarray] = {}
    for role in (Role.F4M1, Role.C4M1, Role.O2M1, Role.E1M2, Role.E2M1, Role.ChinEMG):
        fs = recipe.sample_rates[role]
        if abs(fs - round(fs)) > 1e-9:
            raise RecipeError(f"{role.value}: sample rate must be a whole number of Hz")
        n = int(round(duration * fs))
        x = _coloured_noise(rng, n, fs, recipe.noise[role])
        per_epoch = int(round(EPOCH_SECONDS * fs))
        if role in (Role.F4M1, Role.C4M1, Role.O2M1):
            x *= np.repeat([recipe.eeg_scale[s] for s in stages], per_epoch)
        elif role is Role.ChinEMG:
            x *= np.repeat([recipe.emg_scale[s] for s in stages], per_epoch)
        data[role] = x

    truth: list[MicroAnnotation] = []
    for t, ep in enumerate(recipe.epoch_plan):
        for ev in ep.events:
            ev = ev.resolved()
            start = t * EPOCH_SECONDS + ev.onset
            role = _TARGET_ROLE[ev.kind]
            fs = recipe.sample_rates[role]
            i0 = int(round(start * fs))
            n = int(round(_template_extent(ev) * fs))
            tt = np.arange(n) / fs
            y = _TEMPLATES[ev.kind](tt, ev)
            if ev.kind in (Kind.REM, Kind.EyeBlink):
                # Conjugate eye movements appear with opposite sign on the two EOG derivations.
                data[Role.E1M2][i0:i0 + n] += y
                data[Role.E2M1][i0:i0 + n] -= y
            else:
                data[role][i0:i0 + n] += y
                if ev.kind is Kind.SWA:
                    data[Role.C4M1][i0:i0 + n] += 0.8 * y
            s, e = _truth_span(ev)
            truth.append(MicroAnnotation(ev.kind, round(start + s, 9), round(start + e, 9), role))

    channels = []
    for role, x in data.items():
        x.setflags(write=False)
        lo, hi = _physical_range(x)
        channels.append(Channel(_LABELS[role], recipe.sample_rates[role], x, lo, hi, role))
    rec = Recording(recording_id, tuple(channels), duration)
    return rec, GroundTruth(tuple(stages), truth)


# Recipe helpers ---------------------------------------------------------------

def typical_events(stage: Stage, rng: np.random.Generator) -> tuple[EventSpec, ...]:
    """A plausible event set for one epoch of ``stage``."""
    if stage is Stage.Wake:
        onset = float(rng.uniform(0.5, 4.0))
        return (EventSpec(Kind.Alpha, round(onset, 2), round(float(rng.uniform(18.0, 24.0)), 2)),)
    if stage is Stage.N2:
        a = float(rng.uniform(1.0, 12.0))
        b = float(rng.uniform(16.0, 27.0))
        return (EventSpec(Kind.Spindle, round(a, 2), 1.0), EventSpec(Kind.Spindle, round(b, 2), 1.0))
    if stage is Stage.N3:
        n_cycles = int(rng.integers(10, 18))
        onset = float(rng.uniform(0.5, 29.0 - n_cycles))
        return (EventSpec(Kind.SWA, round(onset, 2), float(n_cycles)),)
    if stage is Stage.R:
        onsets = np.sort(rng.choice(np.arange(1, 28, 3.0), size=3, replace=False))
        return tuple(EventSpec(Kind.REM, float(o), REM_RISE) for o in onsets)
    return ()


def plan_night(stages: Sequence[Stage | str], seed: int) -> NightRecipe:
    """Recipe whose events are drawn by :func:`typical_events` from ``seed``."""
    rng = np.random.default_rng([seed, 1])
    plan = []
    for s in stages:
        stage = s if isinstance(s, Stage) else Stage.parse(s)
        plan.append(EpochPlan(stage, typical_events(stage, rng)))
    return NightRecipe(seed, tuple(plan))


def eight_hour_stages() -> list[Stage]:
    """960 epochs of cyclic architecture: sleep onset, four NREM-REM cycles, morning wake."""
    cycle = [Stage.N1] * 6 + [Stage.N2] * 50 + [Stage.N3] * 40 + [Stage.N2] * 40 + [Stage.R] * 44 + [Stage.Wake] * 4
    stages = [Stage.Wake] * 40 + cycle * 5
    stages += [Stage.Wake] * (960 - len(stages))
    return stages[:960]


def recipe_to_json(recipe: NightRecipe) -> str:
    doc = {
        "seed": recipe.seed,
        "epochs": [
            {"stage": ep.stage.value,
             "events": [{k: v for k, v in (("kind", ev.kind.value), ("onset", ev.onset),
                                            ("duration", ev.duration), ("amplitude", ev.amplitude),
                                            ("frequency", ev.frequency)) if v is not None}
                        for ev in ep.events]}
            for ep in recipe.epoch_plan
        ],
        "noise": {r.value: {"color": n.color, "amplitude": n.amplitude, "knee": n.knee}
                  for r, n in recipe.noise.items()},
        "sample_rates": {r.value: fs for r, fs in recipe.sample_rates.items()},
        "eeg_scale": {s.value: v for s, v in recipe.eeg_scale.items()},
        "emg_scale": {s.value: v for s, v in recipe.emg_scale.items()},
    }
    return json.dumps(doc, indent=1)


def recipe_from_json(text: str) -> NightRecipe:
    """Parse a recipe document.

    Besides an explicit ``epochs`` list, a ``segments`` list of
    ``{"stage": ..., "epochs": n}`` entries may be given; events for those
    epochs are drawn by :func:`typical_events` from the seed.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecipeError(f"recipe is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise RecipeError("recipe must be a JSON object")
    known = {"seed", "epochs", "segments", "noise", "sample_rates", "eeg_scale", "emg_scale"}
    unknown = set(doc) - known
    if unknown:
        raise RecipeError(f"unknown recipe keys: {', '.join(sorted(unknown))}")
    try:
        seed = int(doc.get("seed", 0))
        if "epochs" in doc and "segments" in doc:
            raise RecipeError("give either 'epochs' or 'segments', not both")
        if "segments" in doc:
            stages = [Stage.parse(seg["stage"]) for seg in doc["segments"] for _ in range(int(seg["epochs"]))]
            base = plan_night(stages, seed)
            plan = base.epoch_plan
        else:
            plan = tuple(
                EpochPlan(Stage.parse(ep["stage"]),
                          tuple(EventSpec(Kind(ev["kind"]), float(ev["onset"]), float(ev["duration"]),
                                          ev.get("amplitude"), ev.get("frequency")) for ev in ep.get("events", ())))
                for ep in doc.get("epochs", ())
            )
        kwargs = {}
        if "noise" in doc:
            noise = dict(DEFAULT_NOISE)
            noise.update({Role(r): NoiseSpec(**n) for r, n in doc["noise"].items()})
            kwargs["noise"] = noise
        if "sample_rates" in doc:
            rates = dict(DEFAULT_RATES)
            rates.update({Role(r): float(v) for r, v in doc["sample_rates"].items()})
            kwargs["sample_rates"] = rates
        for key, default in (("eeg_scale", DEFAULT_EEG_SCALE), ("emg_scale", DEFAULT_EMG_SCALE)):
            if key in doc:
                scale = dict(default)
                scale.update({Stage.parse(s): float(v) for s, v in doc[key].items()})
                kwargs[key] = scale
    except RecipeError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RecipeError(f"malformed recipe: {exc}") from None
    recipe = NightRecipe(seed, plan, **kwargs)
    _validate(recipe.epoch_plan)
    return recipe


# EDF writer -------------------------------------------------------------------

DIGITAL_MIN = -32768
DIGITAL_MAX = 32767


def _fixed(value, width: int) -> bytes:
    text = str(value)
    if len(text) > width:
        raise CalibrationError(f"header value {text!r} does not fit in {width} characters")
    return text.ljust(width).encode("ascii")


def _number8(value: float) -> bytes:
    if float(value).is_integer():
        return _fixed(int(value), 8)
    for digits in range(8, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= 8:
            return _fixed(text, 8)
    raise CalibrationError(f"cannot encode {value} in 8 characters")


def write_edf(recording: Recording) -> bytes:
    """Serialise a recording as EDF with one-second data records.

    Each channel's physical range is mapped onto the full int16 range.
    """
    if not recording.channels or recording.duration <= 0:
        raise EmptyRecordingError("cannot write a recording without samples")
    n_records = int(round(recording.duration))
    if abs(recording.duration - n_records) > 1e-9:
        raise ValueError("recording duration must be a whole number of seconds")
    digital = []
    per_record = []
    for ch in recording.channels:
        spr = int(round(ch.sample_rate))
        if abs(ch.sample_rate - spr) > 1e-9 or ch.samples.size != spr * n_records:
            raise ValueError(f"{ch.label}: samples do not fill {n_records} one-second records")
        if ch.samples.size == 0:
            raise EmptyRecordingError(f"{ch.label} has no samples")
        x = np.asarray(ch.samples, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise CalibrationError(f"{ch.label}: non-finite samples")
        # Calibrate with the header's rounded values so the reader inverts exactly.
        pmin, pmax = float(_number8(ch.physical_min)), float(_number8(ch.physical_max))
        gain = (pmax - pmin) / (DIGITAL_MAX - DIGITAL_MIN)
        d = np.round((x - pmin) / gain + DIGITAL_MIN)
        if d.min() < DIGITAL_MIN or d.max() > DIGITAL_MAX:
            raise CalibrationError(f"{ch.label}: samples outside the physical range [{pmin}, {pmax}]")
        digital.append(d.astype("<i2").reshape(n_records, spr))
        per_record.append(spr)

    ns = len(recording.channels)
    head = b"".join((
        _fixed("0", 8),
        _fixed("X X X X", 80),
        _fixed("Startdate X X X X", 80),
        _fixed("01.01.00", 8),
        _fixed("00.00.00", 8),
        _fixed(256 * (ns + 1), 8),
        _fixed("", 44),
        _fixed(n_records, 8),
        _fixed(1, 8),
        _fixed(ns, 4),
    ))
    columns = (
        [_fixed(ch.label, 16) for ch in recording.channels],
        [_fixed("", 80) for _ in recording.channels],
        [_fixed("uV", 8) for _ in recording.channels],
        [_number8(ch.physical_min) for ch in recording.channels],
        [_number8(ch.physical_max) for ch in recording.channels],
        [_fixed(DIGITAL_MIN, 8) for _ in recording.channels],
        [_fixed(DIGITAL_MAX, 8) for _ in recording.channels],
        [_fixed("", 80) for _ in recording.channels],
        [_fixed(spr, 8) for spr in per_record],
        [_fixed("", 32) for _ in recording.channels],
    )
    head += b"".join(b"".join(col) for col in columns)
    body = np.concatenate(digital, axis=1).tobytes()
    return head + body
