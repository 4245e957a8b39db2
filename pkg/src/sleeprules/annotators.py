"""Micro-annotation detectors and the per-epoch annotation index.

Every detector is a deterministic threshold rule over one or two channels and
returns a list of :class:`MicroAnnotation`. Times are seconds from the start
of the recording.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy import signal

from . import dsp
from .errors import DetectorError
from .signal_io import CENTRAL, EPOCH_SECONDS, FRONTAL, OCCIPITAL, Channel, Epoch, Role

if TYPE_CHECKING:
    from .profile import EmgBaseline

# Durations are compared at nanosecond resolution so that float noise in
# interval arithmetic cannot flip a threshold decision.
TIME_DECIMALS = 9


class Kind(str, enum.Enum):
    Alpha = "Alpha"
    LAMF = "LAMF"
    Spindle = "Spindle"
    SWA = "SWA"
    REM = "REM"
    KComplex = "KComplex"
    LowEmgTone = "LowEmgTone"
    HighEmgTone = "HighEmgTone"
    EyeBlink = "EyeBlink"


_KIND_ORDER = {k: i for i, k in enumerate(Kind)}
_ROLE_ORDER = {r: i for i, r in enumerate(Role)}


@dataclass(frozen=True)
class MicroAnnotation:
    kind: Kind
    start: float
    end: float
    channel_role: Role
    score: float = 1.0
    id: int = -1

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"annotation must have start < end, got [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "start_s": round(self.start, 6),
            "end_s": round(self.end, 6),
            "channel": self.channel_role.value,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj: dict, id: int = -1) -> "MicroAnnotation":
        return cls(Kind(obj["kind"]), float(obj["start_s"]), float(obj["end_s"]),
                   Role(obj["channel"]), float(obj.get("score", 1.0)), id)


def sort_key(a: MicroAnnotation):
    return (a.start, _KIND_ORDER[a.kind], _ROLE_ORDER[a.channel_role], a.end)


def annotations_to_jsonl(annotations: Iterable[MicroAnnotation]) -> str:
    return "".join(json.dumps(a.to_json(), sort_keys=True) + "\n" for a in annotations)


def annotations_from_jsonl(text: str) -> list[MicroAnnotation]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    return [MicroAnnotation.from_json(json.loads(ln), i) for i, ln in enumerate(lines)]


@dataclass(frozen=True)
class DetectorConfig:
    """Detector thresholds. Amplitudes in uV, times in seconds, bands in Hz."""

    alpha_window: float = 2.0
    alpha_step: float = 0.5
    alpha_band: tuple[float, float] = (8.0, 12.0)
    alpha_min_ratio: float = 0.5
    alpha_roles: tuple[Role, ...] = OCCIPITAL
    alpha_fallback_roles: tuple[Role, ...] = CENTRAL

    lamf_std_factor: float = 0.01
    lamf_min_duration: float = 1.0
    lamf_band: tuple[float, float] = (4.0, 7.0)
    lamf_min_ratio: float = 0.01
    lamf_roles: tuple[Role, ...] = CENTRAL + FRONTAL

    spindle_band: tuple[float, float] = (11.0, 16.0)
    spindle_rms_window: float = 0.25
    spindle_threshold_factor: float = 2.5
    spindle_min_duration: float = 0.5
    spindle_max_duration: float = 2.0
    spindle_roles: tuple[Role, ...] = CENTRAL + FRONTAL

    swa_band: tuple[float, float] = (0.5, 2.0)
    swa_min_ptp: float = 75.0
    swa_min_duration: float = 0.5
    swa_max_duration: float = 2.0
    swa_roles: tuple[Role, ...] = FRONTAL + CENTRAL

    rem_band: tuple[float, float] = (0.3, 10.0)
    rem_min_slope: float = 500.0
    rem_min_sustain: float = 0.04
    rem_max_deflection: float = 0.5

    kcomplex_enabled: bool = False
    kcomplex_band: tuple[float, float] = (0.3, 4.0)
    kcomplex_max_negative: float = -40.0
    kcomplex_rebound_window: float = 1.0
    kcomplex_min_rebound: float = 20.0
    kcomplex_min_duration: float = 0.5
    kcomplex_max_duration: float = 1.5
    kcomplex_min_ptp: float = 75.0
    kcomplex_roles: tuple[Role, ...] = FRONTAL

    emg_rms_window: float = 0.5
    emg_low_factor: float = 1.2

    blink_band: tuple[float, float] = (0.3, 10.0)
    blink_min_ptp: float = 50.0
    blink_min_rate: float = 0.5
    blink_max_rate: float = 2.0
    blink_min_count: int = 3


DEFAULT_DETECTORS = DetectorConfig()


# Interval helpers -------------------------------------------------------------

def merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Merge overlapping or touching intervals into maximal sorted runs."""
    out: list[list[float]] = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def union_length(intervals: Iterable[tuple[float, float]]) -> float:
    return round(sum(e - s for s, e in merge_intervals(intervals)), TIME_DECIMALS)


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start (inclusive) and stop (exclusive) indices of True runs."""
    padded = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return edges[0::2], edges[1::2]


def _min_samples(seconds: float, sample_rate: float) -> int:
    return int(math.ceil(seconds * sample_rate - 1e-9))


# Detectors ------------------------------------------------------------------

def alpha_intervals(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[tuple[float, float]]:
    """Merged extents of sliding windows whose alpha-band ratio qualifies."""
    starts, ratios = dsp.sliding_band_ratio(
        channel.samples, channel.sample_rate, cfg.alpha_window, cfg.alpha_step, cfg.alpha_band
    )
    fs = channel.sample_rate
    win = int(round(cfg.alpha_window * fs)) / fs
    hop = max(1, int(round(cfg.alpha_step * fs))) / fs
    # Each qualifying window vouches for the hop-wide slice around its centre;
    # whole-window extents would dilate a burst by up to one window length.
    lead = win / 2 - hop / 2
    hits = starts[ratios >= cfg.alpha_min_ratio]
    return merge_intervals((round(float(s) + lead, TIME_DECIMALS), round(float(s) + lead + hop, TIME_DECIMALS))
                           for s in hits)


def detect_alpha(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    return [MicroAnnotation(Kind.Alpha, s, e, channel.role) for s, e in alpha_intervals(channel, cfg)]


def detect_lamf(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Low-amplitude mixed-frequency runs.

    A run is a maximal stretch with ``|x| < mean(|x|) - k * std(|x|)`` lasting
    at least ``lamf_min_duration``; it is kept when its theta-band (4-7 Hz)
    share of spectral power reaches ``lamf_min_ratio``.
    """
    x = channel.samples
    fs = channel.sample_rate
    if x.size == 0:
        return []
    amp = np.abs(x)
    theta = amp.mean() - cfg.lamf_std_factor * amp.std()
    starts, stops = _runs(amp < theta)
    keep = (stops - starts) >= _min_samples(cfg.lamf_min_duration, fs)
    out = []
    for i0, i1 in zip(starts[keep], stops[keep]):
        seg = x[i0:i1]
        window = min(2.0, seg.size / fs)
        psd = dsp.welch_psd(seg, fs, window, 0.5)
        if dsp.relative_band_power(psd, cfg.lamf_band) >= cfg.lamf_min_ratio:
            out.append(MicroAnnotation(Kind.LAMF, i0 / fs, i1 / fs, channel.role))
    return out


def detect_spindles(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Sigma-band bursts whose RMS envelope exceeds a multiple of its night median."""
    fs = channel.sample_rate
    if channel.samples.size == 0:
        return []
    sigma = dsp.bandpass(channel.samples, fs, cfg.spindle_band)
    env = dsp.moving_rms(sigma, fs, cfg.spindle_rms_window)
    threshold = cfg.spindle_threshold_factor * float(np.median(env))
    if threshold <= 0:
        return []
    starts, stops = _runs(env > threshold)
    dur = (stops - starts) / fs
    ok = (dur >= cfg.spindle_min_duration - 1e-9) & (dur <= cfg.spindle_max_duration + 1e-9)
    return [MicroAnnotation(Kind.Spindle, i0 / fs, i1 / fs, channel.role)
            for i0, i1 in zip(starts[ok], stops[ok])]


def _zero_crossings(y: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample index before each sign change and its interpolated time."""
    pos = y >= 0
    idx = np.flatnonzero(pos[1:] != pos[:-1])
    a, b = y[idx], y[idx + 1]
    frac = np.where(a != b, a / (a - b), 0.0)
    return idx, (idx + frac) / fs


def detect_swa(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Slow waves: negative-then-positive half-wave pairs of the 0.5-2 Hz signal.

    A pair spans three consecutive zero crossings; it qualifies when its
    peak-to-peak amplitude and full-wave duration are within bounds.
    """
    fs = channel.sample_rate
    y = dsp.bandpass(channel.samples, fs, cfg.swa_band)
    idx, times = _zero_crossings(y, fs)
    if idx.size < 3:
        return []
    # Half-wave k spans samples idx[k]+1 .. idx[k+1] inclusive.
    bounds = idx + 1
    # The final reduceat slice runs to the array end and is not a half-wave.
    hmax = np.maximum.reduceat(y, bounds)[:-1]
    hmin = np.minimum.reduceat(y, bounds)[:-1]
    ptp = np.maximum(hmax[:-1], hmax[1:]) - np.minimum(hmin[:-1], hmin[1:])
    t0, t1 = times[:-2], times[2:]
    dur = t1 - t0
    negative_first = y[bounds[:-2]] < 0
    ok = negative_first & (ptp >= cfg.swa_min_ptp) & (dur >= cfg.swa_min_duration) & (dur <= cfg.swa_max_duration)
    return [MicroAnnotation(Kind.SWA, float(s), float(e), channel.role) for s, e in zip(t0[ok], t1[ok])]


def _slope_candidates(y: np.ndarray, fs: float, cfg: DetectorConfig):
    """Steep deflections as (start_s, end_s, sign)."""
    slope = np.diff(y) * fs
    out = []
    min_len = _min_samples(cfg.rem_min_sustain, fs)
    for sign, mask in ((1, slope >= cfg.rem_min_slope), (-1, slope <= -cfg.rem_min_slope)):
        starts, stops = _runs(mask)
        for i0, i1 in zip(starts, stops):
            n = i1 - i0
            if n >= min_len and n / fs < cfg.rem_max_deflection:
                out.append((i0 / fs, i1 / fs, sign))
    out.sort()
    return out


def _require_eog(left: Channel | None, right: Channel | None) -> None:
    if left is None or right is None:
        raise DetectorError("both EOG channels (E1-M2 and E2-M1) are required")


def detect_rems(eog_left: Channel | None, eog_right: Channel | None,
                cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Rapid eye movements: steep, simultaneous, out-of-phase EOG deflections."""
    _require_eog(eog_left, eog_right)
    lc = _slope_candidates(dsp.bandpass(eog_left.samples, eog_left.sample_rate, cfg.rem_band),
                           eog_left.sample_rate, cfg)
    rc = _slope_candidates(dsp.bandpass(eog_right.samples, eog_right.sample_rate, cfg.rem_band),
                           eog_right.sample_rate, cfg)
    r_starts = np.array([c[0] for c in rc])
    spans = []
    for s, e, sign in lc:
        # Right candidates that can overlap [s, e) start before e.
        hi = int(np.searchsorted(r_starts, e, side="left"))
        for rs, re_, rsign in rc[:hi]:
            if re_ > s and rsign == -sign:
                spans.append((min(s, rs), max(e, re_)))
    return [MicroAnnotation(Kind.REM, s, e, eog_left.role) for s, e in merge_intervals(spans)]


def detect_kcomplexes(channel: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Biphasic waves: a negative peak followed by a positive rebound.

    Returns an empty list unless ``cfg.kcomplex_enabled``.
    """
    if not cfg.kcomplex_enabled:
        return []
    fs = channel.sample_rate
    y = dsp.bandpass(channel.samples, fs, cfg.kcomplex_band)
    troughs, _ = signal.find_peaks(-y, height=-cfg.kcomplex_max_negative)
    neg = y < 0
    down = np.flatnonzero(~neg[:-1] & neg[1:]) + 1  # first negative sample
    rebound = int(round(cfg.kcomplex_rebound_window * fs))
    spans = []
    for i in troughs:
        k = np.searchsorted(down, i, side="right") - 1
        if k < 0:
            continue
        start = down[k]
        window = y[i + 1:i + 1 + rebound]
        if window.size == 0:
            continue
        p = i + 1 + int(np.argmax(window))
        if y[p] < cfg.kcomplex_min_rebound:
            continue
        k_end = np.searchsorted(down, p, side="right")
        if k_end >= down.size:
            continue
        end = down[k_end]
        dur = (end - start) / fs
        if not (cfg.kcomplex_min_duration <= dur <= cfg.kcomplex_max_duration):
            continue
        if y[p] - y[i] < cfg.kcomplex_min_ptp:
            continue
        spans.append((start / fs, end / fs))
    return [MicroAnnotation(Kind.KComplex, s, e, channel.role) for s, e in merge_intervals(spans)]


def emg_epoch_levels(chin: Channel, cfg: DetectorConfig = DEFAULT_DETECTORS) -> np.ndarray:
    """Median 0.5 s RMS envelope of the chin channel, one value per full epoch."""
    fs = chin.sample_rate
    env = dsp.moving_rms(chin.samples, fs, cfg.emg_rms_window)
    per_epoch = int(round(EPOCH_SECONDS * fs))
    n_epochs = env.size // per_epoch
    if n_epochs == 0:
        return np.empty(0)
    return np.median(env[: n_epochs * per_epoch].reshape(n_epochs, per_epoch), axis=1)


def tone_for_level(level: float, baseline: "EmgBaseline", cfg: DetectorConfig = DEFAULT_DETECTORS) -> Kind | None:
    # Low tone wins when the baseline is so narrow that both bounds hold.
    if level <= baseline.rms_p10 * cfg.emg_low_factor:
        return Kind.LowEmgTone
    if level >= baseline.rms_p90:
        return Kind.HighEmgTone
    return None


def classify_emg_tone(chin: Channel, baseline: "EmgBaseline",
                      cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    out = []
    for t, level in enumerate(emg_epoch_levels(chin, cfg)):
        kind = tone_for_level(float(level), baseline, cfg)
        if kind is not None:
            out.append(MicroAnnotation(kind, t * EPOCH_SECONDS, (t + 1) * EPOCH_SECONDS, chin.role))
    return out


def detect_eye_blinks(eog_left: Channel | None, eog_right: Channel | None,
                      cfg: DetectorConfig = DEFAULT_DETECTORS) -> list[MicroAnnotation]:
    """Trains of at least ``blink_min_count`` out-of-phase EOG deflections.

    Deflections are peaks of the antisymmetric component ``(L - R) / 2`` with
    prominence of at least ``blink_min_ptp``; consecutive deflections of a
    train are separated by 1/``blink_max_rate`` to 1/``blink_min_rate`` s.
    """
    _require_eog(eog_left, eog_right)
    fs = eog_left.sample_rate
    yl = dsp.bandpass(eog_left.samples, fs, cfg.blink_band)
    yr = dsp.bandpass(eog_right.samples, eog_right.sample_rate, cfg.blink_band)
    n = min(yl.size, yr.size)
    yl, yr = yl[:n], yr[:n]
    anti = (yl - yr) / 2
    min_gap, max_gap = 1.0 / cfg.blink_max_rate, 1.0 / cfg.blink_min_rate
    spans = []
    for polarity in (1, -1):
        peaks, props = signal.find_peaks(polarity * anti, prominence=cfg.blink_min_ptp)
        keep = yl[peaks] * yr[peaks] < 0
        peaks = peaks[keep]
        if peaks.size < cfg.blink_min_count:
            continue
        _, _, left, right = signal.peak_widths(polarity * anti, peaks, rel_height=0.5)
        gaps = np.diff(peaks) / fs
        linked = (gaps >= min_gap - 1e-9) & (gaps <= max_gap + 1e-9)
        starts, stops = _runs(linked)
        for g0, g1 in zip(starts, stops):
            # Gaps g0..g1-1 chain peaks g0..g1.
            if g1 - g0 + 1 >= cfg.blink_min_count:
                spans.append((left[g0] / fs, right[g1] / fs))
    return [MicroAnnotation(Kind.EyeBlink, s, e, eog_left.role) for s, e in merge_intervals(spans)]


# Epoch index ------------------------------------------------------------------

@dataclass(frozen=True)
class ClippedAnnotation:
    source: MicroAnnotation
    start: float
    end: float


@dataclass
class EpochContext:
    """Annotations overlapping one epoch, clipped to its bounds."""

    epoch: Epoch
    clipped: dict[Kind, list[ClippedAnnotation]] = field(default_factory=dict)

    def items(self, *kinds: Kind) -> list[ClippedAnnotation]:
        return [c for k in kinds for c in self.clipped.get(k, ())]

    def coverage(self, *kinds: Kind, role: Role | None = None) -> float:
        """Union duration of the given kinds inside the epoch, over 30 s."""
        spans = [(c.start, c.end) for c in self.items(*kinds)
                 if role is None or c.source.channel_role is role]
        return union_length(spans) / EPOCH_SECONDS

    def has(self, *kinds: Kind) -> bool:
        return bool(self.items(*kinds))

    def count(self, *kinds: Kind) -> int:
        return len(self.items(*kinds))

    def starting_in(self, kinds: Sequence[Kind], lo: float, hi: float) -> list[MicroAnnotation]:
        """Source annotations of ``kinds`` whose (unclipped) start lies in ``[lo, hi)``."""
        return [c.source for c in self.items(*kinds) if lo <= c.source.start < hi]


@dataclass
class EpochAnnotationIndex:
    annotations: list[MicroAnnotation]
    contexts: list[EpochContext]

    def __len__(self) -> int:
        return len(self.contexts)

    def __getitem__(self, t: int) -> EpochContext:
        return self.contexts[t]


def build_epoch_index(annotations: Iterable[MicroAnnotation], epochs: Sequence[Epoch]) -> EpochAnnotationIndex:
    """Assign every annotation to each epoch it overlaps, clipped to the epoch.

    Annotations are sorted on (start, kind, channel role) and receive their
    position in that order as ``id``.
    """
    ordered = [replace(a, id=i) for i, a in enumerate(sorted(annotations, key=sort_key))]
    contexts = [EpochContext(ep) for ep in epochs]
    if not epochs:
        return EpochAnnotationIndex(ordered, contexts)
    first = epochs[0].start
    for a in ordered:
        t0 = max(0, int(math.floor((a.start - first) / EPOCH_SECONDS)))
        t1 = min(len(epochs) - 1, int(math.ceil((a.end - first) / EPOCH_SECONDS)) - 1)
        for t in range(t0, t1 + 1):
            ep = epochs[t]
            s, e = max(a.start, ep.start), min(a.end, ep.end)
            if s < e:
                contexts[t].clipped.setdefault(a.kind, []).append(ClippedAnnotation(a, s, e))
    return EpochAnnotationIndex(ordered, contexts)
