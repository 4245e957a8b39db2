"""Full-night attributes that gate rule applicability."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import dsp
from .annotators import DEFAULT_DETECTORS, DetectorConfig, alpha_intervals, union_length
from .errors import ProfileError
from .signal_io import Recording, Role


@dataclass(frozen=True)
class ProfileConfig:
    alpha_evidence_threshold: float = 60.0
    emg_percentiles: tuple[float, float, float] = (10.0, 50.0, 90.0)


@dataclass(frozen=True)
class EmgBaseline:
    """Percentiles of the full-night chin moving-RMS envelope, in uV."""

    rms_p10: float
    rms_p50: float
    rms_p90: float


@dataclass(frozen=True)
class NightProfile:
    generates_alpha_rhythm: bool
    alpha_evidence_seconds: float
    emg_baseline: EmgBaseline
    alpha_role: Role | None = None
    alpha_fallback: bool = False


class AlphaStatus(NamedTuple):
    generates_alpha: bool
    evidence_seconds: float
    role: Role
    fallback: bool


def detect_alpha_generator(recording: Recording,
                           detectors: DetectorConfig = DEFAULT_DETECTORS,
                           config: ProfileConfig = ProfileConfig()) -> AlphaStatus:
    """Decide whether the sleeper generates an alpha rhythm.

    Evidence is the union duration of qualifying alpha windows on the best
    occipital channel (central channels when no occipital one is bound).
    """
    candidates = [recording.channel(r) for r in detectors.alpha_roles]
    candidates = [c for c in candidates if c is not None]
    fallback = False
    if not candidates:
        candidates = [c for c in (recording.channel(r) for r in detectors.alpha_fallback_roles) if c is not None]
        fallback = True
    if not candidates:
        raise ProfileError("alpha-generator analysis needs an occipital or central EEG channel")
    best_role, best = candidates[0].role, -1.0
    for ch in candidates:
        evidence = union_length(alpha_intervals(ch, detectors))
        if evidence > best:
            best_role, best = ch.role, evidence
    return AlphaStatus(best >= config.alpha_evidence_threshold, best, best_role, fallback)


def chin_emg_baseline(recording: Recording,
                      detectors: DetectorConfig = DEFAULT_DETECTORS,
                      config: ProfileConfig = ProfileConfig()) -> EmgBaseline:
    chin = recording.channel(Role.ChinEMG)
    if chin is None:
        raise ProfileError("chin EMG channel is required for the EMG baseline")
    env = dsp.moving_rms(chin.samples, chin.sample_rate, detectors.emg_rms_window)
    if env.size == 0:
        raise ProfileError("chin EMG channel is empty")
    p10, p50, p90 = (float(v) for v in np.percentile(env, config.emg_percentiles))
    return EmgBaseline(p10, p50, p90)


def compute_profile(recording: Recording,
                    detectors: DetectorConfig = DEFAULT_DETECTORS,
                    config: ProfileConfig = ProfileConfig()) -> NightProfile:
    alpha = detect_alpha_generator(recording, detectors, config)
    baseline = chin_emg_baseline(recording, detectors, config)
    return NightProfile(alpha.generates_alpha, alpha.evidence_seconds, baseline, alpha.role, alpha.fallback)
