"""EDF reading, channel-role mapping, epoch segmentation and integrity checks."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AmbiguousRoleError,
    EmptyRecordingError,
    ParseError,
    ProfileError,
    TooShortError,
    TruncationError,
)

EPOCH_SECONDS = 30.0
ANNOTATION_LABELS = ("EDF Annotations", "BDF Annotations")


class Role(str, enum.Enum):
    F4M1 = "F4M1"
    F3M2 = "F3M2"
    C4M1 = "C4M1"
    C3M2 = "C3M2"
    O2M1 = "O2M1"
    O1M2 = "O1M2"
    E1M2 = "E1M2"
    E2M1 = "E2M1"
    ChinEMG = "ChinEMG"
    Other = "Other"

    @property
    def display(self) -> str:
        if self is Role.ChinEMG:
            return "Chin EMG"
        if self is Role.Other:
            return "Other"
        return f"{self.value[:2]}-{self.value[2:]}"


PHYSIOLOGICAL_ROLES = tuple(r for r in Role if r is not Role.Other)
FRONTAL = (Role.F4M1, Role.F3M2)
CENTRAL = (Role.C4M1, Role.C3M2)
OCCIPITAL = (Role.O2M1, Role.O1M2)

# Regular expressions, matched case-insensitively against whitespace-normalized labels.
DEFAULT_ROLE_PATTERNS: dict[Role, tuple[str, ...]] = {
    Role.F4M1: (r"\bF4[-_ ]?(M1|A1)\b", r"^(EEG )?F4$"),
    Role.F3M2: (r"\bF3[-_ ]?(M2|A2)\b", r"^(EEG )?F3$"),
    Role.C4M1: (r"\bC4[-_ ]?(M1|A1)\b", r"^(EEG )?C4$"),
    Role.C3M2: (r"\bC3[-_ ]?(M2|A2)\b", r"^(EEG )?C3$"),
    Role.O2M1: (r"\bO2[-_ ]?(M1|A1)\b", r"^(EEG )?O2$"),
    Role.O1M2: (r"\bO1[-_ ]?(M2|A2)\b", r"^(EEG )?O1$"),
    Role.E1M2: (r"\bE1[-_ ]?(M2|A2)\b", r"\bLOC\b", r"^(EOG )?E1$"),
    Role.E2M1: (r"\bE2[-_ ]?(M1|A1)\b", r"\bROC\b", r"^(EOG )?E2$"),
    Role.ChinEMG: (r"chin", r"submental", r"^EMG$"),
}


@dataclass(frozen=True, eq=False)
class Channel:
    label: str
    sample_rate: float
    samples: np.ndarray
    physical_min: float
    physical_max: float
    role: Role = Role.Other

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"{self.label}: sample_rate must be positive")
        if not self.physical_min < self.physical_max:
            raise ValueError(f"{self.label}: physical_min must be below physical_max")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def segment(self, start: float, end: float) -> np.ndarray:
        i0 = max(0, int(round(start * self.sample_rate)))
        i1 = min(self.samples.size, int(round(end * self.sample_rate)))
        return self.samples[i0:i1]


@dataclass(frozen=True, eq=False)
class Recording:
    id: str
    channels: tuple[Channel, ...]
    duration: float
    missing_roles: tuple[Role, ...] = ()

    @property
    def epoch_count(self) -> int:
        return int(math.floor(self.duration / EPOCH_SECONDS + 1e-9))

    def channel(self, role: Role) -> Channel | None:
        for ch in self.channels:
            if ch.role is role:
                return ch
        return None

    def first_bound(self, roles: Sequence[Role]) -> Channel | None:
        for role in roles:
            ch = self.channel(role)
            if ch is not None:
                return ch
        return None

    @property
    def roles(self) -> dict[Role, Channel]:
        return {ch.role: ch for ch in self.channels if ch.role is not Role.Other}


@dataclass(frozen=True)
class Epoch:
    index: int
    start: float

    @property
    def end(self) -> float:
        return self.start + EPOCH_SECONDS


@dataclass(frozen=True)
class ChannelIntegrity:
    flatline_fraction: float
    clipped_fraction: float


@dataclass(frozen=True)
class IntegrityReport:
    channels: dict[str, ChannelIntegrity]
    missing_roles: tuple[Role, ...] = field(default_factory=tuple)


# EDF header -----------------------------------------------------------------

_MAIN_FIELDS = (
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)

_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


def _field_text(data: bytes, offset: int, width: int) -> str:
    raw = data[offset:offset + width]
    if len(raw) < width:
        raise ParseError("header ends inside a field", offset)
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("non-ASCII character in header", offset + exc.start) from None
    return text.strip()


def _field_number(data: bytes, offset: int, width: int, kind=float):
    text = _field_text(data, offset, width)
    try:
        return kind(text)
    except ValueError:
        raise ParseError(f"expected a number, found {text!r}", offset) from None


def _read_header(data: bytes) -> tuple[dict, list[dict]]:
    if len(data) < 256:
        raise ParseError("file shorter than the 256-byte EDF header", len(data))
    header: dict = {}
    offset = 0
    for name, width in _MAIN_FIELDS:
        if name in ("header_bytes", "n_records", "n_signals"):
            header[name] = _field_number(data, offset, width, int)
        elif name == "record_duration":
            header[name] = _field_number(data, offset, width, float)
        else:
            header[name] = _field_text(data, offset, width)
        header[name + "_offset"] = offset
        offset += width
    if header["version"] != "0":
        raise ParseError(f"unsupported version field {header['version']!r}", 0)
    ns = header["n_signals"]
    if ns < 1:
        raise ParseError("number of signals must be positive", header["n_signals_offset"])
    if header["header_bytes"] != 256 * (ns + 1):
        raise ParseError(
            f"header size {header['header_bytes']} inconsistent with {ns} signals",
            header["header_bytes_offset"],
        )
    if header["record_duration"] <= 0:
        raise ParseError("data record duration must be positive", header["record_duration_offset"])
    if len(data) < header["header_bytes"]:
        raise ParseError("file ends inside the signal header", len(data))

    signals = [dict() for _ in range(ns)]
    for name, width in _SIGNAL_FIELDS:
        for i in range(ns):
            if name in ("physical_min", "physical_max"):
                signals[i][name] = _field_number(data, offset, width, float)
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                signals[i][name] = _field_number(data, offset, width, int)
            else:
                signals[i][name] = _field_text(data, offset, width)
            signals[i][name + "_offset"] = offset
            offset += width
    for sig in signals:
        if sig["samples_per_record"] < 1:
            raise ParseError("samples per record must be positive", sig["samples_per_record_offset"])
        if sig["digital_min"] >= sig["digital_max"]:
            raise ParseError("digital minimum must be below digital maximum", sig["digital_min_offset"])
        if sig["physical_min"] == sig["physical_max"]:
            raise ParseError("physical minimum equals physical maximum", sig["physical_min_offset"])
    return header, signals


def parse_edf(data: bytes, recording_id: str = "") -> Recording:
    """Parse EDF bytes into a :class:`Recording` with unmapped roles.

    Digital values are converted to physical units with each signal's linear
    calibration. Annotation signals are skipped.
    """
    header, signals = _read_header(data)
    record_samples = sum(sig["samples_per_record"] for sig in signals)
    record_bytes = 2 * record_samples
    payload = len(data) - header["header_bytes"]
    n_records = header["n_records"]
    if n_records == -1:
        if payload % record_bytes:
            raise TruncationError(f"data section of {payload} bytes is not a whole number of records")
        n_records = payload // record_bytes
    elif n_records < -1:
        raise ParseError("negative number of data records", header["n_records_offset"])
    if n_records == 0:
        raise EmptyRecordingError("recording contains zero data records")
    expected = n_records * record_bytes
    if payload != expected:
        raise TruncationError(
            f"header declares {n_records} records ({expected} bytes) "
            f"but the data section holds {payload} bytes"
        )

    raw = np.frombuffer(data, dtype="<i2", offset=header["header_bytes"]).reshape(n_records, record_samples)
    duration = n_records * header["record_duration"]
    channels = []
    col = 0
    for sig in signals:
        spr = sig["samples_per_record"]
        block = raw[:, col:col + spr]
        col += spr
        if sig["label"] in ANNOTATION_LABELS:
            continue
        dmin, dmax = sig["digital_min"], sig["digital_max"]
        pmin, pmax = sig["physical_min"], sig["physical_max"]
        gain = (pmax - pmin) / (dmax - dmin)
        digital = np.clip(block.reshape(-1).astype(np.float64), dmin, dmax)
        samples = (digital - dmin) * gain + pmin
        samples.setflags(write=False)
        channels.append(
            Channel(
                label=sig["label"],
                sample_rate=spr / header["record_duration"],
                samples=samples,
                physical_min=min(pmin, pmax),
                physical_max=max(pmin, pmax),
            )
        )
    if not channels:
        raise EmptyRecordingError("recording contains no signal channels")
    return Recording(id=recording_id, channels=tuple(channels), duration=duration)


def read_edf(path, role_config: Mapping | None = None) -> Recording:
    path = Path(path)
    rec = parse_edf(path.read_bytes(), recording_id=path.stem)
    return map_roles(rec, role_config)


# Role mapping -----------------------------------------------------------------

def normalize_label(label: str) -> str:
    return " ".join(label.split())


def map_roles(recording: Recording, role_config: Mapping | None = None) -> Recording:
    """Bind channels to physiological roles.

    Each role takes the channel matched by the first of its patterns that
    matches anything; a pattern matching several channels, or two roles landing
    on the same channel, raises :class:`AmbiguousRoleError`. Unresolved roles
    are listed in ``missing_roles``.
    """
    patterns = DEFAULT_ROLE_PATTERNS if role_config is None else _coerce_role_config(role_config)
    labels = [normalize_label(ch.label) for ch in recording.channels]
    bound: dict[int, Role] = {}
    missing = []
    for role in PHYSIOLOGICAL_ROLES:
        hit = None
        for pattern in patterns.get(role, ()):
            rx = re.compile(pattern, re.IGNORECASE)
            matches = [i for i, label in enumerate(labels) if rx.search(label)]
            if len(matches) > 1:
                names = ", ".join(recording.channels[i].label for i in matches)
                raise AmbiguousRoleError(f"pattern {pattern!r} for {role.value} matches several channels: {names}")
            if matches:
                hit = matches[0]
                break
        if hit is None:
            missing.append(role)
            continue
        if hit in bound:
            raise AmbiguousRoleError(
                f"channel {recording.channels[hit].label!r} matches both {bound[hit].value} and {role.value}"
            )
        bound[hit] = role
    channels = tuple(replace(ch, role=bound.get(i, Role.Other)) for i, ch in enumerate(recording.channels))
    return replace(recording, channels=channels, missing_roles=tuple(missing))


def _coerce_role_config(config: Mapping) -> dict[Role, tuple[str, ...]]:
    out = {}
    for key, pats in config.items():
        try:
            role = Role(key)
        except ValueError:
            raise AmbiguousRoleError(f"unknown role {key!r} in role config") from None
        if isinstance(pats, str):
            pats = [pats]
        out[role] = tuple(pats)
    return out


def require_roles(recording: Recording) -> None:
    """Raise :class:`ProfileError` unless the montage minimum is bound."""
    bound = recording.roles
    problems = []
    if not any(r in bound for r in FRONTAL):
        problems.append("a frontal EEG (F4-M1 or F3-M2)")
    if not any(r in bound for r in CENTRAL):
        problems.append("a central EEG (C4-M1 or C3-M2)")
    for r in (Role.E1M2, Role.E2M1, Role.ChinEMG):
        if r not in bound:
            problems.append(r.display)
    if problems:
        raise ProfileError("recording lacks required channels: " + ", ".join(problems))


# Epochs and integrity -------------------------------------------------------

def segment_epochs(recording: Recording) -> list[Epoch]:
    if recording.duration < EPOCH_SECONDS:
        raise TooShortError(f"recording lasts {recording.duration} s, shorter than one epoch")
    return [Epoch(i, i * EPOCH_SECONDS) for i in range(recording.epoch_count)]


def check_integrity(recording: Recording, flat_ptp: float = 0.1) -> IntegrityReport:
    """Flat-line and clipping fractions per channel.

    A 1 s window is flat when its peak-to-peak range is below ``flat_ptp`` uV;
    a sample is clipped when it equals the channel's physical bound.
    """
    report = {}
    for ch in recording.channels:
        x = ch.samples
        n = max(1, int(round(ch.sample_rate)))
        n_win = x.size // n
        if n_win == 0:
            windows = x[None, :]
        else:
            windows = x[:n_win * n].reshape(n_win, n)
        ptp = windows.max(axis=1) - windows.min(axis=1) if x.size else np.zeros(1)
        flat = float(np.mean(ptp < flat_ptp))
        clipped = float(np.mean((x == ch.physical_min) | (x == ch.physical_max))) if x.size else 0.0
        report[ch.label] = ChannelIntegrity(flat, clipped)
    return IntegrityReport(report, tuple(recording.missing_roles))
