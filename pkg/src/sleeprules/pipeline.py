"""End-to-end scoring of one recording and the on-disk run layout."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .annotators import (
    DetectorConfig,
    EpochAnnotationIndex,
    MicroAnnotation,
    annotations_from_jsonl,
    annotations_to_jsonl,
    build_epoch_index,
    classify_emg_tone,
    detect_alpha,
    detect_eye_blinks,
    detect_kcomplexes,
    detect_lamf,
    detect_rems,
    detect_spindles,
    detect_swa,
)
from .config import EngineConfig
from .evalkit import Hypnogram, hypnogram_to_csv
from .explain import staged_from_json
from .profile import NightProfile, compute_profile
from .signal_io import IntegrityReport, Recording, Role, check_integrity, map_roles, parse_edf, require_roles, \
    segment_epochs
from .stager import StagedEpoch, rule_catalog, stage_recording

__all__ = ["ScoreResult", "annotate", "score_recording", "score_edf", "write_run", "load_run", "RUN_FILES"]

RUN_FILES = ("hypnogram.csv", "hypnogram.jsonl", "annotations.jsonl", "explanations.json", "manifest.json")


@dataclass
class ScoreResult:
    recording: Recording
    profile: NightProfile
    index: EpochAnnotationIndex
    staged: list[StagedEpoch]
    integrity: IntegrityReport

    @property
    def annotations(self) -> list[MicroAnnotation]:
        return self.index.annotations

    @property
    def hypnogram(self) -> Hypnogram:
        return Hypnogram(tuple(s.stage for s in self.staged))


def annotate(recording: Recording, profile: NightProfile,
             detectors: DetectorConfig = DetectorConfig()) -> list[MicroAnnotation]:
    """Run every detector on its designated channel."""
    out: list[MicroAnnotation] = []
    alpha_ch = recording.channel(profile.alpha_role) if profile.alpha_role is not None else None
    if alpha_ch is not None:
        out += detect_alpha(alpha_ch, detectors)
    for roles, detector in ((detectors.lamf_roles, detect_lamf),
                            (detectors.spindle_roles, detect_spindles),
                            (detectors.swa_roles, detect_swa),
                            (detectors.kcomplex_roles, detect_kcomplexes)):
        ch = recording.first_bound(roles)
        if ch is not None:
            out += detector(ch, detectors)
    left, right = recording.channel(Role.E1M2), recording.channel(Role.E2M1)
    out += detect_rems(left, right, detectors)
    out += detect_eye_blinks(left, right, detectors)
    out += classify_emg_tone(recording.channel(Role.ChinEMG), profile.emg_baseline, detectors)
    return out


def score_recording(recording: Recording, config: EngineConfig = EngineConfig()) -> ScoreResult:
    """Profile, annotate, index and stage a role-mapped recording."""
    require_roles(recording)
    epochs = segment_epochs(recording)
    profile = compute_profile(recording, config.detectors, config.profile)
    index = build_epoch_index(annotate(recording, profile, config.detectors), epochs)
    staged = stage_recording(recording, index, profile, config.stager)
    return ScoreResult(recording, profile, index, staged, check_integrity(recording))


def score_edf(path, config: EngineConfig = EngineConfig()) -> tuple[ScoreResult, str]:
    """Score an EDF file; also returns the SHA-256 of its bytes."""
    data = Path(path).read_bytes()
    rec = map_roles(parse_edf(data, recording_id=Path(path).stem), config.roles)
    return score_recording(rec, config), hashlib.sha256(data).hexdigest()


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _render_run(result: ScoreResult, config: EngineConfig, edf_path, input_hash: str,
                timestamp: str | None) -> dict[str, str]:
    hyp = result.hypnogram
    provenance = [s.provenance.value for s in result.staged]
    jsonl = "".join(json.dumps({"epoch_index": s.epoch_index, "stage": s.stage.value,
                                "provenance": s.provenance.value}) + "\n" for s in result.staged)
    explanations = {
        "rule_catalog": rule_catalog(config.stager),
        "epochs": [s.to_json() for s in result.staged],
    }
    manifest = {
        "version": __version__,
        "config_sha256": config.digest(),
        "input_sha256": input_hash,
        "input": str(edf_path) if edf_path is not None else None,
        "recording_id": result.recording.id,
        "epoch_count": len(result.staged),
        "generates_alpha_rhythm": result.profile.generates_alpha_rhythm,
        "alpha_evidence_seconds": round(result.profile.alpha_evidence_seconds, 6),
        "integrity": {label: {"flatline_fraction": round(ci.flatline_fraction, 6),
                              "clipped_fraction": round(ci.clipped_fraction, 6)}
                      for label, ci in sorted(result.integrity.channels.items())},
        "missing_roles": [r.value for r in result.integrity.missing_roles],
    }
    if timestamp is not None:
        manifest["timestamp"] = timestamp
    return {
        "hypnogram.csv": hypnogram_to_csv(hyp, provenance),
        "hypnogram.jsonl": jsonl,
        "annotations.jsonl": annotations_to_jsonl(result.annotations),
        "explanations.json": _dumps(explanations),
        "manifest.json": _dumps(manifest),
    }


def write_atomic(files: dict[str, str], out_dir) -> None:
    """Write every file to a temporary name first, then rename them into place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def write_run(result: ScoreResult, out_dir, config: EngineConfig = EngineConfig(), edf_path=None,
              input_hash: str = "", timestamp: str | None = None) -> Path:
    write_atomic(_render_run(result, config, edf_path, input_hash, timestamp), out_dir)
    return Path(out_dir)


@dataclass
class RunArtifacts:
    directory: Path
    staged: list[StagedEpoch]
    annotations: list[MicroAnnotation]
    rule_catalog: dict[str, str]
    manifest: dict

    @property
    def hypnogram(self) -> Hypnogram:
        return Hypnogram(tuple(s.stage for s in self.staged))


def load_run(run_dir) -> RunArtifacts:
    """Read a run directory back; explanation entries are restored verbatim."""
    run = Path(run_dir)
    missing = [n for n in RUN_FILES if not (run / n).exists()]
    if missing:
        raise FileNotFoundError(f"{run} lacks {', '.join(missing)}")
    doc = json.loads((run / "explanations.json").read_text())
    annotations = annotations_from_jsonl((run / "annotations.jsonl").read_text())
    by_id = {a.id: a for a in annotations}
    staged = []
    for ep in doc["epochs"]:
        s = staged_from_json(ep)
        s.explanation.referenced = [by_id[i] for i in ep["annotation_ids"] if i in by_id]
        staged.append(s)
    manifest = json.loads((run / "manifest.json").read_text())
    return RunArtifacts(run, staged, annotations, doc["rule_catalog"], manifest)
