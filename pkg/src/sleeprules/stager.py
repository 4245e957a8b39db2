"""Two-pass rule engine assigning one sleep stage per epoch.

Pass 1 tries the definite rules in AASM precedence order (N3, W, R, N2, N1)
and stops at the first that fires. Epochs left undefined go through the
transition rules (R continuity, then N2 continuity) and finally inherit the
previous epoch's stage. Every evaluation is appended to the epoch's
explanation log.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .annotators import EpochAnnotationIndex, EpochContext, Kind, MicroAnnotation
from .profile import NightProfile
from .signal_io import Recording

__all__ = [
    "Stage",
    "STAGES",
    "Provenance",
    "StagerConfig",
    "LogEntry",
    "ExplanationLog",
    "StagedEpoch",
    "RuleOutcome",
    "rule_definite_n3",
    "rule_definite_wake",
    "rule_definite_r",
    "rule_definite_n2",
    "rule_definite_n1",
    "pass1_definite",
    "pass2_transition",
    "stage_epochs",
    "stage_recording",
    "rule_catalog",
    "fmt_pct",
]


class Stage(str, enum.Enum):
    Wake = "W"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    R = "R"
    Undefined = "U"

    @classmethod
    def parse(cls, token: str) -> "Stage":
        token = token.strip()
        aliases = {"WAKE": cls.Wake, "REM": cls.R, "UNDEFINED": cls.Undefined}
        if token.upper() in aliases:
            return aliases[token.upper()]
        return cls(token.upper())


STAGES = (Stage.Wake, Stage.N1, Stage.N2, Stage.N3, Stage.R)


class Provenance(str, enum.Enum):
    Definite = "Definite"
    Transition = "Transition"
    Inherited = "Inherited"
    DefaultFirst = "DefaultFirst"


@dataclass(frozen=True)
class StagerConfig:
    swa_min_coverage: float = 0.20
    wake_min_coverage: float = 0.50
    r_min_coverage: float = 0.50
    n1_lamf_min: float = 0.50
    n3_strict: bool = True
    kcomplex_enabled: bool = False
    first_epoch_default: Stage = Stage.Wake

    def __post_init__(self):
        for name in ("swa_min_coverage", "wake_min_coverage", "r_min_coverage", "n1_lamf_min"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.first_epoch_default is Stage.Undefined:
            raise ValueError("first_epoch_default must be a real stage")


@dataclass(frozen=True)
class LogEntry:
    stage: Stage
    met: bool
    detail: str
    rule_id: str


@dataclass
class ExplanationLog:
    entries: list[LogEntry] = field(default_factory=list)
    referenced: list[MicroAnnotation] = field(default_factory=list)

    @property
    def rule_ids(self) -> list[str]:
        return [e.rule_id for e in self.entries]

    @property
    def annotation_ids(self) -> list[int]:
        return [a.id for a in self.referenced]

    def to_json(self) -> dict:
        return {
            "entries": [
                {"stage": e.stage.value, "met": e.met, "detail": e.detail, "rule_id": e.rule_id}
                for e in self.entries
            ],
            "rule_ids": self.rule_ids,
            "annotation_ids": self.annotation_ids,
        }


@dataclass
class StagedEpoch:
    epoch_index: int
    stage: Stage
    provenance: Provenance
    explanation: ExplanationLog

    def to_json(self) -> dict:
        return {
            "epoch_index": self.epoch_index,
            "stage": self.stage.value,
            "provenance": self.provenance.value,
            **self.explanation.to_json(),
        }


class RuleOutcome(NamedTuple):
    met: bool
    detail: str
    refs: tuple[MicroAnnotation, ...] = ()


# Text helpers -----------------------------------------------------------------

def fmt_pct(fraction: float) -> str:
    """Percentage rounded to one decimal, without a trailing ``.0``."""
    value = round(fraction * 100, 1)
    if value == int(value):
        return str(int(value))
    return f"{value:.1f}"


def _only(fraction: float) -> str:
    return "only " if fraction > 0 else ""


def _count_phrase(n: int, singular: str, plural: str) -> str:
    if n == 1:
        return f"a {singular}"
    return f"{n} {plural}"


def _capitalize(text: str) -> str:
    return text[:1].upper() + text[1:]


def _join(clauses: Sequence[str], conj: str = "and") -> str:
    if len(clauses) <= 1:
        return "".join(clauses)
    if len(clauses) == 2:
        return f"{clauses[0]} {conj} {clauses[1]}"
    return ", ".join(clauses[:-1]) + f", {conj} {clauses[-1]}"


def _event_kinds(config: StagerConfig) -> tuple[Kind, ...]:
    return (Kind.Spindle, Kind.KComplex) if config.kcomplex_enabled else (Kind.Spindle,)


def _event_noun(config: StagerConfig) -> str:
    return "spindle or K-complex" if config.kcomplex_enabled else "spindle"


def _found_clause(events: Sequence[MicroAnnotation], where: str, config: StagerConfig) -> str:
    spindles = sum(1 for a in events if a.kind is Kind.Spindle)
    kcs = sum(1 for a in events if a.kind is Kind.KComplex)
    if not events:
        return f"no {_event_noun(config)} was found {where}"
    parts = []
    if spindles:
        parts.append(_count_phrase(spindles, "spindle", "spindles"))
    if kcs:
        parts.append(_count_phrase(kcs, "K-complex", "K-complexes"))
    verb = "was" if len(events) == 1 else "were"
    return f"{_join(parts)} {verb} found {where}"


def _stage_name(stage: Stage | None) -> str:
    return stage.value if stage is not None else "none"


def _veto_clauses(ctx: EpochContext, config: StagerConfig) -> list[str]:
    out = []
    n_sp = ctx.count(Kind.Spindle)
    if n_sp:
        out.append(f"{_count_phrase(n_sp, 'spindle', 'spindles')} {'was' if n_sp == 1 else 'were'} found")
    if config.kcomplex_enabled:
        n_kc = ctx.count(Kind.KComplex)
        if n_kc:
            out.append(f"{_count_phrase(n_kc, 'K-complex', 'K-complexes')} {'was' if n_kc == 1 else 'were'} found")
    return out


def _sources(ctx: EpochContext | None, *kinds: Kind) -> tuple[MicroAnnotation, ...]:
    if ctx is None:
        return ()
    return tuple(c.source for c in ctx.items(*kinds))


# Definite rules ---------------------------------------------------------------

def rule_definite_n3(ctx: EpochContext, config: StagerConfig = StagerConfig()) -> RuleOutcome:
    cov = ctx.coverage(Kind.SWA)
    met = cov > config.swa_min_coverage if config.n3_strict else cov >= config.swa_min_coverage
    pct = fmt_pct(cov)
    if met:
        detail = f"{pct}% of the epoch consists of slow wave activity."
    else:
        detail = f"{_only(cov)}{pct}% of the epoch consists of slow wave activity."
    return RuleOutcome(met, detail, _sources(ctx, Kind.SWA))


def rule_definite_wake(ctx: EpochContext, config: StagerConfig = StagerConfig()) -> RuleOutcome:
    cov = ctx.coverage(Kind.Alpha, Kind.EyeBlink)
    met = cov > config.wake_min_coverage
    text = f"{fmt_pct(cov)}% of the epoch consists of alpha rhythm or other findings consistent with sleep stage W."
    detail = text if met else _only(cov) + text
    return RuleOutcome(met, detail, _sources(ctx, Kind.Alpha, Kind.EyeBlink))


def rule_definite_r(ctx: EpochContext, profile: NightProfile | None = None,
                    config: StagerConfig = StagerConfig()) -> RuleOutcome:
    cov = ctx.coverage(Kind.LAMF)
    n_rem = ctx.count(Kind.REM)
    low_emg = ctx.has(Kind.LowEmgTone)
    vetoes = _veto_clauses(ctx, config)
    refs = _sources(ctx, Kind.LAMF, Kind.REM, Kind.LowEmgTone, *_event_kinds(config))
    pct = fmt_pct(cov)
    if cov <= config.r_min_coverage:
        return RuleOutcome(False, f"{_only(cov)}{pct}% of the epoch meets the criteria for sleep stage R.", refs)
    problems = []
    if n_rem == 0:
        problems.append("no rapid eye movements were found")
    if not low_emg:
        problems.append("chin EMG tone is not low")
    problems.extend(vetoes)
    if problems:
        return RuleOutcome(
            False, f"{pct}% of the epoch meets the criteria for sleep stage R, but {_join(problems)}.", refs
        )
    rems = _count_phrase(n_rem, "rapid eye movement", "rapid eye movements")
    detail = (f"{pct}% of the epoch meets the criteria for sleep stage R, with {rems} "
              f"and low chin EMG tone, and no {_event_noun(config)}s.")
    return RuleOutcome(True, detail, refs)


def rule_definite_n2(ctx: EpochContext, prev_ctx: EpochContext | None,
                     config: StagerConfig = StagerConfig()) -> RuleOutcome:
    kinds = _event_kinds(config)
    ep = ctx.epoch
    current = ctx.starting_in(kinds, ep.start, ep.start + 15.0)
    previous = []
    if prev_ctx is not None:
        pe = prev_ctx.epoch
        previous = prev_ctx.starting_in(kinds, pe.start + 15.0, pe.end)
    met = bool(current or previous)
    refs = tuple(current) + tuple(previous)
    if not met:
        where = "in the first half of the epoch"
        if prev_ctx is not None:
            where += " or the second half of the previous epoch"
        return RuleOutcome(False, f"no {_event_noun(config)} was found {where}.", refs)
    first = _found_clause(current, "in the first half of the epoch", config)
    if prev_ctx is None:
        second = "there is no previous epoch"
    else:
        second = _found_clause(previous, "in the second half of the previous epoch", config)
    return RuleOutcome(True, f"{_capitalize(first)}, and {second}.", refs)


def rule_definite_n1(ctx: EpochContext, prev_ctx: EpochContext | None, prev_stage: Stage | None,
                     profile: NightProfile | None = None,
                     config: StagerConfig = StagerConfig()) -> RuleOutcome:
    lamf = ctx.coverage(Kind.LAMF)
    prev_wake = prev_stage is Stage.Wake
    alpha_cur = ctx.has(Kind.Alpha)
    alpha_prev = prev_ctx is not None and prev_ctx.has(Kind.Alpha)
    generator = profile is None or profile.generates_alpha_rhythm
    lamf_ok = lamf >= config.n1_lamf_min

    clauses = []
    if prev_stage is None:
        clauses.append("there is no preceding epoch")
    else:
        clauses.append(f"the preceding epoch was {_stage_name(prev_stage)}")
    clauses.append(f"{fmt_pct(lamf)}% of the epoch consists of LAMF")
    if generator:
        if alpha_cur and alpha_prev:
            clauses.append("alpha rhythm was found in the current and preceding epochs")
        elif alpha_cur:
            clauses.append("alpha rhythm was found in the current epoch")
        elif alpha_prev:
            clauses.append("alpha rhythm was found in the preceding epoch")
        else:
            clauses.append("alpha rhythm was not found in the current or preceding epoch")
        met = prev_wake and lamf_ok and (alpha_cur or alpha_prev)
    else:
        clauses.append("the alpha clause was not applied because the recording does not generate alpha rhythm")
        met = prev_wake and lamf_ok
    refs = _sources(ctx, Kind.LAMF, Kind.Alpha) + _sources(prev_ctx, Kind.Alpha)
    text = _join(clauses) + "."
    return RuleOutcome(met, _capitalize(text) if met else text, refs)


_PASS1 = (
    (Stage.N3, "definite.N3"),
    (Stage.Wake, "definite.W"),
    (Stage.R, "definite.R"),
    (Stage.N2, "definite.N2"),
    (Stage.N1, "definite.N1"),
)


def _evaluate_definite(stage: Stage, ctx, prev_ctx, prev_stage, profile, config) -> RuleOutcome:
    if stage is Stage.N3:
        return rule_definite_n3(ctx, config)
    if stage is Stage.Wake:
        return rule_definite_wake(ctx, config)
    if stage is Stage.R:
        return rule_definite_r(ctx, profile, config)
    if stage is Stage.N2:
        return rule_definite_n2(ctx, prev_ctx, config)
    return rule_definite_n1(ctx, prev_ctx, prev_stage, profile, config)


def pass1_definite(ctx: EpochContext, prev_ctx: EpochContext | None, prev_stage: Stage | None,
                   profile: NightProfile | None, config: StagerConfig = StagerConfig()):
    """Definite rules in precedence order, stopping at the first that fires.

    Returns ``(stage, entries, refs)`` where ``stage`` is ``Stage.Undefined``
    when no rule fired.
    """
    entries, refs = [], []
    for stage, rule_id in _PASS1:
        outcome = _evaluate_definite(stage, ctx, prev_ctx, prev_stage, profile, config)
        entries.append(LogEntry(stage, outcome.met, outcome.detail, rule_id))
        refs.extend(outcome.refs)
        if outcome.met:
            return stage, entries, refs
    return Stage.Undefined, entries, refs


def _r_continuity(ctx: EpochContext, prev_stage: Stage | None, config: StagerConfig) -> RuleOutcome:
    refs = _sources(ctx, Kind.LAMF, Kind.LowEmgTone, *_event_kinds(config))
    if prev_stage is not Stage.R:
        if prev_stage is None:
            return RuleOutcome(False, "there is no previous epoch.", refs)
        return RuleOutcome(False, f"the previous epoch was {prev_stage.value}, not R.", refs)
    lamf = ctx.coverage(Kind.LAMF)
    problems = []
    if lamf == 0:
        problems.append("no LAMF was found")
    if not ctx.has(Kind.LowEmgTone):
        problems.append("chin EMG tone is not low")
    problems.extend(_veto_clauses(ctx, config))
    if problems:
        return RuleOutcome(False, f"the previous epoch was R, but {_join(problems)}.", refs)
    detail = (f"The previous epoch was R, {fmt_pct(lamf)}% of the epoch consists of LAMF, "
              f"chin EMG tone is low, and no {_event_noun(config)}s were found.")
    return RuleOutcome(True, detail, refs)


def _n2_continuity(ctx: EpochContext, prev_stage: Stage | None, config: StagerConfig) -> RuleOutcome:
    refs = _sources(ctx, Kind.Alpha, Kind.EyeBlink, Kind.REM, Kind.SWA)
    if prev_stage is not Stage.N2:
        if prev_stage is None:
            return RuleOutcome(False, "there is no previous epoch.", refs)
        return RuleOutcome(False, f"the previous epoch was {prev_stage.value}, not N2.", refs)
    wake = ctx.coverage(Kind.Alpha, Kind.EyeBlink)
    swa = ctx.coverage(Kind.SWA)
    swa_major = swa > config.swa_min_coverage if config.n3_strict else swa >= config.swa_min_coverage
    problems = []
    if wake > config.wake_min_coverage:
        problems.append(f"{fmt_pct(wake)}% of the epoch consists of alpha rhythm or other findings "
                        f"consistent with sleep stage W")
    n_rem = ctx.count(Kind.REM)
    if n_rem:
        problems.append(f"{_count_phrase(n_rem, 'rapid eye movement', 'rapid eye movements')} "
                        f"{'was' if n_rem == 1 else 'were'} found")
    if swa_major:
        problems.append(f"{fmt_pct(swa)}% of the epoch consists of slow wave activity")
    if problems:
        return RuleOutcome(False, f"the previous epoch was N2, but {_join(problems)}.", refs)
    return RuleOutcome(True, "The previous epoch was N2 and there is no evidence of a stage change.", refs)


def pass2_transition(ctx: EpochContext, prev_stage: Stage | None, profile: NightProfile | None = None,
                     config: StagerConfig = StagerConfig()):
    """Transition rules for an epoch that pass 1 left undefined.

    Returns ``(stage, entries, refs)``.
    """
    entries, refs = [], []
    for stage, rule_id, rule in ((Stage.R, "transition.R", _r_continuity),
                                 (Stage.N2, "transition.N2", _n2_continuity)):
        outcome = rule(ctx, prev_stage, config)
        entries.append(LogEntry(stage, outcome.met, outcome.detail, rule_id))
        refs.extend(outcome.refs)
        if outcome.met:
            return stage, entries, refs
    return Stage.Undefined, entries, refs


def _dedupe(refs: Sequence[MicroAnnotation]) -> list[MicroAnnotation]:
    seen = {}
    for a in refs:
        seen.setdefault((a.id, a), a)
    return sorted(seen.values(), key=lambda a: (a.id, a.start, a.kind.value))


def stage_epochs(index: EpochAnnotationIndex, profile: NightProfile | None,
                 config: StagerConfig = StagerConfig()) -> list[StagedEpoch]:
    """Single forward pass over the epochs of ``index``."""
    out: list[StagedEpoch] = []
    prev_stage: Stage | None = None
    prev_ctx: EpochContext | None = None
    for t, ctx in enumerate(index.contexts):
        stage, entries, refs = pass1_definite(ctx, prev_ctx, prev_stage, profile, config)
        provenance = Provenance.Definite
        if stage is Stage.Undefined:
            stage, more, more_refs = pass2_transition(ctx, prev_stage, profile, config)
            entries += more
            refs += more_refs
            provenance = Provenance.Transition
        if stage is Stage.Undefined:
            if prev_stage is None:
                stage = config.first_epoch_default
                provenance = Provenance.DefaultFirst
                entries.append(LogEntry(stage, True, "it is the first epoch and no rule applied.", "default_first"))
            else:
                stage = prev_stage
                provenance = Provenance.Inherited
                entries.append(LogEntry(stage, True, "no definite or transition rule applied.", "inherit"))
        out.append(StagedEpoch(t, stage, provenance, ExplanationLog(entries, _dedupe(refs))))
        prev_stage, prev_ctx = stage, ctx
    return out


def stage_recording(recording: Recording, index: EpochAnnotationIndex, profile: NightProfile,
                    config: StagerConfig = StagerConfig()) -> list[StagedEpoch]:
    if len(index) != recording.epoch_count:
        raise ValueError(f"index covers {len(index)} epochs, recording has {recording.epoch_count}")
    return stage_epochs(index, profile, config)


def rule_catalog(config: StagerConfig = StagerConfig()) -> dict[str, str]:
    """Plain-text statement of every rule with its configured thresholds."""
    n3_cmp = "more than" if config.n3_strict else "at least"
    events = "spindles or K-complexes" if config.kcomplex_enabled else "spindles"
    return {
        "definite.N3": (f"Definite N3: slow wave activity (0.5-2 Hz waves of at least 75 uV peak-to-peak) "
                        f"covers {n3_cmp} {fmt_pct(config.swa_min_coverage)}% of the epoch. "
                        f"Checked first; when it holds no other rule is evaluated."),
        "definite.W": (f"Definite W: alpha rhythm or other findings consistent with wakefulness (eye blinks) "
                       f"cover more than {fmt_pct(config.wake_min_coverage)}% of the epoch. Checked after N3."),
        "definite.R": (f"Definite R: low-amplitude mixed-frequency (LAMF) activity covers more than "
                       f"{fmt_pct(config.r_min_coverage)}% of the epoch, at least one rapid eye movement is "
                       f"present, chin EMG tone is low, and no {events} are present. Checked after W."),
        "definite.N2": (f"Definite N2: a spindle{' or K-complex' if config.kcomplex_enabled else ''} starts in the "
                        f"first half of the epoch or in the second half of the previous epoch. Checked after R."),
        "definite.N1": (f"Definite N1: the preceding epoch was W, LAMF covers at least "
                        f"{fmt_pct(config.n1_lamf_min)}% of the epoch, and, when the recording generates alpha "
                        f"rhythm, alpha rhythm is present in the current or preceding epoch. Checked last."),
        "transition.R": (f"R continuity: an epoch not labelled by a definite rule is R when the previous epoch "
                         f"was R, LAMF is present, chin EMG tone is low, and no {events} are present."),
        "transition.N2": (f"N2 continuity: an epoch not labelled by a definite rule or R continuity is N2 when "
                          f"the previous epoch was N2 and there is no evidence of a stage change: wake findings "
                          f"cover at most {fmt_pct(config.wake_min_coverage)}% of the epoch, no rapid eye "
                          f"movements are present, and slow wave activity does not meet the N3 rule."),
        "inherit": "Inheritance: an epoch that no definite or transition rule labels takes the stage of the "
                   "previous epoch.",
        "default_first": (f"First-epoch default: a first epoch that no rule labels is scored "
                          f"{config.first_epoch_default.value}."),
    }
