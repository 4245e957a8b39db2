import numpy as np
import pytest

from sleeprules import synthpsg as sp
from sleeprules.errors import (
    AmbiguousRoleError,
    EmptyRecordingError,
    ParseError,
    ProfileError,
    TooShortError,
    TruncationError,
)
from sleeprules.signal_io import (
    Recording,
    Role,
    check_integrity,
    map_roles,
    parse_edf,
    require_roles,
    segment_epochs,
)

from conftest import make_channel


def edf_bytes(signals, n_records=1, record_duration=1, declared_records=None, version="0"):
    """Hand-assembled EDF; ``signals`` is a list of (label, spr, pmin, pmax, int16 array)."""

    def field(v, w):
        return str(v).ljust(w).encode("ascii")

    ns = len(signals)
    head = (field(version, 8) + field("", 80) + field("", 80) + field("01.01.00", 8) + field("00.00.00", 8)
            + field(256 * (ns + 1), 8) + field("", 44)
            + field(n_records if declared_records is None else declared_records, 8)
            + field(record_duration, 8) + field(ns, 4))
    cols = [
        [field(s[0], 16) for s in signals], [field("", 80)] * ns, [field("uV", 8)] * ns,
        [field(s[2], 8) for s in signals], [field(s[3], 8) for s in signals],
        [field(-32768, 8)] * ns, [field(32767, 8)] * ns, [field("", 80)] * ns,
        [field(s[1], 8) for s in signals], [field("", 32)] * ns,
    ]
    head += b"".join(b"".join(c) for c in cols)
    body = b""
    for r in range(n_records):
        for _, spr, _, _, data in signals:
            body += np.asarray(data[r * spr:(r + 1) * spr], dtype="<i2").tobytes()
    return head + body


def test_zero_digital_maps_to_zero_microvolts():
    # -32768..32767 onto -1000..1000: digital 0 sits half a step above the midpoint.
    rec = parse_edf(edf_bytes([("EEG", 256, -1000, 1000, np.zeros(256))]))
    ch = rec.channels[0]
    assert ch.samples.size == 256 and ch.sample_rate == 256
    step = 2000 / 65535
    np.testing.assert_allclose(ch.samples, 0.0, atol=step)


def test_calibration_endpoints():
    data = np.array([-32768, 32767] * 64)
    rec = parse_edf(edf_bytes([("EEG", 128, -500, 500, data)]))
    assert rec.channels[0].samples[0] == -500 and rec.channels[0].samples[1] == 500


def test_truncated_record_count():
    good = edf_bytes([("EEG", 10, -1, 1, np.zeros(990))], n_records=99, declared_records=100)
    with pytest.raises(TruncationError):
        parse_edf(good)


def test_zero_records_and_bad_version():
    with pytest.raises(EmptyRecordingError):
        parse_edf(edf_bytes([("EEG", 10, -1, 1, np.zeros(0))], n_records=0))
    with pytest.raises(ParseError) as exc:
        parse_edf(edf_bytes([("EEG", 10, -1, 1, np.zeros(10))], version="1"))
    assert exc.value.offset == 0


def test_bad_number_reports_offset():
    data = bytearray(edf_bytes([("EEG", 10, -1, 1, np.zeros(10))]))
    data[236:244] = b"ten     "
    with pytest.raises(ParseError) as exc:
        parse_edf(bytes(data))
    assert exc.value.offset == 236 and "236" in str(exc.value)


def test_annotation_channels_skipped_and_unknown_record_count():
    blob = edf_bytes([("EEG", 10, -1, 1, np.zeros(20)), ("EDF Annotations", 4, -1, 1, np.zeros(8))],
                     n_records=2, declared_records=-1)
    rec = parse_edf(blob)
    assert [c.label for c in rec.channels] == ["EEG"] and rec.duration == 2


def test_write_parse_round_trip_sine():
    fs = 128
    x = 50 * np.sin(2 * np.pi * 10 * np.arange(10 * fs) / fs)
    rec = Recording("r", (make_channel(x, fs, Role.O2M1, "EEG O2-M1", bound=60),), 10.0)
    back = parse_edf(sp.write_edf(rec))
    step = 120 / 65535
    assert np.max(np.abs(back.channels[0].samples - x)) <= step


def test_parse_is_deterministic(small_edf):
    data = small_edf.read_bytes()
    a, b = parse_edf(data), parse_edf(data)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a.channels, b.channels))


def rec_with_labels(*labels):
    return Recording("r", tuple(make_channel(np.zeros(30 * 8), 8.0, label=lab) for lab in labels), 30.0)


def test_default_role_mapping():
    rec = map_roles(rec_with_labels("EEG F4-M1", "EMG Chin1-Chin2"))
    roles = {c.label: c.role for c in rec.channels}
    assert roles == {"EEG F4-M1": Role.F4M1, "EMG Chin1-Chin2": Role.ChinEMG}
    assert Role.O2M1 in rec.missing_roles and Role.O1M2 in rec.missing_roles


def test_role_mapping_normalizes_case_and_whitespace():
    rec = map_roles(rec_with_labels("eeg  c4-m1", "EOG E1-M2", "EOG E2-M1"))
    assert rec.channels[0].role is Role.C4M1


def test_ambiguous_roles():
    with pytest.raises(AmbiguousRoleError):
        map_roles(rec_with_labels("Chin1", "Chin2"), {"ChinEMG": ["chin"]})
    with pytest.raises(AmbiguousRoleError):
        map_roles(rec_with_labels("X"), {"F4M1": ["X"], "C4M1": ["X"]})


def test_require_roles():
    rec = map_roles(rec_with_labels("EEG F4-M1", "EEG C4-M1", "EOG E1-M2", "EOG E2-M1"))
    with pytest.raises(ProfileError, match="Chin EMG"):
        require_roles(rec)


@pytest.mark.parametrize("duration,count,last", [(7200.0, 240, 7170.0), (7215.0, 240, 7170.0)])
def test_segment_epochs(duration, count, last):
    rec = Recording("r", (), duration)
    epochs = segment_epochs(rec)
    assert len(epochs) == count and epochs[-1].start == last and epochs[-1].end == last + 30
    assert all(b.start == a.end for a, b in zip(epochs, epochs[1:]))


def test_too_short():
    with pytest.raises(TooShortError):
        segment_epochs(Recording("r", (), 29.9))


def test_integrity():
    fs = 100
    t = np.arange(10 * fs) / fs
    zero = make_channel(np.zeros(10 * fs), fs, label="zero")
    sine = make_channel(50 * np.sin(2 * np.pi * 10 * t), fs, label="sine", bound=60)
    square = np.where(np.sin(2 * np.pi * 1 * t + 0.01) >= 0, 60.0, 0.0)
    sat = make_channel(square, fs, label="sat", bound=60)
    rep = check_integrity(Recording("r", (zero, sine, sat), 10.0))
    assert rep.channels["zero"].flatline_fraction == 1.0
    assert rep.channels["sine"].flatline_fraction == 0.0 and rep.channels["sine"].clipped_fraction == 0.0
    assert rep.channels["sat"].clipped_fraction == pytest.approx(0.5, abs=0.01)
