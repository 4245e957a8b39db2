import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from sleeprules import dsp
from sleeprules.errors import BandError, InsufficientDataError

FS = 256.0


def sine(freq, seconds, fs=FS, amp=1.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


@pytest.mark.parametrize("overlap", [0.0, 0.5, 0.75])
def test_welch_matches_scipy(overlap):
    x = np.random.default_rng(0).standard_normal(4096)
    psd = dsp.welch_psd(x, FS, 2.0, overlap)
    nperseg = 512
    f, p = signal.welch(x, FS, window="hann", nperseg=nperseg, noverlap=int(nperseg * overlap),
                        detrend="constant", scaling="density")
    np.testing.assert_allclose(psd.frequencies, f)
    np.testing.assert_allclose(psd.power, p, rtol=1e-10)


def test_welch_sine_peak():
    psd = dsp.welch_psd(sine(10, 8), FS, 2.0, 0.5)
    assert psd.frequencies[np.argmax(psd.power)] == pytest.approx(10.0)


def test_welch_parseval_on_white_noise():
    x = np.random.default_rng(1).standard_normal(60 * int(FS))
    psd = dsp.welch_psd(x, FS, 2.0, 0.5)
    integral = np.sum(psd.power) * psd.resolution
    assert abs(integral - x.var()) / x.var() <= 0.1


def test_welch_constant_has_no_power_above_dc():
    psd = dsp.welch_psd(np.full(1024, 3.0), FS, 2.0, 0.5)
    assert np.all(psd.power[1:] < 1e-20)


def test_welch_errors():
    with pytest.raises(InsufficientDataError):
        dsp.welch_psd(np.zeros(100), FS, 2.0, 0.5)
    with pytest.raises(ValueError):
        dsp.welch_psd(np.zeros(1000), FS, 2.0, 1.0)


def test_relative_band_power_examples():
    psd = dsp.welch_psd(sine(10, 8), FS, 2.0, 0.5)
    assert dsp.relative_band_power(psd, (8, 12)) >= 0.95
    noise = dsp.welch_psd(np.random.default_rng(2).standard_normal(2048), FS, 2.0, 0.5)
    assert dsp.relative_band_power(noise, (0, FS / 2)) == 1.0
    zero = dsp.welch_psd(np.zeros(1024), FS, 2.0, 0.5)
    assert dsp.relative_band_power(zero, (8, 12)) == 0.0


def test_relative_band_power_partition():
    psd = dsp.welch_psd(np.random.default_rng(3).standard_normal(2048), FS, 2.0, 0.5)
    # Bins are 0.5 Hz apart; these bands share no bin centre.
    edges = [(0, 3.75), (4, 7.75), (8, 63.75), (64, 128)]
    assert sum(dsp.relative_band_power(psd, b) for b in edges) == pytest.approx(1.0, abs=1e-9)


def test_sliding_band_ratio_matches_single_window_welch():
    x = np.random.default_rng(4).standard_normal(1280) + sine(10, 5)
    starts, ratios = dsp.sliding_band_ratio(x, FS, 2.0, 0.5, (8, 12))
    for k in (0, 3, len(starts) - 1):
        i0 = int(starts[k] * FS)
        ref = dsp.relative_band_power(dsp.welch_psd(x[i0:i0 + 512], FS, 2.0, 0.0), (8, 12))
        assert ratios[k] == pytest.approx(ref, rel=1e-12)


def rms(x):
    return float(np.sqrt(np.mean(x ** 2)))


def test_bandpass_passes_and_rejects():
    x = sine(10, 10)
    core = slice(int(2 * FS), int(8 * FS))
    assert rms(dsp.bandpass(x, FS, (8, 12))[core]) == pytest.approx(rms(x[core]), rel=0.05)
    attenuated = rms(dsp.bandpass(x, FS, (0.5, 2))[core])
    assert 20 * np.log10(attenuated / rms(x[core])) <= -20
    assert np.all(dsp.bandpass(np.zeros(500), FS, (1, 4)) == 0)


def test_bandpass_matches_scipy_reference():
    x = np.random.default_rng(5).standard_normal(3000)
    sos = signal.butter(4, [11, 16], btype="bandpass", fs=FS, output="sos")
    np.testing.assert_allclose(dsp.bandpass(x, FS, (11, 16)), signal.sosfiltfilt(sos, x), rtol=1e-12)


@pytest.mark.parametrize("band", [(0, 10), (10, 128), (20, 200), (5, 5)])
def test_bandpass_rejects_bad_bands(band):
    with pytest.raises(BandError):
        dsp.bandpass(np.zeros(100), FS, band)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_bandpass_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(600), rng.standard_normal(600)
    lhs = dsp.bandpass(a * x + b * y, FS, (1, 20))
    rhs = a * dsp.bandpass(x, FS, (1, 20)) + b * dsp.bandpass(y, FS, (1, 20))
    scale = max(1.0, float(np.max(np.abs(rhs))))
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * scale


def brute_moving_rms(x, fs, window):
    half = int(round(window * fs)) // 2
    return np.array([np.sqrt(np.mean(x[max(0, i - half):i + half + 1] ** 2)) for i in range(x.size)])


@settings(max_examples=40, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3)),
       window=st.sampled_from([0.05, 0.1, 0.25, 0.5]))
def test_moving_rms_matches_brute_force(x, window):
    np.testing.assert_allclose(dsp.moving_rms(x, 100.0, window), brute_moving_rms(x, 100.0, window),
                               rtol=1e-7, atol=1e-6)


def test_moving_rms_examples():
    np.testing.assert_allclose(dsp.moving_rms(np.full(300, -4.0), FS, 0.5), 4.0)
    env = dsp.moving_rms(sine(10, 4, amp=3.0), FS, 1.0)
    core = env[int(FS):-int(FS)]
    np.testing.assert_allclose(core, 3.0 / np.sqrt(2), rtol=0.05)
    impulses = np.zeros(1000)
    impulses[[200, 600]] = 1.0
    env = dsp.moving_rms(impulses, FS, 0.05)
    assert env[200] == env.max() and env[600] == env.max()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_welch_is_bit_deterministic(seed):
    x = np.random.default_rng(seed).standard_normal(1024)
    a = dsp.welch_psd(x, FS, 2.0, 0.5).power
    b = dsp.welch_psd(x.copy(), FS, 2.0, 0.5).power
    assert np.array_equal(a, b)
