import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biomotion.kinematics import band_norms, diff_matrix, finite_diff, spectrum
from biomotion.motion import MotionSequence


def _naive_dft_mag(x):
    T = len(x)
    k = np.arange(T // 2 + 1)[:, None]
    n = np.arange(T)[None, :]
    return np.abs((x[None, :] * np.exp(-2j * np.pi * k * n / T)).sum(axis=1))


def _seq(values, fps=20.0):
    v = np.zeros((len(values), 1, 3))
    v[:, 0, 0] = values
    return MotionSequence(fps, v)


def test_constant_position_has_zero_velocity():
    d = finite_diff(_seq(np.full(10, 3.7)))
    assert d.order == 1 and np.all(d.values == 0.0)


def test_linear_motion_exact_interior_velocity():
    fps, v = 20.0, 1.25
    t = np.arange(12) / fps
    d = finite_diff(_seq(v * t, fps))
    assert np.allclose(d.values[1:-1, 0, 0], v, rtol=0, atol=1e-12)


def test_quadratic_second_derivative():
    fps = 20.0
    t = np.arange(30) / fps
    d2 = finite_diff(finite_diff(_seq(t ** 2, fps)))
    assert d2.order == 2
    # two central passes are exact for a parabola away from the one-sided ends
    assert np.allclose(d2.values[2:-2, 0, 0], 2.0, atol=1e-9)


def test_too_short():
    with pytest.raises(ValueError, match="too short"):
        finite_diff(_seq([0.0, 1.0]))


def test_diff_matrix_matches_central_diff(rng):
    x = rng.normal(size=(9, 4))
    seq = MotionSequence(1.0, np.stack([x[:, :3], x[:, 1:]], axis=1))
    assert np.allclose(diff_matrix(9) @ seq.positions.reshape(9, -1),
                       finite_diff(seq).values.reshape(9, -1), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_finite_diff_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 8, 2, 3))
    dx = finite_diff(MotionSequence(20.0, x)).values
    dy = finite_diff(MotionSequence(20.0, y)).values
    dz = finite_diff(MotionSequence(20.0, a * x + b * y)).values
    assert np.allclose(dz, a * dx + b * dy, atol=1e-10)


def test_constant_signal_spectrum():
    s = spectrum(np.full(16, 2.5), 20.0)
    assert s.n_bins == 9 and s.bin_hz == 20.0 / 16
    assert np.isclose(s.bins[0], 2.5 * 16) and np.all(s.bins[1:] < 1e-10)


@pytest.mark.parametrize("T,k", [(16, 3), (64, 7), (65, 31)])
def test_sine_single_peak(T, k):
    t = np.arange(T)
    s = spectrum(np.sin(2 * np.pi * k * t / T), 1.0)
    assert int(np.argmax(s.bins)) == k
    others = np.delete(s.bins, k)
    assert np.all(others < 1e-9 * s.bins[k])


@pytest.mark.parametrize("T", [8, 64, 257])
def test_spectrum_matches_naive_dft(T, rng):
    x = rng.normal(size=T)
    got = spectrum(x, 20.0).bins
    ref = _naive_dft_mag(x)
    assert np.all(np.abs(got - ref) <= 1e-9 * np.maximum(ref, 1e-12) + 1e-12)


def test_parseval(rng):
    for T in (16, 17, 64):
        x = rng.normal(size=T)
        b = spectrum(x, 1.0).bins
        # one-sided bins: interior bins stand for a conjugate pair
        w = np.full(b.size, 2.0)
        w[0] = 1.0
        if T % 2 == 0:
            w[-1] = 1.0
        assert np.isclose((w * b ** 2).sum(), T * (x ** 2).sum(), rtol=1e-9)


def test_unit_normalization_and_errors():
    s = spectrum(np.arange(10.0), 1.0, "unit-L2")
    assert np.isclose(np.linalg.norm(s.bins), 1.0)
    with pytest.raises(ValueError):
        spectrum(np.ones(3), 1.0)
    with pytest.raises(ValueError):
        spectrum(np.ones(8), 1.0, "l1")


def test_band_norms_limits():
    dc = spectrum(np.ones(64), 1.0, "unit-L2")
    assert band_norms(dc, 0.1) == (1.0, 0.0)
    ny = spectrum(np.cos(np.pi * np.arange(64)), 1.0, "unit-L2")
    l, h = band_norms(ny, 0.1)
    assert l < 1e-12 and np.isclose(h, 1.0)
    with pytest.raises(ValueError):
        band_norms(dc, 0.5, 0.5)


def test_band_norms_two_tone_direct_sum(rng):
    T = 64
    t = np.arange(T)
    x = 0.8 * np.cos(2 * np.pi * 1 * t / T) + 0.3 * np.cos(2 * np.pi * 25 * t / T) + 0.1 * rng.normal(size=T)
    s = spectrum(x, 1.0, "unit-L2")
    ref = _naive_dft_mag(x)
    ref = ref / np.linalg.norm(ref)
    K = ref.size
    lo, hi = int(np.floor(0.1 * K)), int(np.ceil(0.5 * K))
    l, h = band_norms(s, 0.1, 0.5)
    assert np.isclose(l, np.sqrt((ref[:lo] ** 2).sum()), rtol=1e-9)
    assert np.isclose(h, np.sqrt((ref[hi:] ** 2).sum()), rtol=1e-9)
    mid = np.sqrt((ref[lo:hi] ** 2).sum())
    assert abs(l ** 2 + mid ** 2 + h ** 2 - 1.0) < 1e-12
