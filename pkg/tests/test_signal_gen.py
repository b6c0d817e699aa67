import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from covmag.signal_gen import (NoiseSpec, NoiseSeries, draw_uniform_phase, draw_uniform_phases,
                               estimate_autocorrelation, generate_gaussian_noise,
                               indexed_uniforms, noise_batch, target_autocorrelation,
                               target_psd)

TAU = 1e-7


def test_target_autocorrelation_values():
    assert target_autocorrelation(0.0, TAU) == 1.0
    assert target_autocorrelation(TAU, TAU) == pytest.approx(0.60653066, abs=1e-8)


def test_target_psd_is_transform_of_autocorrelation():
    # Numerical Fourier transform of the Gaussian autocorrelation.
    lag = np.linspace(-12 * TAU, 12 * TAU, 20001)
    for w in (0.0, 1 / TAU, 2.5 / TAU):
        num = trapezoid(np.exp(-lag**2 / (2 * TAU**2)) * np.cos(w * lag), lag)
        assert target_psd(w, TAU) == pytest.approx(num, rel=1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(tau_c=0.0, duration=1e-5),
    dict(tau_c=-1e-7, duration=1e-5),
    dict(tau_c=1e-7, duration=1e-6),           # shorter than 20 tau_c
    dict(tau_c=1e-7, duration=1e-5, dt=2e-8),   # dt > tau_c / 10
    dict(tau_c=1e-7, duration=1e-5, dt=-1e-9),
])
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        NoiseSpec(**kwargs)


def test_series_length_and_finiteness():
    spec = NoiseSpec(TAU, 3.3e-6, 3e-9, (1, 0))
    s = generate_gaussian_noise(spec)
    assert len(s) == round(3.3e-6 / 3e-9)
    assert np.all(np.isfinite(s.samples))
    assert spec.dt == 3e-9
    assert NoiseSpec(TAU, 3e-6).dt == pytest.approx(TAU / 20)


def test_same_key_is_bit_identical_regardless_of_order_and_threads():
    spec = NoiseSpec(TAU, 4e-6, None, (42, 0))
    ref = [generate_gaussian_noise(spec.with_index(i)).samples for i in range(6)]
    rev = [generate_gaussian_noise(spec.with_index(i)).samples for i in reversed(range(6))][::-1]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda i: generate_gaussian_noise(spec.with_index(i)).samples,
                            range(6)))
    batch = noise_batch(spec, range(6))
    for i in range(6):
        assert np.array_equal(ref[i], rev[i])
        assert np.array_equal(ref[i], par[i])
        assert np.array_equal(ref[i], batch[i])
    assert not np.array_equal(ref[0], ref[1])
    other_seed = generate_gaussian_noise(NoiseSpec(TAU, 4e-6, None, (43, 0))).samples
    assert not np.array_equal(ref[0], other_seed)


def test_mean_of_long_series():
    spec = NoiseSpec(TAU, 1e6 * TAU / 20, None, (7, 0))
    x = generate_gaussian_noise(spec).samples
    assert len(x) == 10**6
    n_eff = spec.duration / TAU
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(n_eff)


def test_variance_normalized_to_one():
    spec = NoiseSpec(TAU, 2e-4, None, (8, 0))
    x = noise_batch(spec, range(20))
    # Ensemble variance per realization averages to 1 within its spread.
    v = x.var(axis=1)
    assert abs(v.mean() - 1) < 5 * v.std(ddof=1) / math.sqrt(len(v))


def test_autocorrelation_estimator_degenerate_series():
    _, c = estimate_autocorrelation(np.ones(400), 50)
    assert np.allclose(c, 1 - np.arange(51) / 400)  # biased estimator of a constant
    alt = np.where(np.arange(10000) % 2, -1.0, 1.0)
    _, c = estimate_autocorrelation(alt, 3)
    assert c[1] == pytest.approx(-1, abs=2e-4)
    with pytest.raises(ValueError):
        estimate_autocorrelation(np.ones(100), 25)


def test_autocorrelation_matches_target_over_ensemble():
    spec = NoiseSpec(TAU, 200 * TAU, None, (11, 0))
    lag_max = 3 * 20
    curves = np.array([estimate_autocorrelation(NoiseSeries(spec.dt, x), lag_max)[1]
                       for x in noise_batch(spec, range(120))])
    lags = spec.dt * np.arange(lag_max + 1)
    mean = curves.mean(axis=0)
    err = curves.std(axis=0, ddof=1) / math.sqrt(len(curves))
    err[0] = 1e-12
    # The biased estimator carries a known (1 - k/L) factor and a finite-length
    # mean-removal bias of order tau_c/T; both are far inside the tolerance.
    target = np.exp(-lags**2 / (2 * TAU**2)) * (1 - np.arange(lag_max + 1) / spec.n_samples)
    assert np.all(np.abs(mean - target) < 5 * err + 1e-12)


def test_excess_kurtosis_vanishes():
    spec = NoiseSpec(TAU, 500 * TAU, None, (12, 0))
    x = noise_batch(spec, range(100))
    k = ((x - x.mean(axis=1, keepdims=True))**4).mean(axis=1) / x.var(axis=1)**2 - 3
    # Per-realization kurtosis values are independent; their spread sets the error.
    assert abs(k.mean()) < 5 * k.std(ddof=1) / math.sqrt(len(k))


def test_periodogram_matches_target_spectrum():
    spec = NoiseSpec(TAU, 400 * TAU, None, (13, 0))
    x = noise_batch(spec, range(150))
    n, dt = spec.n_samples, spec.dt
    p = (np.abs(np.fft.rfft(x, axis=1) * dt)**2 / (n * dt)).mean(axis=0)
    w = 2 * np.pi * np.fft.rfftfreq(n, dt)
    band = (w > 0) & (w <= 3 / TAU)
    rel = p[band] / target_psd(w[band], TAU) - 1
    assert math.sqrt(np.mean(rel**2)) < 0.10


def test_uniform_phase_statistics():
    a = draw_uniform_phases(5, 10**6)
    assert a.min() >= 0 and a.max() < 2 * np.pi
    assert abs(np.cos(a).mean()) < 4 / 1e3
    assert abs((np.cos(a)**2).mean() - 0.5) < 4 / 1e3


def test_uniform_phase_key_determinism():
    assert draw_uniform_phase((9, 123)) == draw_uniform_phase((9, 123))
    assert draw_uniform_phase((9, 123)) == draw_uniform_phases(9, 1, start=123)[0]
    assert draw_uniform_phase((9, 123)) != draw_uniform_phase((9, 124))


def test_indexed_uniforms_depend_only_on_absolute_index():
    full = indexed_uniforms(3, 2, 1000, 50, 4)
    part = indexed_uniforms(3, 2, 1020, 10, 4)
    assert np.array_equal(full[20:30], part)
    assert not np.array_equal(indexed_uniforms(3, 1, 1000, 5, 4), full[:5])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), index=st.integers(0, 2**40))
def test_phase_in_range_and_reproducible(seed, index):
    a = draw_uniform_phase((seed, index))
    assert 0 <= a < 2 * np.pi
    assert a == draw_uniform_phase((seed, index))
