"""Colored Gaussian noise and random signal phases.

Every random quantity in the package is drawn from a Philox counter-based
generator whose 128-bit key packs ``(seed, tag, index)``.  A realization is
therefore fixed by its stream key alone, independent of the order in which
realizations are requested or of how work is split across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

# Stream tags keep independent uses of the same (seed, index) apart.
TAG_NOISE = 0
TAG_PHASE = 1
TAG_SHOTS = 2
TAG_FIT = 3


def make_rng(seed: int, index: int = 0, tag: int = 0) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, tag, index)``."""
    if index < 0 or index >= 1 << 48:
        raise ValueError(f"stream index {index} outside [0, 2**48)")
    if tag < 0 or tag >= 1 << 16:
        raise ValueError(f"stream tag {tag} outside [0, 2**16)")
    key = (int(seed) & MASK64) | (((tag << 48) | index) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of a Gaussian-autocorrelated noise realization.

    ``dt`` defaults to ``tau_c / 20``.  ``stream_key`` is ``(seed, index)``.
    """

    tau_c: float
    duration: float
    dt: float | None = None
    stream_key: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", self.tau_c / 20.0)
        if not (np.isfinite(self.tau_c) and self.tau_c > 0):
            raise ValueError(f"tau_c must be positive, got {self.tau_c!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.dt > self.tau_c / 10 * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt:g} s exceeds tau_c/10={self.tau_c / 10:g} s")
        if self.duration < 20 * self.tau_c * (1 - 1e-12):
            raise ValueError(
                f"duration={self.duration:g} s shorter than 20*tau_c="
                f"{20 * self.tau_c:g} s")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))

    def with_index(self, index: int) -> "NoiseSpec":
        return NoiseSpec(self.tau_c, self.duration, self.dt,
                         (self.stream_key[0], index))


@dataclass
class NoiseSeries:
    dt: float
    samples: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))

    def __len__(self):
        return len(self.samples)


def target_autocorrelation(lag, tau_c):
    """Normalized autocorrelation exp(-lag^2 / 2 tau_c^2)."""
    lag = np.asarray(lag, dtype=float)
    return np.exp(-lag**2 / (2.0 * tau_c**2))


def target_psd(omega, tau_c):
    """Two-sided PSD of the unit-variance process, sqrt(2 pi) tau_c exp(-w^2 tau_c^2 / 2)."""
    omega = np.asarray(omega, dtype=float)
    return np.sqrt(2 * np.pi) * tau_c * np.exp(-(omega * tau_c)**2 / 2)


def _filter_amplitudes(n_ext: int, dt: float, tau_c: float) -> np.ndarray:
    omega = 2 * np.pi * np.fft.rfftfreq(n_ext, dt)
    amp = np.sqrt(target_psd(omega, tau_c) / dt)
    # Exact unit variance on the discrete grid (two-sided sum of |A|^2 / n).
    weights = np.full(len(amp), 2.0)
    weights[0] = 1.0
    if n_ext % 2 == 0:
        weights[-1] = 1.0
    var = np.sum(weights * amp**2) / n_ext
    return amp / np.sqrt(var)


def noise_batch(spec: NoiseSpec, indices) -> np.ndarray:
    """Realizations for several stream indices under ``spec``'s seed.

    Returns an array of shape ``(len(indices), spec.n_samples)``.  Row ``k``
    is bit-identical to ``generate_gaussian_noise(spec.with_index(indices[k]))``.
    """
    n = spec.n_samples
    n_ext = int(np.ceil((spec.duration + 10 * spec.tau_c) / spec.dt))
    amp = _filter_amplitudes(n_ext, spec.dt, spec.tau_c)
    seed = spec.stream_key[0]
    out = np.empty((len(indices), n))
    for row, idx in enumerate(indices):
        white = make_rng(seed, int(idx), TAG_NOISE).standard_normal(n_ext)
        out[row] = np.fft.irfft(np.fft.rfft(white) * amp, n_ext)[:n]
    return out


def generate_gaussian_noise(spec: NoiseSpec) -> NoiseSeries:
    """Draw one stationary zero-mean realization with autocorrelation
    exp(-dt^2/2 tau_c^2).

    White Gaussian samples on a grid padded by ``10 tau_c`` are shaped in
    the Fourier domain by the square root of the target spectrum and the
    padding is cropped, so circular wrap-around correlations are below
    exp(-50).
    """
    samples = noise_batch(spec, [spec.stream_key[1]])[0]
    if not np.all(np.isfinite(samples)):
        raise FloatingPointError("non-finite noise samples")
    return NoiseSeries(spec.dt, samples)


def estimate_autocorrelation(series: NoiseSeries | np.ndarray, max_lag: int):
    """Biased autocorrelation estimate normalized to its lag-0 value.

    Returns ``(lags_s, values)`` for lags ``0..max_lag`` samples.
    """
    if isinstance(series, NoiseSeries):
        x, dt = np.asarray(series.samples, dtype=float), series.dt
    else:
        x, dt = np.asarray(series, dtype=float), 1.0
    n = len(x)
    if max_lag < 0 or max_lag >= n / 4:
        raise ValueError(f"max_lag={max_lag} must be below length/4={n / 4:g}")
    c = np.array([np.dot(x[:n - k], x[k:]) for k in range(max_lag + 1)]) / n
    if c[0] == 0:
        raise ValueError("series has zero power")
    return dt * np.arange(max_lag + 1), c / c[0]


def draw_uniform_phase(stream_key: tuple[int, int]) -> float:
    """Uniform phase in [0, 2 pi), reproducible by ``(seed, index)``."""
    seed, index = stream_key
    return float(draw_uniform_phases(seed, 1, start=index)[0])


def indexed_uniforms(seed: int, tag: int, start: int, n: int,
                     width: int = 1) -> np.ndarray:
    """Uniform [0, 1) draws of shape ``(n, width)`` for indices ``start..start+n-1``.

    The Philox key is fixed by ``(seed, tag)`` and each index owns
    ``ceil(width/4)`` consecutive counter blocks, so row ``k`` depends only
    on ``start + k``.  This gives per-shot streams without constructing a
    generator per shot.
    """
    blocks = -(-width // 4)
    key = (int(seed) & MASK64) | ((tag << 48) << 64)
    gen = np.random.Generator(np.random.Philox(counter=start * blocks, key=key))
    return gen.random(4 * blocks * n).reshape(n, 4 * blocks)[:, :width]


def draw_uniform_phases(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Phases for stream indices ``start .. start+n-1``; element ``k`` equals
    ``draw_uniform_phase((seed, start + k))``."""
    return 2 * np.pi * indexed_uniforms(seed, TAG_PHASE, start, n)[:, 0]
