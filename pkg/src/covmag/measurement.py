"""Shot-level Monte Carlo, Pearson estimation and sensitivity projection.

Shots draw their uniforms from :func:`covmag.signal_gen.indexed_uniforms`
with counter offset ``(experiment_index << 40) + shot``, so any shot of any
experiment can be regenerated in isolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from .bloch import SensorDrive, evolve_batch, grid_indices, CHUNK
from .constants import GAMMA_E
from .dd_spectroscopy import accumulated_phase
from .signal_gen import TAG_NOISE, TAG_SHOTS, NoiseSpec, indexed_uniforms, noise_batch

CORRELATION = "correlation"
ANTICORRELATION = "anticorrelation"
SHOT_BITS = 40


@dataclass(frozen=True)
class ReadoutModel:
    """Assignment errors: ``eps0 = P(read 1 | 0)``, ``eps1 = P(read 0 | 1)``."""

    eps0: float = 0.0
    eps1: float = 0.0

    def __post_init__(self):
        if self.eps0 < 0 or self.eps1 < 0:
            raise ValueError("misassignment probabilities must be non-negative")
        if self.eps0 + self.eps1 >= 1:
            raise ValueError("eps0 + eps1 >= 1: readout carries no spin information")

    @property
    def sigma(self) -> float:
        return readout_noise_sigma(self)

    @classmethod
    def symmetric_for_sigma(cls, sigma_r: float) -> "ReadoutModel":
        """Equal error rates giving readout noise ``sigma_r``."""
        if sigma_r < 1:
            raise ValueError("sigma_R must be >= 1")
        eps = 0.5 * (1 - 1 / sigma_r)
        return cls(eps, eps)


def readout_noise_sigma(m: ReadoutModel) -> float:
    """``2 sqrt(q (1-q)) / (1 - eps0 - eps1)`` with ``q = (1 + eps0 - eps1) / 2``.

    Normalized so two perfectly correlated equal-mixture sensors show
    ``r = 1 / (sigma_R1 sigma_R2)``.
    """
    q = 0.5 * (1 + m.eps0 - m.eps1)
    return 2 * math.sqrt(q * (1 - q)) / (1 - m.eps0 - m.eps1)


def readout_from_poisson(mean_dark: float, mean_bright: float,
                         threshold: int) -> ReadoutModel:
    """Misassignment from Poisson photon counts thresholded at ``threshold``.

    Counts ``>= threshold`` are assigned ``S = 1``.  The spin state mapped to
    ``S = 0`` is the dark one (it is ionized before charge readout).
    """
    if not 0 <= mean_dark < mean_bright:
        raise ValueError("need 0 <= mean_dark < mean_bright")
    eps0 = float(poisson.sf(threshold - 1, mean_dark))
    eps1 = float(poisson.cdf(threshold - 1, mean_bright))
    return ReadoutModel(eps0, eps1)


@dataclass
class ShotRecord:
    s1: np.ndarray
    s2: np.ndarray
    config: str = CORRELATION

    def __post_init__(self):
        self.s1 = np.asarray(self.s1, dtype=np.int8)
        self.s2 = np.asarray(self.s2, dtype=np.int8)
        if self.s1.shape != self.s2.shape or self.s1.ndim != 1:
            raise ValueError("outcome sequences must be 1-D with equal length")

    @property
    def M(self) -> int:
        return len(self.s1)


@dataclass(frozen=True)
class PearsonResult:
    r: float
    stderr: float
    M: int

    def to_dict(self):
        return {"r": self.r, "stderr": self.stderr, "M": self.M}


def pearson_estimate(shots: ShotRecord) -> PearsonResult:
    """Pearson coefficient of the paired outcomes with ``(1 - r^2)/sqrt(M)`` error."""
    if shots.M < 3:
        raise ValueError("need at least 3 shots")
    a = shots.s1.astype(float)
    b = shots.s2.astype(float)
    ma, mb = a.mean(), b.mean()
    va, vb = np.mean(a * a) - ma * ma, np.mean(b * b) - mb * mb
    if va <= 0 or vb <= 0:
        raise ValueError("an outcome sequence is constant (zero variance)")
    r = (np.mean(a * b) - ma * mb) / math.sqrt(va * vb)
    r = float(np.clip(r, -1.0, 1.0))
    return PearsonResult(r, (1 - r * r) / math.sqrt(shots.M), shots.M)


@dataclass(frozen=True)
class Subtracted:
    signal: float
    background: float
    signal_err: float
    background_err: float


def background_subtract(r_corr: PearsonResult, r_anti: PearsonResult) -> Subtracted:
    """Split into the configuration-odd signal and the common background."""
    err = math.hypot(r_corr.stderr, r_anti.stderr) / 2
    return Subtracted((r_corr.r - r_anti.r) / 2, (r_corr.r + r_anti.r) / 2, err, err)


def _shot_uniforms(stream_key, M, width):
    seed, index = stream_key
    return indexed_uniforms(seed, TAG_SHOTS, (int(index) << SHOT_BITS), M, width)


def _measure(p_one, u_state, u_read, m: ReadoutModel):
    true = u_state < p_one
    flip = u_read < np.where(true, m.eps1, m.eps0)
    return (true ^ flip).astype(np.int8)


def simulate_driven_experiment(theta, M, m1: ReadoutModel, m2: ReadoutModel,
                               config=CORRELATION, stream_key=(0, 0)) -> ShotRecord:
    """Both sensors rotated to polar angle theta (even shots) or theta+pi (odd).

    Outcomes are sampled independently per sensor (product states); in the
    anticorrelation configuration sensor 2 is rotated by an extra pi.
    """
    if M % 2:
        raise ValueError(f"M must be even, got {M}")
    if config not in (CORRELATION, ANTICORRELATION):
        raise ValueError(f"unknown configuration {config!r}")
    ang1 = theta + np.pi * (np.arange(M) % 2)
    ang2 = ang1 + (np.pi if config == ANTICORRELATION else 0.0)
    u = _shot_uniforms(stream_key, M, 4)
    s1 = _measure(np.sin(ang1 / 2)**2, u[:, 0], u[:, 2], m1)
    s2 = _measure(np.sin(ang2 / 2)**2, u[:, 1], u[:, 3], m2)
    return ShotRecord(s1, s2, config)


def driven_theory(theta, sigma_r1, sigma_r2):
    return np.cos(theta)**2 / (sigma_r1 * sigma_r2)


def simulate_t2_experiment(tones, seq1, seq2, chi1, chi2, m1: ReadoutModel,
                           m2: ReadoutModel, M, stream_key=(0, 0),
                           gamma=GAMMA_E) -> ShotRecord:
    """Sine-magnetometry shots with a fresh random phase per tone per shot."""
    tones = list(tones)
    u = _shot_uniforms(stream_key, M, len(tones) + 4)
    ph1 = np.zeros(M)
    ph2 = np.zeros(M)
    for k, tone in enumerate(tones):
        alpha = 2 * np.pi * u[:, 4 + k]
        ph1 += accumulated_phase(tone, seq1, 1, alpha, gamma)
        ph2 += accumulated_phase(tone, seq2, 2, alpha, gamma)
    p1 = 0.5 * (1 - math.exp(-chi1) * np.sin(ph1))
    p2 = 0.5 * (1 - math.exp(-chi2) * np.sin(ph2))
    assert np.all((p1 >= 0) & (p1 <= 1) & (p2 >= 0) & (p2 <= 1))
    return ShotRecord(_measure(p1, u[:, 0], u[:, 2], m1),
                      _measure(p2, u[:, 1], u[:, 3], m2))


def _initial(flag):
    return (0.0, 0.0, -1.0) if flag else (0.0, 0.0, 1.0)


def simulate_t1_curve(drives, noise_spec: NoiseSpec, sense_times, M,
                      m1: ReadoutModel, m2: ReadoutModel,
                      pi_flags=(False, False), stream_key=(0, 0), threads=1):
    """Relaxometry shots at several sensing times.

    Shot ``j`` uses noise realization ``j`` of ``noise_spec``'s seed and is
    read out at every requested time, so records at different times share
    realizations but each is individually a valid shot record.  Returns one
    :class:`ShotRecord` per sensing time.
    """
    from concurrent.futures import ThreadPoolExecutor

    drive1, drive2 = drives
    record = grid_indices(sense_times, noise_spec.dt, noise_spec.n_samples)
    n_t = len(record)
    s0 = (_initial(pi_flags[0]), _initial(pi_flags[1]))

    def work(lo):
        hi = min(M, lo + CHUNK)
        g = noise_batch(noise_spec, range(lo, hi))
        a, b = evolve_batch(drive1, drive2, g, noise_spec.dt, s0[0], s0[1], record)
        seed, index = stream_key
        u = indexed_uniforms(seed, TAG_SHOTS, (int(index) << SHOT_BITS) + lo,
                             hi - lo, 4 * n_t).reshape(hi - lo, n_t, 4)
        o1 = _measure((1 - a[:, :, 2]) / 2, u[:, :, 0], u[:, :, 2], m1)
        o2 = _measure((1 - b[:, :, 2]) / 2, u[:, :, 1], u[:, :, 3], m2)
        return o1, o2

    starts = list(range(0, M, CHUNK))
    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    o1 = np.concatenate([p[0] for p in parts])
    o2 = np.concatenate([p[1] for p in parts])
    return [ShotRecord(o1[:, k], o2[:, k]) for k in range(n_t)]


def simulate_t1_experiment(drives, noise_spec: NoiseSpec, sense_time, M,
                           m1: ReadoutModel, m2: ReadoutModel,
                           pi_flags=(False, False), stream_key=(0, 0),
                           threads=1) -> ShotRecord:
    """Relaxometry shots at one sensing time; each shot a fresh realization."""
    return simulate_t1_curve(drives, noise_spec, [sense_time], M, m1, m2,
                             pi_flags, stream_key, threads)[0]


@dataclass
class SensitivityResult:
    T_total: np.ndarray
    repetitions: np.ndarray
    sigma_B_min: np.ndarray   # T
    sensitivity: np.ndarray   # T Hz^-1/4


def sensitivity_minimum_field(t_init, t_sense, t_read, sigma_r1, sigma_r2,
                              c1, c2, w, T_total, gamma=GAMMA_E) -> SensitivityResult:
    """Smallest correlated amplitude whose small-signal correlation
    ``C1 C2 (gamma B t w)^2 / (2 sR1 sR2)`` reaches the ``1/sqrt(M)`` floor."""
    if min(t_init, t_sense, t_read) <= 0:
        raise ValueError("timings must be positive")
    if sigma_r1 < 1 or sigma_r2 < 1:
        raise ValueError("sigma_R must be >= 1")
    if not (0 < c1 <= 1 and 0 < c2 <= 1):
        raise ValueError("coherences must lie in (0, 1]")
    T_total = np.atleast_1d(np.asarray(T_total, dtype=float))
    reps = np.floor(T_total / (t_init + t_sense + t_read))
    if np.any(reps < 1):
        raise ValueError("T_total shorter than one repetition")
    b = np.sqrt(2 * sigma_r1 * sigma_r2 / (c1 * c2)) / (gamma * t_sense * abs(w)) * reps**-0.25
    return SensitivityResult(T_total, reps.astype(np.int64), b, b * T_total**0.25)
