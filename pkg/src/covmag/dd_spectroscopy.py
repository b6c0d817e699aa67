"""Correlated T2 spectroscopy with XY8/CPMG-type pulse trains.

Sensor ``i`` accumulates ``phi_Ci = gamma B_i t_i w_i cos(alpha + phi_i)``
from a tone with random phase ``alpha``.  Averaging the product of sines
over uniform ``alpha`` yields Bessel-function lineshapes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import j0

from .constants import GAMMA_E

# |f tau - (k + 1/2)| below this switches filter_weight to its local series.
SERIES_WINDOW = 1e-4


@dataclass(frozen=True)
class SenseSequence:
    """``n_pulses`` pi pulses spaced by ``tau`` (s), starting ``delay`` (s) late."""

    n_pulses: int
    tau: float
    delay: float = 0.0

    def __post_init__(self):
        if self.n_pulses < 1 or int(self.n_pulses) != self.n_pulses:
            raise ValueError(f"n_pulses must be a positive integer, got {self.n_pulses!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if self.n_pulses % 8:
            warnings.warn(f"N={self.n_pulses} is not a multiple of 8 (XY8 blocks)",
                          stacklevel=3)

    @property
    def duration(self) -> float:
        return self.n_pulses * self.tau

    @classmethod
    def probing(cls, f, n_pulses, delay=0.0):
        """Sequence whose spacing ``1/(2f)`` puts its filter peak at ``f``."""
        return cls(n_pulses, 1.0 / (2.0 * f), delay)


@dataclass(frozen=True)
class ToneSpec:
    """AC tone at ``f`` (Hz) with amplitudes ``B1``, ``B2`` (T) at the sensors."""

    f: float
    B1: float
    B2: float
    phase_bandwidth: float = 0.0

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("tone frequency must be positive")
        if self.B1 < 0 or self.B2 < 0:
            raise ValueError("tone amplitudes must be non-negative")

    def amplitude(self, sensor: int) -> float:
        return self.B1 if sensor == 1 else self.B2


@dataclass(frozen=True)
class DecoherenceInputs:
    chi1: float = 0.0
    chi2: float = 0.0
    sigma_r1: float = 1.0
    sigma_r2: float = 1.0

    def __post_init__(self):
        if self.chi1 < 0 or self.chi2 < 0:
            raise ValueError("decoherence exponents must be non-negative")
        if self.sigma_r1 < 1 or self.sigma_r2 < 1:
            raise ValueError("readout noise sigma_R must be >= 1")

    @property
    def envelope(self) -> float:
        """Largest attainable |r|: exp(-(chi1 + chi2)) / (sigma_R1 sigma_R2)."""
        return math.exp(-(self.chi1 + self.chi2)) / (self.sigma_r1 * self.sigma_r2)


def _sin_ratio_series(n, eps):
    # sin(n eps) / sin(eps) to fourth order in eps.
    e2 = eps * eps
    return n * (1 - (n * n - 1) * e2 / 6 + (3 * n**4 - 10 * n * n + 7) * e2 * e2 / 360)


def filter_weight(f, seq: SenseSequence):
    """Filter weight ``w = (sin phi / phi)[1 - sec(phi / N)]`` and ``phi = pi f N tau``.

    The secant diverges where ``f tau = k + 1/2``.  For even ``N`` the
    singularity is removable and is evaluated from a local series; odd ``N``
    raises.
    """
    if not f > 0:
        raise ValueError("frequency must be positive")
    n = seq.n_pulses
    u = f * seq.tau
    phi = math.pi * f * n * seq.tau
    k = math.floor(u)
    d = u - (k + 0.5)
    if abs(d) >= SERIES_WINDOW:
        return (math.sin(phi) / phi) * (1 - 1 / math.cos(math.pi * u)), phi
    if n % 2:
        raise ZeroDivisionError(
            f"filter weight diverges at f*tau={k + 0.5} for odd N={n}")
    # Near x0 = (k + 1/2) pi: sin(N x) = c sin(N eps), cos(x) = -s sin(eps).
    eps = math.pi * d
    c = -1.0 if (n // 2) % 2 else 1.0
    s = -1.0 if k % 2 else 1.0
    sin_over_cos = -c * s * _sin_ratio_series(n, eps)
    return math.sin(phi) / phi - sin_over_cos / phi, phi


def _eta_phase(tone: ToneSpec, seq: SenseSequence, sensor: int, gamma):
    w, phi = filter_weight(tone.f, seq)
    eta = gamma * tone.amplitude(sensor) * seq.duration * w
    return eta, phi + 2 * math.pi * tone.f * seq.delay


def accumulated_phase(tone: ToneSpec, seq: SenseSequence, sensor: int, alpha,
                      gamma=GAMMA_E):
    """Phase ``gamma B t w cos(alpha + phi + 2 pi f delay)`` picked up in one shot."""
    eta, ph = _eta_phase(tone, seq, sensor, gamma)
    return eta * np.cos(np.asarray(alpha, dtype=float) + ph)


def xi_beta(eta1, ph1, eta2, ph2):
    """``(xi_minus, xi_plus, beta_minus, beta_plus)`` for two phase arms.

    ``phi_C1 -/+ phi_C2 = xi_-/+ cos(alpha + beta_-/+)``.  The beta angles do
    not survive the phase average and are reported for diagnostics.
    """
    z1 = eta1 * np.exp(1j * ph1)
    z2 = eta2 * np.exp(1j * ph2)
    zm, zp = z1 - z2, z1 + z2
    return abs(zm), abs(zp), float(np.angle(zm)), float(np.angle(zp))


def _tone_xis(tones, seq1, seq2, gamma):
    out = []
    for tone in tones:
        e1, p1 = _eta_phase(tone, seq1, 1, gamma)
        e2, p2 = _eta_phase(tone, seq2, 2, gamma)
        xm, xp, _, _ = xi_beta(e1, p1, e2, p2)
        out.append((xm, xp))
    return np.array(out)


def correlation_lineshape(tones, seq1: SenseSequence, seq2: SenseSequence,
                          dec: DecoherenceInputs, scale: float = 1.0,
                          gamma=GAMMA_E) -> float:
    """Phase-averaged Pearson correlation for one or more independent tones.

    With independent uniform phases the average of ``cos(sum_k xi_k cos(.))``
    factorizes, so ``r = scale * envelope * [prod J0(xi_-k) - prod J0(xi_+k)] / 2``.
    For one tone this is the familiar ``[J0(xi_-) - J0(xi_+)] / 2``.
    """
    tones = list(tones)
    if not tones:
        raise ValueError("at least one tone is required")
    xis = _tone_xis(tones, seq1, seq2, gamma)
    bracket = np.prod(j0(xis[:, 0])) - np.prod(j0(xis[:, 1]))
    return float(scale * dec.envelope * bracket / 2)


def quadrature_lineshape(tones, seq1, seq2, dec, scale=1.0, nodes=64,
                         gamma=GAMMA_E):
    """Direct phase average of ``<sin phi_C1 sin phi_C2>`` on a tensor grid.

    Uses ``nodes`` equispaced phases per tone (exact for trigonometric
    polynomials of lower degree; spectrally accurate here).  Kept as an
    independent check of :func:`correlation_lineshape`.
    """
    tones = list(tones)
    grids = np.meshgrid(*[2 * np.pi * np.arange(nodes) / nodes] * len(tones),
                        indexing="ij")
    ph1 = sum(accumulated_phase(t, seq1, 1, a, gamma) for t, a in zip(tones, grids))
    ph2 = sum(accumulated_phase(t, seq2, 2, a, gamma) for t, a in zip(tones, grids))
    return float(scale * dec.envelope * np.mean(np.sin(ph1) * np.sin(ph2)))


def lineshape_sweep(tones, n_pulses, freqs, dec, scale=1.0, fixed_seq1=None,
                    gamma=GAMMA_E):
    """Correlation vs probe frequency.

    Both sensors probe ``f`` unless ``fixed_seq1`` pins sensor 1's sequence.
    """
    r = np.empty(len(freqs))
    for i, f in enumerate(freqs):
        seq2 = SenseSequence.probing(f, n_pulses)
        seq1 = fixed_seq1 if fixed_seq1 is not None else seq2
        r[i] = correlation_lineshape(tones, seq1, seq2, dec, scale, gamma)
    return r


@dataclass
class TwoTimeSpectrum:
    delays: np.ndarray
    r: np.ndarray
    freqs: np.ndarray | None
    dft_real: np.ndarray | None


def two_time_spectrum(tone: ToneSpec, seq: SenseSequence, delays,
                      dec: DecoherenceInputs, scale=1.0, gamma=GAMMA_E):
    """Correlation against sensor-2 start delay, and the real part of its DFT.

    The DFT is only formed for a uniform delay grid; otherwise ``freqs`` and
    ``dft_real`` are ``None``.
    """
    delays = np.asarray(delays, dtype=float)
    r = np.array([correlation_lineshape([tone], replace(seq, delay=0.0),
                                        replace(seq, delay=d), dec, scale, gamma)
                  for d in delays])
    steps = np.diff(delays)
    if len(delays) < 2 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        return TwoTimeSpectrum(delays, r, None, None)
    spec = np.fft.rfft(r - r.mean())
    return TwoTimeSpectrum(delays, r, np.fft.rfftfreq(len(r), steps[0]), spec.real)


@dataclass
class PsdEstimate:
    S12_rad: float    # rad^2/s
    S12_field: float  # T^2/Hz
    f_probe: float    # Hz

    @property
    def S12_nT2_per_Hz(self):
        return self.S12_field * 1e18


def psd_from_correlation(r, dec: DecoherenceInputs, c1, c2, t, tau,
                         gamma=GAMMA_E) -> PsdEstimate:
    """Cross spectral density at ``pi/tau`` from a measured correlation.

    ``S12 = pi^2 / (8 t) * asinh(r sR1 sR2 / (C1 C2))``; the field-unit value
    divides out ``gamma^2``.
    """
    if not (0 < c1 <= 1 and 0 < c2 <= 1):
        raise ValueError("single-sensor coherences must lie in (0, 1]")
    if not t > 0:
        raise ValueError("sensing time must be positive")
    s = math.pi**2 / (8 * t) * math.asinh(r * dec.sigma_r1 * dec.sigma_r2 / (c1 * c2))
    return PsdEstimate(s, s / gamma**2, 1.0 / (2 * tau))


def correlation_from_phase_moments(dec: DecoherenceInputs, var1, var2, cross):
    """Gaussian-phase correlation from ``<phi1^2>``, ``<phi2^2>``, ``<phi1 phi2>``."""
    minus = var1 + var2 - 2 * cross
    plus = var1 + var2 + 2 * cross
    return dec.envelope / 2 * (math.exp(-minus / 2) - math.exp(-plus / 2))


def calibration_contrast(voltage, kappa, seq: SenseSequence, f, gamma=GAMMA_E):
    """Single-sensor contrast ``(1 + J0(gamma kappa V N / (pi f))) / 2``."""
    voltage = np.asarray(voltage, dtype=float)
    if np.any(voltage < 0) or not f > 0:
        raise ValueError("need V >= 0 and f > 0")
    return 0.5 * (1 + j0(gamma * kappa * voltage * seq.n_pulses / (math.pi * f)))
