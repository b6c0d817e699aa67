"""Markovian two-sensor master equation in correlation-tensor form.

Only five components of ``Phi_ab = tr(rho sigma1^a sigma2^b)`` are coupled
to ``Phi_zz`` when both jump operators point along x in their local frames.
They are ordered ``(zz, yy, xx, xy, yx)`` throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constants import GAMMA_E

COMPONENTS = ("zz", "yy", "xx", "xy", "yx")
PHI0 = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
# Condition number of the eigenvector matrix above which the generator is
# treated as defective.
DEFECTIVE_COND = 1e8


def relaxation_rate(amplitude, tau_c):
    """T1 rate ``2 sqrt(2 pi) tau_c |A|^2`` for drive amplitude ``A`` (rad/s)."""
    if tau_c <= 0:
        raise ValueError(f"tau_c must be positive, got {tau_c!r}")
    return 2.0 * np.sqrt(2 * np.pi) * tau_c * np.abs(amplitude)**2


def relaxation_rate_from_field(b_eff, tau_c, gamma=GAMMA_E):
    """T1 rate for an effective field amplitude ``b_eff`` (T), ``|A| = gamma B``."""
    return relaxation_rate(gamma * np.asarray(b_eff, dtype=float), tau_c)


def amplitude_for_rate(rate, tau_c):
    """Real drive amplitude producing relaxation rate ``rate``."""
    if tau_c <= 0 or rate < 0:
        raise ValueError("need tau_c > 0 and rate >= 0")
    return float(np.sqrt(rate / (2.0 * np.sqrt(2 * np.pi) * tau_c)))


def single_spin_polarization(rate, t):
    """Return ``(s_z, mean_S)`` with ``s_z = exp(-rate t)``, ``mean_S = (1 - s_z)/2``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    sz = np.exp(-rate * t)
    return sz, 0.5 * (1.0 - sz)


@dataclass(frozen=True)
class QmeParams:
    """Rates in 1/s, detunings in rad/s; ``r0`` scales the Pearson model."""

    Gamma1: float
    Gamma2: float
    delta1: float = 0.0
    delta2: float = 0.0
    gd11: float = 0.0
    gd22: float = 0.0
    gd12: float = 0.0
    r0: float = 1.0

    def __post_init__(self):
        vals = [self.Gamma1, self.Gamma2, self.delta1, self.delta2,
                self.gd11, self.gd22, self.gd12, self.r0]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("QmeParams must be finite")
        if self.Gamma1 < 0 or self.Gamma2 < 0:
            raise ValueError("relaxation rates must be non-negative")
        if self.gd11 < 0 or self.gd22 < 0:
            raise ValueError("local dephasing rates must be non-negative")
        bound = np.sqrt(self.gd11 * self.gd22)
        if abs(self.gd12) > bound * (1 + 1e-12) + 1e-300:
            raise ValueError(
                f"|gd12|={abs(self.gd12):g} exceeds sqrt(gd11*gd22)={bound:g}; "
                "dephasing matrix not positive semidefinite")


def build_correlation_generator(p: QmeParams) -> np.ndarray:
    """Linear generator ``M`` with ``d/dt (zz, yy, xx, xy, yx) = M @ Phi``."""
    g1, g2 = p.Gamma1, p.Gamma2
    d1, d2 = p.delta1, p.delta2
    deph = 2 * (p.gd11 + p.gd22)
    c = 2 * np.sqrt(g1 * g2)
    x = 4 * p.gd12
    return np.array([
        [-(g1 + g2), c, 0.0, 0.0, 0.0],
        [c, -(g1 + g2 + deph), x, d1, d2],
        [0.0, x, -deph, -d2, -d1],
        [0.0, -d1, d2, -(g2 + deph), -x],
        [0.0, -d2, d1, -x, -(g1 + deph)],
    ])


@dataclass
class CorrelationSolution:
    t: np.ndarray
    phi: np.ndarray  # shape (len(t), 5), columns in COMPONENTS order
    eigenvalues: np.ndarray
    coefficients: np.ndarray | None
    defective: bool

    @property
    def phi_zz(self):
        return self.phi[:, 0]


def evolve_correlation_tensor(p: QmeParams, t_grid) -> CorrelationSolution:
    """Solve the five-component system from ``Phi_zz(0) = 1``.

    ``Phi_zz`` is a sum of five exponentials whose rates and weights come
    from diagonalizing the generator.  If the eigenvector matrix is
    ill-conditioned the solution is built from ``expm`` instead and
    ``defective`` is set.
    """
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    m = build_correlation_generator(p)
    nu, vecs = np.linalg.eig(m)
    cond = np.linalg.cond(vecs)
    if np.isfinite(cond) and cond < DEFECTIVE_COND:
        weights = np.linalg.solve(vecs, PHI0.astype(complex))
        phi = (np.exp(np.outer(t, nu)) * weights) @ vecs.T
        coeffs = vecs[0] * weights
        return CorrelationSolution(t, phi.real, nu, coeffs, False)
    phi = np.array([scipy.linalg.expm(m * ti) @ PHI0 for ti in t])
    return CorrelationSolution(t, phi, nu, None, True)


def analytic_connected_zz(gamma1, gamma2, t):
    """Connected zz correlation without dephasing or detuning,
    ``[cosh(2 t sqrt(G1 G2)) - 1] exp(-(G1 + G2) t)``."""
    t = np.asarray(t, dtype=float)
    return (np.cosh(2 * t * np.sqrt(gamma1 * gamma2)) - 1) * np.exp(-(gamma1 + gamma2) * t)


# Below this value of max(Gamma) * t the model uses its first-order series.
SMALL_T = 1e-6


def pearson_model_t1(p: QmeParams, sigma_r1, sigma_r2, t):
    """Pearson correlation of the two thresholded z outcomes.

    ``r = r0 [Phi_zz - exp(-(G1+G2) t)] / (sR1 sR2 sqrt((1 - e^{-2 G1 t})(1 - e^{-2 G2 t})))``.
    The ratio is 0/0 at ``t = 0``; near it the leading term
    ``r0 sqrt(G1 G2) t / (sR1 sR2)`` is returned.
    """
    if sigma_r1 < 1 or sigma_r2 < 1:
        raise ValueError("readout noise sigma_R must be >= 1")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    scale = p.r0 / (sigma_r1 * sigma_r2)
    if p.Gamma1 == 0 or p.Gamma2 == 0:
        return np.zeros_like(t)
    sol = evolve_correlation_tensor(p, t)
    mu = -(p.Gamma1 + p.Gamma2)
    if sol.defective:
        num = sol.phi_zz - np.exp(mu * t)
    else:
        # Modal weights sum to one, so the connected part is
        # sum_k c_k (e^{nu_k t} - e^{mu t}); expm1 avoids the cancellation.
        x = np.outer(t, sol.eigenvalues - mu)
        mut = (mu * t)[:, None]
        near = np.abs(x) < 1
        diff = np.where(near, np.exp(mut) * np.expm1(np.where(near, x, 0)),
                        np.exp(np.outer(t, sol.eigenvalues)) - np.exp(mut))
        num = (diff @ sol.coefficients).real
    den = np.sqrt(-np.expm1(-2 * p.Gamma1 * t) * -np.expm1(-2 * p.Gamma2 * t))
    small = max(p.Gamma1, p.Gamma2) * t < SMALL_T
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(small, np.sqrt(p.Gamma1 * p.Gamma2) * t, num / np.where(small, 1.0, den))
    return scale * r
