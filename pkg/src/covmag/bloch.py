"""Stochastic Bloch-vector dynamics of two sensors in a shared noisy drive.

Each sensor sees ``h_i(t) = (2 Re A_i G(t), -2 Im A_i G(t), delta_i)`` and
evolves as ``ds/dt = h x s``.  The field is held constant over each noise
sample and the step is the exact rotation for that constant field, which
keeps ``|s|`` fixed to rounding error.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .signal_gen import NoiseSeries, NoiseSpec, noise_batch

# Trajectories are processed in fixed-size chunks so the floating-point work
# does not depend on the worker count.
CHUNK = 256
MAX_PHASE_STEP = 0.1


@dataclass(frozen=True)
class SensorDrive:
    """Complex drive amplitude ``A`` (rad/s) and detuning ``delta`` (rad/s)."""

    amplitude: complex = 0j
    detuning: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(complex(self.amplitude)) and np.isfinite(self.detuning)):
            raise ValueError("drive amplitude and detuning must be finite")

    def field(self, g):
        """Field vectors for noise values ``g``; shape ``g.shape + (3,)``."""
        g = np.asarray(g, dtype=float)
        a = complex(self.amplitude)
        return np.stack([2 * a.real * g, -2 * a.imag * g,
                         np.full_like(g, self.detuning)], axis=-1)

    def max_rate(self, g_absmax: float) -> float:
        return float(np.hypot(2 * abs(complex(self.amplitude)) * g_absmax,
                              self.detuning))


@dataclass
class PairTrajectory:
    dt: float
    s1: np.ndarray
    s2: np.ndarray

    @property
    def times(self):
        return self.dt * np.arange(len(self.s1))


def rotation_step(s, h, dt):
    """Exact evolution of ``ds/dt = h x s`` over ``dt`` for constant ``h``.

    Broadcasts over leading axes; the last axis holds vector components.
    """
    s = np.asarray(s, dtype=float)
    h = np.asarray(h, dtype=float)
    norm = np.linalg.norm(h, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    n = h / safe
    angle = norm * dt
    c, sn = np.cos(angle), np.sin(angle)
    proj = np.sum(n * s, axis=-1, keepdims=True)
    out = c * s + (1 - c) * proj * n + sn * np.cross(n, s)
    return np.where(norm > 0, out, s)


def _check_step(drives, g_absmax, dt):
    worst = max(d.max_rate(g_absmax) for d in drives) * dt
    if worst >= MAX_PHASE_STEP:
        raise ValueError(
            f"step too coarse: max|h|*dt = {worst:.4g} >= {MAX_PHASE_STEP}")


def _advance(sx, sy, sz, hx, hy, hz, dt):
    # Component form of rotation_step, vectorized over trajectories.
    norm = np.sqrt(hx * hx + hy * hy + hz * hz)
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    nx, ny, nz = hx / safe, hy / safe, hz / safe
    angle = norm * dt
    c, s = np.cos(angle), np.sin(angle)
    proj = (1 - c) * (nx * sx + ny * sy + nz * sz)
    ox = c * sx + proj * nx + s * (ny * sz - nz * sy)
    oy = c * sy + proj * ny + s * (nz * sx - nx * sz)
    oz = c * sz + proj * nz + s * (nx * sy - ny * sx)
    if zero.any():
        ox = np.where(zero, sx, ox)
        oy = np.where(zero, sy, oy)
        oz = np.where(zero, sz, oz)
    return ox, oy, oz


def evolve_batch(drive1: SensorDrive, drive2: SensorDrive, g: np.ndarray,
                 dt: float, s1_0=(0, 0, 1), s2_0=(0, 0, 1), record=None):
    """Evolve many noise realizations at once.

    ``g`` has shape ``(n_traj, n_steps)``.  States are recorded at step
    indices ``record`` (default: every step including 0) and returned as two
    arrays of shape ``(n_traj, len(record), 3)``.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    n_traj, n_steps = g.shape
    _check_step((drive1, drive2), float(np.max(np.abs(g), initial=0.0)), dt)
    record = np.arange(n_steps + 1) if record is None else np.asarray(record, int)
    if record.size and (record.min() < 0 or record.max() > n_steps):
        raise ValueError(f"record indices must lie in [0, {n_steps}]")
    out = []
    for drive, s0 in ((drive1, s1_0), (drive2, s2_0)):
        s0 = np.asarray(s0, dtype=float)
        if s0.ndim == 1:
            s0 = np.broadcast_to(s0, (n_traj, 3))
        sx, sy, sz = (np.array(s0[:, k], dtype=float) for k in range(3))
        a = complex(drive.amplitude)
        hz = np.full(n_traj, float(drive.detuning))
        rec = np.empty((n_traj, len(record), 3))
        slots = {}
        for pos, idx in enumerate(record):
            slots.setdefault(int(idx), []).append(pos)
        last = int(record.max(initial=-1))
        for j in range(last + 1):
            for pos in slots.get(j, ()):
                rec[:, pos, 0], rec[:, pos, 1], rec[:, pos, 2] = sx, sy, sz
            if j == last:
                break
            col = g[:, j]
            sx, sy, sz = _advance(sx, sy, sz, 2 * a.real * col,
                                  -2 * a.imag * col, hz, dt)
        out.append(rec)
    return out[0], out[1]


def evolve_pair_trajectory(drive1: SensorDrive, drive2: SensorDrive,
                           noise: NoiseSeries, s1_0=(0, 0, 1),
                           s2_0=(0, 0, 1)) -> PairTrajectory:
    """Evolve both sensors through one shared noise realization.

    Returns states at ``t = j*dt`` for ``j = 0..len(noise)``.
    """
    s1, s2 = evolve_batch(drive1, drive2, noise.samples[None, :], noise.dt,
                          s1_0, s2_0)
    return PairTrajectory(noise.dt, s1[0], s2[0])


def grid_indices(t_grid, dt, n_steps):
    idx = np.rint(np.asarray(t_grid, dtype=float) / dt).astype(int)
    if idx.size and (idx.min() < 0 or idx.max() > n_steps):
        raise ValueError("t_grid extends outside the noise duration")
    return idx


def sample_sz(drives, noise_spec: NoiseSpec, indices, t_grid, threads=1,
              initial_states=((0, 0, 1), (0, 0, 1))):
    """z-components of both sensors at ``t_grid`` for the given realizations.

    Returns ``(s1z, s2z)``, each of shape ``(len(indices), len(t_grid))``.
    Work is split into chunks of ``CHUNK`` realizations; the result does
    not depend on ``threads``.
    """
    drive1, drive2 = drives
    indices = np.asarray(indices, dtype=np.int64)
    record = grid_indices(t_grid, noise_spec.dt, noise_spec.n_samples)

    def work(chunk):
        g = noise_batch(noise_spec, chunk)
        a, b = evolve_batch(drive1, drive2, g, noise_spec.dt,
                            initial_states[0], initial_states[1], record)
        return a[:, :, 2], b[:, :, 2]

    chunks = [indices[i:i + CHUNK] for i in range(0, len(indices), CHUNK)]
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    s1z = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, len(record)))
    s2z = np.concatenate([p[1] for p in parts]) if parts else np.empty((0, len(record)))
    return s1z, s2z


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean_s1z: np.ndarray
    mean_s2z: np.ndarray
    mean_s1z_s2z: np.ndarray
    err_s1z: np.ndarray | None
    err_s2z: np.ndarray | None
    err_s1z_s2z: np.ndarray | None
    n_traj: int


def _mean_err(x):
    m = np.mean(x, axis=0)
    if x.shape[0] < 2:
        return m, None
    return m, np.std(x, axis=0, ddof=1) / np.sqrt(x.shape[0])


def ensemble_statistics(drives, noise_spec: NoiseSpec, n_traj: int, t_grid,
                        threads=1) -> EnsembleStats:
    """Ensemble means of s1z, s2z and s1z*s2z over realizations
    ``0..n_traj-1`` of the master seed in ``noise_spec``.

    Standard errors are ``None`` when ``n_traj == 1``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    s1z, s2z = sample_sz(drives, noise_spec, np.arange(n_traj), t_grid, threads)
    m1, e1 = _mean_err(s1z)
    m2, e2 = _mean_err(s2z)
    m12, e12 = _mean_err(s1z * s2z)
    return EnsembleStats(np.asarray(t_grid, dtype=float), m1, m2, m12,
                         e1, e2, e12, n_traj)
