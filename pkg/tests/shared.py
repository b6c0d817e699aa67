"""Synthetic data and run configurations shared by several test modules."""
import math

import numpy as np
from scipy.special import erf

from covmag.master_equation import QmeParams, pearson_model_t1

G1, G2 = 1 / 1.96e-6, 1 / 1.77e-6
DELTAS = (0.0, -2 * np.pi * 250e3, -2 * np.pi * 500e3)
KNOWN = {"Gamma1": G1, "Gamma2": G2, "delta2": 0.0, "sigma_r1": 1.0, "sigma_r2": 1.0}
TRUTH = {"r0": 0.37, "gd12": 1e5, "gd_tot": (2e5, 3e5, 4e5)}
T_GRID = np.linspace(0.2e-6, 15e-6, 75)


def colored_sz(amp, tau_c, t):
    """Exact <s_z> for a real drive about a fixed axis and Gaussian-correlated noise.

    The rotation angle is Gaussian with variance 4 A^2 int int C, so
    <cos theta> = exp(-2 A^2 I(t)).
    """
    i_t = (math.sqrt(2 * math.pi) * tau_c * t * erf(t / (math.sqrt(2) * tau_c))
           - 2 * tau_c**2 * (1 - np.exp(-t**2 / (2 * tau_c**2))))
    return np.exp(-2 * amp**2 * i_t)


def correlated_t1_datasets(truth=TRUTH, noise=0.0, seed=0, t=T_GRID):
    """Three detuning sub-datasets with multiplicative Gaussian noise."""
    rng = np.random.default_rng(seed)
    out = []
    for d, g in zip(DELTAS, truth["gd_tot"]):
        p = QmeParams(G1, G2, d, 0.0, g / 2, g / 2, truth["gd12"], truth["r0"])
        r = pearson_model_t1(p, 1.0, 1.0, t)
        out.append({"delta1": d, "t": t, "r": r * (1 + noise * rng.standard_normal(len(t)))})
    return out


# kind -> (fixed, free bounds, truth, x grid)
FIT_CASES = {
    "saturation": ({}, {"I0": (0, 500), "Ps": (1e-9, 1e-6)},
                   {"I0": 100.0, "Ps": 148e-9}, np.linspace(10e-9, 1e-6, 30)),
    "stretched_exp": ({}, {"A": (0, 2), "tau": (1e-4, 1e-2), "n": (0.3, 1.5), "C": (-0.5, 0.5)},
                      {"A": 1.0, "tau": 1e-3, "n": 0.8, "C": 0.1}, np.geomspace(1e-5, 1e-2, 40)),
    "single_exp": ({}, {"A": (0, 1), "T1": (1e-7, 1e-5), "C": (-0.1, 0.1)},
                   {"A": 0.5, "T1": 1.96e-6, "C": 0.02}, np.linspace(0, 1e-5, 40)),
    "bessel_calibration": ({"N": 40, "f": 2.5e6}, {"kappa": (5e-6, 15e-6)},
                           {"kappa": 9.72e-6}, np.linspace(0, 0.5, 40)),
    "t2_lineshape": ({"B1": 1.944e-6, "B2": 1.5e-6, "N": 40, "chi1": 0.1, "chi2": 0.1,
                      "sigma_r1": 1, "sigma_r2": 1},
                     {"scale": (0.1, 1), "f0": (2.45e6, 2.55e6)},
                     {"scale": 0.37, "f0": 2.5e6}, np.linspace(2.3e6, 2.7e6, 41)),
    "qme_correlation": ({"gd12": 0, "Gamma1": G1, "Gamma2": G2, "delta1": -2 * np.pi * 5e5,
                         "delta2": 0, "sigma_r1": 1, "sigma_r2": 1},
                        {"r0": (0, 1), "gd_tot": (0, 1e6)},
                        {"r0": 0.37, "gd_tot": 3e5}, np.linspace(2e-7, 1.5e-5, 75)),
    "damped_multicosine": ({"psi1": 0.3, "p": 1.0},
                           {"a1": (0, 2), "f1": (0.9e6, 1.1e6), "T": (1e-6, 1e-5)},
                           {"a1": 1.0, "f1": 1e6, "T": 4e-6}, np.linspace(0, 1e-5, 80)),
}

CLI_CONFIGS = {
    "noise-gen": """
[run]
seed = 3
[noise]
tau_c_s = 1e-7
duration_s = 1e-5
""",
    "t1-sim": """
[run]
seed = 1
[noise]
tau_c_s = 1e-7
duration_s = 3e-6
[drives]
b1_T = 5.72e-6
b2_T = 5.4e-6
delta1_Hz = -500e3
[t1]
t_max_s = 3e-6
n_times = 6
shots = 300
""",
    "t1-qme": """
[qme]
gamma1_per_s = 510204
gamma2_per_s = 564971
delta1_Hz = 0, -250e3, -500e3
gd11_per_s = 1e5
gd22_per_s = 1e5
gd12_per_s = 5e4
r0 = 0.37
t_max_s = 8e-6
""",
    "t2-lineshape": """
[sweep]
n_pulses = 40
f_start_Hz = 2.3e6
f_stop_Hz = 2.7e6
n_points = 21
[tones]
f_Hz = 2.5e6
b1_T = 1.5e-6
b2_T = 1.5e-6
""",
    "t2-sim": """
[sweep]
n_pulses = 40
f_start_Hz = 2.4e6
f_stop_Hz = 2.6e6
n_points = 5
shots = 4000
[tones]
f_Hz = 2.5e6
b1_T = 1.5e-6
b2_T = 1.5e-6
""",
    "psd": """
[psd]
n_pulses = 40
f_Hz = 2.5e6, 2.0e6
r = 0.01, -0.002
""",
    "driven": """
[driven]
shots = 20000
n_points = 5
dump_shots = true
[readout]
sigma_r1 = 3.5
sigma_r2 = 3.6
""",
    "sensitivity": """
[sensitivity]
[readout]
sigma_r1 = 3.5
sigma_r2 = 3.6
""",
}
