import numpy as np

# Electron gyromagnetic ratio, gamma / 2 pi = 28.025 GHz/T.
GAMMA_E_OVER_2PI = 28.025e9
GAMMA_E = 2 * np.pi * GAMMA_E_OVER_2PI
