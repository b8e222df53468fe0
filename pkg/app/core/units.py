"""Physical constants and numeric tolerances shared across the engine.

All internal energies are Hartree. Conversion to and from eV happens only at the
user-facing boundary (CLI flags, API payloads, written spectra).
"""

HARTREE_TO_EV = 27.211386245988
EV_TO_HARTREE = 1.0 / HARTREE_TO_EV

SYMMETRY_TOL = 1e-12
DUPLICATE_TOL = 1e-10
SPARSE_DROP_TOL = 1e-14
DEGENERACY_TOL = 1e-8
NORM_TOL = 1e-12
REALIZABILITY_SLACK = 1e-9

# Defaults of the classical pipeline and the resource estimates
DEFAULT_GAMMA_EV = 0.3
DEFAULT_ETA_EV = 0.2
DEFAULT_WINDOW_EV = 50.0
DEFAULT_SHOTS = 2000
DEFAULT_BIN_EV = 0.2
DEFAULT_PRECISION_BITS = 13
DEFAULT_KAISER_BETA = 13.0

# Calibrated K_G(λ) = ceil(λ (a + b log λ)) for Γ = 0.3 eV
CALIBRATED_DEGREE_OFFSET = 472
CALIBRATED_DEGREE_SLOPE = 91

PRINT_DIGITS = 15


def ev_to_hartree(value: float) -> float:
    return value * EV_TO_HARTREE
