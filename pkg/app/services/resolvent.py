import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft
import scipy.sparse.linalg as spla
from numpy.polynomial.chebyshev import chebval

from app.config import settings
from app.core.exceptions import (
    CalibrationRangeError,
    DimensionMismatchError,
    PhysicsParameterError,
    SpectralBoundError,
    ValidationError,
)
from app.core.units import (
    CALIBRATED_DEGREE_OFFSET,
    CALIBRATED_DEGREE_SLOPE,
    REALIZABILITY_SLACK,
)
from app.schemas import ChebyshevResolvent, SparseOperator

logger = logging.getLogger(__name__)

_LOG_FUNCTIONS = {"e": math.log, "10": math.log10, "2": math.log2}


def _chebyshev_nodes(n_sampling: int) -> np.ndarray:
    """cos(pi (j + 1/2) / n) for j = 0..n-1, ordered from +1 to -1."""
    return np.cos(np.pi * (np.arange(n_sampling) + 0.5) / n_sampling)


class ResolventExpander:
    """Chebyshev series of the rescaled Green's function and its classical application."""

    def select_degree(
        self,
        one_norm: float,
        gamma: float,
        mode: str = "calibrated",
        eps: float = 1e-2,
        log_base: Optional[str] = None,
    ) -> int:
        if not gamma > 0:
            raise PhysicsParameterError("gamma", gamma, "must be > 0")
        if not one_norm > 0:
            raise PhysicsParameterError("lambda", one_norm, "must be > 0")

        if mode == "calibrated":
            if one_norm < 1.0:
                raise CalibrationRangeError(one_norm)
            log = _LOG_FUNCTIONS.get(log_base or settings.log_base)
            if log is None:
                raise ValidationError("log_base", log_base, "must be one of 'e', '10', '2'")
            degree = math.ceil(one_norm * (CALIBRATED_DEGREE_OFFSET + CALIBRATED_DEGREE_SLOPE * log(one_norm)))
        elif mode == "analytic":
            if not 0 < eps < 2:
                raise PhysicsParameterError("eps", eps, "must lie in (0, 2)")
            ratio = one_norm / gamma
            degree = math.ceil(ratio * (math.log(2.0 / eps) + math.log(ratio)))
        else:
            raise ValidationError("degree_mode", mode, "must be 'calibrated' or 'analytic'")

        logger.debug(f"Selected Chebyshev degree {degree} ({mode}, lambda={one_norm:.6g})")
        return max(degree, 1)

    def expand(self, one_norm: float, omega_in: float, gamma: float, e0: float, degree: int) -> ChebyshevResolvent:
        """Coefficients of f(x) = Γ/(ω_I − (λx − E_0) + iΓ) by cosine quadrature."""
        if degree <= 0:
            raise PhysicsParameterError("degree", degree, "must be positive")
        if not gamma > 0:
            raise PhysicsParameterError("gamma", gamma, "must be > 0")

        n_nodes = settings.chebyshev_node_factor * (degree + 1)
        x = _chebyshev_nodes(n_nodes)
        values = gamma / (omega_in - (one_norm * x - e0) + 1j * gamma)

        # DCT-II: y_k = 2 sum_j f_j cos(pi k (2j + 1) / 2N)
        coefficients = (
            scipy.fft.dct(values.real, type=2) + 1j * scipy.fft.dct(values.imag, type=2)
        )[: degree + 1] / n_nodes
        coefficients[0] /= 2.0

        logger.debug(f"Expanded resolvent to degree {degree} on {n_nodes} nodes")
        return ChebyshevResolvent(
            degree=degree,
            coefficients=coefficients,
            one_norm=one_norm,
            omega_in=omega_in,
            gamma=gamma,
            e0=e0,
        )

    def spectral_norm_estimate(self, hamiltonian: SparseOperator) -> Tuple[float, str]:
        """Gershgorin row-sum bound, refined by an eigsh estimate of the largest |E|."""
        matrix = hamiltonian.matrix
        gershgorin = float(np.max(np.asarray(abs(matrix).sum(axis=1)).ravel(), initial=0.0))
        if hamiltonian.dimension < 3:
            return float(np.max(np.abs(np.linalg.eigvalsh(matrix.toarray())), initial=0.0)), "dense"
        try:
            largest = spla.eigsh(matrix, k=1, which="LM", return_eigenvectors=False, tol=1e-8)
            return float(np.abs(largest[0])), "eigsh"
        except spla.ArpackNoConvergence:
            return gershgorin, "gershgorin"

    def check_spectral_bound(self, hamiltonian: SparseOperator, one_norm: float) -> None:
        matrix = hamiltonian.matrix
        gershgorin = float(np.max(np.asarray(abs(matrix).sum(axis=1)).ravel(), initial=0.0))
        if gershgorin <= one_norm:
            return
        estimate, method = self.spectral_norm_estimate(hamiltonian)
        logger.debug(f"Gershgorin bound {gershgorin:.6g} inconclusive; {method} estimate {estimate:.6g}")
        if estimate > one_norm * (1.0 + REALIZABILITY_SLACK):
            raise SpectralBoundError(estimate, one_norm)

    def apply(
        self,
        resolvent: ChebyshevResolvent,
        hamiltonian: SparseOperator,
        vector: np.ndarray,
        check_bound: bool = True,
    ) -> np.ndarray:
        """sum_k c_k T_k(H/λ) v by the three-term recurrence."""
        vector = np.asarray(vector, dtype=complex)
        if vector.shape[0] != hamiltonian.dimension:
            raise DimensionMismatchError("vector", hamiltonian.dimension, vector.shape[0])
        if check_bound:
            self.check_spectral_bound(hamiltonian, resolvent.one_norm)

        c = resolvent.coefficients
        if not np.any(vector):
            return np.zeros_like(vector)

        scale = 1.0 / resolvent.one_norm
        t_prev = vector
        result = c[0] * t_prev
        if resolvent.degree == 0:
            return result
        t_curr = scale * hamiltonian.dot(t_prev)
        result = result + c[1] * t_curr
        for k in range(2, resolvent.degree + 1):
            t_next = 2.0 * scale * hamiltonian.dot(t_curr) - t_prev
            result = result + c[k] * t_next
            t_prev, t_curr = t_curr, t_next
        return result

    def gqsp_realizable(self, resolvent: ChebyshevResolvent, n_points: Optional[int] = None) -> Tuple[bool, float]:
        """Check max |P(e^{iθ})| <= 1 on a uniform θ grid.

        With c̃_0 = c_0 and c̃_{±k} = c_k/2 the Laurent polynomial equals the
        Chebyshev series at x = cos θ, so it is evaluated by Clenshaw summation.
        """
        n_points = n_points or settings.check_grid_points
        theta = np.linspace(0.0, np.pi, n_points)
        modulus = float(np.max(np.abs(chebval(np.cos(theta), resolvent.coefficients))))
        return modulus <= 1.0 + REALIZABILITY_SLACK, modulus

    def expansion_error(self, resolvent: ChebyshevResolvent, n_points: Optional[int] = None) -> float:
        n_points = n_points or settings.check_grid_points
        x = np.linspace(-1.0, 1.0, n_points)
        return float(np.max(np.abs(resolvent.target(x) - resolvent.evaluate(x))))

    def error_scan(
        self,
        one_norm: float,
        omega_in: float,
        gamma: float,
        e0: float,
        degrees: Sequence[int],
        n_points: Optional[int] = None,
    ) -> List[Tuple[int, float]]:
        """Max approximation error on [-1, 1] for each degree."""
        return [
            (int(k), self.expansion_error(self.expand(one_norm, omega_in, gamma, e0, int(k)), n_points))
            for k in degrees
        ]

    def coefficient_table(self, resolvent: ChebyshevResolvent, laurent: bool = False) -> str:
        """`k,re,im` CSV of c_k for k = 0..K_G, or of the Laurent c̃_k for k = −K_G..K_G."""
        if laurent:
            values, first = resolvent.laurent_coefficients(), -resolvent.degree
        else:
            values, first = resolvent.coefficients, 0
        lines = ["k,re,im"]
        for k, c in enumerate(values, start=first):
            lines.append(f"{k},{c.real:.17e},{c.imag:.17e}")
        return "\n".join(lines) + "\n"

    def error_table(self, scan: Sequence[Tuple[int, float]]) -> str:
        return "degree,max_error\n" + "".join(f"{k},{error:.6e}\n" for k, error in scan)


resolvent_expander = ResolventExpander()
