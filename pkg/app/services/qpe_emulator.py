import csv
import logging
import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.core.exceptions import (
    DarkGroundStateError,
    PhysicsParameterError,
    SpectralBoundError,
    ValidationError,
    ZeroNormError,
)
from app.core.units import HARTREE_TO_EV, REALIZABILITY_SLACK
from app.schemas import (
    ChebyshevResolvent,
    QpeModel,
    QpeSamples,
    RixsState,
    SparseOperator,
    SpectralDecomposition,
    SpectrumResult,
)
from app.services.resolvent import resolvent_expander

logger = logging.getLogger(__name__)

DARK_STATE_TOL = 1e-14


class QpeEmulator:
    """Matrix-scale emulation of RIXS-state preparation and walk-based QPE sampling."""

    def prepare_rixs_state(
        self,
        hamiltonian: SparseOperator,
        decomp: SpectralDecomposition,
        dipole_in: SparseOperator,
        dipole_out: SparseOperator,
        omega_in: float,
        gamma: float,
        method: str = "exact",
        resolvent: Optional[ChebyshevResolvent] = None,
        lambda_d: Optional[float] = None,
    ) -> RixsState:
        if not gamma > 0:
            raise PhysicsParameterError("gamma", gamma, "must be > 0")

        ground = decomp.ground_state
        dipole_state = dipole_in.dot(ground)
        dipole_norm = float(np.linalg.norm(dipole_state))
        if dipole_norm < DARK_STATE_TOL:
            raise DarkGroundStateError(dipole_norm)

        if method == "exact":
            shifted = (omega_in + decomp.ground_energy + 1j * gamma) * sp.identity(
                hamiltonian.dimension, dtype=complex, format="csc"
            ) - hamiltonian.matrix.tocsc()
            propagated = spla.spsolve(shifted, dipole_state)
        elif method == "chebyshev":
            if resolvent is None:
                raise ValidationError("resolvent", None, "chebyshev preparation needs an expanded resolvent")
            # the series approximates Γ·G
            propagated = resolvent_expander.apply(resolvent, hamiltonian, dipole_state) / gamma
        else:
            raise ValidationError("method", method, "must be 'exact' or 'chebyshev'")

        unnormalized = dipole_out.adjoint().dot(np.asarray(propagated, dtype=complex))
        norm = float(np.linalg.norm(unnormalized))
        if norm == 0.0:
            logger.warning("RIXS state has zero norm; D_out^H G D_in |E_0> vanishes")
            return RixsState(
                vector=np.zeros_like(unnormalized),
                norm=0.0,
                dipole_norm=dipole_norm,
                gamma=gamma,
                method=method,
                lambda_d=lambda_d,
                zero_norm=True,
            )

        logger.debug(f"Prepared RIXS state ({method}): |R| = {norm:.6e}, |D| = {dipole_norm:.6e}")
        return RixsState(
            vector=unnormalized / norm,
            norm=norm,
            dipole_norm=dipole_norm,
            gamma=gamma,
            method=method,
            lambda_d=lambda_d,
        )

    def success_probability(self, state: RixsState, lambda_d: Optional[float] = None) -> float:
        """P_R = (Γ |R| / (λ_D |D|))^2."""
        lambda_d = lambda_d if lambda_d is not None else state.lambda_d
        if state.dipole_norm <= 0.0:
            raise DarkGroundStateError(state.dipole_norm)
        if lambda_d is None or lambda_d <= 0.0:
            raise ZeroNormError("dipole 1-norm lambda_D")

        probability = (state.gamma * state.norm / (lambda_d * state.dipole_norm)) ** 2
        if probability > 1.0 + REALIZABILITY_SLACK:
            raise PhysicsParameterError(
                "P_R", probability, "must not exceed 1",
                hint="lambda_D underestimates the outgoing dipole norm; use the CVS dipole",
            )
        return min(probability, 1.0)

    def amplification_rounds(self, probability: float) -> int:
        """K_A = floor(π / (4 arcsin sqrt(P_R)))."""
        if not 0.0 < probability <= 1.0:
            raise PhysicsParameterError("P_R", probability, "must lie in (0, 1]")
        return int(math.floor(math.pi / (4.0 * math.asin(math.sqrt(probability)))))

    def qpe_distribution(self, model: QpeModel, weights: np.ndarray, energies: np.ndarray) -> np.ndarray:
        """Probability of each of the 2^n_ω phase bins for eigenstate weights |c_f|^2 at energies E_f."""
        weights = np.asarray(weights, dtype=float)
        energies = np.asarray(energies, dtype=float)
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValidationError("weights", float(weights.sum()), "eigenstate weights must sum to 1")
        if np.any(np.abs(energies) > model.one_norm * (1.0 + REALIZABILITY_SLACK)):
            raise SpectralBoundError(float(np.max(np.abs(energies))), model.one_norm)

        n_bins = model.n_bins
        phases = np.arccos(np.clip(energies / model.one_norm, -1.0, 1.0)) / (2.0 * np.pi)
        probabilities = np.zeros(n_bins)
        if model.window == "uniform":
            bins = np.arange(n_bins) / n_bins
            for w, phi in zip(weights, phases):
                if w > 0.0:
                    probabilities += w * self._uniform_kernel(phi - bins, n_bins)
        elif model.window == "kaiser":
            taper = np.kaiser(n_bins, model.kaiser_beta)
            taper = taper / np.linalg.norm(taper)
            t = np.arange(n_bins)
            for w, phi in zip(weights, phases):
                if w > 0.0:
                    amplitudes = np.fft.fft(taper * np.exp(2j * np.pi * t * phi)) / math.sqrt(n_bins)
                    probabilities += w * np.abs(amplitudes) ** 2
        else:
            raise ValidationError("window", model.window, "must be 'uniform' or 'kaiser'")

        return probabilities

    def bin_energies(self, model: QpeModel) -> np.ndarray:
        """Axis value (Ha) of each phase bin: energy loss λcosθ − E_0, or E_0 + λcosθ on the ground_plus_energy axis."""
        theta = 2.0 * np.pi * np.arange(model.n_bins) / model.n_bins
        energy = model.one_norm * np.cos(theta)
        if model.axis == "ground_plus_energy":
            return model.e0 + energy
        return energy - model.e0

    def sample_spectrum(
        self,
        model: QpeModel,
        state: RixsState,
        decomp: SpectralDecomposition,
        shots: int,
        rng: np.random.Generator,
        bin_ev: float = 0.2,
        analytic: bool = False,
    ) -> Tuple[SpectrumResult, Optional[QpeSamples]]:
        if shots < 1:
            raise PhysicsParameterError("shots", shots, "must be >= 1")
        if state.zero_norm:
            raise ZeroNormError("RIXS state norm |R|")

        weights = np.abs(decomp.eigenvectors.conj().T @ state.vector) ** 2
        captured = weights.sum()
        if abs(captured - 1.0) > 1e-10:
            logger.warning(f"Eigenbasis captures {captured:.6f} of the RIXS state; renormalizing")
            weights = weights / captured
        probabilities = self.qpe_distribution(model, weights, decomp.eigenvalues)
        axis_ev = self.bin_energies(model) * HARTREE_TO_EV

        samples = None
        if analytic:
            histogram_weights = probabilities
        else:
            drawn = rng.choice(model.n_bins, size=shots, p=probabilities / probabilities.sum())
            theta = 2.0 * np.pi * drawn / model.n_bins
            samples = QpeSamples(
                bins=drawn.tolist(),
                theta=theta.tolist(),
                omega_ev=axis_ev[drawn].tolist(),
            )
            histogram_weights = np.bincount(drawn, minlength=model.n_bins) / shots

        centers, intensity = self.histogram(axis_ev, histogram_weights, bin_ev)
        result = SpectrumResult(
            kind="qpe",
            sticks=[(float(c), float(p)) for c, p in zip(centers, intensity) if p > 0.0],
            x_ev=centers.tolist(),
            intensity=intensity.tolist(),
            metadata={
                "n_omega": model.n_omega,
                "window": model.window,
                "kaiser_beta": model.kaiser_beta,
                "lambda_ha": model.one_norm,
                "axis": model.axis,
                "shots": None if analytic else shots,
                "bin_ev": bin_ev,
            },
        )
        return result, samples

    @staticmethod
    def histogram(values_ev: np.ndarray, weights: np.ndarray, bin_ev: float) -> Tuple[np.ndarray, np.ndarray]:
        """Bin weighted axis values onto a grid of width `bin_ev` aligned to multiples of the width."""
        if not bin_ev > 0:
            raise PhysicsParameterError("bin_ev", bin_ev, "must be > 0")
        support = weights > 0.0
        if not np.any(support):
            return np.array([0.0]), np.array([0.0])
        lo = math.floor(values_ev[support].min() / bin_ev)
        hi = math.floor(values_ev[support].max() / bin_ev) + 1
        edges = np.arange(lo, hi + 1) * bin_ev
        counts, _ = np.histogram(values_ev, bins=edges, weights=weights)
        return 0.5 * (edges[:-1] + edges[1:]), counts

    @staticmethod
    def load_reference(path: str) -> Tuple[np.ndarray, np.ndarray]:
        """Two-column `omega_eV,intensity` CSV, normalized to unit sum."""
        omega, intensity = [], []
        with open(Path(path), newline="", encoding="utf-8") as f:
            for row in csv.reader(f):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    omega.append(float(row[0]))
                    intensity.append(float(row[1]))
                except (ValueError, IndexError):
                    # header line
                    continue
        if not omega:
            raise ValidationError("reference_spectrum", path, "no numeric rows found")
        intensity_arr = np.clip(np.asarray(intensity), 0.0, None)
        total = intensity_arr.sum()
        if total <= 0.0:
            raise ZeroNormError("reference spectrum intensity")
        order = np.argsort(omega)
        return np.asarray(omega)[order], intensity_arr[order] / total

    @staticmethod
    def total_variation(p: np.ndarray, q: np.ndarray) -> float:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())

    def compare_to_reference(self, result: SpectrumResult, reference: Tuple[np.ndarray, np.ndarray]) -> float:
        """TV distance after interpolating the reference onto the result's bin centers."""
        centers = np.asarray(result.x_ev)
        ref = np.interp(centers, reference[0], reference[1], left=0.0, right=0.0)
        if ref.sum() <= 0.0:
            raise ZeroNormError("reference spectrum on the sampled range")
        return self.total_variation(np.asarray(result.intensity), ref)

    @staticmethod
    def multinomial_tv_scale(probabilities: np.ndarray, shots: int) -> float:
        """½ Σ sqrt(p(1 − p)/shots), the scale of sampling fluctuations in TV distance."""
        p = np.asarray(probabilities, dtype=float)
        return 0.5 * float(np.sum(np.sqrt(p * (1.0 - p) / shots)))

    @staticmethod
    def _uniform_kernel(delta: np.ndarray, n_bins: int) -> np.ndarray:
        """sin^2(π M δ) / (M^2 sin^2(π δ)), equal to 1 at δ ∈ Z."""
        numerator = np.sin(np.pi * n_bins * delta) ** 2
        denominator = (n_bins * np.sin(np.pi * delta)) ** 2
        on_bin = np.isclose(np.sin(np.pi * delta), 0.0, atol=1e-15)
        return np.where(on_bin, 1.0, numerator / np.where(on_bin, 1.0, denominator))


qpe_emulator = QpeEmulator()
