import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.linalg import ArpackNoConvergence

from app.config import settings
from app.core.exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    NonHermitianError,
    PhysicsParameterError,
    ValidationError,
)
from app.core.units import DEGENERACY_TOL, HARTREE_TO_EV
from app.schemas import RixsAmplitude, SparseOperator, SpectralDecomposition, SpectrumResult

logger = logging.getLogger(__name__)


def lorentzian(x: np.ndarray, center: np.ndarray, width: float) -> np.ndarray:
    """Unit-area Lorentzian (1/pi) w / ((x - x0)^2 + w^2), broadcast over centers."""
    return (width / np.pi) / ((x - center) ** 2 + width ** 2)


def broaden(grid: np.ndarray, positions: np.ndarray, weights: np.ndarray, width: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if len(positions) == 0:
        return np.zeros_like(grid)
    profile = lorentzian(grid[:, np.newaxis], np.asarray(positions)[np.newaxis, :], width)
    return profile @ np.asarray(weights, dtype=float)


def merge_degenerate(
    energies: np.ndarray, weights: np.ndarray, tol: float = DEGENERACY_TOL
) -> Tuple[np.ndarray, np.ndarray]:
    """Sum weights of sticks whose (sorted) energies lie within `tol` Ha of the group start."""
    order = np.argsort(energies, kind="stable")
    energies, weights = np.asarray(energies)[order], np.asarray(weights)[order]
    merged_e: List[float] = []
    merged_w: List[float] = []
    for e, w in zip(energies, weights):
        if merged_e and e - merged_e[-1] <= tol:
            merged_w[-1] += w
        else:
            merged_e.append(float(e))
            merged_w.append(float(w))
    return np.array(merged_e), np.array(merged_w)


class ExactSpectraSolver:

    def diagonalize(self, operator: SparseOperator, mode: str = "full", k: Optional[int] = None) -> SpectralDecomposition:
        scale = max(1.0, float(np.max(np.abs(operator.matrix.data), initial=0.0)))
        defect = operator.hermiticity_defect()
        if defect > 1e-12 * scale:
            raise NonHermitianError("operator passed to diagonalize", defect)

        dim = operator.dimension
        if mode == "lowest_k":
            if k is None or k < 1:
                raise PhysicsParameterError("k", k, "lowest_k mode needs k >= 1")
            if k < dim - 1:
                decomp = self._lowest_k(operator, k)
            else:
                logger.info(f"k={k} is not below dimension-1={dim - 1}; using dense diagonalization")
                decomp = self._dense(operator)
                decomp = SpectralDecomposition(
                    eigenvalues=decomp.eigenvalues[:k],
                    eigenvectors=decomp.eigenvectors[:, :k],
                    max_residual=decomp.max_residual,
                )
        elif mode == "full":
            if dim > settings.dense_diag_limit:
                raise PhysicsParameterError(
                    "dimension", dim, f"full diagonalization limited to {settings.dense_diag_limit}",
                    hint="use diag_mode=lowest_k",
                )
            decomp = self._dense(operator)
        else:
            raise ValidationError("mode", mode, "must be 'full' or 'lowest_k'")

        logger.info(
            f"Diagonalized dimension {dim} ({mode}): E_0 = {decomp.ground_energy:.10f} Ha, "
            f"max residual {decomp.max_residual:.2e}"
        )
        return decomp

    def xas_spectrum(
        self,
        decomp: SpectralDecomposition,
        dipole: SparseOperator,
        grid_ev: Sequence[float],
        gamma: float,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> SpectrumResult:
        """Sticks |<E_n|D|E_0>|^2 at E_n - E_0 (eV), Lorentzian width `gamma` (Ha)."""
        grid = self._check_grid(grid_ev)
        self._check_dims(decomp, dipole)
        if not decomp.is_complete:
            raise PhysicsParameterError(
                "decomposition", f"{decomp.eigenvectors.shape[1]} of {decomp.eigenvectors.shape[0]} eigenstates",
                "XAS sticks need every sector eigenstate", hint="use diag_mode=full for spectra",
            )
        moments = decomp.eigenvectors.conj().T @ dipole.dot(decomp.ground_state)
        weights = np.abs(moments) ** 2
        excitations = decomp.eigenvalues - decomp.ground_energy

        energies, weights = merge_degenerate(excitations, weights)
        keep = weights > 0.0
        positions_ev = energies[keep] * HARTREE_TO_EV
        intensity = broaden(grid, positions_ev, weights[keep], gamma * HARTREE_TO_EV)

        meta = {"gamma_ev": gamma * HARTREE_TO_EV, "ground_energy_ha": decomp.ground_energy}
        meta.update(metadata or {})
        return SpectrumResult(
            kind="xas",
            sticks=list(zip(positions_ev.tolist(), weights[keep].tolist())),
            x_ev=grid.tolist(),
            intensity=intensity.tolist(),
            metadata=meta,
        )

    def rixs_amplitudes(
        self,
        decomp: SpectralDecomposition,
        dipole_in: SparseOperator,
        dipole_out: SparseOperator,
        omega_in: float,
        gamma: float,
        window: Optional[float] = None,
        hamiltonian: Optional[SparseOperator] = None,
    ) -> List[RixsAmplitude]:
        """Kramers-Heisenberg W_f0 for every computed final eigenstate f (energies in Ha).

        Intermediate states are restricted to |(E_n - E_0) - omega_in| <= window
        unless `window` is None. A partial decomposition (lowest_k) only carries the
        final states; the intermediate sum then comes from a sparse solve with
        `hamiltonian`, which rules out a window.
        """
        if not omega_in > 0:
            raise PhysicsParameterError("omega_in", omega_in, "must be > 0")
        if not gamma > 0:
            raise PhysicsParameterError("gamma", gamma, "must be > 0")
        self._check_dims(decomp, dipole_in)
        self._check_dims(decomp, dipole_out)

        vectors = decomp.eigenvectors
        excitations = decomp.eigenvalues - decomp.ground_energy
        if decomp.is_complete:
            absorption = vectors.conj().T @ dipole_in.dot(decomp.ground_state)
            weights = absorption / (omega_in - excitations + 1j * gamma)
            if window is not None:
                outside = np.abs(excitations - omega_in) > window
                weights[outside] = 0.0
                logger.debug(f"Intermediate window keeps {int((~outside).sum())} of {len(excitations)} states")
            # sum_n |E_n> w_n
            intermediate = vectors @ weights
        else:
            intermediate = self._propagate(decomp, dipole_in, omega_in, gamma, window, hamiltonian)

        # W_f = <E_f| D_out^H sum_n |E_n> w_n
        emitted = dipole_out.adjoint().dot(intermediate)
        amplitudes = vectors.conj().T @ emitted
        return [
            RixsAmplitude(final_index=f, energy_loss=float(excitations[f]), amplitude=complex(amplitudes[f]))
            for f in range(len(excitations))
        ]

    def rixs_spectrum(
        self,
        amplitudes: List[RixsAmplitude],
        decomp: SpectralDecomposition,
        eta: float,
        grid_ev: Sequence[float],
        metadata: Optional[Dict[str, Any]] = None,
    ) -> SpectrumResult:
        if not eta > 0:
            raise PhysicsParameterError("eta", eta, "must be > 0")
        grid = self._check_grid(grid_ev)

        losses = np.array([a.energy_loss for a in amplitudes])
        weights = np.array([abs(a.amplitude) ** 2 for a in amplitudes])
        energies, weights = merge_degenerate(losses, weights)
        keep = weights > 0.0
        positions_ev = energies[keep] * HARTREE_TO_EV
        intensity = broaden(grid, positions_ev, weights[keep], eta * HARTREE_TO_EV)

        meta = {"eta_ev": eta * HARTREE_TO_EV, "ground_energy_ha": decomp.ground_energy}
        meta.update(metadata or {})
        return SpectrumResult(
            kind="rixs",
            sticks=list(zip(positions_ev.tolist(), weights[keep].tolist())),
            x_ev=grid.tolist(),
            intensity=intensity.tolist(),
            metadata=meta,
        )

    def _propagate(
        self,
        decomp: SpectralDecomposition,
        dipole_in: SparseOperator,
        omega_in: float,
        gamma: float,
        window: Optional[float],
        hamiltonian: Optional[SparseOperator],
    ) -> np.ndarray:
        """(omega_in + E_0 + i gamma - H)^{-1} D_in |E_0> without the full eigenbasis."""
        n_vectors, dim = decomp.eigenvectors.shape[1], decomp.eigenvectors.shape[0]
        if window is not None:
            raise PhysicsParameterError(
                "window", window, f"an intermediate-state window needs all {dim} eigenstates, got {n_vectors}",
                hint="unset window_ev or use diag_mode=full",
            )
        if hamiltonian is None:
            raise PhysicsParameterError(
                "decomposition", f"{n_vectors} of {dim} eigenstates",
                "a partial decomposition needs the Hamiltonian for the intermediate sum",
            )
        self._check_dims(decomp, hamiltonian)
        shifted = (omega_in + decomp.ground_energy + 1j * gamma) * sp.identity(
            dim, dtype=complex, format="csc"
        ) - hamiltonian.matrix.tocsc()
        return np.asarray(spla.spsolve(shifted, dipole_in.dot(decomp.ground_state)), dtype=complex)

    def _dense(self, operator: SparseOperator) -> SpectralDecomposition:
        dense = operator.to_dense()
        if not np.any(dense.imag):
            dense = dense.real
        eigenvalues, eigenvectors = np.linalg.eigh(dense)
        return SpectralDecomposition(
            eigenvalues=eigenvalues,
            eigenvectors=eigenvectors.astype(complex),
            max_residual=self._max_residual(operator, eigenvalues, eigenvectors),
        )

    def _lowest_k(self, operator: SparseOperator, k: int) -> SpectralDecomposition:
        matrix = operator.matrix
        if not np.any(matrix.data.imag):
            matrix = matrix.real
        try:
            eigenvalues, eigenvectors = spla.eigsh(
                matrix, k=k, which="SA", tol=settings.krylov_tol, maxiter=settings.krylov_max_iter
            )
        except ArpackNoConvergence as e:
            residual = float("nan")
            if len(e.eigenvalues):
                residual = self._max_residual(operator, e.eigenvalues, e.eigenvectors)
            raise ConvergenceError("eigsh", settings.krylov_max_iter, residual, settings.krylov_tol)

        order = np.argsort(eigenvalues)
        eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
        residual = self._max_residual(operator, eigenvalues, eigenvectors)
        # ‖H‖ as the max absolute row sum
        norm = max(1.0, float(np.max(np.asarray(abs(operator.matrix).sum(axis=1)).ravel(), initial=0.0)))
        if residual > settings.krylov_tol * norm:
            raise ConvergenceError("eigsh", settings.krylov_max_iter, residual, settings.krylov_tol)
        return SpectralDecomposition(
            eigenvalues=eigenvalues,
            eigenvectors=eigenvectors.astype(complex),
            max_residual=residual,
        )

    @staticmethod
    def _max_residual(operator: SparseOperator, eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> float:
        residuals = operator.matrix @ eigenvectors - eigenvectors * eigenvalues[np.newaxis, :]
        return float(np.max(np.linalg.norm(residuals, axis=0), initial=0.0))

    @staticmethod
    def _check_grid(grid_ev: Sequence[float]) -> np.ndarray:
        grid = np.asarray(grid_ev, dtype=float)
        if grid.size == 0:
            raise ValidationError("grid", [], "energy grid must not be empty")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("grid", grid[:5], "energy grid must be strictly increasing")
        return grid

    @staticmethod
    def _check_dims(decomp: SpectralDecomposition, operator: SparseOperator) -> None:
        if decomp.eigenvectors.shape[0] != operator.dimension:
            raise DimensionMismatchError("operator dimension", decomp.eigenvectors.shape[0], operator.dimension)


exact_spectra = ExactSpectraSolver()
