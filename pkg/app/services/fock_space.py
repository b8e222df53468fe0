"""Determinant basis at fixed (N_e, S_z) and sparse operators over it.

Sign convention: a determinant is the product of up-spin creators (ascending
orbital index) followed by down-spin creators (ascending), acting on vacuum.
The basis index of (up, down) is ``i_up * n_down_strings + i_down`` with both
string lists sorted ascending, which is lexicographic on (up, down) masks.
"""

import itertools
import logging
from math import comb
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from app.core.exceptions import (
    DimensionMismatchError,
    EmptyCoreSetError,
    InfeasibleSectorError,
    MissingInputError,
    NonHermitianError,
    PhysicsParameterError,
)
from app.core.units import SPARSE_DROP_TOL, SYMMETRY_TOL
from app.schemas import IntegralSet, ManyBodyBasis, SparseOperator

logger = logging.getLogger(__name__)


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _between_mask(p: int, q: int) -> int:
    lo, hi = min(p, q), max(p, q)
    return ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)


def sector_sizes(n_orb: int, n_elec: int, two_sz: int) -> Tuple[int, int]:
    """(n_up, n_down) for the sector, raising when it does not exist."""
    if n_orb < 1:
        raise InfeasibleSectorError(n_orb, n_elec, two_sz, "need at least one orbital")
    if (n_elec + two_sz) % 2:
        raise InfeasibleSectorError(n_orb, n_elec, two_sz, "N_e + 2S_z must be even")
    n_up = (n_elec + two_sz) // 2
    n_down = (n_elec - two_sz) // 2
    if n_up < 0 or n_down < 0:
        raise InfeasibleSectorError(n_orb, n_elec, two_sz, "|2S_z| exceeds N_e")
    if n_up > n_orb or n_down > n_orb:
        raise InfeasibleSectorError(n_orb, n_elec, two_sz, "more electrons of one spin than orbitals")
    return n_up, n_down


def sector_dimension(n_orb: int, n_elec: int, two_sz: int) -> int:
    """C(N_a, n_up) * C(N_a, n_down) as an exact integer, without building the basis."""
    n_up, n_down = sector_sizes(n_orb, n_elec, two_sz)
    return comb(n_orb, n_up) * comb(n_orb, n_down)


class FockSpaceBuilder:

    def build_basis(self, n_orb: int, n_elec: int, two_sz: int) -> ManyBodyBasis:
        n_up, n_down = sector_sizes(n_orb, n_elec, two_sz)
        up = self._strings(n_orb, n_up)
        down = self._strings(n_orb, n_down)
        basis = ManyBodyBasis(
            n_orb=n_orb,
            n_up=n_up,
            n_down=n_down,
            up_strings=up,
            down_strings=down,
            up_index={int(s): i for i, s in enumerate(up)},
            down_index={int(s): i for i, s in enumerate(down)},
        )
        logger.info(f"Built basis N_a={n_orb}, N_e={n_elec}, 2S_z={two_sz}: dimension {basis.dimension}")
        return basis

    def excitation_operator(self, basis: ManyBodyBasis, p: int, q: int) -> sp.csr_matrix:
        """Spin-summed E_pq = sum_sigma c+_{p sigma} c_{q sigma} on the sector (0-based p, q)."""
        a_up = self._string_excitation(basis.up_strings, basis.up_index, p, q)
        a_dn = self._string_excitation(basis.down_strings, basis.down_index, p, q)
        eye_up = sp.identity(len(basis.up_strings), format="csr")
        eye_dn = sp.identity(len(basis.down_strings), format="csr")
        # the (-1)^{n_up} of down-spin operators cancels between creator and annihilator
        return (sp.kron(a_up, eye_dn, format="csr") + sp.kron(eye_up, a_dn, format="csr")).tocsr()

    def one_body_operator(self, basis: ManyBodyBasis, matrix: np.ndarray, hermitian: bool = True) -> SparseOperator:
        if matrix.shape != (basis.n_orb, basis.n_orb):
            raise DimensionMismatchError("one-body matrix", (basis.n_orb, basis.n_orb), matrix.shape)
        dim = basis.dimension
        total = sp.csr_matrix((dim, dim), dtype=complex)
        for p, q in zip(*np.nonzero(np.abs(matrix) > SPARSE_DROP_TOL)):
            total = total + matrix[p, q] * self.excitation_operator(basis, int(p), int(q))
        return self._finalize(total, dim, hermitian, "one-body operator")

    def build_hamiltonian(
        self, integrals: IntegralSet, basis: ManyBodyBasis, normal_ordered: bool = False
    ) -> SparseOperator:
        """H = e + sum h_pq E_pq + 1/2 sum V_pqrs E_pq E_rs.

        The two-body term keeps the c+ c c+ c ordering, so the q = r contraction
        contributes a one-body piece implicitly. `normal_ordered` removes it
        (h_ps -= 1/2 sum_q V_pqqs), matching the usual normal-ordered convention.
        """
        if integrals.n_orb != basis.n_orb:
            raise DimensionMismatchError("basis orbitals", integrals.n_orb, basis.n_orb)

        n = basis.n_orb
        dim = basis.dimension
        excitations: Dict[Tuple[int, int], sp.csr_matrix] = {
            (p, q): self.excitation_operator(basis, p, q) for p in range(n) for q in range(n)
        }

        h = integrals.h
        if normal_ordered:
            h = h - 0.5 * np.einsum("pqqs->ps", integrals.v)

        total = integrals.e_frozen * sp.identity(dim, dtype=complex, format="csr")
        for (p, q), e_pq in excitations.items():
            if abs(h[p, q]) > SPARSE_DROP_TOL:
                total = total + h[p, q] * e_pq

        for (p, q), e_pq in excitations.items():
            block = integrals.v[p, q]
            if not np.any(np.abs(block) > SPARSE_DROP_TOL):
                continue
            w_pq = sp.csr_matrix((dim, dim), dtype=complex)
            for r, s in zip(*np.nonzero(np.abs(block) > SPARSE_DROP_TOL)):
                w_pq = w_pq + block[r, s] * excitations[(int(r), int(s))]
            total = total + 0.5 * (e_pq @ w_pq)

        operator = self._finalize(total, dim, True, "Hamiltonian")
        logger.info(f"Assembled Hamiltonian: dimension {dim}, {operator.matrix.nnz} nonzeros")
        return operator

    def masked_dipole(self, integrals: IntegralSet, polarization: Sequence[float], cvs: bool = True) -> np.ndarray:
        """One-body matrix sum_a eps_a d^a, restricted to core<->valence blocks when `cvs`."""
        if integrals.dipole is None:
            raise MissingInputError("dipole", required_by="dipole operator")
        eps = np.asarray(polarization, dtype=float)
        if eps.shape != (3,) or not np.all(np.isfinite(eps)):
            raise PhysicsParameterError("polarization", list(polarization), "must be a finite 3-vector")
        if not np.any(eps != 0.0):
            raise PhysicsParameterError("polarization", list(polarization), "must not be all zero")

        d = np.einsum("a,apq->pq", eps, integrals.dipole)
        if not cvs:
            return d
        core = integrals.core_indices
        if not core:
            raise EmptyCoreSetError()
        valence = integrals.valence_indices
        masked = np.zeros_like(d)
        masked[np.ix_(core, valence)] = d[np.ix_(core, valence)]
        masked[np.ix_(valence, core)] = d[np.ix_(valence, core)]
        return masked

    def build_cvs_dipole(
        self,
        integrals: IntegralSet,
        basis: ManyBodyBasis,
        polarization: Sequence[float],
        cvs: bool = True,
    ) -> SparseOperator:
        if integrals.n_orb != basis.n_orb:
            raise DimensionMismatchError("basis orbitals", integrals.n_orb, basis.n_orb)
        d = self.masked_dipole(integrals, polarization, cvs=cvs)
        if np.max(np.abs(d - d.T), initial=0.0) > SYMMETRY_TOL:
            raise NonHermitianError("dipole matrix", float(np.max(np.abs(d - d.T))))
        return self.one_body_operator(basis, d)

    def build_number_operator(self, basis: ManyBodyBasis) -> SparseOperator:
        up_counts = np.array([_popcount(int(s)) for s in basis.up_strings])
        dn_counts = np.array([_popcount(int(s)) for s in basis.down_strings])
        diagonal = (up_counts[:, None] + dn_counts[None, :]).ravel().astype(complex)
        return SparseOperator(dimension=basis.dimension, matrix=sp.diags(diagonal, format="csr"), hermitian=True)

    def build_sz_operator(self, basis: ManyBodyBasis) -> SparseOperator:
        up_counts = np.array([_popcount(int(s)) for s in basis.up_strings])
        dn_counts = np.array([_popcount(int(s)) for s in basis.down_strings])
        diagonal = 0.5 * (up_counts[:, None] - dn_counts[None, :]).ravel().astype(complex)
        return SparseOperator(dimension=basis.dimension, matrix=sp.diags(diagonal, format="csr"), hermitian=True)

    def core_occupation(self, basis: ManyBodyBasis, core: List[int]) -> np.ndarray:
        """Number of electrons in the given 0-based core orbitals, per basis state."""
        mask = sum(1 << c for c in core)
        up = np.array([_popcount(int(s) & mask) for s in basis.up_strings])
        dn = np.array([_popcount(int(s) & mask) for s in basis.down_strings])
        return (up[:, None] + dn[None, :]).ravel()

    @staticmethod
    def _strings(n_orb: int, n_occ: int) -> np.ndarray:
        masks = sorted(sum(1 << i for i in occ) for occ in itertools.combinations(range(n_orb), n_occ))
        return np.array(masks, dtype=np.int64)

    @staticmethod
    def _string_excitation(strings: np.ndarray, index: Dict[int, int], p: int, q: int) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        between = _between_mask(p, q)
        for j, s in enumerate(strings):
            s = int(s)
            if not (s >> q) & 1:
                continue
            t = s & ~(1 << q)
            if (t >> p) & 1:
                continue
            t |= 1 << p
            rows.append(index[t])
            cols.append(j)
            vals.append(-1.0 if _popcount(s & between) % 2 else 1.0)
        n = len(strings)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @staticmethod
    def _finalize(matrix: sp.spmatrix, dim: int, hermitian: bool, what: str) -> SparseOperator:
        matrix = sp.csr_matrix(matrix, dtype=complex)
        matrix.data[np.abs(matrix.data) < SPARSE_DROP_TOL] = 0.0
        matrix.eliminate_zeros()
        operator = SparseOperator(dimension=dim, matrix=matrix, hermitian=hermitian)
        if hermitian:
            scale = max(1.0, float(np.max(np.abs(matrix.data), initial=0.0)))
            defect = operator.hermiticity_defect()
            if defect > 1e-10 * scale:
                raise NonHermitianError(what, defect)
            # remove summation-order roundoff so A == A^H holds exactly
            operator.matrix = ((matrix + matrix.conj().T) * 0.5).tocsr()
        return operator


fock_space = FockSpaceBuilder()
