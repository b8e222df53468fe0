from pydantic import BaseModel, Field, model_validator
from typing import Optional, List, Dict, Any, Tuple
import json

import numpy as np
import scipy.sparse as sp

from app.core.units import SYMMETRY_TOL, NORM_TOL


# ---------------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------------

class IntegralSet(BaseModel):
    """Active-space integrals in Hartree, chemists' notation, 1-based core tags."""

    n_orb: int = Field(..., ge=1)
    n_elec: int = Field(..., ge=1)
    two_sz: int = 0
    e_frozen: float = 0.0
    h: np.ndarray
    v: np.ndarray
    dipole: Optional[np.ndarray] = None
    core_orbitals: List[int] = Field(default_factory=list)
    orbsym: Optional[List[int]] = None

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_invariants(self) -> "IntegralSet":
        n = self.n_orb
        if self.h.shape != (n, n):
            raise ValueError(f"h must be {n}x{n}, got {self.h.shape}")
        if self.v.shape != (n, n, n, n):
            raise ValueError(f"v must be {n}^4, got {self.v.shape}")
        if np.max(np.abs(self.h - self.h.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("h is not symmetric")
        v = self.v
        for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
            if np.max(np.abs(v - v.transpose(perm)), initial=0.0) > SYMMETRY_TOL:
                raise ValueError(f"v lacks symmetry under axes permutation {perm}")
        if not 1 <= self.n_elec <= 2 * n:
            raise ValueError("need 1 <= N_e <= 2 N_a")
        if abs(self.two_sz) > self.n_elec or (self.n_elec + self.two_sz) % 2:
            raise ValueError("need |2 S_z| <= N_e and N_e + 2 S_z even")
        if self.dipole is not None:
            if self.dipole.shape != (3, n, n):
                raise ValueError(f"dipole must be 3x{n}x{n}, got {self.dipole.shape}")
            if np.max(np.abs(self.dipole - self.dipole.transpose(0, 2, 1)), initial=0.0) > SYMMETRY_TOL:
                raise ValueError("dipole matrices are not symmetric")
        for c in self.core_orbitals:
            if not 1 <= c <= n:
                raise ValueError(f"core orbital {c} outside 1..{n}")
        return self

    @property
    def core_indices(self) -> List[int]:
        """Zero-based core orbital indices."""
        return sorted(c - 1 for c in self.core_orbitals)

    @property
    def valence_indices(self) -> List[int]:
        core = set(self.core_indices)
        return [p for p in range(self.n_orb) if p not in core]


# ---------------------------------------------------------------------------
# Many-body basis and operators
# ---------------------------------------------------------------------------

class ManyBodyBasis(BaseModel):
    """Determinants at fixed (N_e, S_z), ordered lexicographically on (up, down) masks."""

    n_orb: int
    n_up: int
    n_down: int
    up_strings: np.ndarray
    down_strings: np.ndarray
    up_index: Dict[int, int]
    down_index: Dict[int, int]

    class Config:
        arbitrary_types_allowed = True

    @property
    def dimension(self) -> int:
        return len(self.up_strings) * len(self.down_strings)

    @property
    def n_elec(self) -> int:
        return self.n_up + self.n_down

    @property
    def two_sz(self) -> int:
        return self.n_up - self.n_down

    def index(self, up_mask: int, down_mask: int) -> int:
        return self.up_index[up_mask] * len(self.down_strings) + self.down_index[down_mask]

    def determinant(self, i: int) -> Tuple[int, int]:
        n_dn = len(self.down_strings)
        return int(self.up_strings[i // n_dn]), int(self.down_strings[i % n_dn])


class SparseOperator(BaseModel):
    """Complex CSR operator over a ManyBodyBasis."""

    dimension: int
    matrix: sp.csr_matrix
    hermitian: bool = False

    class Config:
        arbitrary_types_allowed = True

    def dot(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ vector

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(
            dimension=self.dimension,
            matrix=self.matrix.conj().T.tocsr(),
            hermitian=self.hermitian,
        )

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_defect(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(np.max(np.abs(diff.data), initial=0.0))

    def to_text(self) -> str:
        """Nonzeros as `row col re im` lines, row-major."""
        matrix = self.matrix.tocsr(copy=True)
        matrix.sum_duplicates()
        coo = matrix.tocoo()
        return "".join(
            f"{r} {c} {val.real:.15e} {val.imag:.15e}\n" for r, c, val in zip(coo.row, coo.col, coo.data)
        )


class SpectralDecomposition(BaseModel):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    max_residual: float = 0.0

    class Config:
        arbitrary_types_allowed = True

    @property
    def is_complete(self) -> bool:
        """True when the eigenvectors span the whole sector."""
        return self.eigenvectors.shape[1] == self.eigenvectors.shape[0]

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenvectors[:, 0]

    def shifted(self, constant: float) -> "SpectralDecomposition":
        return SpectralDecomposition(
            eigenvalues=self.eigenvalues + constant,
            eigenvectors=self.eigenvectors,
            max_residual=self.max_residual,
        )


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

class SpectrumResult(BaseModel):
    kind: str
    sticks: List[Tuple[float, float]] = Field(default_factory=list)
    x_ev: List[float] = Field(default_factory=list)
    intensity: List[float] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_spectrum(self) -> "SpectrumResult":
        if any(w < 0 for _, w in self.sticks):
            raise ValueError("stick weights must be non-negative")
        if len(self.x_ev) != len(self.intensity):
            raise ValueError("grid and intensity lengths differ")
        if any(b <= a for a, b in zip(self.x_ev, self.x_ev[1:])):
            raise ValueError("grid must be strictly increasing")
        return self

    @property
    def total_weight(self) -> float:
        return float(sum(w for _, w in self.sticks))


class RixsAmplitude(BaseModel):
    final_index: int
    energy_loss: float
    amplitude: complex


# ---------------------------------------------------------------------------
# Chebyshev resolvent
# ---------------------------------------------------------------------------

class ChebyshevResolvent(BaseModel):
    """Chebyshev series of Γ/(ω_I − (λx − E_0) + iΓ) on x ∈ [−1, 1]; energies in Ha."""

    degree: int
    coefficients: np.ndarray
    one_norm: float
    omega_in: float
    gamma: float
    e0: float

    class Config:
        arbitrary_types_allowed = True

    def target(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.gamma / (self.omega_in - (self.one_norm * x - self.e0) + 1j * self.gamma)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.polynomial.chebyshev.chebval(np.asarray(x, dtype=float), self.coefficients)

    def laurent_coefficients(self) -> np.ndarray:
        """c̃_k for k = −K_G..K_G with c̃_0 = c_0 and c̃_{±k} = c_k / 2."""
        half = self.coefficients[1:] / 2.0
        return np.concatenate([half[::-1], self.coefficients[:1], half])


# ---------------------------------------------------------------------------
# BLISS-THC
# ---------------------------------------------------------------------------

class BlissParams(BaseModel):
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _symmetric_beta(self) -> "BlissParams":
        if np.max(np.abs(self.beta - self.beta.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("beta must be symmetric")
        return self

    @classmethod
    def zero(cls, n_orb: int) -> "BlissParams":
        return cls(alpha1=0.0, alpha2=0.0, beta=np.zeros((n_orb, n_orb)))


class ShiftedTensors(BaseModel):
    h: np.ndarray
    v: np.ndarray
    constant: float

    class Config:
        arbitrary_types_allowed = True


class ThcFactors(BaseModel):
    rank: int
    zeta: np.ndarray
    u: np.ndarray
    t: np.ndarray
    bliss: Optional[BlissParams] = None
    residual: Optional[float] = None
    one_norm: Optional[float] = None
    converged: bool = True

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_factors(self) -> "ThcFactors":
        if self.u.shape[0] != self.rank or self.zeta.shape != (self.rank, self.rank):
            raise ValueError("factor shapes disagree with rank")
        norms = np.linalg.norm(self.u, axis=1)
        if np.max(np.abs(norms - 1.0), initial=0.0) > NORM_TOL:
            raise ValueError("u-vectors must have unit norm")
        if np.max(np.abs(self.zeta - self.zeta.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("zeta must be symmetric")
        return self

    def to_json(self) -> str:
        payload = {
            "rank": self.rank,
            "zeta": self.zeta.tolist(),
            "u": self.u.tolist(),
            "t": self.t.tolist(),
            "residual": self.residual,
            "one_norm": self.one_norm,
            "converged": self.converged,
        }
        if self.bliss is not None:
            payload["alpha1"] = self.bliss.alpha1
            payload["alpha2"] = self.bliss.alpha2
            payload["beta"] = self.bliss.beta.tolist()
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ThcFactors":
        payload = json.loads(text)
        bliss = None
        if "beta" in payload:
            bliss = BlissParams(
                alpha1=payload.get("alpha1", 0.0),
                alpha2=payload.get("alpha2", 0.0),
                beta=np.asarray(payload["beta"], dtype=float),
            )
        return cls(
            rank=payload["rank"],
            zeta=np.asarray(payload["zeta"], dtype=float),
            u=np.asarray(payload["u"], dtype=float),
            t=np.asarray(payload["t"], dtype=float),
            bliss=bliss,
            residual=payload.get("residual"),
            one_norm=payload.get("one_norm"),
            converged=payload.get("converged", True),
        )


# ---------------------------------------------------------------------------
# Quantum algorithm emulation
# ---------------------------------------------------------------------------

class RixsState(BaseModel):
    vector: np.ndarray
    norm: float = Field(..., ge=0.0)
    dipole_norm: float
    gamma: float
    method: str = "exact"
    lambda_d: Optional[float] = None
    zero_norm: bool = False

    class Config:
        arbitrary_types_allowed = True


class QpeModel(BaseModel):
    n_omega: int = Field(..., ge=1)
    window: str = "kaiser"
    kaiser_beta: float = Field(13.0, gt=0.0)
    one_norm: float = Field(..., gt=0.0)
    e0: float = 0.0
    axis: str = "energy_loss"

    @property
    def n_bins(self) -> int:
        return 2 ** self.n_omega


class QpeSamples(BaseModel):
    bins: List[int]
    theta: List[float]
    omega_ev: List[float]


# ---------------------------------------------------------------------------
# Resource estimation
# ---------------------------------------------------------------------------

class CostModelParams(BaseModel):
    aleph: int = Field(13, ge=1)
    beth: int = Field(13, ge=1)
    aleph_mu: int = Field(13, ge=1)
    n_thc: int = Field(..., ge=1)
    n_orb: int = Field(..., ge=1)
    walk_model: str = "affine-thc"


class ResourceReport(BaseModel):
    one_norm: float
    eps_omega: float
    gamma: float
    degree: int
    success_probability: float
    sqrt_success_probability: float
    amplification_rounds: int
    walk_calls: int
    n_omega: int
    n_dipole: int
    n_walk: int
    walk_toffoli: float
    n_total: int
    toffoli_total: float
    shots: int
    prep_to_qpe_ratio: float
    walk_model: str = "affine-thc"
    schema_version: str = "1.0"


class SystemSpec(BaseModel):
    name: Optional[str] = None
    n_elec: int = Field(..., ge=1)
    n_orb: int = Field(..., ge=1)
    two_sz: int = 1
    one_norm: float = Field(..., gt=0.0)
    sqrt_pr: float = Field(0.06, gt=0.0, le=1.0)
    n_thc: Optional[int] = None
    walk_toffoli: Optional[float] = None
    walk_qubits: Optional[int] = None
    target_toffoli: Optional[float] = None


class TableRow(BaseModel):
    name: Optional[str] = None
    n_elec: int
    n_orb: int
    fci_dimension: int
    one_norm: float
    logical_qubits: int
    toffoli_gates: float
    shots: int
    report: ResourceReport


# ---------------------------------------------------------------------------
# API payloads
# ---------------------------------------------------------------------------

class ParseCheckResponse(BaseModel):
    n_orb: int
    n_elec: int
    two_sz: int
    e_frozen: float
    fci_dimension: int
    n_one_body: int
    n_two_body: int
    core_orbitals: List[int] = Field(default_factory=list)
    has_dipole: bool = False


class SpectrumRequest(BaseModel):
    fcidump: str = Field(..., description="FCIDUMP text")
    dipole: Optional[str] = Field(None, description="Dipole sidecar text")
    omega_in_ev: List[float] = Field(default_factory=lambda: [548.5])
    gamma_ev: float = Field(0.3, gt=0.0)
    eta_ev: float = Field(0.2, gt=0.0)
    window_ev: Optional[float] = Field(50.0, ge=0.0)
    epsilon_in: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    epsilon_out: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    cvs: bool = True
    shots: int = Field(2000, ge=1)
    seed: int = 0
    n_omega: Optional[int] = Field(None, ge=1)
    lambda_ha: Optional[float] = Field(None, gt=0.0)
    lambda_from_gershgorin: bool = False


class SpectrumResponse(BaseModel):
    ground_energy: float
    spectra: List[SpectrumResult]


class EstimateRequest(BaseModel):
    one_norm: float = Field(..., gt=0.0)
    n_orb: int = Field(16, ge=1)
    sqrt_pr: float = Field(0.06, gt=0.0, le=1.0)
    eps_omega_ev: float = Field(0.2, gt=0.0)
    gamma_ev: float = Field(0.3, gt=0.0)
    aleph: int = Field(13, ge=1)
    beth: int = Field(13, ge=1)
    aleph_mu: int = Field(13, ge=1)
    n_thc: Optional[int] = Field(None, ge=1)
    walk_model: str = "affine-thc"
    walk_toffoli: Optional[float] = None
    walk_qubits: Optional[int] = None
    target_toffoli: Optional[float] = None
    degree_mode: str = "calibrated"
    degree_eps: float = Field(1e-2, gt=0.0)


class TableRequest(BaseModel):
    systems: List[SystemSpec]
    eps_omega_ev: float = Field(0.2, gt=0.0)
    gamma_ev: float = Field(0.3, gt=0.0)
    shots: int = Field(2000, ge=1)


class ErrorResponse(BaseModel):
    error: dict = Field(
        ...,
        description="Error information",
        example={
            "code": "PARSE_001",
            "message": "The integral file could not be parsed (line 4): index 9 out of range 1..8",
            "details": {
                "line_number": 4
            },
            "timestamp": "2025-01-27T10:30:00Z",
            "request_id": "req_12345"
        }
    )
