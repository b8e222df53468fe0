import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from app.core.exceptions import (
    CostModelError,
    NonHermitianError,
    PhysicsParameterError,
    ValidationError,
)
from app.core.units import DEFAULT_SHOTS, SYMMETRY_TOL, ev_to_hartree
from app.schemas import CostModelParams, ResourceReport, SystemSpec, TableRow
from app.services.fock_space import sector_dimension
from app.services.qpe_emulator import qpe_emulator
from app.services.resolvent import resolvent_expander

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class WalkBudget:
    """Everything a walk cost model may need beyond the precision parameters."""

    walk_calls: int
    base_qubits: int


class WalkCostModel(ABC):
    """Plugin returning (T_W Toffolis, n_W ancilla qubits) for one walk operator."""

    name: str = "abstract"

    @abstractmethod
    def cost(self, params: CostModelParams, budget: WalkBudget) -> Tuple[float, int]:
        ...


class UserSuppliedWalkModel(WalkCostModel):
    name = "user-supplied"

    def __init__(self, walk_toffoli: float, walk_qubits: int):
        if not walk_toffoli > 0:
            raise CostModelError(self.name, f"T_W must be > 0, got {walk_toffoli}")
        if walk_qubits < 0:
            raise CostModelError(self.name, f"n_W must be >= 0, got {walk_qubits}")
        self.walk_toffoli = float(walk_toffoli)
        self.walk_qubits = int(walk_qubits)

    def cost(self, params: CostModelParams, budget: WalkBudget) -> Tuple[float, int]:
        return self.walk_toffoli, self.walk_qubits


class AffineThcWalkModel(WalkCostModel):
    """T_W = a·N_T + b·N_a·ℶ + c·2^{⌈log2 N_T²⌉/2}, n_W = round(q1·N_T + q0).

    Default constants come from a minimum-norm fit to the back-solved walk costs of
    the N_a = 16 and N_a = 30 rows of the published resource table (N_T = 3 N_a,
    ℵ = ℶ = 13). They are model-dependent and reproduce the remaining rows within a
    few percent only.
    """

    name = "affine-thc"

    DEFAULT_TOFFOLI = (2.530676, 10.966264, 4.493511)
    DEFAULT_QUBITS = (4.476190, 60.142857)

    def __init__(
        self,
        toffoli_constants: Sequence[float] = DEFAULT_TOFFOLI,
        qubit_constants: Sequence[float] = DEFAULT_QUBITS,
    ):
        if len(toffoli_constants) != 3 or len(qubit_constants) != 2:
            raise CostModelError(self.name, "needs three Toffoli and two qubit constants")
        self.toffoli_constants = tuple(float(c) for c in toffoli_constants)
        self.qubit_constants = tuple(float(c) for c in qubit_constants)

    @staticmethod
    def features(n_thc: int, n_orb: int, beth: int) -> np.ndarray:
        return np.array([n_thc, n_orb * beth, 2.0 ** (math.ceil(math.log2(n_thc * n_thc)) / 2.0)])

    def cost(self, params: CostModelParams, budget: WalkBudget) -> Tuple[float, int]:
        toffoli = float(np.dot(self.toffoli_constants, self.features(params.n_thc, params.n_orb, params.beth)))
        qubits = int(round(self.qubit_constants[0] * params.n_thc + self.qubit_constants[1]))
        if toffoli <= 0 or qubits < 0:
            raise CostModelError(self.name, "calibrated constants give a non-positive walk cost",
                                 details={"toffoli": toffoli, "qubits": qubits})
        return float(math.ceil(toffoli)), qubits

    @classmethod
    def calibrate(cls, rows: Sequence[Tuple[CostModelParams, float, int]]) -> "AffineThcWalkModel":
        """Least-squares constants from (params, T_W, n_W) rows, minimum-norm when underdetermined."""
        if len(rows) < 1:
            raise CostModelError(cls.name, "calibration needs at least one row")
        design = np.array([cls.features(p.n_thc, p.n_orb, p.beth) for p, _, _ in rows])
        toffoli = np.array([t for _, t, _ in rows], dtype=float)
        toffoli_constants = scipy.linalg.lstsq(design, toffoli)[0]

        qubit_design = np.array([[p.n_thc, 1.0] for p, _, _ in rows])
        qubits = np.array([q for _, _, q in rows], dtype=float)
        qubit_constants = scipy.linalg.lstsq(qubit_design, qubits)[0]
        logger.info(f"Calibrated affine THC walk model on {len(rows)} rows: {toffoli_constants}, {qubit_constants}")
        return cls(toffoli_constants, qubit_constants)


class BackSolveWalkModel(WalkCostModel):
    """Infer T_W (and optionally n_W) from target totals T_tot and n_tot."""

    name = "back-solve"

    def __init__(self, target_toffoli: float, target_qubits: Optional[int] = None):
        if not target_toffoli > 0:
            raise CostModelError(self.name, f"target T_tot must be > 0, got {target_toffoli}")
        self.target_toffoli = float(target_toffoli)
        self.target_qubits = target_qubits

    def cost(self, params: CostModelParams, budget: WalkBudget) -> Tuple[float, int]:
        qubits = 0
        if self.target_qubits is not None:
            qubits = int(self.target_qubits) - budget.base_qubits
            if qubits < 0:
                raise CostModelError(
                    self.name, "target qubit count is below the non-walk register size",
                    details={"target_qubits": self.target_qubits, "base_qubits": budget.base_qubits},
                )
        return self.target_toffoli / budget.walk_calls, qubits


def build_walk_model(
    name: str,
    walk_toffoli: Optional[float] = None,
    walk_qubits: Optional[int] = None,
    target_toffoli: Optional[float] = None,
) -> WalkCostModel:
    if name == "user-supplied":
        if walk_toffoli is None or walk_qubits is None:
            raise CostModelError(name, "needs walk_toffoli and walk_qubits")
        return UserSuppliedWalkModel(walk_toffoli, walk_qubits)
    if name == "affine-thc":
        return AffineThcWalkModel()
    if name == "back-solve":
        if target_toffoli is None:
            raise CostModelError(name, "needs target_toffoli")
        return BackSolveWalkModel(target_toffoli, walk_qubits)
    raise ValidationError("walk_model", name, "must be 'user-supplied', 'affine-thc' or 'back-solve'")


class ResourceEstimator:

    def walk_calls(self, one_norm: float, eps_omega: float) -> Tuple[int, int]:
        """N = ⌈πλ/(√2 ε_ω)⌉ and n_ω = ⌈log2 N⌉ (λ and ε_ω in the same units)."""
        if not one_norm > 0:
            raise PhysicsParameterError("lambda", one_norm, "must be > 0")
        if not eps_omega > 0:
            raise PhysicsParameterError("eps_omega", eps_omega, "must be > 0")
        calls = math.ceil(math.pi * one_norm / (math.sqrt(2.0) * eps_omega))
        n_omega = max(math.ceil(math.log2(calls)), 0)
        # ceil(log2) on floats can land one below for exact powers of two
        while 2 ** n_omega < calls:
            n_omega += 1
        return calls, n_omega

    @staticmethod
    def dipole_qubits(n_orb: int, aleph_mu: int) -> int:
        """n_D = 3⌈log2 N_a⌉ + 2ℵ_μ + 2."""
        if n_orb < 1 or aleph_mu < 1:
            raise PhysicsParameterError("n_orb/aleph_mu", (n_orb, aleph_mu), "must be >= 1")
        return 3 * (n_orb - 1).bit_length() + 2 * aleph_mu + 2

    @staticmethod
    def dipole_one_norm(matrix: np.ndarray) -> float:
        """λ_D = Σ_p |μ_p| over eigenvalues of the masked one-body dipole."""
        matrix = np.asarray(matrix, dtype=float)
        asymmetry = float(np.max(np.abs(matrix - matrix.T), initial=0.0))
        if asymmetry > SYMMETRY_TOL:
            raise NonHermitianError("dipole matrix", asymmetry)
        return float(np.sum(np.abs(scipy.linalg.eigh(matrix, eigvals_only=True))))

    def dipole_block_encoding(self, n_orb: int, aleph_mu: int, matrix: np.ndarray) -> Tuple[int, float]:
        if matrix.shape != (n_orb, n_orb):
            raise ValidationError("dipole", matrix.shape, f"must be {n_orb}x{n_orb}")
        lambda_d = self.dipole_one_norm(matrix)
        if lambda_d == 0.0:
            logger.warning("Dipole 1-norm is zero; the success probability is undefined")
        return self.dipole_qubits(n_orb, aleph_mu), lambda_d

    def totals(
        self,
        params: CostModelParams,
        one_norm: float,
        eps_omega: float,
        gamma: float,
        success_probability: float,
        model: WalkCostModel,
        degree_mode: str = "calibrated",
        degree_eps: float = 1e-2,
        shots: int = DEFAULT_SHOTS,
    ) -> ResourceReport:
        """Assemble the qubit and Toffoli totals (all energies in Ha)."""
        degree = resolvent_expander.select_degree(one_norm, gamma, mode=degree_mode, eps=degree_eps)
        rounds = qpe_emulator.amplification_rounds(success_probability)
        calls, n_omega = self.walk_calls(one_norm, eps_omega)
        n_dipole = self.dipole_qubits(params.n_orb, params.aleph_mu)

        prep_calls = (2 * rounds + 1) * 2 * degree
        qpe_calls = 2 ** n_omega
        base_qubits = 2 * params.n_orb + max(n_omega, n_dipole + 4)
        try:
            walk_toffoli, walk_qubits = model.cost(params, WalkBudget(prep_calls + qpe_calls, base_qubits))
        except CostModelError:
            raise
        except Exception as e:
            raise CostModelError(model.name, str(e))

        report = ResourceReport(
            one_norm=one_norm,
            eps_omega=eps_omega,
            gamma=gamma,
            degree=degree,
            success_probability=success_probability,
            sqrt_success_probability=math.sqrt(success_probability),
            amplification_rounds=rounds,
            walk_calls=calls,
            n_omega=n_omega,
            n_dipole=n_dipole,
            n_walk=walk_qubits,
            walk_toffoli=walk_toffoli,
            n_total=base_qubits + walk_qubits,
            toffoli_total=(prep_calls + qpe_calls) * walk_toffoli,
            shots=shots,
            prep_to_qpe_ratio=prep_calls / qpe_calls,
            walk_model=model.name,
            schema_version=REPORT_SCHEMA_VERSION,
        )
        logger.info(
            f"Resources: lambda={one_norm:.6g} K_G={degree} K_A={rounds} n_omega={n_omega} "
            f"n_tot={report.n_total} T_tot={report.toffoli_total:.3e}"
        )
        return report

    def estimate_system(
        self,
        system: SystemSpec,
        eps_omega_ev: float = 0.2,
        gamma_ev: float = 0.3,
        shots: int = DEFAULT_SHOTS,
        aleph: int = 13,
        beth: int = 13,
        aleph_mu: int = 13,
        degree_mode: str = "calibrated",
    ) -> TableRow:
        n_thc = system.n_thc or 3 * system.n_orb
        if system.walk_toffoli is not None:
            model = build_walk_model("user-supplied", system.walk_toffoli, system.walk_qubits or 0)
        elif system.target_toffoli is not None:
            model = build_walk_model("back-solve", walk_qubits=system.walk_qubits, target_toffoli=system.target_toffoli)
        else:
            model = AffineThcWalkModel()
        params = CostModelParams(
            aleph=aleph, beth=beth, aleph_mu=aleph_mu, n_thc=n_thc, n_orb=system.n_orb, walk_model=model.name
        )
        report = self.totals(
            params,
            system.one_norm,
            ev_to_hartree(eps_omega_ev),
            ev_to_hartree(gamma_ev),
            system.sqrt_pr ** 2,
            model,
            degree_mode=degree_mode,
            shots=shots,
        )
        return TableRow(
            name=system.name,
            n_elec=system.n_elec,
            n_orb=system.n_orb,
            fci_dimension=sector_dimension(system.n_orb, system.n_elec, system.two_sz),
            one_norm=system.one_norm,
            logical_qubits=report.n_total,
            toffoli_gates=report.toffoli_total,
            shots=shots,
            report=report,
        )

    def table_report(
        self,
        systems: List[SystemSpec],
        eps_omega_ev: float = 0.2,
        gamma_ev: float = 0.3,
        shots: int = DEFAULT_SHOTS,
    ) -> Tuple[str, Dict[str, Any]]:
        """Aligned text table (3 significant figures) and its full-precision JSON counterpart."""
        if not systems:
            raise ValidationError("systems", [], "at least one system is required")
        rows = [self.estimate_system(s, eps_omega_ev, gamma_ev, shots) for s in systems]

        header = ["N_e", "N_a", "FCI dimension", "1-norm", "Logical qubits", "Toffoli gates", "Shots"]
        body = [
            [
                str(r.n_elec),
                str(r.n_orb),
                f"{r.fci_dimension:.2g}" if r.fci_dimension >= 1e4 else str(r.fci_dimension),
                f"{r.one_norm:.2f}",
                str(r.logical_qubits),
                f"{r.toffoli_gates:.3g}",
                str(r.shots),
            ]
            for r in rows
        ]
        widths = [max(len(h), *(len(line[i]) for line in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in body)

        payload = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "eps_omega_ev": eps_omega_ev,
            "gamma_ev": gamma_ev,
            "rows": [json.loads(r.model_dump_json()) for r in rows],
        }
        return "\n".join(lines) + "\n", payload


resource_estimator = ResourceEstimator()
