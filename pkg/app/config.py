from pydantic import field_validator
from pydantic_settings import BaseSettings
from typing import Optional, List, Tuple, Any, Dict
from pathlib import Path
import json

from app.core.units import (
    DEFAULT_GAMMA_EV,
    DEFAULT_ETA_EV,
    DEFAULT_WINDOW_EV,
    DEFAULT_SHOTS,
    DEFAULT_BIN_EV,
    DEFAULT_PRECISION_BITS,
    DEFAULT_KAISER_BETA,
)


class Settings(BaseSettings):
    # Application configuration
    debug: bool = True
    log_level: str = "INFO"
    host: str = "0.0.0.0"
    port: int = 8000
    output_dir: str = "./rixs_output"
    max_upload_bytes: int = 10 * 1024 * 1024

    # Eigensolver configuration
    krylov_tol: float = 1e-9
    krylov_max_iter: int = 10000
    dense_diag_limit: int = 4000

    # Chebyshev configuration
    log_base: str = "e"
    chebyshev_node_factor: int = 4
    check_grid_points: int = 10001

    class Config:
        env_file = ".env"
        env_prefix = "RIXS_"
        case_sensitive = False
        extra = "ignore"


settings = Settings()


RUN_CONFIG_PREFIX = "RIXS_RUN_"


class RunConfig(BaseSettings):
    """Effective configuration of one pipeline run.

    Loaded from a flat KEY=value file (dotenv grammar, keys prefixed RIXS_RUN_),
    then overridden by explicit keyword arguments. Energies are in eV here and
    converted to Hartree by the pipeline.
    """

    # Input paths
    fcidump: Optional[str] = None
    dipole: Optional[str] = None
    thc_factors: Optional[str] = None
    reference_spectrum: Optional[str] = None

    # Physics
    omega_in_ev: List[float] = [548.5, 551.9]
    gamma_ev: float = DEFAULT_GAMMA_EV
    eta_ev: float = DEFAULT_ETA_EV
    window_ev: Optional[float] = DEFAULT_WINDOW_EV
    epsilon_in: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    epsilon_out: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    cvs: bool = True
    orientation_average: bool = False
    diag_mode: str = "full"
    n_lowest: int = 50
    loss_min_ev: float = -1.0
    loss_max_ev: float = 30.0
    xas_min_ev: Optional[float] = None
    xas_max_ev: Optional[float] = None
    grid_points: int = 3001

    # Emulation
    lambda_ha: Optional[float] = None
    lambda_from_gershgorin: bool = False
    n_omega: Optional[int] = None
    qpe_window: str = "kaiser"
    kaiser_beta: float = DEFAULT_KAISER_BETA
    shots: int = DEFAULT_SHOTS
    seed: int = 0
    bin_ev: float = DEFAULT_BIN_EV
    axis: str = "energy_loss"
    prep_method: str = "exact"

    # Estimation (n_orb is only used when no FCIDUMP is given)
    n_orb: int = 16
    aleph: int = DEFAULT_PRECISION_BITS
    beth: int = DEFAULT_PRECISION_BITS
    aleph_mu: int = DEFAULT_PRECISION_BITS
    n_thc: Optional[int] = None
    rho: Optional[float] = None
    bliss_mode: str = "joint"
    thc_max_iter: int = 300
    thc_restarts: int = 1
    walk_model: str = "affine-thc"
    walk_toffoli: Optional[float] = None
    walk_qubits: Optional[int] = None
    target_toffoli: Optional[float] = None
    degree_mode: str = "calibrated"
    degree_eps: float = 1e-2
    sqrt_pr: Optional[float] = None

    # Output
    output_dir: str = "./rixs_output"
    dump_operators: bool = False
    dump_coefficients: bool = False

    class Config:
        env_prefix = RUN_CONFIG_PREFIX
        case_sensitive = False
        extra = "ignore"

    @field_validator("gamma_ev", "eta_ev")
    @classmethod
    def _positive_width(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("broadening widths must be > 0")
        return v

    @field_validator("shots", "grid_points")
    @classmethod
    def _positive_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("epsilon_in", "epsilon_out")
    @classmethod
    def _nonzero_polarization(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not any(abs(c) > 0 for c in v):
            raise ValueError("polarization vector must not be all zero")
        return v

    @field_validator("qpe_window")
    @classmethod
    def _known_window(cls, v: str) -> str:
        if v not in ("uniform", "kaiser"):
            raise ValueError("qpe_window must be 'uniform' or 'kaiser'")
        return v

    @field_validator("axis")
    @classmethod
    def _known_axis(cls, v: str) -> str:
        if v not in ("energy_loss", "ground_plus_energy"):
            raise ValueError("axis must be 'energy_loss' or 'ground_plus_energy'")
        return v

    @field_validator("diag_mode")
    @classmethod
    def _known_diag_mode(cls, v: str) -> str:
        if v not in ("full", "lowest_k"):
            raise ValueError("diag_mode must be 'full' or 'lowest_k'")
        return v

    @classmethod
    def load(cls, path: Optional[str] = None, **overrides: Any) -> "RunConfig":
        """Read a config file (if any) and apply explicit overrides on top."""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if path is not None:
            return cls(_env_file=path, **overrides)
        return cls(**overrides)

    def dump(self, path: str) -> None:
        """Write the effective configuration in the same flat format."""
        Path(path).write_text(self.dump_text(), encoding="utf-8")

    def dump_text(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, (list, tuple)):
                text = json.dumps(list(value))
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = str(value)
            lines.append(f"{RUN_CONFIG_PREFIX}{key.upper()}={text}")
        return "\n".join(lines) + "\n"

    def summary(self) -> Dict[str, Any]:
        return self.model_dump()
