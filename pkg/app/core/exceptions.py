from fastapi import status
from typing import Optional, Dict, Any, List
import logging

import numpy as np

logger = logging.getLogger(__name__)


# CLI exit codes, one per error family
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_OPERATOR = 5
EXIT_SOLVER = 6
EXIT_STATE = 7
EXIT_ESTIMATE = 8


def safe_serialize_details(details: Any) -> Any:
    """Safely serialize details to ensure they are JSON-compatible"""
    if details is None:
        return None

    if isinstance(details, dict):
        return {str(k): safe_serialize_details(v) for k, v in details.items()}
    elif isinstance(details, (list, tuple)):
        return [safe_serialize_details(item) for item in details]
    elif isinstance(details, np.ndarray):
        return safe_serialize_details(details.tolist())
    elif isinstance(details, np.generic):
        return safe_serialize_details(details.item())
    elif isinstance(details, complex):
        return {"re": details.real, "im": details.imag}
    elif isinstance(details, bytes):
        return details.decode('utf-8', errors='replace')
    elif isinstance(details, (str, int, float, bool)):
        return details
    else:
        return str(details)


class BaseEngineException(Exception):
    """Base exception class for all engine errors"""

    def __init__(
        self,
        error_code: str,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        user_message: Optional[str] = None,
        status_code: int = status.HTTP_422_UNPROCESSABLE_ENTITY,
        exit_code: int = EXIT_UNEXPECTED
    ):
        self.error_code = error_code
        self.message = message
        self.details = safe_serialize_details(details) or {}
        self.user_message = user_message or message
        self.status_code = status_code
        self.exit_code = exit_code

        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_code": self.error_code,
            "message": self.message,
            "user_message": self.user_message,
            "details": self.details
        }


class IntegralParseError(BaseEngineException):
    """Integral file does not follow the grammar"""

    def __init__(self, message: str, line_number: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        if line_number is not None:
            details["line_number"] = line_number
        location = f" (line {line_number})" if line_number is not None else ""

        super().__init__(
            error_code="PARSE_001",
            message=f"Integral file parse error{location}: {message}",
            details=details,
            user_message=f"The integral file could not be parsed{location}: {message}",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_PARSE
        )
        self.line_number = line_number


class SidecarMismatchError(BaseEngineException):
    """Dipole sidecar does not match the base integral set"""

    def __init__(self, field: str, sidecar_value: Any, base_value: Any, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details.update({
            "field": field,
            "sidecar_value": sidecar_value,
            "base_value": base_value
        })

        super().__init__(
            error_code="PARSE_002",
            message=f"Dipole sidecar {field}={sidecar_value} does not match integral set {field}={base_value}",
            details=details,
            user_message="The dipole sidecar was written for a different active space.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_PARSE
        )


class ValidationError(BaseEngineException):
    """Data validation failed"""

    def __init__(self, field: str, value: Any, rule: str, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details.update({
            "field": field,
            "value": value,
            "rule": rule
        })

        super().__init__(
            error_code="VALID_001",
            message=f"Validation failed for field '{field}'. Rule: {rule}",
            details=details,
            user_message=f"Invalid {field}. Please check your input and try again.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_VALIDATION
        )


class InfeasibleSectorError(BaseEngineException):
    """Requested (N_e, S_z) sector does not exist for the active space"""

    def __init__(self, n_orb: int, n_elec: int, two_sz: int, reason: str):
        super().__init__(
            error_code="VALID_002",
            message=f"Infeasible sector N_a={n_orb}, N_e={n_elec}, 2S_z={two_sz}: {reason}",
            details={"n_orb": n_orb, "n_elec": n_elec, "two_sz": two_sz, "reason": reason},
            user_message="The electron count and spin projection do not fit the active space.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_VALIDATION
        )


class PhysicsParameterError(BaseEngineException):
    """Physical parameter outside its allowed range"""

    def __init__(self, parameter: str, value: Any, rule: str, hint: Optional[str] = None):
        details = {"parameter": parameter, "value": value, "rule": rule}
        if hint:
            details["hint"] = hint

        super().__init__(
            error_code="VALID_004",
            message=f"Invalid value {value!r} for {parameter}: {rule}",
            details=details,
            user_message=hint or f"{parameter} must satisfy: {rule}",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_VALIDATION
        )


class DimensionMismatchError(BaseEngineException):
    """Operator, basis or vector dimensions disagree"""

    def __init__(self, what: str, expected: Any, actual: Any):
        super().__init__(
            error_code="OPERATOR_001",
            message=f"Dimension mismatch for {what}: expected {expected}, got {actual}",
            details={"what": what, "expected": expected, "actual": actual},
            user_message="Inputs were built for different active spaces.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_OPERATOR
        )


class NonHermitianError(BaseEngineException):
    """Operator expected to be hermitian is not"""

    def __init__(self, what: str, deviation: float):
        super().__init__(
            error_code="OPERATOR_002",
            message=f"{what} is not hermitian (max |A - A^H| = {deviation:.3e})",
            details={"what": what, "deviation": deviation},
            user_message="The operator must be hermitian.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_OPERATOR
        )


class SpectralBoundError(BaseEngineException):
    """Operator norm exceeds the 1-norm scale λ"""

    def __init__(self, norm_estimate: float, one_norm: float):
        super().__init__(
            error_code="OPERATOR_003",
            message=f"Spectral bound violated: ||H|| ~ {norm_estimate:.6g} Ha exceeds lambda = {one_norm:.6g} Ha",
            details={"norm_estimate": norm_estimate, "lambda": one_norm},
            user_message="The 1-norm lambda is too small for this Hamiltonian; supply a larger lambda.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_OPERATOR
        )


class EmptyCoreSetError(BaseEngineException):
    """Core-valence separated dipole requested without tagged core orbitals"""

    def __init__(self):
        super().__init__(
            error_code="OPERATOR_004",
            message="No core orbitals tagged; the core-valence separated dipole is undefined",
            details={"hint": "tag core orbitals with a CORE record or use full-dipole mode (cvs=False)"},
            user_message="Tag core orbitals in the dipole sidecar or switch to full-dipole mode.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_OPERATOR
        )


class ConvergenceError(BaseEngineException):
    """Iterative solver did not converge"""

    def __init__(self, solver: str, iterations: int, residual: float, tolerance: float):
        super().__init__(
            error_code="SOLVER_001",
            message=f"{solver} did not converge after {iterations} iterations (residual {residual:.3e} > {tolerance:.1e})",
            details={"solver": solver, "iterations": iterations, "residual": residual, "tolerance": tolerance},
            user_message="The eigensolver did not converge. Increase the iteration limit or use full diagonalization.",
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            exit_code=EXIT_SOLVER
        )


class DarkGroundStateError(BaseEngineException):
    """Incoming dipole annihilates the ground state"""

    def __init__(self, norm: float):
        super().__init__(
            error_code="STATE_001",
            message=f"Dark ground state: ||D_in|E_0>|| = {norm:.3e}; success probability would be 0",
            details={"dipole_state_norm": norm},
            user_message="The incoming polarization does not couple to the ground state.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_STATE
        )


class ZeroNormError(BaseEngineException):
    """A normalization constant required downstream is zero"""

    def __init__(self, quantity: str):
        super().__init__(
            error_code="STATE_002",
            message=f"{quantity} is zero; the dependent quantity is undefined",
            details={"quantity": quantity},
            user_message=f"{quantity} vanishes for these inputs.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_STATE
        )


class CalibrationRangeError(BaseEngineException):
    """Calibrated formula used outside its calibration range"""

    def __init__(self, one_norm: float):
        super().__init__(
            error_code="ESTIMATE_001",
            message=f"Calibrated degree formula requires lambda >= 1 Ha, got {one_norm:.6g}",
            details={"lambda": one_norm, "hint": "use analytic degree mode"},
            user_message="lambda is below the calibration range; use the analytic degree mode.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_ESTIMATE
        )


class CostModelError(BaseEngineException):
    """Walk-operator cost plugin failed"""

    def __init__(self, model: str, error: str, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details.update({"model": model, "error": error})

        super().__init__(
            error_code="ESTIMATE_002",
            message=f"Walk cost model '{model}' failed: {error}",
            details=details,
            user_message="The walk-operator cost model could not produce an estimate.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_ESTIMATE
        )


class MissingInputError(BaseEngineException):
    """Required input is missing"""

    def __init__(self, field: str, required_by: Optional[str] = None):
        details = {"field": field}
        if required_by:
            details["required_by"] = required_by

        super().__init__(
            error_code="INPUT_001",
            message=f"Required input '{field}' is missing" + (f" for {required_by}" if required_by else ""),
            details=details,
            user_message=f"{field} is required.",
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            exit_code=EXIT_USAGE
        )


class UnsupportedFileTypeError(BaseEngineException):
    """Unsupported upload"""

    def __init__(self, filename: str, supported_types: List[str]):
        super().__init__(
            error_code="INPUT_002",
            message=f"Unsupported file '{filename}'. Supported: {supported_types}",
            details={"filename": filename, "supported_types": supported_types},
            user_message=f"File type not supported. Supported types: {', '.join(supported_types)}",
            status_code=status.HTTP_415_UNSUPPORTED_MEDIA_TYPE,
            exit_code=EXIT_USAGE
        )


class FileTooLargeError(BaseEngineException):
    """Upload is too large"""

    def __init__(self, filename: str, file_size: int, max_size: int):
        super().__init__(
            error_code="INPUT_003",
            message=f"File '{filename}' is too large. Size: {file_size}, Max: {max_size}",
            details={"filename": filename, "file_size": file_size, "max_size": max_size},
            user_message=f"File is too large. Maximum size allowed is {max_size} bytes.",
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            exit_code=EXIT_USAGE
        )


def log_exception_with_context(
    exception: Exception,
    context: Dict[str, Any],
    request_id: Optional[str] = None
):
    """Log exception with additional context for debugging"""

    log_data = {
        "exception_type": type(exception).__name__,
        "exception_message": str(exception),
        "context": context
    }

    if isinstance(exception, BaseEngineException):
        log_data["error_code"] = exception.error_code

    if request_id:
        log_data["request_id"] = request_id

    logger.error(f"Exception occurred: {log_data}")
    logger.debug("Full traceback", exc_info=exception)
