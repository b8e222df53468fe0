from fastapi import APIRouter
from typing import Any, Dict
import logging

from app.core.units import ev_to_hartree
from app.schemas import CostModelParams, ErrorResponse, EstimateRequest, ResourceReport, TableRequest
from app.services.resource_estimator import build_walk_model, resource_estimator

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/estimates", tags=["estimates"], responses={422: {"model": ErrorResponse}})


@router.post("", response_model=ResourceReport)
async def estimate(request: EstimateRequest):
    """Logical qubit and Toffoli counts for one system"""

    model = build_walk_model(
        request.walk_model, request.walk_toffoli, request.walk_qubits, request.target_toffoli
    )
    params = CostModelParams(
        aleph=request.aleph,
        beth=request.beth,
        aleph_mu=request.aleph_mu,
        n_thc=request.n_thc or 3 * request.n_orb,
        n_orb=request.n_orb,
        walk_model=model.name,
    )
    return resource_estimator.totals(
        params,
        request.one_norm,
        ev_to_hartree(request.eps_omega_ev),
        ev_to_hartree(request.gamma_ev),
        request.sqrt_pr ** 2,
        model,
        degree_mode=request.degree_mode,
        degree_eps=request.degree_eps,
    )


@router.post("/table")
async def estimate_table(request: TableRequest) -> Dict[str, Any]:
    """Resource table over several systems, as text and JSON"""

    text, payload = resource_estimator.table_report(
        request.systems, request.eps_omega_ev, request.gamma_ev, request.shots
    )
    payload["table"] = text
    return payload
