from fastapi import APIRouter, File, UploadFile
from typing import Optional
import asyncio
import logging

from app.api.deps import read_integral_upload
from app.schemas import ErrorResponse, ParseCheckResponse
from app.services.integral_parser import integral_parser
from app.services.pipeline import pipeline

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/integrals", tags=["integrals"], responses={422: {"model": ErrorResponse}})


@router.post("/parse-check", response_model=ParseCheckResponse)
async def parse_check(
    fcidump: UploadFile = File(...),
    dipole: Optional[UploadFile] = File(None),
):
    """Parse an uploaded FCIDUMP (and optional dipole sidecar) and summarize it"""

    fcidump_text = await read_integral_upload(fcidump)
    dipole_text = await read_integral_upload(dipole) if dipole is not None else None

    integrals = await asyncio.to_thread(integral_parser.parse_fcidump, fcidump_text)
    if dipole_text is not None:
        integrals = integral_parser.parse_dipole_sidecar(dipole_text, integrals)

    report = pipeline.parse_check(integrals)
    logger.info(f"Parse check: N_a={report.n_orb}, N_e={report.n_elec}, dimension {report.fci_dimension}")
    return report
