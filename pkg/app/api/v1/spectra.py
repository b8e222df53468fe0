from fastapi import APIRouter
import asyncio
import logging

from app.api.deps import check_text_size
from app.config import RunConfig
from app.core.exceptions import MissingInputError
from app.schemas import ErrorResponse, IntegralSet, SpectrumRequest, SpectrumResponse
from app.services.integral_parser import integral_parser
from app.services.pipeline import GroundStateContext, pipeline

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/spectra", tags=["spectra"], responses={422: {"model": ErrorResponse}})


def _integrals(request: SpectrumRequest) -> IntegralSet:
    check_text_size("fcidump", request.fcidump)
    check_text_size("dipole", request.dipole)
    if request.dipole is None:
        raise MissingInputError("dipole", required_by="spectra")
    integrals = integral_parser.parse_fcidump(request.fcidump)
    return integral_parser.parse_dipole_sidecar(request.dipole, integrals)


def _config(request: SpectrumRequest) -> RunConfig:
    config = RunConfig.load(
        omega_in_ev=request.omega_in_ev,
        gamma_ev=request.gamma_ev,
        eta_ev=request.eta_ev,
        window_ev=request.window_ev,
        epsilon_in=request.epsilon_in,
        epsilon_out=request.epsilon_out,
        cvs=request.cvs,
        shots=request.shots,
        seed=request.seed,
        n_omega=request.n_omega,
        lambda_ha=request.lambda_ha,
        lambda_from_gershgorin=request.lambda_from_gershgorin,
    )
    if request.window_ev is None:
        # no intermediate-state window
        config = config.model_copy(update={"window_ev": None})
    return config


async def _context(request: SpectrumRequest, config: RunConfig) -> GroundStateContext:
    integrals = await asyncio.to_thread(_integrals, request)
    return await asyncio.to_thread(pipeline.ground_state, integrals, config)


@router.post("/xas", response_model=SpectrumResponse)
async def xas(request: SpectrumRequest):
    """Exact X-ray absorption spectrum"""

    config = _config(request)
    ctx = await _context(request, config)
    spectrum = await asyncio.to_thread(pipeline.xas, ctx, config)
    return SpectrumResponse(ground_energy=ctx.ground_energy, spectra=[spectrum])


@router.post("/rixs-exact", response_model=SpectrumResponse)
async def rixs_exact(request: SpectrumRequest):
    """Exact Kramers-Heisenberg RIXS spectra, one per incident energy"""

    config = _config(request)
    ctx = await _context(request, config)
    spectra = await pipeline.rixs_exact(ctx, config)
    return SpectrumResponse(ground_energy=ctx.ground_energy, spectra=spectra)


@router.post("/rixs-qpe", response_model=SpectrumResponse)
async def rixs_qpe(request: SpectrumRequest):
    """Shot-sampled RIXS spectra from the phase-estimation emulator"""

    config = _config(request)
    ctx = await _context(request, config)
    one_norm, runs = await pipeline.rixs_qpe(ctx, config)
    logger.info(f"QPE spectra for {len(runs)} incident energies with lambda {one_norm:.6f} Ha")
    return SpectrumResponse(ground_energy=ctx.ground_energy, spectra=[spectrum for spectrum, _ in runs])
