from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import logging
import time
import uuid
from app.config import settings
from app.api.v1 import integrals, spectra, estimates
from app.core.exception_handlers import register_exception_handlers

logging.basicConfig(
    level=getattr(logging, settings.log_level.upper()),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)

API_VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(
        f"RIXS Spectra API up: dense limit {settings.dense_diag_limit}, "
        f"Krylov tol {settings.krylov_tol:g}, log base {settings.log_base}"
    )
    yield
    logger.info("RIXS Spectra API stopped")


app = FastAPI(
    title="RIXS Spectra API",
    description="Exact and QPE-emulated RIXS/XAS spectra of active-space Hamiltonians, with logical-resource estimates",
    version=API_VERSION,
    docs_url="/docs" if settings.debug else None,
    redoc_url="/redoc" if settings.debug else None,
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)

register_exception_handlers(app)


@app.middleware("http")
async def tag_request(request: Request, call_next):
    request.state.request_id = request.headers.get("X-Request-ID") or uuid.uuid4().hex[:12]
    started = time.perf_counter()
    response = await call_next(request)
    elapsed = time.perf_counter() - started
    response.headers["X-Request-ID"] = request.state.request_id
    logger.info(f"{request.method} {request.url.path} -> {response.status_code} in {elapsed:.3f}s "
                f"[{request.state.request_id}]")
    return response


for router in (integrals.router, spectra.router, estimates.router):
    app.include_router(router, prefix="/api/v1")


@app.get("/")
async def root():
    return {
        "service": "RIXS Spectra API",
        "version": API_VERSION,
        "endpoints": ["/api/v1/integrals", "/api/v1/spectra", "/api/v1/estimates"],
        "docs": "/docs" if settings.debug else None,
    }


@app.get("/health")
async def health_check():
    return {"status": "healthy", "timestamp": time.time(), "version": API_VERSION}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app.main:app", host=settings.host, port=settings.port,
                reload=settings.debug, log_level=settings.log_level.lower())
