from fastapi import Request, status
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from datetime import datetime, timezone
from typing import Any, Dict, Optional
import logging
from .exceptions import (
    BaseEngineException,
    log_exception_with_context,
    safe_serialize_details,
)

logger = logging.getLogger(__name__)


def _request_id(request: Request) -> Optional[str]:
    return getattr(request.state, "request_id", None)


def error_envelope(request: Request, status_code: int, code: str, message: str, details: Dict[str, Any]) -> JSONResponse:
    """The one error body every handler returns."""
    return JSONResponse(
        status_code=status_code,
        content={
            "error": {
                "code": code,
                "message": message,
                "details": details,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "request_id": _request_id(request),
            }
        },
    )


def _log(request: Request, exc: Exception, **extra: Any) -> None:
    context = {"path": request.url.path, "method": request.method, **extra}
    log_exception_with_context(exception=exc, context=context, request_id=_request_id(request))


async def engine_exception_handler(request: Request, exc: BaseEngineException):
    """Parse, validation, operator, solver, state and estimation failures"""

    _log(request, exc, query_params=dict(request.query_params),
         client_ip=request.client.host if request.client else None)
    return error_envelope(request, exc.status_code, exc.error_code, exc.user_message, exc.details)


async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Request bodies that fail the pydantic schemas"""

    field_errors = []
    for error in exc.errors():
        value = error.get("input")
        if isinstance(value, bytes):
            value = value.decode("utf-8", errors="replace")
        field_errors.append({
            "field": " -> ".join(str(loc) for loc in error["loc"]),
            "message": error["msg"],
            "type": error["type"],
            "value": safe_serialize_details(value),
        })

    _log(request, exc, field_errors=field_errors)
    return error_envelope(
        request,
        status.HTTP_422_UNPROCESSABLE_ENTITY,
        "VALID_003",
        "Validation failed. Please check your input.",
        {"field_errors": field_errors, "total_errors": len(field_errors)},
    )


async def generic_exception_handler(request: Request, exc: Exception):
    _log(request, exc, error_type=type(exc).__name__, unhandled=True)
    return error_envelope(
        request,
        status.HTTP_500_INTERNAL_SERVER_ERROR,
        "INTERNAL_001",
        "An unexpected error occurred.",
        {"error_type": type(exc).__name__, "error_message": str(exc)},
    )


def register_exception_handlers(app):
    app.add_exception_handler(BaseEngineException, engine_exception_handler)
    app.add_exception_handler(RequestValidationError, validation_exception_handler)
    app.add_exception_handler(Exception, generic_exception_handler)
