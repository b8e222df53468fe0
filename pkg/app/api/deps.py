from fastapi import UploadFile
from typing import Optional
import logging

from app.config import settings
from app.core.exceptions import FileTooLargeError, IntegralParseError, UnsupportedFileTypeError

logger = logging.getLogger(__name__)

INTEGRAL_FILE_SUFFIXES = [".fcidump", ".txt", ".dat", ".dip"]


def check_text_size(name: str, text: Optional[str]) -> None:
    if text is not None and len(text.encode("utf-8")) > settings.max_upload_bytes:
        raise FileTooLargeError(filename=name, file_size=len(text.encode("utf-8")), max_size=settings.max_upload_bytes)


async def read_integral_upload(file: UploadFile) -> str:
    """Read an uploaded integral file as UTF-8 text, enforcing name and size limits."""
    filename = file.filename or ""
    lowered = filename.lower()
    if lowered != "fcidump" and not any(lowered.endswith(suffix) for suffix in INTEGRAL_FILE_SUFFIXES):
        raise UnsupportedFileTypeError(filename=filename, supported_types=["FCIDUMP", *INTEGRAL_FILE_SUFFIXES])

    content = await file.read()
    if len(content) > settings.max_upload_bytes:
        raise FileTooLargeError(filename=filename, file_size=len(content), max_size=settings.max_upload_bytes)
    logger.info(f"Received integral file {filename} ({len(content)} bytes)")
    try:
        return content.decode("utf-8")
    except UnicodeDecodeError as e:
        raise IntegralParseError(
            f"{filename} is not UTF-8 text", line_number=content[:e.start].count(b"\n") + 1,
            details={"filename": filename, "byte_offset": e.start},
        )
