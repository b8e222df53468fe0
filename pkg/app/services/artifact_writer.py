import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.exceptions import safe_serialize_details
from app.core.units import PRINT_DIGITS
from app.schemas import QpeSamples, SpectrumResult

logger = logging.getLogger(__name__)


def format_energy_tag(omega_ev: float) -> str:
    """File-name tag of an incident energy, e.g. 548.5 -> '548.50eV'."""
    return f"{omega_ev:.2f}eV"


def to_json_text(payload: Any) -> str:
    return json.dumps(safe_serialize_details(payload), indent=2, sort_keys=True) + "\n"


class ArtifactWriter:
    """Writes run artifacts under one output directory and remembers what it wrote."""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.written: List[str] = []

    def _path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name

    def write_text(self, name: str, text: str) -> str:
        path = self._path(name)
        path.write_text(text, encoding="utf-8")
        self.written.append(name)
        logger.debug(f"Wrote {path}")
        return str(path)

    def write_json(self, name: str, payload: Any) -> str:
        return self.write_text(name, to_json_text(payload))

    def write_spectrum_csv(self, name: str, result: SpectrumResult) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["x_eV", "intensity"])
        for x, y in zip(result.x_ev, result.intensity):
            writer.writerow([f"{x:.{PRINT_DIGITS}g}", f"{y:.{PRINT_DIGITS}g}"])
        return self.write_text(name, buffer.getvalue())

    def write_samples_csv(self, name: str, samples: QpeSamples) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["shot_index", "bin", "theta", "omega_eV"])
        for i, (b, theta, omega) in enumerate(zip(samples.bins, samples.theta, samples.omega_ev)):
            writer.writerow([i, b, f"{theta:.{PRINT_DIGITS}g}", f"{omega:.{PRINT_DIGITS}g}"])
        return self.write_text(name, buffer.getvalue())

    @staticmethod
    def spectrum_record(result: SpectrumResult) -> Dict[str, Any]:
        return {"kind": result.kind, "sticks": [list(s) for s in result.sticks], "metadata": result.metadata}

    def write_summary(
        self,
        command: str,
        status: str,
        config: Dict[str, Any],
        results: Optional[Dict[str, Any]] = None,
        error: Optional[Dict[str, Any]] = None,
    ) -> str:
        name = f"summary_{command}.json"
        payload = {
            "command": command,
            "status": status,
            "artifacts": sorted(set(self.written)),
            "config": config,
            "results": results or {},
        }
        if error is not None:
            payload["error"] = error
        return self.write_json(name, payload)
