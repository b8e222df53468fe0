"""Command-line driver.

Exit codes: 0 success, 1 unexpected error, 2 usage or missing input, 3 parse,
4 validation or physics, 5 operator, 6 solver, 7 state, 8 estimation.
"""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import pydantic

from app.config import RunConfig, settings
from app.core.exceptions import (
    EXIT_OK,
    EXIT_UNEXPECTED,
    BaseEngineException,
    ValidationError,
    log_exception_with_context,
)
from app.schemas import SystemSpec
from app.services.artifact_writer import ArtifactWriter, to_json_text
from app.services.pipeline import STAGES, pipeline
from app.services.resource_estimator import resource_estimator

logger = logging.getLogger(__name__)

# flag destination -> RunConfig field
_FLAG_FIELDS = {
    "fcidump": "fcidump",
    "dipole": "dipole",
    "thc_factors": "thc_factors",
    "reference_spectrum": "reference_spectrum",
    "omega_in": "omega_in_ev",
    "gamma": "gamma_ev",
    "eta": "eta_ev",
    "window": "window_ev",
    "epsilon_in": "epsilon_in",
    "epsilon_out": "epsilon_out",
    "cvs": "cvs",
    "orientation_average": "orientation_average",
    "diag_mode": "diag_mode",
    "n_lowest": "n_lowest",
    "loss_min": "loss_min_ev",
    "loss_max": "loss_max_ev",
    "xas_min": "xas_min_ev",
    "xas_max": "xas_max_ev",
    "grid_points": "grid_points",
    "lambda_ha": "lambda_ha",
    "lambda_from_gershgorin": "lambda_from_gershgorin",
    "n_omega": "n_omega",
    "qpe_window": "qpe_window",
    "kaiser_beta": "kaiser_beta",
    "shots": "shots",
    "seed": "seed",
    "bin": "bin_ev",
    "axis": "axis",
    "prep_method": "prep_method",
    "n_orb": "n_orb",
    "aleph": "aleph",
    "beth": "beth",
    "aleph_mu": "aleph_mu",
    "n_thc": "n_thc",
    "rho": "rho",
    "bliss_mode": "bliss_mode",
    "thc_max_iter": "thc_max_iter",
    "thc_restarts": "thc_restarts",
    "walk_model": "walk_model",
    "walk_toffoli": "walk_toffoli",
    "walk_qubits": "walk_qubits",
    "target_toffoli": "target_toffoli",
    "degree_mode": "degree_mode",
    "degree_eps": "degree_eps",
    "sqrt_pr": "sqrt_pr",
    "output_dir": "output_dir",
    "dump_operators": "dump_operators",
    "dump_coefficients": "dump_coefficients",
}


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="flat KEY=value run configuration file")
    parser.add_argument("--dump-config", help="write the effective configuration to this path")
    parser.add_argument("--dump-operators", action="store_const", const=True, default=None,
                        help="ground-state: also write the sector operators as `row col re im` text")
    parser.add_argument("--dump-coefficients", action="store_const", const=True, default=None,
                        help="rixs-qpe: also write the Chebyshev resolvent coefficients and error scan")
    parser.add_argument("--log-level", default=None, help="logging level (default from RIXS_LOG_LEVEL)")

    inputs = parser.add_argument_group("inputs")
    inputs.add_argument("--fcidump")
    inputs.add_argument("--dipole", help="dipole sidecar file")
    inputs.add_argument("--thc-factors", help="THC factor JSON from bliss-thc")
    inputs.add_argument("--reference-spectrum", help="two-column omega_eV,intensity CSV")

    physics = parser.add_argument_group("physics (energies in eV)")
    physics.add_argument("--omega-in", type=float, action="append", help="incident energy; repeatable")
    physics.add_argument("--gamma", type=float, help="intermediate-state broadening")
    physics.add_argument("--eta", type=float, help="final-state broadening and QPE target accuracy")
    physics.add_argument("--window", type=float, help="intermediate-state window around omega_in")
    physics.add_argument("--epsilon-in", type=float, nargs=3, metavar=("X", "Y", "Z"))
    physics.add_argument("--epsilon-out", type=float, nargs=3, metavar=("X", "Y", "Z"))
    physics.add_argument("--no-cvs", dest="cvs", action="store_const", const=False, default=None,
                         help="use the full dipole instead of the core-valence one")
    physics.add_argument("--orientation-average", action="store_const", const=True, default=None,
                         help="average over the nine polarization pairs")
    physics.add_argument("--diag-mode", choices=["full", "lowest_k"])
    physics.add_argument("--n-lowest", type=int)
    physics.add_argument("--loss-min", type=float)
    physics.add_argument("--loss-max", type=float)
    physics.add_argument("--xas-min", type=float)
    physics.add_argument("--xas-max", type=float)
    physics.add_argument("--grid-points", type=int)

    emulation = parser.add_argument_group("emulation")
    emulation.add_argument("--lambda", dest="lambda_ha", type=float, help="Hamiltonian 1-norm in Ha")
    emulation.add_argument("--lambda-from-gershgorin", action="store_const", const=True, default=None,
                           help="without --lambda, use the row-sum bound of the active Hamiltonian")
    emulation.add_argument("--n-omega", type=int, help="QPE phase bits")
    emulation.add_argument("--qpe-window", choices=["kaiser", "uniform"])
    emulation.add_argument("--kaiser-beta", type=float)
    emulation.add_argument("--shots", type=int)
    emulation.add_argument("--seed", type=int)
    emulation.add_argument("--bin", type=float, help="histogram bin width in eV")
    emulation.add_argument("--axis", choices=["energy_loss", "ground_plus_energy"])
    emulation.add_argument("--prep-method", choices=["exact", "chebyshev"])

    estimation = parser.add_argument_group("estimation")
    estimation.add_argument("--n-orb", type=int, help="active orbitals when no FCIDUMP is given")
    estimation.add_argument("--aleph", type=int)
    estimation.add_argument("--beth", type=int)
    estimation.add_argument("--aleph-mu", type=int)
    estimation.add_argument("--n-thc", type=int)
    estimation.add_argument("--rho", type=float)
    estimation.add_argument("--bliss-mode", choices=["joint", "alpha", "none"])
    estimation.add_argument("--thc-max-iter", type=int)
    estimation.add_argument("--thc-restarts", type=int)
    estimation.add_argument("--walk-model", choices=["affine-thc", "user-supplied", "back-solve"])
    estimation.add_argument("--walk-toffoli", type=float)
    estimation.add_argument("--walk-qubits", type=int)
    estimation.add_argument("--target-toffoli", type=float)
    estimation.add_argument("--degree-mode", choices=["calibrated", "analytic"])
    estimation.add_argument("--degree-eps", type=float)
    estimation.add_argument("--sqrt-pr", type=float)

    parser.add_argument("--output-dir")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="rixs", description="RIXS/XAS spectra and quantum resource estimates")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "parse-check": "validate integral files and report their contents",
        "ground-state": "diagonalize the active-space Hamiltonian",
        "xas": "exact X-ray absorption spectrum",
        "rixs-exact": "exact Kramers-Heisenberg RIXS spectra",
        "rixs-qpe": "QPE-emulated RIXS spectra from shots",
        "bliss-thc": "BLISS-THC factorization and 1-norm",
        "estimate": "logical-resource estimate",
        "full-run": "every stage in order",
    }
    for name in (*STAGES, "full-run"):
        command = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "estimate":
            command.add_argument("--systems", help="JSON list of systems for a resource table")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = tuple(value) if name.startswith("epsilon") else value
    try:
        return RunConfig.load(args.config, **overrides)
    except pydantic.ValidationError as e:
        first = e.errors()[0]
        raise ValidationError(".".join(str(p) for p in first["loc"]), first.get("input"), first["msg"])


def _table(path: str, config: RunConfig) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        systems: List[SystemSpec] = [SystemSpec(**item) for item in json.load(f)]
    text, payload = resource_estimator.table_report(systems, config.eta_ev, config.gamma_ev, config.shots)
    writer = ArtifactWriter(config.output_dir)
    writer.write_text("resources_table.txt", text)
    writer.write_json("resources_table.json", payload)
    sys.stdout.write(text)
    return payload


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.log_level).upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    config: Optional[RunConfig] = None
    try:
        config = config_from_args(args)
        if args.dump_config:
            config.dump(args.dump_config)
        if args.command == "estimate" and getattr(args, "systems", None):
            _table(args.systems, config)
        elif args.command == "full-run":
            asyncio.run(pipeline.run_full(config))
        else:
            results = asyncio.run(pipeline.run_stage(args.command, config))
            sys.stdout.write(to_json_text(results))
        return EXIT_OK

    except BaseEngineException as e:
        log_exception_with_context(e, {"command": args.command})
        sys.stderr.write(f"error [{e.error_code}]: {e.user_message}\n")
        if config is not None:
            ArtifactWriter(config.output_dir).write_summary(
                args.command, "error", {k: v for k, v in config.model_dump().items() if v is not None},
                error=e.to_dict(),
            )
        return e.exit_code
    except Exception as e:
        log_exception_with_context(e, {"command": args.command})
        sys.stderr.write(f"error: {e}\n")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
