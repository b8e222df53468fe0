"""Orchestration shared by the command line and the HTTP surface.

Each stage reads a RunConfig, works in Hartree internally and converts to eV only
for what it returns or writes. `run_stage` writes a stage's artifacts and its
summary; `run_full` runs every stage in order with a fresh writer per stage, so a
full run leaves exactly the files the individual stages would.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from app.config import RunConfig
from app.core.exceptions import MissingInputError, ValidationError, ZeroNormError
from app.core.units import DEGENERACY_TOL, HARTREE_TO_EV, ev_to_hartree
from app.schemas import (
    BlissParams,
    ChebyshevResolvent,
    CostModelParams,
    IntegralSet,
    ManyBodyBasis,
    ParseCheckResponse,
    QpeModel,
    QpeSamples,
    ResourceReport,
    RixsState,
    SparseOperator,
    SpectralDecomposition,
    SpectrumResult,
    ThcFactors,
)
from app.services.artifact_writer import ArtifactWriter, format_energy_tag
from app.services.bliss_thc import bliss_thc
from app.services.exact_spectra import exact_spectra, merge_degenerate
from app.services.fock_space import fock_space, sector_dimension
from app.services.integral_parser import integral_parser
from app.services.qpe_emulator import qpe_emulator
from app.services.resolvent import resolvent_expander
from app.services.resource_estimator import build_walk_model, resource_estimator

logger = logging.getLogger(__name__)

STAGES = ("parse-check", "ground-state", "xas", "rixs-exact", "rixs-qpe", "bliss-thc", "estimate")
AXES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
THC_FACTORS_FILE = "thc_factors.json"
FALLBACK_SQRT_PR = 0.06


@dataclass
class GroundStateContext:
    integrals: IntegralSet
    basis: ManyBodyBasis
    hamiltonian: SparseOperator
    decomposition: SpectralDecomposition
    active_hamiltonian: SparseOperator = field(init=False)
    active_decomposition: SpectralDecomposition = field(init=False)

    def __post_init__(self) -> None:
        # the walk operator block-encodes H without its scalar part
        shift = self.integrals.e_frozen
        identity = sp.identity(self.hamiltonian.dimension, dtype=complex, format="csr")
        self.active_hamiltonian = SparseOperator(
            dimension=self.hamiltonian.dimension,
            matrix=(self.hamiltonian.matrix - shift * identity).tocsr(),
            hermitian=True,
        )
        self.active_decomposition = self.decomposition.shifted(-shift)

    @property
    def ground_energy(self) -> float:
        return self.decomposition.ground_energy


def orientation_average(
    spectra: Sequence[SpectrumResult], weights: Optional[Sequence[float]] = None
) -> SpectrumResult:
    """Weighted sum of spectra from different polarization pairs (equal weights by default)."""
    if not spectra:
        raise ValidationError("spectra", [], "nothing to average")
    weights = np.full(len(spectra), 1.0 / len(spectra)) if weights is None else np.asarray(weights, dtype=float)
    if len(weights) != len(spectra) or np.any(weights < 0):
        raise ValidationError("weights", list(weights), "need one non-negative weight per spectrum")

    grids = {tuple(s.x_ev) for s in spectra}
    if len(grids) == 1:
        x = np.asarray(spectra[0].x_ev)
        intensity = sum(w * np.asarray(s.intensity) for w, s in zip(weights, spectra))
    else:
        accumulated: Dict[float, float] = {}
        for w, s in zip(weights, spectra):
            for xi, yi in zip(s.x_ev, s.intensity):
                key = round(xi, 9)
                accumulated[key] = accumulated.get(key, 0.0) + w * yi
        x = np.array(sorted(accumulated))
        intensity = np.array([accumulated[k] for k in x])

    positions = np.array([p for s in spectra for p, _ in s.sticks])
    stick_weights = np.array([w * sw for w, s in zip(weights, spectra) for _, sw in s.sticks])
    if len(positions):
        positions, stick_weights = merge_degenerate(positions, stick_weights, tol=DEGENERACY_TOL * HARTREE_TO_EV)
    metadata = dict(spectra[0].metadata)
    metadata.update({"orientation_average": True, "n_polarization_pairs": len(spectra)})
    metadata.pop("epsilon_in", None)
    metadata.pop("epsilon_out", None)
    return SpectrumResult(
        kind=spectra[0].kind,
        sticks=[(float(p), float(w)) for p, w in zip(positions, stick_weights) if w > 0.0],
        x_ev=x.tolist(),
        intensity=np.asarray(intensity).tolist(),
        metadata=metadata,
    )


def allocate_shots(shots: int, weights: Sequence[float]) -> List[int]:
    """Split `shots` in proportion to `weights` by largest remainder."""
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        raise ZeroNormError("polarization-pair weights")
    exact = shots * weights / weights.sum()
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: shots - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


class RixsPipeline:

    # ---------------------------------------------------------------- inputs

    def load_integrals(self, config: RunConfig, require_dipole: bool = False) -> IntegralSet:
        if config.fcidump is None:
            raise MissingInputError("fcidump", required_by="this command")
        if require_dipole and config.dipole is None:
            raise MissingInputError("dipole", required_by="spectra")
        return integral_parser.read_files(config.fcidump, config.dipole)

    def parse_check(self, integrals: IntegralSet) -> ParseCheckResponse:
        n = integrals.n_orb
        triu = np.triu_indices(n)
        n_one = int(np.count_nonzero(integrals.h[triu]))
        pairs = integrals.v.reshape(n * n, n * n)
        n_two = int(sum(
            np.count_nonzero(pairs[p * n + q, r * n + s])
            for p, q in zip(*triu) for r, s in zip(*triu) if p * n + q >= r * n + s
        ))
        return ParseCheckResponse(
            n_orb=n,
            n_elec=integrals.n_elec,
            two_sz=integrals.two_sz,
            e_frozen=integrals.e_frozen,
            fci_dimension=sector_dimension(n, integrals.n_elec, integrals.two_sz),
            n_one_body=n_one,
            n_two_body=n_two,
            core_orbitals=list(integrals.core_orbitals),
            has_dipole=integrals.dipole is not None,
        )

    def ground_state(self, integrals: IntegralSet, config: RunConfig) -> GroundStateContext:
        basis = fock_space.build_basis(integrals.n_orb, integrals.n_elec, integrals.two_sz)
        hamiltonian = fock_space.build_hamiltonian(integrals, basis)
        decomposition = exact_spectra.diagonalize(hamiltonian, mode=config.diag_mode, k=config.n_lowest)
        return GroundStateContext(integrals, basis, hamiltonian, decomposition)

    def ground_state_summary(self, ctx: GroundStateContext) -> Dict[str, Any]:
        ground = ctx.decomposition.ground_state
        sz = fock_space.build_sz_operator(ctx.basis)
        summary = {
            "dimension": ctx.basis.dimension,
            "ground_energy_ha": ctx.ground_energy,
            "lowest_eigenvalues_ha": ctx.decomposition.eigenvalues[:10].tolist(),
            "max_residual": ctx.decomposition.max_residual,
            "sz_expectation": float(np.real(np.vdot(ground, sz.dot(ground)))),
        }
        if ctx.integrals.core_orbitals:
            occupation = fock_space.core_occupation(ctx.basis, ctx.integrals.core_indices)
            summary["core_occupation"] = float(np.sum(np.abs(ground) ** 2 * occupation))
        return summary

    # --------------------------------------------------------------- spectra

    def xas(self, ctx: GroundStateContext, config: RunConfig) -> SpectrumResult:
        polarizations = AXES if config.orientation_average else (config.epsilon_in,)
        excitation_max = (ctx.decomposition.eigenvalues[-1] - ctx.ground_energy) * HARTREE_TO_EV
        lo = config.xas_min_ev if config.xas_min_ev is not None else 0.0
        hi = config.xas_max_ev if config.xas_max_ev is not None else excitation_max + 5.0 * config.gamma_ev
        if not hi > lo:
            raise ValidationError("xas range", [lo, hi], "xas_max_ev must exceed xas_min_ev")
        grid = np.linspace(lo, hi, config.grid_points)

        spectra = []
        for eps in polarizations:
            dipole = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps, cvs=config.cvs)
            spectra.append(exact_spectra.xas_spectrum(
                ctx.decomposition, dipole, grid, ev_to_hartree(config.gamma_ev),
                metadata={"epsilon_in": list(eps), "cvs": config.cvs},
            ))
        result = spectra[0] if len(spectra) == 1 else orientation_average(spectra)
        logger.info(f"XAS: {len(result.sticks)} sticks, total weight {result.total_weight:.6e}")
        return result

    def rixs_exact_for_omega(
        self,
        ctx: GroundStateContext,
        config: RunConfig,
        omega_ev: float,
        eps_in: Sequence[float],
        eps_out: Sequence[float],
    ) -> SpectrumResult:
        d_in = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps_in, cvs=config.cvs)
        d_out = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps_out, cvs=config.cvs)
        window = ev_to_hartree(config.window_ev) if config.window_ev is not None else None
        amplitudes = exact_spectra.rixs_amplitudes(
            ctx.decomposition, d_in, d_out, ev_to_hartree(omega_ev), ev_to_hartree(config.gamma_ev),
            window=window, hamiltonian=ctx.hamiltonian,
        )
        grid = np.linspace(config.loss_min_ev, config.loss_max_ev, config.grid_points)
        return exact_spectra.rixs_spectrum(
            amplitudes, ctx.decomposition, ev_to_hartree(config.eta_ev), grid,
            metadata={
                "omega_in_ev": omega_ev,
                "gamma_ev": config.gamma_ev,
                "window_ev": config.window_ev,
                "epsilon_in": list(eps_in),
                "epsilon_out": list(eps_out),
                "cvs": config.cvs,
            },
        )

    def _exact_for_omega(self, ctx: GroundStateContext, config: RunConfig, omega_ev: float) -> SpectrumResult:
        if not config.orientation_average:
            return self.rixs_exact_for_omega(ctx, config, omega_ev, config.epsilon_in, config.epsilon_out)
        runs = [self.rixs_exact_for_omega(ctx, config, omega_ev, a, b) for a in AXES for b in AXES]
        return orientation_average(runs)

    async def rixs_exact(self, ctx: GroundStateContext, config: RunConfig) -> List[SpectrumResult]:
        """One spectrum per incident energy; the energies run concurrently."""
        self._check_omegas(config)
        tasks = [asyncio.to_thread(self._exact_for_omega, ctx, config, omega) for omega in config.omega_in_ev]
        results = await asyncio.gather(*tasks)
        logger.info(f"Exact RIXS done for {len(results)} incident energies")
        return list(results)

    # ------------------------------------------------------------ emulation

    def resolve_one_norm(self, ctx: Optional[GroundStateContext], config: RunConfig) -> Tuple[float, str]:
        if config.lambda_ha is not None:
            return config.lambda_ha, "config"
        if config.thc_factors is not None:
            return self._factor_one_norm(bliss_thc.load_factors(config.thc_factors)), config.thc_factors
        if ctx is None or not config.lambda_from_gershgorin:
            raise MissingInputError("lambda_ha", required_by="QPE emulation (or set lambda_from_gershgorin)")
        bound = float(np.max(np.asarray(abs(ctx.active_hamiltonian.matrix).sum(axis=1)).ravel()))
        logger.warning(f"No 1-norm given; using the Gershgorin bound {bound:.6f} Ha of the active Hamiltonian")
        return bound, "gershgorin"

    def dipole_one_norm(self, ctx: GroundStateContext, config: RunConfig, polarization: Sequence[float]) -> float:
        matrix = fock_space.masked_dipole(ctx.integrals, polarization, cvs=config.cvs)
        return resource_estimator.dipole_block_encoding(ctx.integrals.n_orb, config.aleph_mu, matrix)[1]

    def chebyshev_resolvent(
        self, ctx: GroundStateContext, config: RunConfig, omega_ev: float, one_norm: float
    ) -> ChebyshevResolvent:
        gamma = ev_to_hartree(config.gamma_ev)
        degree = resolvent_expander.select_degree(one_norm, gamma, mode=config.degree_mode, eps=config.degree_eps)
        return resolvent_expander.expand(
            one_norm, ev_to_hartree(omega_ev), gamma, ctx.active_decomposition.ground_energy, degree
        )

    def prepare_state(
        self,
        ctx: GroundStateContext,
        config: RunConfig,
        omega_ev: float,
        eps_in: Sequence[float],
        eps_out: Sequence[float],
        one_norm: float,
    ):
        d_in = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps_in, cvs=config.cvs)
        d_out = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps_out, cvs=config.cvs)
        omega, gamma = ev_to_hartree(omega_ev), ev_to_hartree(config.gamma_ev)
        resolvent = None
        if config.prep_method == "chebyshev":
            resolvent = self.chebyshev_resolvent(ctx, config, omega_ev, one_norm)
        lambda_d = self.dipole_one_norm(ctx, config, eps_out)
        return qpe_emulator.prepare_rixs_state(
            ctx.active_hamiltonian,
            ctx.active_decomposition,
            d_in,
            d_out,
            omega,
            gamma,
            method=config.prep_method,
            resolvent=resolvent,
            lambda_d=lambda_d if lambda_d > 0 else None,
        )

    def _qpe_pair(
        self,
        ctx: GroundStateContext,
        config: RunConfig,
        model: QpeModel,
        omega_ev: float,
        eps_in: Sequence[float],
        eps_out: Sequence[float],
        shots: int,
        seed_sequence: np.random.SeedSequence,
        state: Optional[RixsState] = None,
    ) -> Tuple[SpectrumResult, QpeSamples, Dict[str, Any]]:
        if state is None:
            state = self.prepare_state(ctx, config, omega_ev, eps_in, eps_out, model.one_norm)
        info: Dict[str, Any] = {"rixs_norm": state.norm, "dipole_norm": state.dipole_norm, "lambda_d": state.lambda_d}
        if state.lambda_d is not None and not state.zero_norm:
            probability = qpe_emulator.success_probability(state)
            info["success_probability"] = probability
            info["amplification_rounds"] = qpe_emulator.amplification_rounds(probability) if probability > 0 else None
        rng = np.random.default_rng(seed_sequence)
        result, samples = qpe_emulator.sample_spectrum(
            model, state, ctx.active_decomposition, shots, rng, bin_ev=config.bin_ev
        )
        return result, samples, info

    def rixs_qpe_for_omega(
        self,
        ctx: GroundStateContext,
        config: RunConfig,
        omega_ev: float,
        one_norm: float,
        seed_sequence: np.random.SeedSequence,
        reference: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> Tuple[SpectrumResult, QpeSamples]:
        n_omega = config.n_omega
        if n_omega is None:
            n_omega = resource_estimator.walk_calls(one_norm, ev_to_hartree(config.eta_ev))[1]
        model = QpeModel(
            n_omega=n_omega,
            window=config.qpe_window,
            kaiser_beta=config.kaiser_beta,
            one_norm=one_norm,
            e0=ctx.active_decomposition.ground_energy,
            axis=config.axis,
        )

        if not config.orientation_average:
            result, samples, info = self._qpe_pair(
                ctx, config, model, omega_ev, config.epsilon_in, config.epsilon_out, config.shots, seed_sequence
            )
        else:
            pairs = [(a, b) for a in AXES for b in AXES]
            states = [self.prepare_state(ctx, config, omega_ev, a, b, one_norm) for a, b in pairs]
            # relative weight of a pair is its total scattered intensity |R_ab|^2
            weights = [s.norm ** 2 for s in states]
            shots = allocate_shots(config.shots, weights)
            children = seed_sequence.spawn(len(pairs))
            runs, run_weights, all_samples = [], [], QpeSamples(bins=[], theta=[], omega_ev=[])
            for (a, b), state, n_shots, w, child in zip(pairs, states, shots, weights, children):
                if n_shots == 0:
                    continue
                run, samples, _ = self._qpe_pair(ctx, config, model, omega_ev, a, b, n_shots, child, state=state)
                runs.append(run)
                run_weights.append(w)
                all_samples.bins.extend(samples.bins)
                all_samples.theta.extend(samples.theta)
                all_samples.omega_ev.extend(samples.omega_ev)
            result = orientation_average(runs, np.asarray(run_weights) / sum(run_weights))
            samples = all_samples
            info = {"shots_per_pair": shots}

        result.metadata.update({"omega_in_ev": omega_ev, "prep_method": config.prep_method, "seed": config.seed})
        result.metadata.update(info)
        if reference is not None:
            result.metadata["tv_to_reference"] = qpe_emulator.compare_to_reference(result, reference)
            result.metadata["tv_sampling_scale"] = qpe_emulator.multinomial_tv_scale(np.asarray(result.intensity), config.shots)
        return result, samples

    async def rixs_qpe(
        self, ctx: GroundStateContext, config: RunConfig
    ) -> Tuple[float, List[Tuple[SpectrumResult, QpeSamples]]]:
        self._check_omegas(config)
        one_norm, source = self.resolve_one_norm(ctx, config)
        logger.info(f"QPE emulation with lambda = {one_norm:.6f} Ha ({source})")
        reference = qpe_emulator.load_reference(config.reference_spectrum) if config.reference_spectrum else None
        streams = np.random.SeedSequence(config.seed).spawn(len(config.omega_in_ev))
        tasks = [
            asyncio.to_thread(self.rixs_qpe_for_omega, ctx, config, omega, one_norm, stream, reference)
            for omega, stream in zip(config.omega_in_ev, streams)
        ]
        return one_norm, list(await asyncio.gather(*tasks))

    # ------------------------------------------------------------ estimation

    def fit_bliss_thc(self, integrals: IntegralSet, config: RunConfig) -> Tuple[BlissParams, ThcFactors, float]:
        return bliss_thc.optimize_bliss_thc(
            integrals,
            integrals.n_elec,
            n_thc=config.n_thc,
            rho=config.rho,
            mode=config.bliss_mode,
            max_iter=config.thc_max_iter,
            restarts=config.thc_restarts,
            seed=config.seed,
        )

    def estimate(
        self,
        config: RunConfig,
        ctx: Optional[GroundStateContext] = None,
        integrals: Optional[IntegralSet] = None,
    ) -> ResourceReport:
        """Resource report; N_a comes from the integrals when given, else from the config."""
        one_norm, source = self._estimate_one_norm(config)
        if integrals is None and ctx is not None:
            integrals = ctx.integrals
        n_orb = integrals.n_orb if integrals is not None else config.n_orb
        if config.sqrt_pr is not None:
            probability = config.sqrt_pr ** 2
        elif ctx is not None and ctx.integrals.dipole is not None:
            state = self.prepare_state(
                ctx, config.model_copy(update={"prep_method": "exact"}),
                config.omega_in_ev[0], config.epsilon_in, config.epsilon_out, one_norm,
            )
            probability = qpe_emulator.success_probability(state)
            logger.info(f"Estimated P_R = {probability:.6e} at omega_I = {config.omega_in_ev[0]} eV")
        else:
            probability = FALLBACK_SQRT_PR ** 2
            logger.warning(f"No success probability available; using sqrt(P_R) = {FALLBACK_SQRT_PR}")

        model = build_walk_model(
            config.walk_model, config.walk_toffoli, config.walk_qubits, config.target_toffoli
        )
        params = CostModelParams(
            aleph=config.aleph,
            beth=config.beth,
            aleph_mu=config.aleph_mu,
            n_thc=config.n_thc or 3 * n_orb,
            n_orb=n_orb,
            walk_model=model.name,
        )
        logger.info(f"Estimating resources with lambda = {one_norm:.6f} Ha ({source})")
        return resource_estimator.totals(
            params,
            one_norm,
            ev_to_hartree(config.eta_ev),
            ev_to_hartree(config.gamma_ev),
            probability,
            model,
            degree_mode=config.degree_mode,
            degree_eps=config.degree_eps,
            shots=config.shots,
        )

    def _estimate_one_norm(self, config: RunConfig) -> Tuple[float, str]:
        if config.lambda_ha is not None:
            return config.lambda_ha, "config"
        for path in (config.thc_factors, str(Path(config.output_dir) / THC_FACTORS_FILE)):
            if path is not None and Path(path).exists():
                return self._factor_one_norm(bliss_thc.load_factors(path)), path
        raise MissingInputError("lambda_ha", required_by="estimate (or run bliss-thc first)")

    @staticmethod
    def _factor_one_norm(factors: ThcFactors) -> float:
        if factors.one_norm is not None:
            return factors.one_norm
        return bliss_thc.one_norm(factors.t, factors.zeta)

    @staticmethod
    def _check_omegas(config: RunConfig) -> None:
        if not config.omega_in_ev:
            raise ValidationError("omega_in_ev", [], "at least one incident energy is required")

    # -------------------------------------------------------------- stages

    async def run_stage(
        self,
        stage: str,
        config: RunConfig,
        cache: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """Run one stage, write its artifacts and summary, and return its results."""
        if stage not in STAGES:
            raise ValidationError("command", stage, f"must be one of {STAGES}")
        cache = {} if cache is None else cache
        writer = ArtifactWriter(config.output_dir)
        writer.write_text("effective_config.env", self._config_text(config))

        if stage in ("parse-check", "ground-state", "xas", "rixs-exact", "rixs-qpe", "bliss-thc"):
            if "integrals" not in cache:
                cache["integrals"] = self.load_integrals(config)
        integrals: Optional[IntegralSet] = cache.get("integrals")

        def context() -> GroundStateContext:
            if "context" not in cache:
                cache["context"] = self.ground_state(integrals, config)
            return cache["context"]

        results: Dict[str, Any] = {}
        if stage == "parse-check":
            report = self.parse_check(integrals)
            results = report.model_dump()
            writer.write_json("parse_check.json", results)

        elif stage == "ground-state":
            results = self.ground_state_summary(context())
            writer.write_json("ground_state.json", results)
            if config.dump_operators:
                self._dump_operators(writer, context(), config)

        elif stage == "xas":
            spectrum = self.xas(context(), config)
            writer.write_spectrum_csv("xas.csv", spectrum)
            writer.write_json("xas.json", writer.spectrum_record(spectrum))
            results = {"n_sticks": len(spectrum.sticks), "total_weight": spectrum.total_weight}

        elif stage == "rixs-exact":
            spectra = await self.rixs_exact(context(), config)
            for omega, spectrum in zip(config.omega_in_ev, spectra):
                writer.write_spectrum_csv(f"rixs_exact_{format_energy_tag(omega)}.csv", spectrum)
            writer.write_json("rixs_exact.json", {"spectra": [writer.spectrum_record(s) for s in spectra]})
            results = {"total_weights": [s.total_weight for s in spectra]}

        elif stage == "rixs-qpe":
            one_norm, runs = await self.rixs_qpe(context(), config)
            for omega, (spectrum, samples) in zip(config.omega_in_ev, runs):
                tag = format_energy_tag(omega)
                writer.write_spectrum_csv(f"rixs_qpe_{tag}.csv", spectrum)
                writer.write_samples_csv(f"rixs_qpe_{tag}_samples.csv", samples)
                if config.dump_coefficients:
                    self._dump_coefficients(writer, context(), config, omega, one_norm)
            writer.write_json("rixs_qpe.json", {"spectra": [writer.spectrum_record(s) for s, _ in runs]})
            results = {"lambda_ha": one_norm, "shots": config.shots}

        elif stage == "bliss-thc":
            params, factors, one_norm = self.fit_bliss_thc(integrals, config)
            writer.write_text(THC_FACTORS_FILE, factors.to_json())
            results = {
                "lambda_ha": one_norm,
                "alpha1": params.alpha1,
                "alpha2": params.alpha2,
                "rank": factors.rank,
                "residual": factors.residual,
                "converged": factors.converged,
            }
            writer.write_json("bliss_thc.json", results)

        elif stage == "estimate":
            ctx = None
            if config.fcidump is not None:
                if "integrals" not in cache:
                    cache["integrals"] = self.load_integrals(config)
                integrals = cache["integrals"]
                if config.sqrt_pr is None and integrals.dipole is not None:
                    ctx = context()
            report = self.estimate(config, ctx, integrals)
            results = report.model_dump()
            writer.write_json("resources.json", results)
            writer.write_text("resources.txt", self._report_text(report))

        writer.write_summary(stage, "ok", self._config_record(config), results)
        return results

    async def run_full(self, config: RunConfig) -> Dict[str, Dict[str, Any]]:
        cache: Dict[str, Any] = {}
        return {stage: await self.run_stage(stage, config, cache) for stage in STAGES}

    def _dump_operators(self, writer: ArtifactWriter, ctx: GroundStateContext, config: RunConfig) -> None:
        writer.write_text("hamiltonian.op", ctx.hamiltonian.to_text())
        writer.write_text("active_space.fcidump", integral_parser.write_fcidump(ctx.integrals))
        if ctx.integrals.dipole is None:
            return
        writer.write_text("active_space.dip", integral_parser.write_dipole_sidecar(ctx.integrals))
        for label, eps in (("in", config.epsilon_in), ("out", config.epsilon_out)):
            dipole = fock_space.build_cvs_dipole(ctx.integrals, ctx.basis, eps, cvs=config.cvs)
            writer.write_text(f"dipole_{label}.op", dipole.to_text())

    def _dump_coefficients(
        self, writer: ArtifactWriter, ctx: GroundStateContext, config: RunConfig, omega_ev: float, one_norm: float
    ) -> None:
        resolvent = self.chebyshev_resolvent(ctx, config, omega_ev, one_norm)
        tag = format_energy_tag(omega_ev)
        writer.write_text(f"chebyshev_{tag}.csv", resolvent_expander.coefficient_table(resolvent))
        laurent = resolvent_expander.coefficient_table(resolvent, laurent=True)
        writer.write_text(f"chebyshev_{tag}_laurent.csv", laurent)
        degrees = sorted({max(resolvent.degree // d, 1) for d in (8, 4, 2, 1)})
        scan = resolvent_expander.error_scan(
            resolvent.one_norm, resolvent.omega_in, resolvent.gamma, resolvent.e0, degrees
        )
        writer.write_text(f"chebyshev_{tag}_errors.csv", resolvent_expander.error_table(scan))
        realizable, modulus = resolvent_expander.gqsp_realizable(resolvent)
        logger.info(f"Chebyshev resolvent at {tag}: degree {resolvent.degree}, max |P| {modulus:.6f}, "
                    f"realizable {realizable}")

    @staticmethod
    def _config_record(config: RunConfig) -> Dict[str, Any]:
        return {k: v for k, v in config.model_dump().items() if v is not None}

    @staticmethod
    def _config_text(config: RunConfig) -> str:
        return config.dump_text()

    @staticmethod
    def _report_text(report: ResourceReport) -> str:
        rows = [
            ("1-norm (Ha)", f"{report.one_norm:.6g}"),
            ("K_G", str(report.degree)),
            ("sqrt(P_R)", f"{report.sqrt_success_probability:.3g}"),
            ("K_A", str(report.amplification_rounds)),
            ("N(eps)", str(report.walk_calls)),
            ("n_omega", str(report.n_omega)),
            ("n_D", str(report.n_dipole)),
            ("n_W", str(report.n_walk)),
            ("T_W", f"{report.walk_toffoli:.6g}"),
            ("Logical qubits", str(report.n_total)),
            ("Toffoli gates", f"{report.toffoli_total:.3g}"),
            ("Prep/QPE calls", f"{report.prep_to_qpe_ratio:.3g}"),
            ("Walk model", report.walk_model),
        ]
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


pipeline = RixsPipeline()
