import json
from pathlib import Path

import numpy as np
import pytest

from app.config import RunConfig
from app.core.exceptions import MissingInputError, ValidationError, ZeroNormError
from app.core.units import ev_to_hartree
from app.schemas import SpectrumResult
from app.services.integral_parser import integral_parser
from app.services.pipeline import STAGES, allocate_shots, orientation_average, pipeline
from app.services.resolvent import resolvent_expander


def _config(toy_files, output_dir, **overrides) -> RunConfig:
    fcidump, dipole = toy_files
    values = dict(
        fcidump=fcidump,
        dipole=dipole,
        output_dir=str(output_dir),
        omega_in_ev=[27.0],
        lambda_ha=5.0,
        n_omega=8,
        sqrt_pr=0.06,
        shots=200,
        grid_points=201,
        thc_max_iter=30,
        n_thc=2,
    )
    values.update(overrides)
    return RunConfig.load(**values)


def _spectrum(x, intensity, sticks):
    return SpectrumResult(kind="rixs", x_ev=x, intensity=intensity, sticks=sticks)


def test_orientation_average_on_shared_grid():
    first = _spectrum([0.0, 1.0], [1.0, 3.0], [(0.5, 2.0)])
    second = _spectrum([0.0, 1.0], [3.0, 1.0], [(0.5, 2.0), (0.8, 1.0)])

    average = orientation_average([first, second])

    assert average.intensity == [2.0, 2.0]
    assert average.sticks == [(0.5, 2.0), (0.8, 0.5)]
    assert average.metadata["n_polarization_pairs"] == 2


def test_orientation_average_with_weights_on_different_grids():
    first = _spectrum([0.0, 1.0], [1.0, 1.0], [])
    second = _spectrum([1.0, 2.0], [1.0, 1.0], [])

    average = orientation_average([first, second], [0.25, 0.75])

    assert average.x_ev == [0.0, 1.0, 2.0]
    assert average.intensity == pytest.approx([0.25, 1.0, 0.75])


def test_orientation_average_rejects_bad_input():
    with pytest.raises(ValidationError):
        orientation_average([])
    with pytest.raises(ValidationError):
        orientation_average([_spectrum([0.0], [1.0], [])], [-1.0])


def test_allocate_shots():
    assert allocate_shots(10, [1.0, 1.0, 1.0]) == [4, 3, 3]
    assert allocate_shots(2000, [0.0, 3.0, 1.0]) == [0, 1500, 500]
    assert sum(allocate_shots(7, [0.2, 0.5, 0.3])) == 7
    with pytest.raises(ZeroNormError):
        allocate_shots(5, [0.0, 0.0])


def test_parse_check_of_toy_files(toy_files, tmp_path):
    config = _config(toy_files, tmp_path)
    report = pipeline.parse_check(pipeline.load_integrals(config))

    assert report.fci_dimension == 4
    assert report.n_orb == 2
    assert report.core_orbitals == [1]
    assert report.has_dipole
    assert report.e_frozen == -3.5


def test_missing_fcidump(tmp_path):
    with pytest.raises(MissingInputError):
        pipeline.load_integrals(RunConfig.load(output_dir=str(tmp_path)))


def test_ground_state_summary(toy_files, tmp_path):
    config = _config(toy_files, tmp_path)
    ctx = pipeline.ground_state(pipeline.load_integrals(config), config)
    summary = pipeline.ground_state_summary(ctx)

    assert summary["dimension"] == 4
    assert summary["sz_expectation"] == pytest.approx(0.0, abs=1e-12)
    assert ctx.active_decomposition.ground_energy == pytest.approx(ctx.ground_energy + 3.5)


@pytest.mark.asyncio
async def test_estimate_stage_reads_factor_file(toy_files, tmp_path):
    config = _config(toy_files, tmp_path, lambda_ha=None, degree_mode="analytic")
    with pytest.raises(MissingInputError):
        await pipeline.run_stage("estimate", config)

    await pipeline.run_stage("bliss-thc", config)
    results = await pipeline.run_stage("estimate", config)

    factors = json.loads((tmp_path / "thc_factors.json").read_text(encoding="utf-8"))
    assert results["one_norm"] == pytest.approx(factors["one_norm"])
    assert (tmp_path / "resources.txt").exists()


@pytest.mark.asyncio
async def test_qpe_orientation_average_uses_all_shots(toy_files, tmp_path):
    config = _config(toy_files, tmp_path, orientation_average=True)
    ctx = pipeline.ground_state(pipeline.load_integrals(config), config)

    _, runs = await pipeline.rixs_qpe(ctx, config)

    spectrum, samples = runs[0]
    assert len(samples.bins) == 200
    assert sum(spectrum.metadata["shots_per_pair"]) == 200
    assert sum(spectrum.intensity) == pytest.approx(1.0)


@pytest.mark.asyncio
async def test_unknown_stage(tmp_path):
    with pytest.raises(ValidationError):
        await pipeline.run_stage("everything", RunConfig.load(output_dir=str(tmp_path)))


@pytest.mark.asyncio
async def test_full_run_equals_individual_stages(toy_files, tmp_path):
    full_dir = tmp_path / "full"
    staged_dir = tmp_path / "staged"

    await pipeline.run_full(_config(toy_files, full_dir))
    for stage in STAGES:
        await pipeline.run_stage(stage, _config(toy_files, staged_dir))

    full_files = sorted(p.name for p in full_dir.iterdir())
    staged_files = sorted(p.name for p in staged_dir.iterdir())
    assert full_files == staged_files
    assert "rixs_exact_27.00eV.csv" in full_files
    assert "rixs_qpe_27.00eV_samples.csv" in full_files
    assert {f"summary_{stage}.json" for stage in STAGES} <= set(full_files)

    for name in ("rixs_exact_27.00eV.csv", "xas.csv", "rixs_qpe_27.00eV_samples.csv", "resources.json"):
        assert (full_dir / name).read_bytes() == (staged_dir / name).read_bytes()

    exact = np.loadtxt(Path(full_dir / "rixs_exact_27.00eV.csv"), delimiter=",", skiprows=1)
    assert exact.shape == (201, 2)
    assert np.all(exact[:, 1] >= 0.0)


@pytest.mark.asyncio
async def test_qpe_orientation_average_prepares_each_pair_once(toy_files, tmp_path, monkeypatch):
    config = _config(toy_files, tmp_path, orientation_average=True)
    ctx = pipeline.ground_state(pipeline.load_integrals(config), config)
    prepare = pipeline.prepare_state
    calls = []

    def counting_prepare(*args, **kwargs):
        calls.append(args[3:5])
        return prepare(*args, **kwargs)

    monkeypatch.setattr(pipeline, "prepare_state", counting_prepare)

    await pipeline.rixs_qpe(ctx, config)

    assert len(calls) == 9
    assert len(set(calls)) == 9


@pytest.mark.asyncio
async def test_qpe_needs_a_supplied_one_norm(toy_files, tmp_path):
    config = _config(toy_files, tmp_path, lambda_ha=None)
    ctx = pipeline.ground_state(pipeline.load_integrals(config), config)

    with pytest.raises(MissingInputError):
        await pipeline.rixs_qpe(ctx, config)

    opted_in = config.model_copy(update={"lambda_from_gershgorin": True})
    one_norm, runs = await pipeline.rixs_qpe(ctx, opted_in)

    bound = np.max(np.asarray(abs(ctx.active_hamiltonian.matrix).sum(axis=1)).ravel())
    assert one_norm == pytest.approx(bound)
    assert len(runs) == 1


def _operator_from_text(path, dim):
    entries = np.loadtxt(path, ndmin=2)
    dense = np.zeros((dim, dim), dtype=complex)
    for row, col, re, im in entries:
        dense[int(row), int(col)] += re + 1j * im
    return dense


@pytest.mark.asyncio
async def test_ground_state_stage_dumps_operators(toy_files, tmp_path):
    config = _config(toy_files, tmp_path, dump_operators=True)
    cache = {}

    await pipeline.run_stage("ground-state", config, cache)

    ctx = cache["context"]
    dim = ctx.basis.dimension
    assert np.allclose(_operator_from_text(tmp_path / "hamiltonian.op", dim), ctx.hamiltonian.to_dense(), atol=1e-14)
    assert (tmp_path / "dipole_in.op").exists() and (tmp_path / "dipole_out.op").exists()

    again = integral_parser.parse_fcidump((tmp_path / "active_space.fcidump").read_text(encoding="utf-8"))
    again = integral_parser.parse_dipole_sidecar((tmp_path / "active_space.dip").read_text(encoding="utf-8"), again)
    assert np.allclose(again.h, ctx.integrals.h, atol=1e-14)
    assert np.allclose(again.v, ctx.integrals.v, atol=1e-14)
    assert np.allclose(again.dipole, ctx.integrals.dipole, atol=1e-14)
    assert again.core_orbitals == ctx.integrals.core_orbitals

    summary = json.loads((tmp_path / "summary_ground-state.json").read_text(encoding="utf-8"))
    assert "hamiltonian.op" in summary["artifacts"]


@pytest.mark.asyncio
async def test_operators_are_not_dumped_by_default(toy_files, tmp_path):
    await pipeline.run_stage("ground-state", _config(toy_files, tmp_path))
    assert not (tmp_path / "hamiltonian.op").exists()


@pytest.mark.asyncio
async def test_qpe_stage_dumps_resolvent_coefficients(toy_files, tmp_path):
    config = _config(toy_files, tmp_path, dump_coefficients=True)

    await pipeline.run_stage("rixs-qpe", config)

    degree = resolvent_expander.select_degree(5.0, ev_to_hartree(config.gamma_ev))
    chebyshev = (tmp_path / "chebyshev_27.00eV.csv").read_text(encoding="utf-8").splitlines()
    laurent = (tmp_path / "chebyshev_27.00eV_laurent.csv").read_text(encoding="utf-8").splitlines()
    errors = np.loadtxt(tmp_path / "chebyshev_27.00eV_errors.csv", delimiter=",", skiprows=1)

    assert chebyshev[0] == "k,re,im"
    assert len(chebyshev) == degree + 2
    assert len(laurent) == 2 * degree + 2
    assert errors[-1, 0] == degree
    assert errors[-1, 1] < errors[0, 1]
