import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import chi2

from app.core.exceptions import (
    DarkGroundStateError,
    PhysicsParameterError,
    SpectralBoundError,
    ValidationError,
    ZeroNormError,
)
from app.core.units import HARTREE_TO_EV
from app.schemas import QpeModel, RixsState, SparseOperator, SpectralDecomposition, SpectrumResult
from app.services.exact_spectra import exact_spectra
from app.services.qpe_emulator import qpe_emulator
from app.services.resolvent import resolvent_expander


def _operator(matrix) -> SparseOperator:
    matrix = sp.csr_matrix(matrix, dtype=complex)
    return SparseOperator(dimension=matrix.shape[0], matrix=matrix, hermitian=True)


def _two_level():
    decomp = SpectralDecomposition(eigenvalues=np.array([-0.5, 0.2]), eigenvectors=np.eye(2, dtype=complex))
    state = RixsState(vector=np.array([0.6, 0.8], dtype=complex), norm=1.0, dipole_norm=1.0, gamma=0.1)
    return decomp, state


@pytest.mark.parametrize("probability, rounds", [(0.06 ** 2, 13), (1.0, 0), (0.25, 1)])
def test_amplification_rounds(probability, rounds):
    assert qpe_emulator.amplification_rounds(probability) == rounds


def test_amplification_rounds_rejects_zero():
    with pytest.raises(PhysicsParameterError):
        qpe_emulator.amplification_rounds(0.0)


def test_uniform_window_on_dyadic_phase():
    model = QpeModel(n_omega=4, window="uniform", one_norm=1.0)
    energy = math.cos(2.0 * math.pi * 3 / 16)

    probabilities = qpe_emulator.qpe_distribution(model, np.array([1.0]), np.array([energy]))

    assert probabilities[3] == pytest.approx(1.0)
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def test_distribution_is_linear_in_weights():
    model = QpeModel(n_omega=5, window="uniform", one_norm=1.0)
    energies = np.array([0.31, -0.47])

    mixed = qpe_emulator.qpe_distribution(model, np.array([0.5, 0.5]), energies)
    first = qpe_emulator.qpe_distribution(model, np.array([1.0]), energies[:1])
    second = qpe_emulator.qpe_distribution(model, np.array([1.0]), energies[1:])

    assert np.allclose(mixed, 0.5 * (first + second), atol=1e-14)


def test_kaiser_distribution_is_normalized():
    model = QpeModel(n_omega=6, window="kaiser", one_norm=2.0)
    probabilities = qpe_emulator.qpe_distribution(model, np.array([0.2, 0.8]), np.array([0.37, -1.2]))
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def test_kaiser_window_concentrates_on_true_bin():
    model = QpeModel(n_omega=6, window="kaiser", one_norm=1.0)
    energy = math.cos(2.0 * math.pi * 10 / 64)

    probabilities = qpe_emulator.qpe_distribution(model, np.array([1.0]), np.array([energy]))

    assert np.argmax(probabilities) == 10
    assert probabilities[5:16].sum() > 1.0 - 1e-4


def test_distribution_checks_inputs():
    model = QpeModel(n_omega=3, window="uniform", one_norm=1.0)
    with pytest.raises(ValidationError):
        qpe_emulator.qpe_distribution(model, np.array([0.5]), np.array([0.1]))
    with pytest.raises(SpectralBoundError):
        qpe_emulator.qpe_distribution(model, np.array([1.0]), np.array([1.5]))
    with pytest.raises(ValidationError):
        qpe_emulator.qpe_distribution(model.model_copy(update={"window": "hann"}), np.array([1.0]), np.array([0.1]))


def test_bin_energies_on_both_axes():
    model = QpeModel(n_omega=2, one_norm=2.0, e0=-0.5)
    assert np.allclose(qpe_emulator.bin_energies(model), [2.5, 0.5, -1.5, 0.5])

    shifted = model.model_copy(update={"axis": "ground_plus_energy"})
    assert np.allclose(qpe_emulator.bin_energies(shifted), [1.5, -0.5, -2.5, -0.5])


def test_sampling_is_deterministic_per_seed():
    decomp, state = _two_level()
    model = QpeModel(n_omega=5, one_norm=1.0, e0=-0.5)

    first, samples_a = qpe_emulator.sample_spectrum(model, state, decomp, 500, np.random.default_rng(7))
    second, samples_b = qpe_emulator.sample_spectrum(model, state, decomp, 500, np.random.default_rng(7))

    assert samples_a.bins == samples_b.bins
    assert first.intensity == second.intensity
    assert len(samples_a.bins) == 500
    assert sum(first.intensity) == pytest.approx(1.0)


def test_sampled_histogram_within_multinomial_noise():
    decomp, state = _two_level()
    model = QpeModel(n_omega=4, one_norm=1.0, e0=-0.5)
    weights = np.abs(state.vector) ** 2
    probabilities = qpe_emulator.qpe_distribution(model, weights, decomp.eigenvalues)

    _, samples = qpe_emulator.sample_spectrum(model, state, decomp, 2000, np.random.default_rng(3))

    empirical = np.bincount(samples.bins, minlength=model.n_bins) / 2000
    tv = qpe_emulator.total_variation(empirical, probabilities)
    assert tv < 3.0 * qpe_emulator.multinomial_tv_scale(probabilities, 2000)


def test_analytic_mode_has_unit_weight_and_no_samples():
    decomp, state = _two_level()
    model = QpeModel(n_omega=6, one_norm=1.0, e0=-0.5)

    result, samples = qpe_emulator.sample_spectrum(
        model, state, decomp, 1, np.random.default_rng(0), bin_ev=0.5, analytic=True
    )

    assert samples is None
    assert sum(result.intensity) == pytest.approx(1.0, abs=1e-12)
    assert result.metadata["shots"] is None
    assert result.kind == "qpe"


def test_zero_shots_rejected():
    decomp, state = _two_level()
    model = QpeModel(n_omega=3, one_norm=1.0)
    with pytest.raises(PhysicsParameterError):
        qpe_emulator.sample_spectrum(model, state, decomp, 0, np.random.default_rng(0))


def test_success_probability_matches_direct_formula(hermitian_matrix):
    h = hermitian_matrix(30, seed=11)
    d_in = hermitian_matrix(30, seed=12)
    d_out = hermitian_matrix(30, seed=13)
    decomp = exact_spectra.diagonalize(_operator(h))
    omega, gamma = 0.6, 0.05

    state = qpe_emulator.prepare_rixs_state(
        _operator(h), decomp, _operator(d_in), _operator(d_out), omega, gamma, lambda_d=100.0
    )

    ground = decomp.ground_state
    dipole_state = d_in @ ground
    r = d_out.conj().T @ np.linalg.solve((omega + decomp.ground_energy + 1j * gamma) * np.eye(30) - h, dipole_state)
    expected = (gamma * np.linalg.norm(r) / (100.0 * np.linalg.norm(dipole_state))) ** 2

    assert qpe_emulator.success_probability(state) == pytest.approx(expected, rel=1e-8)
    assert np.linalg.norm(state.vector) == pytest.approx(1.0)


def test_success_probability_above_one_is_rejected():
    _, state = _two_level()
    with pytest.raises(PhysicsParameterError):
        qpe_emulator.success_probability(state.model_copy(update={"norm": 50.0}), lambda_d=1.0)
    with pytest.raises(ZeroNormError):
        qpe_emulator.success_probability(state)


def test_chebyshev_preparation_matches_exact(hermitian_matrix):
    h = hermitian_matrix(30, seed=14)
    d_in = _operator(hermitian_matrix(30, seed=15))
    d_out = _operator(hermitian_matrix(30, seed=16))
    hamiltonian = _operator(h)
    decomp = exact_spectra.diagonalize(hamiltonian)
    gamma = 0.05
    omega = decomp.eigenvalues[10] - decomp.ground_energy

    degree = resolvent_expander.select_degree(1.0, gamma, mode="analytic", eps=1e-4)
    resolvent = resolvent_expander.expand(1.0, omega, gamma, decomp.ground_energy, degree)

    exact = qpe_emulator.prepare_rixs_state(hamiltonian, decomp, d_in, d_out, omega, gamma)
    approximate = qpe_emulator.prepare_rixs_state(
        hamiltonian, decomp, d_in, d_out, omega, gamma, method="chebyshev", resolvent=resolvent
    )

    fidelity = abs(np.vdot(exact.vector, approximate.vector)) ** 2
    assert fidelity > 1.0 - 1e-5
    assert approximate.method == "chebyshev"


def test_vanishing_outgoing_dipole_flags_zero_norm(hermitian_matrix):
    h = _operator(hermitian_matrix(8, seed=17))
    decomp = exact_spectra.diagonalize(h)
    d_in = _operator(hermitian_matrix(8, seed=18))
    d_out = _operator(np.zeros((8, 8)))

    state = qpe_emulator.prepare_rixs_state(h, decomp, d_in, d_out, 0.4, 0.05)

    assert state.zero_norm
    with pytest.raises(ZeroNormError):
        qpe_emulator.sample_spectrum(QpeModel(n_omega=3, one_norm=1.0), state, decomp, 10, np.random.default_rng(0))


def test_dark_ground_state(hermitian_matrix):
    h = _operator(hermitian_matrix(8, seed=19))
    decomp = exact_spectra.diagonalize(h)
    zero = _operator(np.zeros((8, 8)))
    with pytest.raises(DarkGroundStateError):
        qpe_emulator.prepare_rixs_state(h, decomp, zero, zero, 0.4, 0.05)


def test_unknown_preparation_method(hermitian_matrix):
    h = _operator(hermitian_matrix(4, seed=20))
    decomp = exact_spectra.diagonalize(h)
    d = _operator(np.eye(4))
    with pytest.raises(ValidationError):
        qpe_emulator.prepare_rixs_state(h, decomp, d, d, 0.4, 0.05, method="trotter")
    with pytest.raises(ValidationError):
        qpe_emulator.prepare_rixs_state(h, decomp, d, d, 0.4, 0.05, method="chebyshev")


def test_histogram_aligns_to_bin_width():
    centers, counts = qpe_emulator.histogram(np.array([0.05, 0.15, 0.45]), np.array([0.2, 0.3, 0.5]), 0.2)
    assert np.allclose(centers, [0.1, 0.3, 0.5])
    assert np.allclose(counts, [0.5, 0.0, 0.5])


def test_total_variation():
    assert qpe_emulator.total_variation([1.0, 0.0], [0.0, 2.0]) == pytest.approx(1.0)
    assert qpe_emulator.total_variation([1.0, 1.0], [2.0, 2.0]) == pytest.approx(0.0)


def test_load_reference_and_compare(tmp_path):
    path = tmp_path / "reference.csv"
    path.write_text("omega_eV,intensity\n# comment\n0.1,1.0\n0.3,3.0\n", encoding="utf-8")

    omega, intensity = qpe_emulator.load_reference(str(path))

    assert np.allclose(omega, [0.1, 0.3])
    assert np.allclose(intensity, [0.25, 0.75])

    result = SpectrumResult(kind="qpe", x_ev=[0.1, 0.3], intensity=[1.0, 3.0])
    assert qpe_emulator.compare_to_reference(result, (omega, intensity)) == pytest.approx(0.0, abs=1e-12)


def test_load_reference_without_rows(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("omega_eV,intensity\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        qpe_emulator.load_reference(str(path))


def test_samples_report_energy_loss_axis():
    decomp, state = _two_level()
    model = QpeModel(n_omega=4, window="uniform", one_norm=1.0, e0=-0.5)

    _, samples = qpe_emulator.sample_spectrum(model, state, decomp, 50, np.random.default_rng(3))

    axis_ev = qpe_emulator.bin_energies(model) * HARTREE_TO_EV
    assert all(value == pytest.approx(axis_ev[b]) for b, value in zip(samples.bins, samples.omega_ev))


def test_chebyshev_state_matches_sparse_solve_elementwise(hermitian_matrix):
    hamiltonian = _operator(hermitian_matrix(40, seed=31))
    d_in = _operator(hermitian_matrix(40, seed=32))
    d_out = _operator(hermitian_matrix(40, seed=33))
    decomp = exact_spectra.diagonalize(hamiltonian)
    gamma = 0.05
    omega = decomp.eigenvalues[20] - decomp.ground_energy

    degree = resolvent_expander.select_degree(1.0, gamma, mode="analytic", eps=1e-10)
    resolvent = resolvent_expander.expand(1.0, omega, gamma, decomp.ground_energy, degree)

    exact = qpe_emulator.prepare_rixs_state(hamiltonian, decomp, d_in, d_out, omega, gamma)
    approximate = qpe_emulator.prepare_rixs_state(
        hamiltonian, decomp, d_in, d_out, omega, gamma, method="chebyshev", resolvent=resolvent
    )

    scaled_exact = gamma * exact.norm * exact.vector
    scaled_approximate = gamma * approximate.norm * approximate.vector
    assert np.linalg.norm(scaled_approximate - scaled_exact) < 1e-6 * np.linalg.norm(scaled_exact)
    assert approximate.dipole_norm == pytest.approx(exact.dipole_norm)


@pytest.mark.parametrize("dim, seed", [(20, 34), (120, 35), (200, 36)])
def test_exact_state_coefficients_are_kramers_heisenberg_amplitudes(hermitian_matrix, dim, seed):
    hamiltonian = _operator(hermitian_matrix(dim, seed=seed))
    d_in = _operator(hermitian_matrix(dim, seed=seed + 100))
    d_out = _operator(hermitian_matrix(dim, seed=seed + 200))
    decomp = exact_spectra.diagonalize(hamiltonian)
    gamma = 0.05
    omega = decomp.eigenvalues[dim // 2] - decomp.ground_energy

    state = qpe_emulator.prepare_rixs_state(hamiltonian, decomp, d_in, d_out, omega, gamma)
    amplitudes = exact_spectra.rixs_amplitudes(decomp, d_in, d_out, omega, gamma, window=None)

    coefficients = gamma * state.norm * (decomp.eigenvectors.conj().T @ state.vector)
    expected = gamma * np.array([a.amplitude for a in amplitudes])
    assert np.max(np.abs(coefficients - expected)) < 1e-10


def _binned_by_index(centers, weights, bin_ev):
    """Map histogram output onto integer bin indices so grids of different extent line up."""
    out = {}
    for center, weight in zip(centers, weights):
        key = int(math.floor(center / bin_ev))
        out[key] = out.get(key, 0.0) + float(weight)
    return out


def _aligned(first, second):
    keys = sorted(set(first) | set(second))
    return np.array([first.get(k, 0.0) for k in keys]), np.array([second.get(k, 0.0) for k in keys])


def _random_twenty_state_instance(seed=40, bin_ev=0.2):
    """20 eigenstates, excited losses kept inside their energy bins, no elastic weight."""
    rng = np.random.default_rng(seed)
    e0 = -1.0
    slots = rng.choice(np.arange(1, 60), size=19, replace=False)
    losses_ev = (slots + rng.uniform(0.3, 0.7, size=19)) * bin_ev
    energies = np.concatenate([[e0], e0 + np.sort(losses_ev) / HARTREE_TO_EV])

    q, _ = np.linalg.qr(rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20)))
    coefficients = rng.normal(size=20) + 1j * rng.normal(size=20)
    coefficients[0] = 0.0
    coefficients /= np.linalg.norm(coefficients)

    decomp = SpectralDecomposition(eigenvalues=energies, eigenvectors=q)
    state = RixsState(vector=q @ coefficients, norm=1.0, dipole_norm=1.0, gamma=0.1)
    return decomp, state, np.abs(coefficients) ** 2


def test_kaiser_sixteen_bit_histogram_matches_exact_sticks_at_fifth_ev_bins():
    bin_ev = 0.2
    decomp, state, weights = _random_twenty_state_instance(bin_ev=bin_ev)
    model = QpeModel(n_omega=16, window="kaiser", one_norm=2.0, e0=decomp.ground_energy)

    emulated, _ = qpe_emulator.sample_spectrum(model, state, decomp, 1, np.random.default_rng(0), bin_ev=bin_ev,
                                               analytic=True)
    losses_ev = (decomp.eigenvalues - decomp.ground_energy) * HARTREE_TO_EV
    centers, sticks = qpe_emulator.histogram(losses_ev, weights, bin_ev)

    p, q = _aligned(
        _binned_by_index(emulated.x_ev, emulated.intensity, bin_ev), _binned_by_index(centers, sticks, bin_ev)
    )
    assert qpe_emulator.total_variation(p, q) < 1e-3


def test_two_thousand_shot_histograms_follow_multinomial_statistics():
    bin_ev, shots = 0.2, 2000
    decomp, state, _ = _random_twenty_state_instance(seed=41, bin_ev=bin_ev)
    model = QpeModel(n_omega=16, window="kaiser", one_norm=2.0, e0=decomp.ground_energy)
    analytic, _ = qpe_emulator.sample_spectrum(model, state, decomp, 1, np.random.default_rng(0), bin_ev=bin_ev,
                                               analytic=True)
    expected = _binned_by_index(analytic.x_ev, analytic.intensity, bin_ev)

    distances, scales, rejections = [], [], 0
    for seed in range(100):
        sampled, _ = qpe_emulator.sample_spectrum(model, state, decomp, shots, np.random.default_rng(seed),
                                                  bin_ev=bin_ev)
        observed, probabilities = _aligned(_binned_by_index(sampled.x_ev, sampled.intensity, bin_ev), expected)
        distances.append(qpe_emulator.total_variation(observed, probabilities))
        scales.append(qpe_emulator.multinomial_tv_scale(probabilities, shots))

        counts = np.rint(observed * shots)
        means = probabilities * shots
        kept = means >= 5.0
        statistic = float(np.sum((counts[kept] - means[kept]) ** 2 / means[kept]))
        rest_mean, rest_count = means[~kept].sum(), counts[~kept].sum()
        categories = int(kept.sum())
        if rest_mean >= 5.0:
            statistic += (rest_count - rest_mean) ** 2 / rest_mean
            categories += 1
        if statistic > chi2.ppf(0.999, categories - 1):
            rejections += 1

    distances, scales = np.array(distances), np.array(scales)
    assert np.all(distances < 3.0 * scales)
    assert distances.mean() < scales.mean()
    assert rejections <= 2
