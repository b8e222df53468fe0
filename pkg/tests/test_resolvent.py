import numpy as np
import pytest
import scipy.sparse as sp
from numpy.polynomial.chebyshev import chebval

from app.core.exceptions import (
    CalibrationRangeError,
    DimensionMismatchError,
    PhysicsParameterError,
    SpectralBoundError,
)
from app.core.units import ev_to_hartree
from app.schemas import ChebyshevResolvent, SparseOperator
from app.services.resolvent import resolvent_expander

GAMMA = ev_to_hartree(0.3)


def _operator(matrix: np.ndarray) -> SparseOperator:
    return SparseOperator(dimension=len(matrix), matrix=sp.csr_matrix(matrix, dtype=complex), hermitian=True)


@pytest.mark.parametrize("one_norm, expected", [(1.0, 472), (105.37, 94394)])
def test_calibrated_degree(one_norm, expected):
    assert resolvent_expander.select_degree(one_norm, GAMMA) == expected


def test_analytic_degree():
    assert resolvent_expander.select_degree(1.0, GAMMA, mode="analytic", eps=1e-2) == 890


def test_calibrated_degree_below_range():
    with pytest.raises(CalibrationRangeError):
        resolvent_expander.select_degree(0.5, GAMMA)


def test_log_base_changes_calibrated_degree():
    natural = resolvent_expander.select_degree(10.0, GAMMA)
    decimal = resolvent_expander.select_degree(10.0, GAMMA, log_base="10")
    assert decimal == 10 * (472 + 91)
    assert natural > decimal


def test_degree_472_meets_one_percent():
    resolvent = resolvent_expander.expand(1.0, 0.5, GAMMA, -0.5, 472)
    assert resolvent_expander.expansion_error(resolvent) < 1e-2
    # on resonance f = -i
    assert abs(resolvent.evaluate(np.array([0.0]))[0] + 1j) < 1e-2


def test_error_decreases_with_degree():
    scan = resolvent_expander.error_scan(1.0, 0.5, GAMMA, -0.5, [50, 100, 200, 400, 800])
    errors = [e for _, e in scan]
    assert all(b <= a + 1e-13 for a, b in zip(errors, errors[1:]))


def test_non_positive_degree():
    with pytest.raises(PhysicsParameterError):
        resolvent_expander.expand(1.0, 0.5, GAMMA, -0.5, 0)


def test_apply_matches_dense_polynomial_and_linear_solve(hermitian_matrix):
    h = hermitian_matrix(50, seed=21)
    gamma, one_norm = 0.05, 1.0
    eigenvalues, vectors = np.linalg.eigh(h)
    e0 = eigenvalues[0]
    omega = eigenvalues[20] - e0
    degree = resolvent_expander.select_degree(one_norm, gamma, mode="analytic", eps=1e-3)
    resolvent = resolvent_expander.expand(one_norm, omega, gamma, e0, degree)
    v = np.random.default_rng(5).normal(size=50).astype(complex)

    result = resolvent_expander.apply(resolvent, _operator(h), v)

    polynomial = vectors @ (chebval(eigenvalues / one_norm, resolvent.coefficients) * (vectors.T @ v))
    assert np.linalg.norm(result - polynomial) < 1e-11 * np.linalg.norm(polynomial)

    exact = gamma * np.linalg.solve((omega + e0 + 1j * gamma) * np.eye(50) - h, v)
    bound = 1.01 * resolvent_expander.expansion_error(resolvent) * np.linalg.norm(v)
    assert np.linalg.norm(result - exact) <= bound + 1e-12
    assert np.linalg.norm(result - exact) / np.linalg.norm(exact) < 1e-3


def test_apply_on_eigenvector(hermitian_matrix):
    h = hermitian_matrix(20, seed=22)
    eigenvalues, vectors = np.linalg.eigh(h)
    resolvent = resolvent_expander.expand(1.0, 0.3, 0.05, eigenvalues[0], 600)

    result = resolvent_expander.apply(resolvent, _operator(h), vectors[:, 4])

    scalar = 0.05 / (0.3 - (eigenvalues[4] - eigenvalues[0]) + 0.05j)
    error = resolvent_expander.expansion_error(resolvent)
    assert np.linalg.norm(result - scalar * vectors[:, 4]) <= 1.01 * error + 1e-12


def test_apply_zero_vector(hermitian_matrix):
    resolvent = resolvent_expander.expand(1.0, 0.3, 0.05, -0.5, 20)
    result = resolvent_expander.apply(resolvent, _operator(hermitian_matrix(6, seed=1)), np.zeros(6))
    assert not np.any(result)


def test_apply_checks_dimension_and_bound():
    resolvent = resolvent_expander.expand(1.0, 0.3, 0.05, -0.5, 20)
    h = _operator(np.diag([2.0, 0.5, 0.1, -0.3]))
    with pytest.raises(DimensionMismatchError):
        resolvent_expander.apply(resolvent, h, np.ones(3))
    with pytest.raises(SpectralBoundError):
        resolvent_expander.apply(resolvent, h, np.ones(4))


def test_resolvent_is_realizable():
    resolvent = resolvent_expander.expand(1.0, 0.1, 0.1, 0.2, 400)
    realizable, modulus = resolvent_expander.gqsp_realizable(resolvent)
    assert realizable
    assert modulus == pytest.approx(1.0, abs=1e-5)


def test_doubled_coefficients_are_not_realizable():
    resolvent = resolvent_expander.expand(1.0, 0.1, 0.1, 0.2, 400)
    doubled = resolvent.model_copy(update={"coefficients": 2.0 * resolvent.coefficients})
    realizable, modulus = resolvent_expander.gqsp_realizable(doubled)
    assert not realizable
    assert modulus > 1.9


def test_constant_polynomial_is_exactly_unimodular():
    resolvent = ChebyshevResolvent(
        degree=0, coefficients=np.array([1.0 + 0.0j]), one_norm=1.0, omega_in=0.1, gamma=0.1, e0=0.0
    )
    realizable, modulus = resolvent_expander.gqsp_realizable(resolvent)
    assert realizable
    assert modulus == 1.0


def test_laurent_coefficients_are_symmetric():
    resolvent = resolvent_expander.expand(1.0, 0.1, 0.1, 0.2, 10)
    laurent = resolvent.laurent_coefficients()
    assert len(laurent) == 21
    assert laurent[10] == resolvent.coefficients[0]
    assert np.allclose(laurent[11:], resolvent.coefficients[1:] / 2)
    assert np.allclose(laurent[:10][::-1], laurent[11:])


def test_coefficient_table():
    resolvent = resolvent_expander.expand(1.0, 0.1, 0.1, 0.2, 10)

    lines = resolvent_expander.coefficient_table(resolvent).splitlines()
    assert lines[0] == "k,re,im"
    assert len(lines) == 12
    assert complex(float(lines[1].split(",")[1]), float(lines[1].split(",")[2])) == resolvent.coefficients[0]

    laurent = resolvent_expander.coefficient_table(resolvent, laurent=True).splitlines()
    assert len(laurent) == 22
    assert laurent[1].startswith("-10,")
    assert laurent[11].split(",")[1:] == lines[1].split(",")[1:]


def test_error_table():
    scan = resolvent_expander.error_scan(1.0, 0.5, GAMMA, -0.5, [50, 100])
    lines = resolvent_expander.error_table(scan).splitlines()
    assert lines[0] == "degree,max_error"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [50, 100]


def test_expansion_tracks_linear_solve_on_random_instances(hermitian_matrix):
    rng = np.random.default_rng(50)
    for trial in range(20):
        dim = int(rng.integers(10, 51))
        h = hermitian_matrix(dim, seed=300 + trial, spread=float(rng.uniform(0.3, 0.9)))
        eigenvalues = np.linalg.eigvalsh(h)
        one_norm = 1.05 * float(np.max(np.abs(eigenvalues)))
        gamma = float(rng.uniform(0.03, 0.1))
        e0 = eigenvalues[0]
        omega = eigenvalues[int(rng.integers(1, dim))] - e0
        degree = resolvent_expander.select_degree(one_norm, gamma, mode="analytic", eps=1e-6)
        resolvent = resolvent_expander.expand(one_norm, omega, gamma, e0, degree)
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)

        result = resolvent_expander.apply(resolvent, _operator(h), v)

        exact = gamma * np.linalg.solve((omega + e0 + 1j * gamma) * np.eye(dim) - h, v)
        assert np.linalg.norm(result - exact) <= 1e-3 * np.linalg.norm(exact)
