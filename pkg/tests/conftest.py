import numpy as np
import pytest

from app.schemas import IntegralSet

TOY_FCIDUMP = """ &FCI NORB=2,NELEC=2,MS2=0,
 &END
 0.5 1 1 1 1
 0.3 1 1 2 2
 0.1 1 2 1 2
 0.4 2 2 2 2
 -1.0 1 1 0 0
 0.05 2 1 0 0
 -3.5 0 0 0 0
"""

TOY_DIPOLE = """NORB=2
CORE 1
x 0.3 1 2
y 0.2 1 2
z 0.1 1 2
"""


def eightfold(m: np.ndarray) -> np.ndarray:
    v = m + m.transpose(1, 0, 2, 3) + m.transpose(0, 1, 3, 2) + m.transpose(1, 0, 3, 2)
    v = v + v.transpose(2, 3, 0, 1)
    return v / 8.0


def make_integrals(
    n_orb: int,
    n_elec: int,
    two_sz: int = 0,
    seed: int = 0,
    scale: float = 0.1,
    core=(1,),
    with_dipole: bool = True,
) -> IntegralSet:
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n_orb, n_orb))
    h = 0.5 * (h + h.T)
    v = eightfold(scale * rng.normal(size=(n_orb,) * 4))
    dipole = None
    if with_dipole:
        d = rng.normal(size=(3, n_orb, n_orb))
        dipole = 0.5 * (d + d.transpose(0, 2, 1))
    return IntegralSet(
        n_orb=n_orb,
        n_elec=n_elec,
        two_sz=two_sz,
        e_frozen=float(rng.normal()),
        h=h,
        v=v,
        dipole=dipole,
        core_orbitals=list(core),
    )


def _annihilator(n_modes: int, mode: int) -> np.ndarray:
    dim = 2 ** n_modes
    a = np.zeros((dim, dim))
    for x in range(dim):
        if (x >> mode) & 1:
            parity = bin(x & ((1 << mode) - 1)).count("1")
            a[x ^ (1 << mode), x] = -1.0 if parity % 2 else 1.0
    return a


def dense_oracle(integrals: IntegralSet, basis, one_body: np.ndarray = None) -> np.ndarray:
    """Dense operator from explicit creation/annihilation matrices, restricted to the sector.

    Modes 0..n-1 are up spin, n..2n-1 down spin. With `one_body` given, returns
    sum d_pq E_pq instead of the Hamiltonian.
    """
    n = integrals.n_orb
    c = [_annihilator(2 * n, j) for j in range(2 * n)]

    def e(p, q):
        return c[p].T @ c[q] + c[n + p].T @ c[n + q]

    dim = 2 ** (2 * n)
    if one_body is not None:
        total = np.zeros((dim, dim))
        for p in range(n):
            for q in range(n):
                total += one_body[p, q] * e(p, q)
    else:
        ops = {(p, q): e(p, q) for p in range(n) for q in range(n)}
        total = integrals.e_frozen * np.eye(dim)
        for (p, q), e_pq in ops.items():
            total += integrals.h[p, q] * e_pq
            w_pq = sum(integrals.v[p, q, r, s] * e_rs for (r, s), e_rs in ops.items())
            total += 0.5 * (e_pq @ w_pq)

    states = [int(up) | (int(down) << n) for up in basis.up_strings for down in basis.down_strings]
    return total[np.ix_(states, states)]


def random_hermitian(dim: int, seed: int = 0, spread: float = 0.9):
    """Real symmetric matrix with eigenvalues uniform in [-spread, spread]."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigenvalues = np.sort(rng.uniform(-spread, spread, size=dim))
    matrix = (q * eigenvalues) @ q.T
    return 0.5 * (matrix + matrix.T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_integrals():
    return make_integrals


@pytest.fixture
def oracle():
    return dense_oracle


@pytest.fixture
def hermitian_matrix():
    return random_hermitian


@pytest.fixture
def toy_files(tmp_path):
    fcidump = tmp_path / "toy.fcidump"
    dipole = tmp_path / "toy.dip"
    fcidump.write_text(TOY_FCIDUMP, encoding="utf-8")
    dipole.write_text(TOY_DIPOLE, encoding="utf-8")
    return str(fcidump), str(dipole)


@pytest.fixture
def toy_text():
    return TOY_FCIDUMP, TOY_DIPOLE
