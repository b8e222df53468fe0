"""BLISS symmetry shift and tensor-hypercontraction factorization.

The BLISS shift is affine in (α1, α2, β), so the shifted two-body tensor and the
κ matrix are expanded once into constant + linear maps and the joint optimizer
works on those maps directly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from app.core.exceptions import NonHermitianError, PhysicsParameterError, ValidationError
from app.schemas import BlissParams, IntegralSet, ShiftedTensors, ThcFactors

logger = logging.getLogger(__name__)

KAPPA_SYMMETRY_TOL = 1e-10
BLISS_MODES = ("joint", "alpha", "none")


def _sym_unit(n: int, a: int, b: int) -> np.ndarray:
    unit = np.zeros((n, n))
    unit[a, b] = 1.0
    unit[b, a] = 1.0
    return unit


def angles_to_vectors(phi: np.ndarray) -> np.ndarray:
    """Unit vectors from hyperspherical angles, one row of N_a - 1 angles per vector."""
    n_vec, m = phi.shape
    s = np.ones((n_vec, m + 1))
    if m:
        s[:, 1:] = np.cumprod(np.sin(phi), axis=1)
    u = s.copy()
    u[:, :m] *= np.cos(phi)
    return u


def vectors_to_angles(u: np.ndarray) -> np.ndarray:
    n_vec, n = u.shape
    m = n - 1
    phi = np.zeros((n_vec, m))
    if m == 0:
        return phi
    for k in range(m - 1):
        tail = np.linalg.norm(u[:, k:], axis=1)
        safe = np.where(tail > 0.0, tail, 1.0)
        phi[:, k] = np.arccos(np.clip(u[:, k] / safe, -1.0, 1.0))
    phi[:, m - 1] = np.arctan2(u[:, m], u[:, m - 1])
    return phi


def _vector_jacobian(phi: np.ndarray) -> np.ndarray:
    """d u_k / d phi_j, shape (N_T, N_a, N_a - 1)."""
    n_vec, m = phi.shape
    n = m + 1
    sin, cos = np.sin(phi), np.cos(phi)
    jac = np.zeros((n_vec, n, m))
    for k in range(n):
        tail = cos[:, k] if k < m else np.ones(n_vec)
        for j in range(min(k + 1, m)):
            if j == k:
                jac[:, k, k] = -np.prod(sin[:, :k], axis=1) * sin[:, k]
            else:
                factors = sin[:, :k].copy()
                factors[:, j] = cos[:, j]
                jac[:, k, j] = np.prod(factors, axis=1) * tail
    return jac


def thc_tensor(zeta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum_{μν} ζ_μν u_μp u_μq u_νr u_νs."""
    n = u.shape[1]
    x = np.einsum("mp,mq->mpq", u, u).reshape(len(u), n * n)
    return (x.T @ zeta @ x).reshape(n, n, n, n)


@dataclass
class _BlissMaps:
    """Constant parts and linear maps of (Ṽ, κ) in the BLISS parameters."""

    mode: str
    v0: np.ndarray
    v_maps: np.ndarray
    k0: np.ndarray
    k_maps: np.ndarray
    triu: Tuple[np.ndarray, np.ndarray]

    @property
    def size(self) -> int:
        return len(self.v_maps)


class BlissThcFactorizer:

    def apply_bliss(self, integrals: IntegralSet, params: BlissParams, n_elec: int) -> ShiftedTensors:
        """Tensors of H − α1 N − α2 N² − ½ Σ β_pq (E_pq (N − N_e) + h.c.) in the E_pq E_rs form."""
        n = integrals.n_orb
        if params.beta.shape != (n, n):
            raise ValidationError("beta", params.beta.shape, f"must be {n}x{n}")
        eye = np.eye(n)
        h = integrals.h - params.alpha1 * eye + n_elec * params.beta
        v = (
            integrals.v
            - 2.0 * params.alpha2 * np.einsum("pq,rs->pqrs", eye, eye)
            - np.einsum("pq,rs->pqrs", params.beta, eye)
            - np.einsum("pq,rs->pqrs", eye, params.beta)
        )
        return ShiftedTensors(h=h, v=v, constant=integrals.e_frozen)

    def shifted_integrals(self, integrals: IntegralSet, params: BlissParams, n_elec: int) -> IntegralSet:
        shifted = self.apply_bliss(integrals, params, n_elec)
        return integrals.model_copy(update={"h": shifted.h, "v": shifted.v, "e_frozen": shifted.constant})

    def kappa_matrix(
        self,
        shifted: ShiftedTensors,
        v_original: np.ndarray,
        alpha1: float,
        beta: np.ndarray,
        n_elec: int,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """κ_pq = h̃_pq − ½ Σ_r V_prrq + Σ_r Ṽ_pqrr − α1 δ_pq + 2 N_e β_pq, and its eigenvalues t."""
        n = shifted.h.shape[0]
        kappa = (
            shifted.h
            - 0.5 * np.einsum("prrq->pq", v_original)
            + np.einsum("pqrr->pq", shifted.v)
            - alpha1 * np.eye(n)
            + 2.0 * n_elec * beta
        )
        asymmetry = float(np.max(np.abs(kappa - kappa.T), initial=0.0))
        if asymmetry > KAPPA_SYMMETRY_TOL:
            raise NonHermitianError("kappa matrix", asymmetry)
        kappa = 0.5 * (kappa + kappa.T)
        return kappa, scipy.linalg.eigh(kappa, eigvals_only=True)

    @staticmethod
    def one_norm(t: np.ndarray, zeta: np.ndarray) -> float:
        """λ = Σ|t_p| + ½ Σ|ζ_μν| − ¼ Σ|ζ_μμ|."""
        zeta = np.asarray(zeta, dtype=float)
        return float(
            np.sum(np.abs(t)) + 0.5 * np.sum(np.abs(zeta)) - 0.25 * np.sum(np.abs(np.diag(zeta)))
        )

    def default_rho(self, v: np.ndarray) -> float:
        return 1e-4 * float(np.linalg.norm(v))

    def fit_thc(
        self,
        v_tilde: np.ndarray,
        n_thc: int,
        rho: float = 0.0,
        t: Optional[np.ndarray] = None,
        max_iter: int = 300,
        restarts: int = 1,
        seed: int = 0,
    ) -> ThcFactors:
        """Fit ζ and unit u-vectors to Ṽ by minimizing ½‖Ṽ − Σζχ‖² + ρλ."""
        if n_thc < 1:
            raise PhysicsParameterError("n_thc", n_thc, "THC rank must be >= 1")
        if rho < 0:
            raise PhysicsParameterError("rho", rho, "must be >= 0")

        n = v_tilde.shape[0]
        t = np.zeros(n) if t is None else np.asarray(t, dtype=float)
        maps = _BlissMaps(
            mode="none",
            v0=v_tilde,
            v_maps=np.zeros((0,) + v_tilde.shape),
            k0=np.diag(t),
            k_maps=np.zeros((0, n, n)),
            triu=np.triu_indices(n),
        )
        x, residual, converged = self._optimize(maps, n_thc, rho, max_iter, restarts, seed)
        _, zeta, u = self._unpack(x, maps, n_thc, n)
        factors = ThcFactors(
            rank=n_thc,
            zeta=zeta,
            u=u,
            t=t,
            residual=residual,
            one_norm=self.one_norm(t, zeta),
            converged=converged,
        )
        logger.info(f"THC fit N_T={n_thc}: residual {residual:.3e}, lambda {factors.one_norm:.6f}")
        return factors

    def optimize_bliss_thc(
        self,
        integrals: IntegralSet,
        n_elec: int,
        n_thc: Optional[int] = None,
        rho: Optional[float] = None,
        mode: str = "joint",
        max_iter: int = 300,
        restarts: int = 1,
        seed: int = 0,
    ) -> Tuple[BlissParams, ThcFactors, float]:
        if mode not in BLISS_MODES:
            raise ValidationError("bliss_mode", mode, f"must be one of {BLISS_MODES}")
        n = integrals.n_orb
        n_thc = n_thc or 3 * n
        rho = self.default_rho(integrals.v) if rho is None else rho

        baseline_maps = self._bliss_maps(integrals, n_elec, "none")
        x0, res0, conv0 = self._optimize(baseline_maps, n_thc, rho, max_iter, restarts, seed)
        baseline = self._factors_from(x0, baseline_maps, integrals, n_elec, n_thc, res0, conv0)
        logger.info(f"Unshifted THC fit: lambda {baseline[1].one_norm:.6f}, residual {res0:.3e}")
        if mode == "none":
            return baseline[0], baseline[1], baseline[1].one_norm

        maps = self._bliss_maps(integrals, n_elec, mode)
        start = np.concatenate([np.zeros(maps.size), x0])
        x, residual, converged = self._optimize(maps, n_thc, rho, max_iter, 1, seed, start=start)
        shifted = self._factors_from(x, maps, integrals, n_elec, n_thc, residual, converged)

        if shifted[1].one_norm > baseline[1].one_norm:
            logger.info(
                f"BLISS ({mode}) did not lower lambda ({shifted[1].one_norm:.6f} > "
                f"{baseline[1].one_norm:.6f}); keeping the unshifted fit"
            )
            return baseline[0], baseline[1], baseline[1].one_norm

        logger.info(f"BLISS-THC ({mode}) lambda {shifted[1].one_norm:.6f}, residual {residual:.3e}")
        return shifted[0], shifted[1], shifted[1].one_norm

    def save_factors(self, factors: ThcFactors, path: str) -> None:
        Path(path).write_text(factors.to_json(), encoding="utf-8")

    def load_factors(self, path: str) -> ThcFactors:
        return ThcFactors.from_json(Path(path).read_text(encoding="utf-8"))

    # ------------------------------------------------------------------

    def _bliss_maps(self, integrals: IntegralSet, n_elec: int, mode: str) -> _BlissMaps:
        n = integrals.n_orb
        triu = np.triu_indices(n)
        zero = BlissParams.zero(n)

        def evaluate(params: BlissParams) -> Tuple[np.ndarray, np.ndarray]:
            shifted = self.apply_bliss(integrals, params, n_elec)
            kappa, _ = self.kappa_matrix(shifted, integrals.v, params.alpha1, params.beta, n_elec)
            return shifted.v, kappa

        v0, k0 = evaluate(zero)
        units: List[BlissParams] = []
        if mode in ("joint", "alpha"):
            units.append(BlissParams(alpha1=1.0, alpha2=0.0, beta=np.zeros((n, n))))
            units.append(BlissParams(alpha1=0.0, alpha2=1.0, beta=np.zeros((n, n))))
        if mode == "joint":
            for a, b in zip(*triu):
                units.append(BlissParams(alpha1=0.0, alpha2=0.0, beta=_sym_unit(n, a, b)))

        v_maps, k_maps = [], []
        for params in units:
            v, k = evaluate(params)
            v_maps.append(v - v0)
            k_maps.append(k - k0)
        return _BlissMaps(
            mode=mode,
            v0=v0,
            v_maps=np.array(v_maps).reshape((len(units),) + v0.shape),
            k0=k0,
            k_maps=np.array(k_maps).reshape((len(units), n, n)),
            triu=triu,
        )

    def _bliss_from(self, theta: np.ndarray, maps: _BlissMaps, n: int) -> BlissParams:
        if maps.mode == "none" or len(theta) == 0:
            return BlissParams.zero(n)
        beta = np.zeros((n, n))
        if maps.mode == "joint":
            beta[maps.triu] = theta[2:]
            beta = beta + np.triu(beta, 1).T
        return BlissParams(alpha1=float(theta[0]), alpha2=float(theta[1]), beta=beta)

    def _factors_from(
        self,
        x: np.ndarray,
        maps: _BlissMaps,
        integrals: IntegralSet,
        n_elec: int,
        n_thc: int,
        residual: float,
        converged: bool,
    ) -> Tuple[BlissParams, ThcFactors]:
        n = integrals.n_orb
        theta, zeta, u = self._unpack(x, maps, n_thc, n)
        params = self._bliss_from(theta, maps, n)
        shifted = self.apply_bliss(integrals, params, n_elec)
        _, t = self.kappa_matrix(shifted, integrals.v, params.alpha1, params.beta, n_elec)
        factors = ThcFactors(
            rank=n_thc,
            zeta=zeta,
            u=u,
            t=t,
            bliss=params,
            residual=residual,
            one_norm=self.one_norm(t, zeta),
            converged=converged,
        )
        return params, factors

    @staticmethod
    def _unpack(x: np.ndarray, maps: _BlissMaps, n_thc: int, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        nb = maps.size
        n_zeta = n_thc * (n_thc + 1) // 2
        theta = x[:nb]
        zeta = np.zeros((n_thc, n_thc))
        zeta[np.triu_indices(n_thc)] = x[nb:nb + n_zeta]
        zeta = zeta + np.triu(zeta, 1).T
        phi = x[nb + n_zeta:].reshape(n_thc, n - 1)
        return theta, zeta, angles_to_vectors(phi)

    def _initial_guess(self, v: np.ndarray, n_thc: int, rng: Optional[np.random.Generator]) -> np.ndarray:
        """Angles and least-squares ζ; u from the leading eigenvectors of the matricized tensor."""
        n = v.shape[0]
        if rng is None:
            vals, vecs = scipy.linalg.eigh(v.reshape(n * n, n * n))
            candidates = []
            for lam, vec in zip(vals, vecs.T):
                mat = vec.reshape(n, n)
                mat = 0.5 * (mat + mat.T)
                sub_vals, sub_vecs = scipy.linalg.eigh(mat)
                for mu, w in zip(sub_vals, sub_vecs.T):
                    candidates.append((abs(lam * mu), w))
            candidates.sort(key=lambda item: -item[0])
            u = np.array([w for _, w in candidates[:n_thc]])
            if len(u) < n_thc:
                extra = np.random.default_rng(0).normal(size=(n_thc - len(u), n))
                u = np.vstack([u, extra])
        else:
            u = rng.normal(size=(n_thc, n))
        u = u / np.linalg.norm(u, axis=1, keepdims=True)

        x = np.einsum("mp,mq->mpq", u, u).reshape(n_thc, n * n)
        pinv = np.linalg.pinv(x.T)
        zeta = pinv @ v.reshape(n * n, n * n) @ pinv.T
        zeta = 0.5 * (zeta + zeta.T)
        return np.concatenate([zeta[np.triu_indices(n_thc)], vectors_to_angles(u).ravel()])

    def _objective(self, x: np.ndarray, maps: _BlissMaps, n_thc: int, rho: float) -> Tuple[float, np.ndarray]:
        n = maps.v0.shape[0]
        n2 = n * n
        nb = maps.size
        n_zeta = n_thc * (n_thc + 1) // 2
        theta = x[:nb]
        z = x[nb:nb + n_zeta]
        phi = x[nb + n_zeta:].reshape(n_thc, n - 1)

        zeta = np.zeros((n_thc, n_thc))
        zeta[np.triu_indices(n_thc)] = z
        zeta = zeta + np.triu(zeta, 1).T
        u = angles_to_vectors(phi)
        chi = np.einsum("mp,mq->mpq", u, u).reshape(n_thc, n2)

        v_tilde = maps.v0 + np.tensordot(theta, maps.v_maps, axes=1) if nb else maps.v0
        residual = v_tilde.reshape(n2, n2) - chi.T @ zeta @ chi
        cost = 0.5 * float(np.sum(residual ** 2))

        off_diagonal = np.where(np.triu_indices(n_thc)[0] == np.triu_indices(n_thc)[1], 1.0, 2.0)
        grad_zeta = -(chi @ residual @ chi.T)
        grad_z = grad_zeta[np.triu_indices(n_thc)] * off_diagonal

        grad_chi = (-2.0 * zeta @ chi @ residual).reshape(n_thc, n, n)
        grad_u = np.einsum("mab,mb->ma", grad_chi, u) + np.einsum("mba,mb->ma", grad_chi, u)
        grad_phi = np.einsum("ma,mak->mk", grad_u, _vector_jacobian(phi))

        grad_theta = np.zeros(nb)
        if nb:
            grad_theta = -np.tensordot(maps.v_maps.reshape(nb, -1), residual.ravel(), axes=1)

        if rho > 0.0:
            kappa = maps.k0 + np.tensordot(theta, maps.k_maps, axes=1) if nb else maps.k0
            t, vecs = scipy.linalg.eigh(kappa)
            cost += rho * self.one_norm(t, zeta)
            diag_weight = np.where(off_diagonal == 1.0, 0.25, 1.0)
            grad_z = grad_z + rho * np.sign(z) * diag_weight
            if nb:
                sign_kappa = (vecs * np.sign(t)) @ vecs.T
                grad_theta = grad_theta + rho * np.tensordot(maps.k_maps, sign_kappa, axes=([1, 2], [0, 1]))

        return cost, np.concatenate([grad_theta, grad_z, grad_phi.ravel()])

    def _optimize(
        self,
        maps: _BlissMaps,
        n_thc: int,
        rho: float,
        max_iter: int,
        restarts: int,
        seed: int,
        start: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, float, bool]:
        """Fit at ρ = 0, polish, then anneal ρ up to its target. Returns (x, residual, converged)."""
        nb = maps.size
        options = {"maxiter": max_iter, "ftol": 1e-30, "gtol": 1e-13}
        best: Optional[Tuple[float, np.ndarray, bool]] = None

        for attempt in range(max(restarts, 1)):
            if start is not None and attempt == 0:
                x = start.copy()
            else:
                rng = None if attempt == 0 else np.random.default_rng(seed + attempt)
                x = np.concatenate([np.zeros(nb), self._initial_guess(maps.v0, n_thc, rng)])

            result = scipy.optimize.minimize(
                self._objective, x, args=(maps, n_thc, 0.0), jac=True, method="L-BFGS-B", options=options
            )
            x = self._polish(result.x, maps, n_thc)
            converged = bool(result.success)

            for stage_rho in (rho / 100.0, rho / 10.0, rho) if rho > 0 else ():
                result = scipy.optimize.minimize(
                    self._objective, x, args=(maps, n_thc, stage_rho), jac=True, method="L-BFGS-B", options=options
                )
                x = result.x
                converged = bool(result.success)

            cost, _ = self._objective(x, maps, n_thc, rho)
            logger.debug(f"THC attempt {attempt}: cost {cost:.6e}")
            if best is None or cost < best[0]:
                best = (cost, x, converged)

        _, x, converged = best
        residual = np.sqrt(2.0 * self._objective(x, maps, n_thc, 0.0)[0])
        if not converged:
            logger.warning(f"THC optimizer did not report convergence; keeping best-so-far (residual {residual:.3e})")
        return x, float(residual), converged

    def _polish(self, x: np.ndarray, maps: _BlissMaps, n_thc: int) -> np.ndarray:
        """Gauss-Newton refinement of the tensor residual at fixed BLISS parameters."""
        n = maps.v0.shape[0]
        nb = maps.size
        theta = x[:nb]
        v_tilde = maps.v0 + np.tensordot(theta, maps.v_maps, axes=1) if nb else maps.v0
        target = v_tilde.ravel()

        def residuals(y: np.ndarray) -> np.ndarray:
            _, zeta, u = self._unpack(np.concatenate([theta, y]), maps, n_thc, n)
            return thc_tensor(zeta, u).ravel() - target

        if residuals(x[nb:]).size < x[nb:].size:
            return x
        result = scipy.optimize.least_squares(
            residuals, x[nb:], method="trf", ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=200
        )
        if np.sum(result.fun ** 2) <= np.sum(residuals(x[nb:]) ** 2):
            return np.concatenate([theta, result.x])
        return x


bliss_thc = BlissThcFactorizer()
