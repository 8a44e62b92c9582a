"""Eigendata for the mean matrix and the single-child weight matrix.

perron() gives the dominant eigenvalue of the mean matrix with its right
and left eigenvectors, normalized so the right one sums to 1 and the
pair has unit inner product.  gamma_p0() gives the spectral radius of
the single-child weight matrix together with the limit of its scaled
powers, reporting failure instead of guessing when those powers do not
settle.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

POWER_CAP = 100_000
DEFAULT_TOL = 1e-12


class SpectralError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass
class JacobianLimit:
    ok: bool
    gamma: Optional[float]
    p0: Optional[np.ndarray]
    iters: int
    note: str


@dataclass
class SpectralData:
    rho: float
    u: np.ndarray        # right eigenvector, u . 1 = 1
    v: np.ndarray        # left eigenvector, v . u = 1
    gamma: Optional[float]
    p0: Optional[np.ndarray]
    jacobian_ok: bool
    residuals: dict
    iters: dict

    def as_dict(self):
        return {
            "rho": self.rho,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "gamma": self.gamma,
            "p0": None if self.p0 is None else self.p0.tolist(),
            "jacobian_ok": self.jacobian_ok,
            "residuals": self.residuals,
            "iters": self.iters,
        }


def _positively_regular(M):
    pos = M > 0
    acc = np.eye(M.shape[0], dtype=bool)
    for k in range(1, 2 * M.shape[0] ** 2 + 1):
        acc = acc @ pos
        if acc.all():
            return k
    return None


def _power_iterate(M, tol, cap):
    """All-ones start; iterate x <- Mx normalized to sum 1."""
    x = np.ones(M.shape[0]) / M.shape[0]
    lam = 0.0
    for it in range(1, cap + 1):
        y = M @ x
        s = y.sum()
        if s <= 0:
            raise NumericError("power iteration collapsed to zero")
        y = y / s
        if abs(s - lam) <= tol * max(1.0, abs(s)) and np.max(np.abs(y - x)) <= tol:
            return s, y, it
        lam, x = s, y
    resid = np.max(np.abs(M @ x - lam * x))
    raise NumericError(
        f"power iteration did not converge in {cap} steps (residual {resid:.3e})"
    )


def perron(M, tol=DEFAULT_TOL):
    """Dominant eigendata (rho, u, v) of a positively regular matrix."""
    M = np.asarray(M, dtype=float)
    if np.any(M < 0):
        raise SpectralError("mean matrix has negative entries")
    if _positively_regular(M) is None:
        raise SpectralError("matrix is not positively regular")
    rho, u, _ = _power_iterate(M, tol, POWER_CAP)
    rho_l, w, _ = _power_iterate(M.T, tol, POWER_CAP)
    rho = 0.5 * (rho + rho_l)
    v = w / (w @ u)
    return rho, u, v


def gamma_p0(A, tol=DEFAULT_TOL, n_max=10_000):
    """Spectral radius of A and the limit of its scaled powers.

    Returns a JacobianLimit; ok=False (with a note) when A is zero, the
    radius vanishes, or the scaled powers oscillate or diverge.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise SpectralError("matrix has negative entries")
    if not A.any():
        return JacobianLimit(False, None, None, 0, "matrix is zero")
    try:
        g1, _, _ = _power_iterate(A, tol, POWER_CAP)
        g2, _, _ = _power_iterate(A.T, tol, POWER_CAP)
    except NumericError as e:
        return JacobianLimit(False, None, None, 0, f"radius iteration failed: {e}")
    gamma = 0.5 * (g1 + g2)
    if gamma <= 0:
        return JacobianLimit(False, None, None, 0, "spectral radius is zero")
    B = np.eye(2)
    for it in range(1, n_max + 1):
        Bn = (A / gamma) @ B
        if not np.isfinite(Bn).all() or np.max(np.abs(Bn)) > 1e9:
            return JacobianLimit(False, gamma, None, it, "scaled powers diverge")
        if np.max(np.abs(Bn - B)) < tol:
            if not Bn.any():
                return JacobianLimit(False, gamma, None, it, "limit is zero")
            return JacobianLimit(True, gamma, Bn, it, "converged")
        B = Bn
    return JacobianLimit(False, gamma, None, n_max, "scaled powers do not settle")


def analyze(spec, tol=DEFAULT_TOL):
    """SpectralData for a model: perron data plus the jacobian limit."""
    M = spec.mean_matrix
    rho, u, v = perron(M, tol)
    jac = gamma_p0(spec.jacobian_zero, tol)
    residuals = {
        "right": float(np.max(np.abs(M @ u - rho * u))),
        "left": float(np.max(np.abs(v @ M - rho * v))),
        "u_sum": float(abs(u.sum() - 1.0)),
        "vu": float(abs(v @ u - 1.0)),
    }
    if jac.ok:
        residuals["a_p0"] = float(
            np.max(np.abs(spec.jacobian_zero @ jac.p0 - jac.gamma * jac.p0))
        )
    return SpectralData(
        rho=rho,
        u=u,
        v=v,
        gamma=jac.gamma if jac.ok else None,
        p0=jac.p0,
        jacobian_ok=jac.ok,
        residuals=residuals,
        iters={"jacobian": jac.iters},
    )


def mean_ratio_sup(spec, spectral, n, grid):
    """Worst max-norm gap between the scaled mean of X_n and v over a grid.

    For start state j the mean of X_n is j M^n plus the accumulated
    immigration means; it is scaled by rho^n times u . (j + discounted
    immigration) and compared against the left eigenvector.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    grid = grid.reshape(-1, 2)
    rho, u, v = spectral.rho, spectral.u, spectral.v
    if rho <= 1:
        raise SpectralError("mean-ratio limit needs a supercritical model")
    M = spec.mean_matrix
    lam = spec.imm_mean

    Mn = np.eye(2)
    imm_sum = np.zeros(2)          # sum_{i<n} lam M^i
    for _ in range(n):
        imm_sum = imm_sum + lam @ Mn
        Mn = Mn @ M
    disc = sum(rho ** -(i + 1) for i in range(n))
    num = grid @ Mn + imm_sum                      # (G, 2)
    den = rho**n * ((grid + disc * lam) @ u)       # (G,)
    gaps = np.abs(num / den[:, None] - v)
    return float(gaps.max())
