"""
Dense float64 linear algebra for the toolkit.

A "matrix" here is a 2-D numpy float64 array. Entries must stay finite;
`as_matrix` is the gate every public entry point passes its inputs through.
Random matrices come from numpy's PCG64 bit generator and its ziggurat
normal sampler, so a (shape, std, seed) triple names one matrix forever.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from config import CONFIG
from nn.errors import ConvergenceError, ShapeError


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: m = u @ diag(s) @ vt, s nonincreasing and nonnegative."""
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def frozen(m: np.ndarray) -> np.ndarray:
    """Read-only float64 copy."""
    arr = np.array(m, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def frobenius(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, "fro"))


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """||actual - expected||_F / ||expected||_F (absolute when expected is zero)."""
    diff = frobenius(np.asarray(actual) - np.asarray(expected))
    scale = frobenius(expected)
    return diff / scale if scale > 0 else diff


def gaussian_matrix(rows: int, cols: int, std: float, seed: int) -> np.ndarray:
    """I.i.d. N(0, std^2) entries from Generator(PCG64(seed)).standard_normal."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((rows, cols)) * std


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method schedule: n - 1 rounds of n / 2 disjoint column pairs
    players = list(range(n))
    rounds = []
    half = n // 2
    for _ in range(n - 1):
        left = np.array(players[:half])
        right = np.array(players[half:][::-1])
        rounds.append((left, right))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, max_sweeps: int, tol: float) -> SvdResult:
    m, n = a.shape
    n_pad = n + (n % 2)
    work = np.zeros((m, n_pad))
    work[:, :n] = a
    v = np.eye(n_pad)

    if n_pad > 1:
        schedule = _round_robin(n_pad)
        converged = False
        for _ in range(max_sweeps):
            off = 0.0
            for p, q in schedule:
                up, uq = work[:, p], work[:, q]
                alpha = np.einsum("ij,ij->j", up, up)
                beta = np.einsum("ij,ij->j", uq, uq)
                gamma = np.einsum("ij,ij->j", up, uq)
                denom = np.sqrt(alpha * beta)
                live = denom > 0
                if not np.any(live):
                    continue
                cosine = np.zeros_like(gamma)
                cosine[live] = np.abs(gamma[live]) / denom[live]
                off = max(off, float(cosine.max()))
                rotate = cosine > tol
                if not np.any(rotate):
                    continue
                g = np.where(rotate, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                c = np.where(rotate, c, 1.0)
                s = np.where(rotate, s, 0.0)
                work[:, p], work[:, q] = c * up - s * uq, s * up + c * uq
                vp, vq = v[:, p], v[:, q]
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
            if off <= tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"one-sided Jacobi did not converge in {max_sweeps} sweeps ({m}x{n} input)"
            )

    work = work[:, :n]
    v = v[:n, :n]
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    floor = sigma[0] * max(m, n) * np.finfo(np.float64).eps if sigma[0] > 0 else 0.0
    known = int(np.count_nonzero(sigma > floor)) if sigma[0] > 0 else 0
    u = np.empty((m, n))
    u[:, :known] = work[:, :known] / sigma[:known]
    if known < n:
        # Null directions: complete u to an orthonormal set through QR
        q, r = np.linalg.qr(np.hstack([u[:, :known], np.eye(m)]))
        signs = np.sign(np.diag(r)[:known])
        signs[signs == 0] = 1.0
        u[:, :known] = q[:, :known] * signs
        u[:, known:] = q[:, known:n]
    return SvdResult(u=u, s=sigma, vt=v.T.copy())


def svd(m: np.ndarray, max_sweeps: int | None = None, tol: float | None = None) -> SvdResult:
    """
    Thin SVD by one-sided (Hestenes) Jacobi with a round-robin pair order.

    Raises ConvergenceError when the largest pairwise column cosine is still
    above `tol` after `max_sweeps` sweeps.
    """
    a = as_matrix(m)
    max_sweeps = CONFIG.SVD_MAX_SWEEPS if max_sweeps is None else max_sweeps
    tol = CONFIG.SVD_TOL if tol is None else tol
    if a.shape[0] >= a.shape[1]:
        return _jacobi_tall(a, max_sweeps, tol)
    flipped = _jacobi_tall(a.T, max_sweeps, tol)
    return SvdResult(u=flipped.vt.T.copy(), s=flipped.s, vt=flipped.u.T.copy())


def effective_rank(s: Sequence[float], rel_tol: float = 1e-8) -> int:
    """Number of singular values above rel_tol * s[0]."""
    s = np.asarray(s, dtype=np.float64).ravel()
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    if s.size == 0:
        return 0
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")
    if np.any(np.diff(s) > 0):
        raise ValueError("singular values must be sorted nonincreasing")
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
