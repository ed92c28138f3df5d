"""Small dense SVD and the singular-value proximal operators.

Everything the restoration pipelines do to a group matrix reduces to one
of three element-wise rules applied to its singular values:

* ``soft_threshold`` - prox of ``tau * |x - b|`` around a quadratic;
* ``svt_shrink`` - uniform shrinkage of the spectrum (nuclear norm prox);
* ``rrc_shrink`` - shrinkage of the spectrum toward a reference spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# singular values below this fraction of the largest one are set to zero
RANK_TOL = 1e-12

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``left @ diag(sigma) @ right.T`` of a d x m matrix."""

    left: np.ndarray
    sigma: np.ndarray
    right: np.ndarray

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.sigma))

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.sigma) @ self.right.T

    def with_sigma(self, sigma) -> "SvdFactors":
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != self.sigma.shape:
            raise ValueError(
                f"sigma has shape {sigma.shape}, expected {self.sigma.shape}"
            )
        return SvdFactors(self.left, sigma, self.right)


def check_finite(mat: np.ndarray, name: str = "matrix") -> None:
    """Raise ``ValueError`` naming the first non-finite entry of ``mat``."""
    bad = ~np.isfinite(mat)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} has non-finite entry {mat[pos]!r} at index {pos}")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint column pairings covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for k in range(size // 2):
            a, b = players[k], players[size - 1 - k]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _orthonormal_complement(basis: np.ndarray, rows: int, count: int) -> np.ndarray:
    # eigenvectors of the projector onto span(basis)^perp with eigenvalue 1
    proj = np.eye(rows) - basis @ basis.T
    w, vecs = np.linalg.eigh(proj)
    return vecs[:, np.argsort(-w, kind="stable")[:count]]


def jacobi_svd(mat, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """One-sided (Hestenes) Jacobi SVD of a dense matrix.

    Column pairs are rotated until every pair is orthogonal to within
    ``tol`` relative to the product of their norms. Disjoint pairs are
    rotated together in round-robin order, which makes one sweep
    ``n - 1`` vectorised steps.

    Returns ``(u, s, v)`` with ``mat = u @ diag(s) @ v.T``, ``s``
    descending and no sign normalisation applied.
    """
    a = np.array(mat, dtype=float)
    transposed = a.shape[0] < a.shape[1]
    b = a.T.copy() if transposed else a
    rows, n = b.shape
    v = np.eye(n)

    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            bp, bq = b[:, p], b[:, q]
            alpha = np.einsum("ij,ij->j", bp, bp)
            beta = np.einsum("ij,ij->j", bq, bq)
            gamma = np.einsum("ij,ij->j", bp, bq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            bp, bq = b[:, p], b[:, q]
            b[:, p] = c * bp - s * bq
            b[:, q] = s * bp + c * bq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break

    sigma = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-sigma, kind="stable")
    sigma, b, v = sigma[order], b[:, order], v[:, order]

    nonzero = sigma > (sigma[0] * RANK_TOL if sigma.size and sigma[0] > 0 else 0.0)
    u = np.zeros_like(b)
    u[:, nonzero] = b[:, nonzero] / sigma[nonzero]
    missing = int(np.count_nonzero(~nonzero))
    if missing:
        u[:, ~nonzero] = _orthonormal_complement(u[:, nonzero], rows, missing)
        sigma[~nonzero] = 0.0

    if transposed:
        return v, sigma, u
    return u, sigma, v


def _apply_sign_convention(left: np.ndarray, right: np.ndarray) -> None:
    # largest-magnitude entry of each left vector positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(left), axis=0)
    flip = left[idx, np.arange(left.shape[1])] < 0
    left[:, flip] *= -1.0
    right[:, flip] *= -1.0


def svd_thin(mat, method: str = "jacobi") -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    Parameters
    ----------
    mat : array_like, shape (d, m)
        Finite real matrix.
    method : {"jacobi", "lapack"}
        ``"jacobi"`` uses :func:`jacobi_svd`; ``"lapack"`` delegates to
        ``numpy.linalg.svd`` and is meant for throughput.

    Returns
    -------
    SvdFactors
        ``j = min(d, m)`` singular triplets, ``sigma`` descending, each
        left vector's largest-magnitude entry positive. Singular values
        below ``1e-12 * sigma[0]`` are reported as exactly zero.
    """
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    check_finite(a)

    if method == "jacobi":
        left, sigma, right = jacobi_svd(a)
    elif method == "lapack":
        left, sigma, vt = np.linalg.svd(a, full_matrices=False)
        right = vt.T.copy()
        if sigma.size and sigma[0] > 0:
            sigma = np.where(sigma < RANK_TOL * sigma[0], 0.0, sigma)
    else:
        raise ValueError(f"unknown SVD method {method!r}")

    left = np.array(left, dtype=float)
    right = np.array(right, dtype=float)
    _apply_sign_convention(left, right)
    return SvdFactors(left, np.asarray(sigma, dtype=float), right)


def svd_batch(stack: np.ndarray):
    """Batched thin SVD of a ``(g, d, m)`` stack via LAPACK.

    Returns ``(u, s, vt)``. No sign convention is applied; callers only
    use the factors to rebuild matrices, which is sign invariant.
    """
    u, s, vt = np.linalg.svd(stack, full_matrices=False)
    s = np.where(s < RANK_TOL * s[..., :1], 0.0, s)
    return u, s, vt


def soft(v, tau):
    """``sgn(v) * max(|v| - tau, 0)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def soft_threshold(a, b, tau: float) -> np.ndarray:
    """Minimiser of ``0.5 * ||a - x||^2 + tau * ||x - b||_1``.

    The solution is ``soft(a - b, tau) + b``: entries of ``a`` within
    ``tau`` of ``b`` snap to ``b``, the rest move ``tau`` toward it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: a has shape {a.shape}, b has {b.shape}")
    if np.any(np.asarray(tau) < 0):
        raise ValueError(f"tau must be non-negative, got {tau}")
    return soft(a - b, tau) + b


def svt_shrink(factors: SvdFactors, lam: float) -> SvdFactors:
    """Singular value thresholding: ``sigma -> max(sigma - lam, 0)``."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return factors.with_sigma(np.maximum(factors.sigma - lam, 0.0))


def rrc_shrink(obs_sigma, ref_sigma, lam) -> np.ndarray:
    """Shrink observed singular values toward reference ones.

    ``out = soft(obs - ref, lam) + ref``, clamped at zero. ``lam`` may be
    a scalar or one threshold per singular value.
    """
    obs = np.asarray(obs_sigma, dtype=float)
    ref = np.asarray(ref_sigma, dtype=float)
    if obs.shape != ref.shape:
        raise ValueError(
            f"length mismatch: obs_sigma has shape {obs.shape}, ref_sigma has {ref.shape}"
        )
    return np.maximum(soft_threshold(obs, ref, lam), 0.0)
