"""Independent reference computations used by the tests.

These deliberately avoid the package's closed forms: exhaustive grids,
plain iterative solvers and naive loops.
"""

import numpy as np


def grid_argmin(fn, lo, hi, step):
    grid = np.arange(lo, hi + step / 2, step)
    return float(grid[np.argmin(fn(grid))])


def rrc_objective(x, y, psi, lam):
    s = np.linalg.svd(x, compute_uv=False)
    return 0.5 * np.sum((y - x) ** 2) + lam * np.sum(np.abs(s - psi))


def subgradient_rrc(y, psi, lam, iters=500):
    """Subgradient descent on 0.5||Y-X||^2 + lam ||s(X) - psi||_1, from Y.

    Iterates are kept in the non-negative-spectrum set automatically (SVD);
    the best objective value seen is returned.
    """
    x = y.copy()
    best, best_val = x.copy(), rrc_objective(x, y, psi, lam)
    for k in range(1, iters + 1):
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        g = (x - y) + lam * (u * np.sign(s - psi)) @ vt
        x = x - g / k**0.5 * 0.5
        val = rrc_objective(x, y, psi, lam)
        if val < best_val:
            best, best_val = x.copy(), val
    return best


def prox_gradient_nuclear(y, lam, iters=200):
    """Proximal gradient on 0.5||Y-X||^2 + lam ||X||_*, starting at zero."""
    x = np.zeros_like(y)
    for _ in range(iters):
        z = x - (x - y)  # unit step on the smooth part
        u, s, vt = np.linalg.svd(z, full_matrices=False)
        x = (u * np.maximum(s - lam, 0)) @ vt
    return x


def naive_match(img, ref, p, m, window):
    """Exhaustive patch ranking by nested loops."""
    rows, cols = img.shape
    r, c = ref
    half = window // 2
    r0, c0 = max(r - half, 0), max(c - half, 0)
    r1 = min(r - half + window - p, rows - p)
    c1 = min(c - half + window - p, cols - p)
    r1, c1 = max(r1, r), max(c1, c)
    refp = img[r : r + p, c : c + p]
    cands = []
    for i in range(r0, r1 + 1):
        for j in range(c0, c1 + 1):
            d = -1.0 if (i, j) == (r, c) else float(np.sum((img[i : i + p, j : j + p] - refp) ** 2))
            cands.append((d, i, j))
    cands.sort(key=lambda t: (t[0], t[1], t[2]))
    return [(i, j) for _, i, j in cands[:m]]
