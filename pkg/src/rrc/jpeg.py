"""Simulated JPEG compression and quantization-constrained deblocking.

The codec model is the luminance path of baseline JPEG without entropy
coding: an orthonormal 8x8 block DCT (no level shift), quantization by
a QF-scaled standard table, and dequantization. The deblocker alternates
low-rank group shrinkage with a per-pixel quadratic update projected back
onto the set of images whose DCT coefficients stay within ``w * M`` of
the dequantized ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dctn, idctn

from .denoise import IterationTrace, group_lambda, relative_change, shrink_stack
from .linalg import rrc_shrink, svd_thin
from .patches import (
    GroupingParams,
    PatchGroup,
    gather_stack,
    match_all,
    process_groups,
    reference_positions,
    reference_stack,
    Accumulator,
)

BLOCK = 8

BASE_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=int,
)


# --------------------------------------------------------------------- DCT


def _padded_shape(shape):
    return tuple(-(-n // BLOCK) * BLOCK for n in shape)


def _blocks(a):
    r, c = a.shape
    return a.reshape(r // BLOCK, BLOCK, c // BLOCK, BLOCK)


def block_dct(img) -> np.ndarray:
    """Orthonormal 8x8 block DCT-II.

    Images whose sides are not multiples of 8 are padded by edge
    replication first, so the result has the padded shape.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    pr, pc = _padded_shape(img.shape)
    if (pr, pc) != img.shape:
        img = np.pad(img, ((0, pr - img.shape[0]), (0, pc - img.shape[1])), mode="edge")
    return dctn(_blocks(img), axes=(1, 3), norm="ortho").reshape(pr, pc)


def block_idct(coeffs, shape=None) -> np.ndarray:
    """Inverse of :func:`block_dct`, cropped to ``shape`` when given."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2 or coeffs.shape[0] % BLOCK or coeffs.shape[1] % BLOCK:
        raise ValueError(f"coefficient array must be 2-D with sides divisible by 8, got {coeffs.shape}")
    img = idctn(_blocks(coeffs), axes=(1, 3), norm="ortho").reshape(coeffs.shape)
    if shape is not None:
        img = img[: shape[0], : shape[1]]
    return img


# ------------------------------------------------------------ quantization


def quant_table(qf: int) -> np.ndarray:
    """Standard luminance table scaled for quality factor ``qf`` (1-100)."""
    if isinstance(qf, bool) or not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {qf!r}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    # integer arithmetic, as in the reference encoder
    return np.clip((BASE_LUMA * scale + 50) // 100, 1, 255).astype(int)


def tile_table(q_matrix, shape) -> np.ndarray:
    """Image-level quantization step for every coefficient position."""
    q = np.asarray(q_matrix, dtype=float)
    reps = (shape[0] // BLOCK, shape[1] // BLOCK)
    return np.tile(q, reps)


@dataclass
class QuantizationContext:
    """Quantization table and the DCT-domain bounds of the feasible set.

    ``lower`` and ``upper`` are arrays with the padded coefficient shape;
    ``shape`` is the true image shape.
    """

    q_matrix: np.ndarray
    qf: int | None
    lower: np.ndarray
    upper: np.ndarray
    qc_width: float
    shape: tuple[int, int]

    def __post_init__(self):
        if not 0 < self.qc_width <= 0.5:
            raise ValueError(f"qc_width must be in (0, 0.5], got {self.qc_width}")
        if np.any(np.asarray(self.q_matrix) <= 0):
            raise ValueError("quantization table entries must be positive")

    @property
    def step(self) -> np.ndarray:
        return tile_table(self.q_matrix, self.lower.shape)

    @classmethod
    def from_levels(cls, levels, q_matrix, qc_width: float, shape, qf=None) -> "QuantizationContext":
        """Bounds ``(levels -/+ w) * M`` from integer quantization levels."""
        levels = np.asarray(levels, dtype=float)
        step = tile_table(q_matrix, levels.shape)
        return cls(
            np.asarray(q_matrix, dtype=int),
            qf,
            (levels - qc_width) * step,
            (levels + qc_width) * step,
            float(qc_width),
            tuple(shape),
        )

    @classmethod
    def from_decoded(cls, decoded, q_matrix, qc_width: float = 0.2, qf=None) -> "QuantizationContext":
        """Recover levels from a decoded image by rounding its coefficients.

        Exact for an unrounded decode; for an 8-bit decode the levels are
        the nearest multiples of each step.
        """
        decoded = np.asarray(decoded, dtype=float)
        coeffs = block_dct(decoded)
        levels = np.round(coeffs / tile_table(q_matrix, coeffs.shape))
        return cls.from_levels(levels, q_matrix, qc_width, decoded.shape, qf)

    def with_width(self, qc_width: float) -> "QuantizationContext":
        step = self.step
        levels = np.round((self.lower + self.upper) / (2.0 * step))
        return QuantizationContext.from_levels(levels, self.q_matrix, qc_width, self.shape, self.qf)

    def to_json(self) -> str:
        return json.dumps(
            {
                "qf": self.qf,
                "q_matrix": [int(v) for v in np.asarray(self.q_matrix).reshape(-1)],
                "qc_width": self.qc_width,
            }
        )


def save_context(ctx: QuantizationContext, path) -> None:
    with open(path, "w") as fh:
        fh.write(ctx.to_json() + "\n")


def load_context_header(path) -> dict:
    """Read ``{qf, q_matrix (8x8), qc_width}`` from a context JSON file."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        q = np.asarray(raw["q_matrix"], dtype=float)
        width = float(raw.get("qc_width", 0.2))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: missing or malformed field ({exc})") from exc
    if q.size != 64 or np.any(q <= 0) or np.any(q != np.round(q)):
        raise ValueError(f"{path}: q_matrix must hold 64 positive integers")
    return {"qf": raw.get("qf"), "q_matrix": q.reshape(8, 8).astype(int), "qc_width": width}


def jpeg_simulate(img, qf: int, qc_width: float = 0.2):
    """Quantize the block DCT of ``img`` and decode it again.

    Returns the (unrounded) decoded image and its quantization context.
    """
    img = np.asarray(img, dtype=float)
    q = quant_table(qf)
    coeffs = block_dct(img)
    levels = np.round(coeffs / tile_table(q, coeffs.shape))
    ctx = QuantizationContext.from_levels(levels, q, qc_width, img.shape, qf)
    decoded = block_idct(levels * ctx.step, img.shape)
    return decoded, ctx


# ----------------------------------------------------------- noise levels


def mean_low_freq_step(q_matrix) -> float:
    return float(np.mean(np.asarray(q_matrix, dtype=float)[:3, :3]))


def sigma_s_estimate(q_matrix) -> float:
    """Std of the equivalent Gaussian quantization noise for a table."""
    q = np.asarray(q_matrix, dtype=float)
    if np.any(q <= 0):
        raise ValueError("quantization table entries must be positive")
    e = mean_low_freq_step(q)
    return float(np.sqrt(1.195 * e**0.6394 + 0.9693))


SIGMA_E_FLOOR = 1e-3
# Multiplies c in the group threshold. With sigma_e ~ 1 the unscaled rule gives
# thresholds far below the singular values of compression error, and the z-step
# returns its input unchanged.
DEBLOCK_GAIN = 6000.0


def sigma_e_update(sigma_s: float, z_prev, y, eta: float) -> float:
    """``eta * sqrt(max(sigma_s^2 - msd(z_prev, y), 0))``.

    :func:`deblock` additionally floors the result at ``SIGMA_E_FLOOR``.
    """
    z_prev = np.asarray(z_prev, dtype=float)
    y = np.asarray(y, dtype=float)
    if z_prev.shape != y.shape:
        raise ValueError(f"shape mismatch: {z_prev.shape} vs {y.shape}")
    msd = float(np.mean((z_prev - y) ** 2))
    return eta * float(np.sqrt(max(sigma_s * sigma_s - msd, 0.0)))


# -------------------------------------------------------------- subproblems


def project(v, lower, upper) -> np.ndarray:
    """Element-wise clamp of ``v`` into ``[lower, upper]``."""
    return np.minimum(np.maximum(v, lower), upper)


def project_image(img, qc: QuantizationContext) -> np.ndarray:
    coeffs = project(block_dct(img), qc.lower, qc.upper)
    return block_idct(coeffs, qc.shape)


def z_subproblem(group: PatchGroup, reference: PatchGroup, mu_thresh) -> PatchGroup:
    """Shrink the group's spectrum toward the reference's, threshold ``mu_thresh``."""
    if group.data.shape != reference.data.shape:
        raise ValueError(f"group {group.data.shape} and reference {reference.data.shape} differ in shape")
    f = svd_thin(group.data, method="lapack")
    ref_sigma = svd_thin(reference.data, method="lapack").sigma
    return group.with_data(f.with_sigma(rrc_shrink(f.sigma, ref_sigma, mu_thresh)).reconstruct())


def quadratic_update(y, sums, count, weight: float) -> np.ndarray:
    """Per-pixel solution of the diagonal normal equations.

    ``sums`` and ``count`` are the per-pixel sum of patch values and the
    number of patches covering each pixel.
    """
    y = np.asarray(y, dtype=float)
    if weight > 0 and np.any(count == 0):
        r, c = np.argwhere(count == 0)[0]
        raise ValueError(f"pixel ({r}, {c}) is not covered by any group")
    return (y + weight * sums) / (1.0 + weight * count)


def _combine(y, sums, count, weight, qc):
    return project_image(quadratic_update(y, sums, count, weight), qc)


def x_subproblem(y, groups, weight: float, qc: QuantizationContext) -> np.ndarray:
    """Per-pixel closed-form quadratic update followed by QC projection.

    ``weight`` is the ratio multiplying the patch terms in the normal
    equations. With ``weight == 0`` the patches are ignored.
    """
    if weight < 0:
        raise ValueError(f"weight must be non-negative, got {weight}")
    y = np.asarray(y, dtype=float)
    groups = list(groups)
    if groups:
        acc = Accumulator(y.shape, groups[0].patch_side)
        for g in groups:
            acc.add(g.data, g.coords[None])
        sums, count = acc.sums(), acc.coverage()
    else:
        sums, count = np.zeros_like(y), np.zeros_like(y)
    return _combine(y, sums, count, weight, qc)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class DeblockConfig:
    eta: float
    c: float
    tau_stop: float
    eps: float = 0.2
    h: float = 40.0
    rho_balance: float = 5.0
    grouping: GroupingParams = field(default_factory=lambda: GroupingParams(7, 60, 25))
    max_iters: int = 20
    qc_width: float = 0.2
    lambda_gain: float = DEBLOCK_GAIN

    def __post_init__(self):
        if self.rho_balance <= 0:
            raise ValueError(f"rho_balance must be positive, got {self.rho_balance}")
        if min(self.eta, self.c, self.eps, self.tau_stop, self.h, self.lambda_gain) <= 0:
            raise ValueError("eta, c, eps, h, tau_stop and lambda_gain must be positive")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0 < self.qc_width <= 0.5:
            raise ValueError(f"qc_width must be in (0, 0.5], got {self.qc_width}")


# (upper QF, eta, c, tau)
QF_BANDS = ((10, 0.3, 0.9, 0.0007), (20, 0.2, 1.3, 0.0005), (30, 0.2, 1.3, 0.0003), (100, 0.2, 1.5, 0.0003))


def deblock_config(qf: int, **overrides) -> DeblockConfig:
    """Default configuration for a quality factor."""
    if not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be in [1, 100], got {qf}")
    for top, eta, c, tau in QF_BANDS:
        if qf <= top:
            return replace(DeblockConfig(eta=eta, c=c, tau_stop=tau), **overrides)
    raise AssertionError("unreachable")


# ------------------------------------------------------------------ driver


def deblock(compressed, qc: QuantizationContext, cfg: DeblockConfig):
    """Reduce compression artifacts; returns ``(image, IterationTrace)``.

    The trace's ``sigma_t`` column holds the noise level used for the
    group shrinkage at each iteration.
    """
    y = np.asarray(compressed, dtype=float)
    if y.shape != qc.shape:
        raise ValueError(f"image shape {y.shape} does not match context shape {qc.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("compressed image contains non-finite values")
    if cfg.qc_width != qc.qc_width:
        qc = qc.with_width(cfg.qc_width)

    gp = cfg.grouping
    p = gp.patch_side
    refs = reference_positions(y.shape, p, gp.stride)
    sigma_s = sigma_s_estimate(qc.q_matrix)
    trace = IterationTrace()

    x = y.copy()
    z = y.copy()
    for t in range(1, cfg.max_iters + 1):
        sigma_e = max(sigma_e_update(sigma_s, z, y, cfg.eta), SIGMA_E_FLOOR)
        coords = match_all(x, refs, gp)

        def shrink(cs, x=x, sigma_e=sigma_e):
            X = gather_stack(x, cs, p)
            scale = sigma_e**2 / cfg.rho_balance
            out, mu = shrink_stack(
                X,
                reference_stack(X, cfg.h),
                lambda d, s: scale * group_lambda(d, s, sigma_e, cfg.c * cfg.lambda_gain, cfg.eps, gp.group_size),
            )
            return out, float(np.sum(mu))

        acc, mus = process_groups(shrink, coords, y.shape, p)
        z = acc.result()
        weight = sigma_s**2 * cfg.rho_balance / sigma_e**2
        x_new = _combine(y, acc.sums(), acc.coverage(), weight, qc)
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(f"non-finite estimate at iteration {t}")

        rel = relative_change(x_new, x)
        trace.append(t, sigma_e, sum(mus) / (len(refs) * min(p * p, gp.group_size)), rel)
        x = x_new
        if rel < cfg.tau_stop:
            break
    return x, trace
