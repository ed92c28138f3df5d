"""Nonlocal patch grouping: block matching, reference groups, aggregation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class GroupingParams:
    """Patch side, group size, search window and reference stride (pixels).

    ``stride`` defaults to ``patch_side - 3`` (at least 1).
    """

    patch_side: int
    group_size: int
    window: int
    stride: int | None = None

    def __post_init__(self):
        if self.patch_side < 1:
            raise ValueError(f"patch_side must be >= 1, got {self.patch_side}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if self.window < self.patch_side:
            raise ValueError(
                f"window ({self.window}) must be at least patch_side ({self.patch_side})"
            )
        if self.stride is None:
            object.__setattr__(self, "stride", max(self.patch_side - 3, 1))
        elif self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def dim(self) -> int:
        return self.patch_side * self.patch_side


@dataclass
class PatchGroup:
    """``data`` is d x m, one vectorised patch per column; column 0 is the reference.

    ``coords`` holds the (row, col) top-left corner of each column's patch.
    ``padded`` is set when the search window held fewer than m patches and
    columns were repeated to fill the group.
    """

    data: np.ndarray
    coords: np.ndarray
    patch_side: int
    padded: bool = field(default=False)

    @property
    def size(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PatchGroup":
        data = np.asarray(data, dtype=float)
        if data.shape != self.data.shape:
            raise ValueError(f"data shape {data.shape} != group shape {self.data.shape}")
        return PatchGroup(data, self.coords, self.patch_side, self.padded)


def _as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel 2-D image, got shape {a.shape}")
    return a


def reference_positions(shape, patch_side: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of reference patches on a strided grid.

    The last row and column are clamped to the border so every pixel is
    covered whenever ``stride <= patch_side``.
    """
    rows, cols = shape
    if rows < patch_side or cols < patch_side:
        raise ValueError(f"image {shape} is smaller than a {patch_side}x{patch_side} patch")

    def axis(n):
        last = n - patch_side
        pos = list(range(0, last + 1, stride))
        if pos[-1] != last:
            pos.append(last)
        return pos

    return [(r, c) for r in axis(rows) for c in axis(cols)]


def _window_bounds(pos, shape, patch_side, window):
    half = window // 2
    r, c = pos
    r0 = max(r - half, 0)
    c0 = max(c - half, 0)
    r1 = min(r - half + window - patch_side, shape[0] - patch_side)
    c1 = min(c - half + window - patch_side, shape[1] - patch_side)
    return r0, max(r1, r), c0, max(c1, c)


def match_patches(img, ref_pos, params: GroupingParams) -> tuple[np.ndarray, bool]:
    """Coordinates of the ``group_size`` patches nearest to the reference.

    Candidates are all patches lying entirely inside the L x L window
    centred on the reference (clipped at the borders). The distance is
    the squared Euclidean distance of raw intensities. Column 0 is always
    the reference; the rest follow by ascending distance with ties in
    raster order. Returns ``(coords, padded)``.
    """
    img = _as_image(img)
    p = params.patch_side
    r, c = ref_pos
    if not (0 <= r <= img.shape[0] - p and 0 <= c <= img.shape[1] - p):
        raise ValueError(f"reference {ref_pos} does not fit a {p}x{p} patch in image {img.shape}")

    r0, r1, c0, c1 = _window_bounds(ref_pos, img.shape, p, params.window)
    views = sliding_window_view(img[r0 : r1 + p, c0 : c1 + p], (p, p))
    cand = views.reshape(-1, p * p)
    ref = img[r : r + p, c : c + p].reshape(-1)
    dist = np.einsum("ij,ij->i", cand - ref, cand - ref)

    ncols = c1 - c0 + 1
    ref_idx = (r - r0) * ncols + (c - c0)
    dist[ref_idx] = -1.0
    order = np.argsort(dist, kind="stable")

    m = params.group_size
    padded = order.size < m
    if padded:
        order = order[np.arange(m) % order.size]
    else:
        order = order[:m]
    coords = np.stack([r0 + order // ncols, c0 + order % ncols], axis=1)
    return coords, padded


def patches_at(img, coords, patch_side: int) -> np.ndarray:
    """d x m matrix of the patches at ``coords``."""
    img = _as_image(img)
    coords = np.asarray(coords, dtype=int)
    views = sliding_window_view(img, (patch_side, patch_side))
    return views[coords[:, 0], coords[:, 1]].reshape(len(coords), -1).T.copy()


def gather_stack(img, coords_list, patch_side: int) -> np.ndarray:
    """Stack ``(g, d, m)`` of the groups whose coordinates are given."""
    img = _as_image(img)
    coords = np.asarray(coords_list, dtype=int)
    views = sliding_window_view(img, (patch_side, patch_side))
    g, m = coords.shape[:2]
    cols = views[coords[..., 0], coords[..., 1]]
    return cols.reshape(g, m, -1).transpose(0, 2, 1)


def extract_group(img, ref_pos, params: GroupingParams) -> PatchGroup:
    """Block-match around ``ref_pos`` and stack the patches into a group."""
    coords, padded = match_patches(img, ref_pos, params)
    data = patches_at(img, coords, params.patch_side)
    return PatchGroup(data, coords, params.patch_side, padded)


def reference_weights(stack: np.ndarray, h: float) -> np.ndarray:
    """Nonlocal-means weights ``exp(-||x_0 - x_k||^2 / h) / W``.

    ``stack`` is ``(..., d, m)``; the anchor is column 0. Returns weights of
    shape ``(..., m)`` summing to one over the last axis.
    """
    if not h > 0:
        raise ValueError(f"kernel width h must be positive, got {h}")
    diff = stack - stack[..., :, :1]
    dist = np.einsum("...ij,...ij->...j", diff, diff)
    # the anchor has distance 0, so the largest exponent is 0 and W >= 1
    w = np.exp(-dist / h)
    return w / w.sum(axis=-1, keepdims=True)


def reference_stack(stack: np.ndarray, h: float, literal: bool = False) -> np.ndarray:
    """Reference groups for a ``(..., d, m)`` stack.

    By default every output column is the full weighted average of all m
    columns. With ``literal=True`` column j (0-based) averages only the
    first ``m - j`` columns, with the weights renormalised over them.
    """
    w = reference_weights(stack, h)
    m = stack.shape[-1]
    if not literal:
        mean = np.einsum("...ij,...j->...i", stack, w)
        return np.repeat(mean[..., :, None], m, axis=-1)
    out = np.empty_like(stack, dtype=float)
    for j in range(m):
        wj = w[..., : m - j]
        wj = wj / wj.sum(axis=-1, keepdims=True)
        out[..., :, j] = np.einsum("...ij,...j->...i", stack[..., :, : m - j], wj)
    return out


def estimate_reference_group(group: PatchGroup, h: float, literal: bool = False) -> PatchGroup:
    """Nonlocal-means estimate of the clean group; coordinates are kept."""
    return group.with_data(reference_stack(group.data, h, literal=literal))


class Accumulator:
    """Running per-pixel sum and coverage count for patch aggregation.

    Contributions are added with ``numpy.bincount``, which sums in input
    order, so a fixed call sequence gives bit-identical results.
    """

    def __init__(self, shape, patch_side: int):
        self.shape = tuple(shape)
        self.patch_side = patch_side
        rows, cols = np.meshgrid(np.arange(patch_side), np.arange(patch_side), indexing="ij")
        self._offsets = (rows * self.shape[1] + cols).reshape(-1)
        self.total = np.zeros(self.shape[0] * self.shape[1])
        self.count = np.zeros(self.shape[0] * self.shape[1])

    def _pixel_index(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=int).reshape(-1, 2)
        if coords.size and (
            coords.min() < 0
            or coords[:, 0].max() > self.shape[0] - self.patch_side
            or coords[:, 1].max() > self.shape[1] - self.patch_side
        ):
            raise ValueError(f"patch coordinates fall outside image {self.shape}")
        base = coords[:, 0] * self.shape[1] + coords[:, 1]
        return (base[:, None] + self._offsets[None, :]).reshape(-1)

    def add(self, stack, coords) -> None:
        """Add a ``(g, d, m)`` stack (or one d x m matrix) at ``(g, m, 2)`` coords."""
        stack = np.asarray(stack, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        idx = self._pixel_index(coords)
        vals = stack.transpose(0, 2, 1).reshape(-1)
        n = self.total.size
        self.total += np.bincount(idx, weights=vals, minlength=n)
        self.count += np.bincount(idx, minlength=n)

    def merge(self, other: "Accumulator") -> None:
        self.total += other.total
        self.count += other.count

    def coverage(self) -> np.ndarray:
        return self.count.reshape(self.shape)

    def sums(self) -> np.ndarray:
        return self.total.reshape(self.shape)

    def result(self) -> np.ndarray:
        uncovered = np.flatnonzero(self.count == 0)
        if uncovered.size:
            pix = [divmod(int(i), self.shape[1]) for i in uncovered[:5]]
            raise ValueError(
                f"{uncovered.size} pixel(s) not covered by any patch, first at {pix}"
            )
        return (self.total / self.count).reshape(self.shape)


def aggregate(groups, image_shape) -> np.ndarray:
    """Average all patch contributions per pixel, in group then column order."""
    groups = list(groups)
    if not groups:
        raise ValueError("no groups to aggregate")
    acc = Accumulator(image_shape, groups[0].patch_side)
    for g in groups:
        if g.patch_side != acc.patch_side:
            raise ValueError("groups have mixed patch sizes")
        acc.add(g.data, g.coords[None])
    return acc.result()


# references per work unit; fixed so results do not depend on the thread count
CHUNK = 256


def worker_count() -> int:
    """Worker threads from ``RRC_THREADS`` (0 or unset: one per CPU)."""
    raw = os.environ.get("RRC_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RRC_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"RRC_THREADS must be >= 0, got {n}")
    return n or (os.cpu_count() or 1)


def match_all(img, refs, params: GroupingParams) -> np.ndarray:
    """``(g, m, 2)`` coordinates of the matched group for every reference."""
    img = _as_image(img)
    return np.stack([match_patches(img, r, params)[0] for r in refs])


def process_groups(fn, coords: np.ndarray, image_shape, patch_side: int, threads: int | None = None):
    """Run ``fn`` over fixed chunks of groups and aggregate the outputs.

    ``fn(chunk_coords)`` returns ``(stack, extra)`` where ``stack`` is the
    restored ``(g, d, m)`` block for those coordinates. Chunks are
    accumulated separately and merged in chunk order, so the result is
    bit-identical for any number of threads. Returns the accumulator and
    the list of ``extra`` values in chunk order.
    """
    chunks = [coords[s : s + CHUNK] for s in range(0, len(coords), CHUNK)]

    def work(cs):
        stack, extra = fn(cs)
        acc = Accumulator(image_shape, patch_side)
        acc.add(stack, cs)
        return acc, extra

    n = min(threads or worker_count(), len(chunks))
    if n <= 1:
        results = [work(cs) for cs in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(work, chunks))
    total = Accumulator(image_shape, patch_side)
    for acc, _ in results:
        total.merge(acc)
    return total, [extra for _, extra in results]
