"""Hot numeric kernels, each with a numba and a pure-numpy path.

Every public function here dispatches on ``_accel.USE_NUMBA``.  The two
paths agree to floating-point round-off; tests pin both against
independent oracles.  Shapes follow the conventions of the engine:
masks are row-major grids, feature matrices are ``(N, d)`` with ``N``
the flattened grid length.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Bilinear resampling (half-pixel centers, edge clamp)
# ---------------------------------------------------------------------------


def _axis_plan(src_len: int, out_len: int):
    """Source indices and lerp weights for one resampled axis."""
    pos = (np.arange(out_len, dtype=np.float64) + 0.5) * (src_len / out_len) - 0.5
    np.clip(pos, 0.0, src_len - 1.0, out=pos)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def _resize_bilinear_numpy(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape[0], src.shape[1]
    ly, hy, fy = _axis_plan(h, out_h)
    lx, hx, fx = _axis_plan(w, out_w)
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[ly][:, lx] * (1.0 - fx) + src[ly][:, hx] * fx
    bot = src[hy][:, lx] * (1.0 - fx) + src[hy][:, hx] * fx
    return top * (1.0 - fy) + bot * fy


@njit
def _resize_plane_kernel(src, out):
    h, w = src.shape
    oh, ow = out.shape
    sy = h / oh
    sx = w / ow
    for i in range(oh):
        py = (i + 0.5) * sy - 0.5
        if py < 0.0:
            py = 0.0
        if py > h - 1.0:
            py = h - 1.0
        y0 = int(py)
        y1 = min(y0 + 1, h - 1)
        ty = py - y0
        for j in range(ow):
            px = (j + 0.5) * sx - 0.5
            if px < 0.0:
                px = 0.0
            if px > w - 1.0:
                px = w - 1.0
            x0 = int(px)
            x1 = min(x0 + 1, w - 1)
            tx = px - x0
            top = src[y0, x0] * (1.0 - tx) + src[y0, x1] * tx
            bot = src[y1, x0] * (1.0 - tx) + src[y1, x1] * tx
            out[i, j] = top * (1.0 - ty) + bot * ty


@njit
def _resize_batch_kernel(src, out):
    for r in range(src.shape[0]):
        _resize_plane_kernel(src[r], out[r])


def _resize_bilinear_numba(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim == 2:
        out = np.empty((out_h, out_w), dtype=np.float64)
        _resize_plane_kernel(src, out)
        return out
    # channels-last: resize each plane
    planes = np.ascontiguousarray(np.moveaxis(src, 2, 0))
    out = np.empty((planes.shape[0], out_h, out_w), dtype=np.float64)
    _resize_batch_kernel(planes, out)
    return np.moveaxis(out, 0, 2)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a ``(H, W)`` or ``(H, W, C)`` grid to ``(out_h, out_w)``.

    Output sample ``(i, j)`` reads input coordinate
    ``((i + 0.5) * H / out_h - 0.5, (j + 0.5) * W / out_w - 0.5)``,
    edge-clamped.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"zero-sized target grid ({out_h}, {out_w})")
    if USE_NUMBA:
        return _resize_bilinear_numba(src, out_h, out_w)
    return _resize_bilinear_numpy(src, out_h, out_w)


def resize_mask_batch(stack: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a ``(R, H, W)`` stack of masks to ``(R, out_h, out_w)``."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"zero-sized target grid ({out_h}, {out_w})")
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty((stack.shape[0], out_h, out_w), dtype=np.float64)
        _resize_batch_kernel(stack, out)
        return out
    ly, hy, fy = _axis_plan(stack.shape[1], out_h)
    lx, hx, fx = _axis_plan(stack.shape[2], out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = stack[:, ly][:, :, lx] * (1.0 - fx) + stack[:, ly][:, :, hx] * fx
    bot = stack[:, hy][:, :, lx] * (1.0 - fx) + stack[:, hy][:, :, hx] * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# Run-length codec (alternating background/foreground runs, background first)
# ---------------------------------------------------------------------------


@njit
def _rle_decode_kernel(runs, out):
    pos = 0
    total = out.shape[0]
    for k in range(runs.shape[0]):
        n = runs[k]
        if n < 0:
            return -1
        if pos + n > total:
            return -2
        if k % 2 == 1:
            for t in range(pos, pos + n):
                out[t] = 1
        pos += n
    return pos


def rle_decode(runs: np.ndarray, total: int) -> np.ndarray:
    """Decode alternating bg/fg run lengths into a flat uint8 vector.

    Raises ``ValueError`` when the run total does not equal ``total``.
    """
    runs = np.asarray(runs, dtype=np.int64)
    if USE_NUMBA:
        out = np.zeros(total, dtype=np.uint8)
        got = _rle_decode_kernel(runs, out)
        if got != total:
            raise ValueError(
                f"RLE run total does not match pixel count {total}"
            )
        return out
    if runs.size and runs.min() < 0:
        raise ValueError("negative RLE run length")
    if int(runs.sum()) != total:
        raise ValueError(f"RLE run total does not match pixel count {total}")
    vals = np.zeros(runs.size, dtype=np.uint8)
    vals[1::2] = 1
    return np.repeat(vals, runs)


@njit
def _rle_encode_kernel(flat, runs):
    n = flat.shape[0]
    count = 0
    cur = 0  # runs alternate starting from background
    run = 0
    for i in range(n):
        v = 1 if flat[i] != 0 else 0
        if v == cur:
            run += 1
        else:
            runs[count] = run
            count += 1
            cur = 1 - cur
            run = 1
    runs[count] = run
    return count + 1


def rle_encode(flat: np.ndarray) -> np.ndarray:
    """Encode a flat binary vector as alternating bg/fg run lengths."""
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    if flat.size == 0:
        raise ValueError("cannot run-length encode an empty vector")
    if USE_NUMBA:
        scratch = np.empty(flat.size + 1, dtype=np.int64)
        count = _rle_encode_kernel(flat, scratch)
        return scratch[:count].copy()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).astype(np.int64)
    if flat[0] != 0:
        runs = np.concatenate(([np.int64(0)], runs))
    return runs


# ---------------------------------------------------------------------------
# Region pooling and dense accumulation
# ---------------------------------------------------------------------------


@njit
def _pool_sum_kernel(masks, values, out):
    n_regions, n_patches = masks.shape
    dim = values.shape[1]
    for r in range(n_regions):
        for i in range(n_patches):
            m = masks[r, i]
            if m != 0.0:
                for k in range(dim):
                    out[r, k] += m * values[i, k]


def _pool_sum_numba(masks, values):
    out = np.zeros((masks.shape[0], values.shape[1]), dtype=np.float64)
    _pool_sum_kernel(masks, values, out)
    return out


def pool_sum(masks: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Mask-weighted feature sums: ``out[r] = sum_i masks[r, i] * values[i]``.

    Matmul-shaped; BLAS beats the JIT loop at every realistic size, so
    both backends share the numpy path (numba variant kept for the
    benchmark).
    """
    masks = np.ascontiguousarray(masks, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    return masks @ values


@njit
def _masked_mean_kernel(masks, values, out, counts):
    n_regions, n_patches = masks.shape
    dim = values.shape[1]
    for r in range(n_regions):
        c = 0
        for i in range(n_patches):
            if masks[r, i] != 0.0:
                c += 1
                for k in range(dim):
                    out[r, k] += values[i, k]
        counts[r] = c
        if c > 0:
            for k in range(dim):
                out[r, k] /= c


def _masked_mean_numba(masks, values):
    out = np.zeros((masks.shape[0], values.shape[1]), dtype=np.float64)
    counts = np.zeros(masks.shape[0], dtype=np.int64)
    _masked_mean_kernel(masks, values, out, counts)
    return out, counts


def masked_mean(masks: np.ndarray, values: np.ndarray):
    """Mean of value rows over each region's nonzero mask entries.

    Returns ``(means, counts)``; a region with no nonzero entry keeps a
    zero mean and count 0.  Matmul-shaped, so both backends share the
    BLAS path.
    """
    masks = np.ascontiguousarray(masks, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    binary = (masks != 0.0).astype(np.float64)
    counts = binary.sum(axis=1).astype(np.int64)
    sums = binary @ values
    means = np.zeros_like(sums)
    nonzero = counts > 0
    means[nonzero] = sums[nonzero] / counts[nonzero, None]
    return means, counts


@njit
def _dense_accumulate_kernel(scores, masks, dense, coverage):
    n_regions, n_classes = scores.shape
    n_pixels = masks.shape[1]
    for r in range(n_regions):
        for p in range(n_pixels):
            coverage[p] += masks[r, p]
        for c in range(n_classes):
            s = scores[r, c]
            if s != 0.0:
                for p in range(n_pixels):
                    dense[c, p] += s * masks[r, p]


def _dense_accumulate_numba(scores, masks_flat):
    dense = np.zeros((scores.shape[1], masks_flat.shape[1]), dtype=np.float32)
    coverage = np.zeros(masks_flat.shape[1], dtype=np.float32)
    _dense_accumulate_kernel(scores, masks_flat, dense, coverage)
    return dense, coverage


def dense_accumulate(scores: np.ndarray, masks_flat: np.ndarray):
    """Spread per-region class scores onto pixels.

    ``dense[c, p] = sum_r scores[r, c] * masks_flat[r, p]`` with
    ``coverage[p] = sum_r masks_flat[r, p]``.  Accumulation runs in
    region order, so results are bit-stable across runs.

    This is matmul-shaped, so the default path is BLAS regardless of
    the backend flag; the numba variant exists for the benchmark.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float32)
    masks_flat = np.ascontiguousarray(masks_flat, dtype=np.float32)
    dense = scores.T @ masks_flat
    coverage = masks_flat.sum(axis=0)
    return dense, coverage
