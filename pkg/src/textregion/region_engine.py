"""Region-token core: multi-resolution fusion, global-patch filtering,
and mask-weighted attention pooling.

All operations are pure and deterministic; reductions within one token
run in a fixed order, so repeated runs are bit-identical at equal
thread counts.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .bundle_io import CropLayout, HeadSpec
from .mask_ops import PatchMask

__all__ = [
    "CropLayout",
    "PatchFeatures",
    "RegionTokens",
    "GlobalPatchReport",
    "EngineConfig",
    "GridMismatchError",
    "plan_crops",
    "fuse_multires",
    "local_similarity",
    "filter_global",
    "pool_regions",
    "pool_regions_delegate",
]


class GridMismatchError(ValueError):
    """Feature and mask grids do not line up."""


@dataclass
class PatchFeatures:
    """Row-major ``(N, d)`` feature matrix over an ``(h, w)`` patch grid."""

    features: np.ndarray
    grid: tuple  # (h, w)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        h, w = self.grid
        if self.features.ndim != 2 or self.features.shape[0] != h * w:
            raise GridMismatchError(
                f"features shape {self.features.shape} does not match grid {self.grid}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("patch features must be finite")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def as_plane(self) -> np.ndarray:
        """View features as an (h, w, d) grid."""
        h, w = self.grid
        return self.features.reshape(h, w, self.features.shape[1])


@dataclass
class RegionTokens:
    """One pooled token per surviving region.

    ``is_empty`` flags regions whose mask had no positive weight; their
    token rows are zero.
    """

    tokens: np.ndarray  # (R, d)
    region_ids: list
    is_empty: np.ndarray  # (R,) bool

    def __len__(self):
        return self.tokens.shape[0]


@dataclass
class GlobalPatchReport:
    """Per (region, member patch) similarity scores from the
    intra/inter-region consistency check.

    ``s_local = s_in - s_out``; a pair is flagged global for a given
    threshold ``tau`` exactly when ``s_local < tau``.
    """

    region_index: np.ndarray  # (K,) index into the patch-mask list
    patch_index: np.ndarray  # (K,) flat patch index
    s_in: np.ndarray  # (K,)
    s_out: np.ndarray  # (K,)
    s_local: np.ndarray  # (K,)

    def flagged(self, tau: float) -> np.ndarray:
        return self.s_local < tau


@dataclass
class EngineConfig:
    """Knobs of the region-token pipeline."""

    tau: float = 0.07
    fusion_weight: float = 1.0
    membership_threshold: float = 0.0
    similarity_source: str = "block_input"  # block_input | value
    empty_region_policy: str = "fallback_unfiltered"  # fallback_unfiltered | drop

    def __post_init__(self):
        if not -2.0 < self.tau < 2.0:
            raise ValueError(f"tau must lie in (-2, 2), got {self.tau}")
        if self.fusion_weight <= 0:
            raise ValueError(f"fusion_weight must be > 0, got {self.fusion_weight}")
        if self.similarity_source not in ("block_input", "value"):
            raise ValueError(f"unknown similarity_source {self.similarity_source!r}")
        if self.empty_region_policy not in ("fallback_unfiltered", "drop"):
            raise ValueError(f"unknown empty_region_policy {self.empty_region_policy!r}")


def plan_crops(image_size, crop_px: int) -> CropLayout:
    """Tile an image into non-overlapping crops of ``crop_px`` pixels.

    Crop counts are the rounded (half-up) ratio of each extent to the
    crop size, clamped to at least 1; the image is resized to the exact
    multiple.
    """
    height, width = (int(e) for e in image_size)
    if height <= 0 or width <= 0 or crop_px <= 0:
        raise ValueError(f"image size and crop size must be positive, got {image_size}, {crop_px}")
    gy = max(1, int(height / crop_px + 0.5))
    gx = max(1, int(width / crop_px + 0.5))
    return CropLayout(grid=(gy, gx), crop_px=crop_px, resized_image=(gy * crop_px, gx * crop_px))


def fuse_multires(full: PatchFeatures, crops: PatchFeatures, layout: CropLayout,
                  fusion_weight: float) -> PatchFeatures:
    """Combine crop-level detail with upsampled full-view context.

    ``fused = crops + fusion_weight * upsample(full)`` where the
    upsample is the same half-pixel bilinear resampling used for masks,
    applied channel-wise onto the crop grid.
    """
    gy, gx = layout.grid
    ch, cw = crops.grid
    if ch % gy != 0 or cw % gx != 0:
        raise GridMismatchError(
            f"crop feature grid {crops.grid} is not divisible by crop layout grid {layout.grid}"
        )
    h0, w0 = full.grid
    if h0 > ch or w0 > cw:
        raise GridMismatchError(
            f"full grid {full.grid} exceeds crop grid {crops.grid}"
        )
    if full.dim != crops.dim:
        raise GridMismatchError(
            f"feature dims differ: full {full.dim} vs crops {crops.dim}"
        )
    upsampled = kernels.resize_bilinear(full.as_plane(), ch, cw)
    fused = crops.features.astype(np.float64) + fusion_weight * upsampled.reshape(ch * cw, -1)
    return PatchFeatures(features=fused, grid=(ch, cw))


def _unit_rows(features: np.ndarray) -> np.ndarray:
    feats = features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return feats / safe


def local_similarity(simfeat: PatchFeatures, patch_masks, membership_threshold: float = 0.0
                     ) -> GlobalPatchReport:
    """Intra- minus inter-region cosine similarity for every member patch.

    A patch belongs to region r when its downsampled mask weight
    exceeds ``membership_threshold``.  For member patch i,
    ``s_in`` is the mean cosine to all member patches (self included)
    and ``s_out`` the mean cosine to all non-members (0 when the region
    covers every patch).  Regions without members contribute no rows.
    """
    if not patch_masks:
        raise ValueError("at least one region is required")
    n = simfeat.features.shape[0]
    unit = _unit_rows(simfeat.features)
    total = unit.sum(axis=0)

    region_idx, patch_idx, s_in_all, s_out_all = [], [], [], []
    for r, mask in enumerate(patch_masks):
        if mask.values.size != n:
            raise GridMismatchError(
                f"patch mask {mask.region_id} grid {mask.grid} does not match feature grid {simfeat.grid}"
            )
        members = np.flatnonzero(mask.flat() > membership_threshold)
        k = members.size
        if k == 0:
            continue
        inside = unit[members].sum(axis=0)
        outside = total - inside
        n_out = n - k
        s_in = unit[members] @ inside / k
        if n_out > 0:
            s_out = unit[members] @ outside / n_out
        else:
            s_out = np.zeros(k)
        region_idx.append(np.full(k, r, dtype=np.int64))
        patch_idx.append(members.astype(np.int64))
        s_in_all.append(np.clip(s_in, -1.0, 1.0))
        s_out_all.append(np.clip(s_out, -1.0, 1.0))

    if region_idx:
        region_index = np.concatenate(region_idx)
        patch_index = np.concatenate(patch_idx)
        s_in = np.concatenate(s_in_all)
        s_out = np.concatenate(s_out_all)
    else:
        region_index = np.zeros(0, dtype=np.int64)
        patch_index = np.zeros(0, dtype=np.int64)
        s_in = np.zeros(0)
        s_out = np.zeros(0)
    return GlobalPatchReport(
        region_index=region_index,
        patch_index=patch_index,
        s_in=s_in,
        s_out=s_out,
        s_local=s_in - s_out,
    )


def filter_global(patch_masks, report: GlobalPatchReport, tau: float,
                  policy: str = "fallback_unfiltered"):
    """Zero out mask weights of patches flagged global (``s_local < tau``).

    A region whose mask becomes all-zero is restored to its unfiltered
    mask under ``fallback_unfiltered`` or removed under ``drop``.
    """
    if policy not in ("fallback_unfiltered", "drop"):
        raise ValueError(f"unknown empty_region_policy {policy!r}")
    flagged = report.flagged(tau)
    filtered = []
    for r, mask in enumerate(patch_masks):
        rows = flagged & (report.region_index == r)
        values = mask.values.copy()
        if rows.any():
            values.reshape(-1)[report.patch_index[rows]] = 0.0
        if not np.any(values > 0.0) and np.any(mask.values > 0.0):
            if policy == "fallback_unfiltered":
                values = mask.values.copy()
            else:
                continue
        filtered.append(PatchMask(region_id=mask.region_id, values=values))
    return filtered


def pool_regions(values: PatchFeatures, patch_masks) -> RegionTokens:
    """Mask-weighted sums of patch values, one token per region.

    Weights are used as-is (no normalization); downstream cosine
    scoring is scale-invariant.  All-zero masks yield zero tokens
    flagged via ``is_empty``.
    """
    stack = _mask_matrix(values, patch_masks)
    tokens = kernels.pool_sum(stack, values.features)
    is_empty = ~np.any(stack > 0.0, axis=1)
    return RegionTokens(
        tokens=tokens,
        region_ids=[m.region_id for m in patch_masks],
        is_empty=is_empty,
    )


def pool_regions_delegate(values: PatchFeatures, patch_masks, head: HeadSpec,
                          policy: str = "fallback_unfiltered") -> RegionTokens:
    """Pooling for delegate-query heads: masked attention collapses to a
    plain mean over patches with nonzero mask weight, followed by the
    head's post-pool layers.

    Because the key sequence is the averaged patch feature replicated,
    all unmasked attention logits are equal; only the zero/nonzero
    pattern of the mask matters.  Regions with no unmasked patch follow
    ``policy``: kept as zero tokens (``fallback_unfiltered``) or
    removed (``drop``).
    """
    if head is None or not head.enabled:
        raise ValueError("delegate pooling requires an enabled head")
    if policy not in ("fallback_unfiltered", "drop"):
        raise ValueError(f"unknown empty_region_policy {policy!r}")
    stack = _mask_matrix(values, patch_masks)
    means, counts = kernels.masked_mean(stack, values.features)
    out_dim = head.output_dim(values.dim)
    keep = []
    tokens = []
    is_empty = []
    for r, mask in enumerate(patch_masks):
        if counts[r] == 0:
            if policy == "drop":
                continue
            keep.append(mask.region_id)
            tokens.append(np.zeros(out_dim))
            is_empty.append(True)
            continue
        keep.append(mask.region_id)
        tokens.append(head.apply(means[r]))
        is_empty.append(False)
    token_matrix = np.vstack(tokens) if tokens else np.zeros((0, out_dim))
    return RegionTokens(
        tokens=token_matrix,
        region_ids=keep,
        is_empty=np.asarray(is_empty, dtype=bool),
    )


def _mask_matrix(values: PatchFeatures, patch_masks) -> np.ndarray:
    n = values.features.shape[0]
    stack = np.empty((len(patch_masks), n), dtype=np.float64)
    for r, mask in enumerate(patch_masks):
        if mask.values.size != n:
            raise GridMismatchError(
                f"patch mask {mask.region_id} grid {mask.grid} does not match "
                f"feature grid {values.grid}"
            )
        stack[r] = mask.flat()
    return stack
