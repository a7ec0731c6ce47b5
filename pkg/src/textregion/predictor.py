"""Turns region tokens into class scores, dense label maps,
referring-expression boxes, and multi-object grounding masks."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mask_ops import Box, SoftMask, box_iou, mask_to_box
from .region_engine import RegionTokens

# Contrastive-query strings consumed by the CLI layer.
DEFAULT_CONTRAST_QUERY = "Background, any other thing"
INTERPRETED_CONTRAST_TEMPLATE = "Background, anything but {interpreted query}"


class ZeroTokenError(ValueError):
    """A region token had zero norm where cosine scoring is required."""


@dataclass
class LabelSet:
    """Candidate class/query names with unit text embeddings and the
    similarity temperature."""

    names: list
    embeddings: np.ndarray  # (C, d), rows unit-normalized
    temperature: float

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ValueError(f"embeddings must be a (C, d) matrix, got {self.embeddings.shape}")
        if len(self.names) != self.embeddings.shape[0]:
            raise ValueError(
                f"{len(self.names)} names for {self.embeddings.shape[0]} embedding rows"
            )
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        norms = np.linalg.norm(self.embeddings, axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > 1e-4:
            raise ValueError(f"label embeddings must be unit-norm (worst deviation {worst:.2e})")

    def __len__(self):
        return self.embeddings.shape[0]


@dataclass
class RegionLogits:
    """Temperature-scaled cosine scores, one row per region."""

    logits: np.ndarray  # (R, C)
    region_ids: list


@dataclass
class DenseLogits:
    """Per-pixel class logits with the arg-max label map.

    ``label_map`` holds the per-pixel arg-max class wherever
    ``coverage > 0`` and ``ignore_index`` elsewhere.
    """

    logits: np.ndarray  # (C, H, W)
    label_map: np.ndarray  # (H, W) int32
    coverage: np.ndarray  # (H, W)
    ignore_index: int


@dataclass
class ProposalSet:
    boxes: list  # list[Box]


def region_logits(tokens: RegionTokens, labels: LabelSet) -> RegionLogits:
    """``logits[r, c] = temperature * cos(token_r, embedding_c)``."""
    if tokens.tokens.shape[1] != labels.embeddings.shape[1]:
        raise ValueError(
            f"token dim {tokens.tokens.shape[1]} != label dim {labels.embeddings.shape[1]}"
        )
    norms = np.linalg.norm(tokens.tokens, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroTokenError(
            f"region {tokens.region_ids[zero[0]]} has a zero-norm token"
        )
    unit_tokens = tokens.tokens / norms[:, None]
    unit_labels = labels.embeddings / np.linalg.norm(labels.embeddings, axis=1, keepdims=True)
    cos = np.clip(unit_tokens @ unit_labels.T, -1.0, 1.0)
    return RegionLogits(logits=labels.temperature * cos, region_ids=list(tokens.region_ids))


def dense_prediction(scores: RegionLogits, masks, ignore_index: int = 255) -> DenseLogits:
    """Spread region scores onto their full-resolution soft masks.

    ``logits[c, p] = sum_r scores[r, c] * mask_r[p]``; the label map is
    the per-pixel arg-max (first index on ties) where any mask weight
    lands, and ``ignore_index`` where coverage is exactly zero.
    """
    if len(masks) != scores.logits.shape[0]:
        raise ValueError(
            f"{len(masks)} masks for {scores.logits.shape[0]} logit rows"
        )
    if not masks:
        raise ValueError("dense prediction needs at least one region")
    height, width = masks[0].values.shape
    flat = np.empty((len(masks), height * width), dtype=np.float32)
    for r, mask in enumerate(masks):
        if mask.values.shape != (height, width):
            raise ValueError(
                f"mask {mask.region_id} shape {mask.values.shape} != ({height}, {width})"
            )
        flat[r] = mask.values.reshape(-1)
    dense, coverage = kernels.dense_accumulate(scores.logits, flat)
    label_map = np.argmax(dense, axis=0).astype(np.int32)
    label_map[coverage == 0.0] = ignore_index
    return DenseLogits(
        logits=dense.reshape(-1, height, width),
        label_map=label_map.reshape(height, width),
        coverage=coverage.reshape(height, width),
        ignore_index=ignore_index,
    )


def _cosine_to_query(tokens: RegionTokens, query: np.ndarray) -> np.ndarray:
    """Cosines of every token to a unit query; zero tokens score 0."""
    query = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(query)
    if abs(norm - 1.0) > 1e-4:
        raise ValueError(f"query embedding must be unit-norm, got norm {norm:.6f}")
    token_norms = np.linalg.norm(tokens.tokens, axis=1)
    safe = np.where(token_norms > 0.0, token_norms, 1.0)
    return (tokens.tokens @ query) / safe


def refer_select(tokens: RegionTokens, masks, query: np.ndarray,
                 proposals: ProposalSet) -> Box:
    """Pick the region most similar to the query and snap its box to the
    best-overlapping proposal.

    The region is the cosine arg-max (first index on ties, zero tokens
    excluded).  If no proposal overlaps the region's bounding box, the
    region box itself is returned.
    """
    if len(tokens) == 0:
        raise ValueError("no region tokens to select from")
    if len(masks) != len(tokens):
        raise ValueError(f"{len(masks)} masks for {len(tokens)} tokens")
    sims = _cosine_to_query(tokens, query)
    sims = np.where(np.linalg.norm(tokens.tokens, axis=1) > 0.0, sims, -np.inf)
    if not np.isfinite(sims).any():
        raise ZeroTokenError("all region tokens have zero norm")
    best = int(np.argmax(sims))
    region_box = mask_to_box(masks[best])
    best_iou = 0.0
    best_proposal = None
    for box in proposals.boxes:
        iou = box_iou(region_box, box)
        if iou > best_iou:
            best_iou = iou
            best_proposal = box
    return best_proposal if best_proposal is not None else region_box


def ground_select(tokens: RegionTokens, masks, query: np.ndarray,
                  contrast: np.ndarray) -> SoftMask:
    """Union of all regions more similar to the query than to the
    contrastive query; an empty selection yields an all-zero mask."""
    if len(masks) != len(tokens):
        raise ValueError(f"{len(masks)} masks for {len(tokens)} tokens")
    if not masks:
        raise ValueError("grounding needs at least one region")
    sim_query = _cosine_to_query(tokens, query)
    sim_contrast = _cosine_to_query(tokens, contrast)
    selected = np.flatnonzero(sim_query > sim_contrast)
    shape = masks[0].values.shape
    combined = np.zeros(shape, dtype=np.float64)
    for r in selected:
        np.maximum(combined, masks[int(r)].values, out=combined)
    return SoftMask(region_id=-1, values=combined)
