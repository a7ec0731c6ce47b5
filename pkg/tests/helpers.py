"""Shared builders for synthetic bundles, mask sets, and CLI fixtures."""

import numpy as np

from textregion import (
    FeatureBundle,
    HeadSpec,
    LayerNormLayer,
    LinearLayer,
    MaskSet,
    ResidualMlpLayer,
    SoftMask,
    make_mask_set,
    save_mask_set,
    write_bundle,
)
from textregion.bundle_io import CropLayout


def unit_rows(rng, count, dim):
    rows = rng.normal(size=(count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def bilinear_oracle(src, out_h, out_w):
    """Independent per-pixel bilinear resample with half-pixel centers."""
    height, width = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            py = min(max((i + 0.5) * height / out_h - 0.5, 0.0), height - 1.0)
            px = min(max((j + 0.5) * width / out_w - 0.5, 0.0), width - 1.0)
            y0 = int(np.floor(py))
            x0 = int(np.floor(px))
            y1 = min(y0 + 1, height - 1)
            x1 = min(x0 + 1, width - 1)
            ty = py - y0
            tx = px - x0
            top = src[y0, x0] * (1 - tx) + src[y0, x1] * tx
            bot = src[y1, x0] * (1 - tx) + src[y1, x1] * tx
            out[i, j] = top * (1 - ty) + bot * ty
    return out


def set_based_miou(pred, gt, num_classes, ignore_index=255):
    """Independent per-pixel set IoU oracle."""
    scored = gt != ignore_index
    per_class = []
    present = []
    for c in range(num_classes):
        pred_c = {tuple(p) for p in np.argwhere(scored & (pred == c))}
        gt_c = {tuple(p) for p in np.argwhere(scored & (gt == c))}
        union = pred_c | gt_c
        if not union:
            per_class.append(None)
            continue
        iou = len(pred_c & gt_c) / len(union)
        per_class.append(iou)
        present.append(iou)
    return per_class, sum(present) / len(present)


def quantized_soft(rng, shape):
    """Soft values already on the u8 grid so file round-trips are exact."""
    return (rng.integers(0, 256, size=shape).astype(np.float32)) / 255.0


def random_head(rng, dim):
    hidden = int(rng.integers(1, 5))
    layers = [
        LinearLayer(
            weight=rng.normal(size=(hidden, dim)).astype(np.float32),
            bias=rng.normal(size=hidden).astype(np.float32),
        ),
        ResidualMlpLayer(
            w1=rng.normal(size=(2 * hidden, hidden)).astype(np.float32),
            b1=rng.normal(size=2 * hidden).astype(np.float32),
            w2=rng.normal(size=(hidden, 2 * hidden)).astype(np.float32),
            b2=rng.normal(size=hidden).astype(np.float32),
            activation="gelu_tanh" if rng.random() < 0.5 else "gelu_exact",
        ),
        LayerNormLayer(
            scale=rng.normal(size=hidden).astype(np.float32),
            shift=rng.normal(size=hidden).astype(np.float32),
            epsilon=1e-5,
        ),
        LinearLayer(
            weight=rng.normal(size=(dim, hidden)).astype(np.float32),
            bias=rng.normal(size=dim).astype(np.float32),
        ),
    ]
    return HeadSpec(enabled=True, post_pool_layers=layers)


def random_bundle(rng) -> FeatureBundle:
    dim = int(rng.integers(1, 9))
    h0 = int(rng.integers(1, 5))
    w0 = int(rng.integers(1, 5))
    tensors = {"values_full": rng.normal(size=(h0 * w0, dim)).astype(np.float32)}
    crop_layout = None
    crop_grid = None
    if rng.random() < 0.5:
        gy = int(rng.integers(1, 3))
        gx = int(rng.integers(1, 3))
        crop_layout = CropLayout(grid=(gy, gx), crop_px=16, resized_image=(gy * 16, gx * 16))
        crop_grid = (gy * h0, gx * w0)
        tensors["values_crops"] = rng.normal(size=(crop_grid[0] * crop_grid[1], dim)).astype(
            np.float32
        )
        if rng.random() < 0.5:
            tensors["simfeat_crops"] = rng.normal(
                size=(crop_grid[0] * crop_grid[1], dim)
            ).astype(np.float32)
    if rng.random() < 0.5:
        tensors["simfeat_full"] = rng.normal(size=(h0 * w0, dim)).astype(np.float16)
    label_names = None
    if rng.random() < 0.6:
        n_labels = int(rng.integers(1, 5))
        tensors["labels"] = unit_rows(rng, n_labels, dim).astype(np.float32)
        label_names = [f"label{i}" for i in range(n_labels)]
    if rng.random() < 0.3:
        tensors["aux_bytes"] = rng.integers(0, 256, size=(3, 2)).astype(np.uint8)
    head = random_head(rng, dim) if rng.random() < 0.3 else None
    extra = {}
    if rng.random() < 0.4:
        extra = {"note": f"n{int(rng.integers(0, 10))}", "tags": ["a", "b"]}
    return FeatureBundle(
        model_id=f"model-{int(rng.integers(0, 100))}",
        image_size=(int(rng.integers(1, 65)), int(rng.integers(1, 65))),
        embed_dim=dim,
        full_grid=(h0, w0),
        crop_layout=crop_layout,
        crop_grid=crop_grid,
        fusion_weight=float(rng.uniform(0.1, 2.0)),
        temperature=float(rng.uniform(1.0, 120.0)),
        tensors=tensors,
        label_names=label_names,
        head=head,
        extra=extra,
    )


def random_mask_set(rng) -> MaskSet:
    height = int(rng.integers(1, 17))
    width = int(rng.integers(1, 17))
    n_regions = int(rng.integers(0, 5))
    masks = [
        SoftMask(region_id=r, values=quantized_soft(rng, (height, width)))
        for r in range(n_regions)
    ]
    supports = [rng.random(size=(height, width)) < 0.5 for _ in range(n_regions)]
    return MaskSet(
        image_size=(height, width),
        masks=masks,
        supports=supports,
        generator={"source": "random", "seed_hint": int(rng.integers(0, 1000))},
    )


# ---------------------------------------------------------------------------
# Analytic segmentation fixtures (vertical label bands on an aligned grid)
# ---------------------------------------------------------------------------


class BandFixture:
    """A 64x64 image split into vertical bands, one region per band.

    Band widths are multiples of the patch cell size, so bilinear
    downsampling reproduces per-cell constants exactly.  Patch values
    equal each band's label embedding; region soft-mask confidence is
    configurable per band.  Optionally one grid cell of the last band
    is poisoned with the mean of all patch features.
    """

    def __init__(self, band_px=(40, 8, 8, 8), image=64, grid=8, soft=None, poison=False):
        assert sum(band_px) == image
        self.image = image
        self.grid = grid
        self.cell = image // grid
        assert all(b % self.cell == 0 for b in band_px)
        self.band_px = band_px
        self.n_regions = len(band_px)
        self.dim = max(4, self.n_regions)
        self.soft = soft if soft is not None else [1.0] * self.n_regions
        self.poison = poison
        self.labels = np.eye(self.dim, dtype=np.float32)[: self.n_regions]

        # cell -> band lookup by column
        bounds = np.cumsum([0] + list(band_px))
        self.col_band = np.searchsorted(bounds, np.arange(image), side="right") - 1

        features = np.zeros((grid * grid, self.dim), dtype=np.float32)
        for cy in range(grid):
            for cx in range(grid):
                band = self.col_band[cx * self.cell]
                features[cy * grid + cx] = self.labels[band]
        if poison:
            mean_feature = features.mean(axis=0)
            # poison cell: top cell of the last band's column
            self.poison_cell = (0, grid - 1)
            features[self.poison_cell[0] * grid + self.poison_cell[1]] = mean_feature
        self.features = features

    def bundle(self, embed_labels=True) -> FeatureBundle:
        tensors = {
            "values_full": self.features,
            "simfeat_full": self.features.copy(),
        }
        label_names = None
        if embed_labels:
            tensors["labels"] = self.labels
            label_names = [f"class{i}" for i in range(self.n_regions)]
        return FeatureBundle(
            model_id="band-fixture",
            image_size=(self.image, self.image),
            embed_dim=self.dim,
            full_grid=(self.grid, self.grid),
            temperature=100.0,
            tensors=tensors,
            label_names=label_names,
        )

    def mask_set(self) -> MaskSet:
        masks = []
        bounds = np.cumsum([0] + list(self.band_px))
        for r in range(self.n_regions):
            values = np.zeros((self.image, self.image), dtype=np.float64)
            values[:, bounds[r] : bounds[r + 1]] = self.soft[r]
            if self.poison and r == self.n_regions - 1:
                cy, cx = self.poison_cell
                values[
                    cy * self.cell : (cy + 1) * self.cell,
                    cx * self.cell : (cx + 1) * self.cell,
                ] = 1.0
            # keep values on the u8 grid so the file round-trip is exact
            values = np.round(values * 255.0) / 255.0
            masks.append(SoftMask(region_id=r, values=values))
        return make_mask_set(masks, generator={"source": "band-fixture"})

    def ground_truth(self) -> np.ndarray:
        return self.col_band[None, :].repeat(self.image, axis=0).astype(np.int32)


def write_band_case(root, fixture: BandFixture, image_id="img0", embed_labels=True):
    """Lay out bundle/mask/gt directories for the CLI; returns the dirs."""
    from PIL import Image

    bundles = root / "bundles"
    masks = root / "masks"
    gt = root / "gt"
    out = root / "out"
    for d in (bundles, masks, gt, out):
        d.mkdir(parents=True, exist_ok=True)
    write_bundle(fixture.bundle(embed_labels=embed_labels), bundles / f"{image_id}.txrb")
    save_mask_set(fixture.mask_set(), masks / f"{image_id}.txrm")
    Image.fromarray(fixture.ground_truth().astype(np.uint8), mode="L").save(
        gt / f"{image_id}.png"
    )
    return bundles, masks, gt, out
