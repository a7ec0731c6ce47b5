"""Bit-exact reading and writing of feature bundles and mask sets.

Two file formats, both little-endian with JSON headers:

``.txrb`` feature bundle
    magic ``TXRB`` | u32 version=1 | u64 header length | UTF-8 JSON
    header (metadata + tensor record table) | zero padding to a 64-byte
    file boundary (only when tensors exist) | tensor payloads at their
    declared offsets relative to the padded payload base.

``.txrm`` mask set
    magic ``TXRM`` | u32 version=1 | u64 header length | UTF-8 JSON
    header (image size, region count, generator metadata, per-region
    RLE support runs plus offset/length of the quantized soft payload)
    | concatenated u8 payloads.

Soft mask values are stored quantized to u8 (dequantized as value/255,
error at most 1/255) with the binary support run-length encoded as
alternating background/foreground runs in row-major order, background
first.  Bundles and mask sets are immutable after load and safe to
share across threads; writing is single-writer per file.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .mask_ops import SoftMask

BUNDLE_MAGIC = b"TXRB"
MASKSET_MAGIC = b"TXRM"
FORMAT_VERSION = 1
_ALIGN = 64
_HEAD_PREFIX = "__head__"

# dtype tag -> (numpy dtype string, byte width)
DTYPES = {"f32": ("<f4", 4), "f16": ("<f2", 2), "u8": ("|u1", 1)}
_TAG_BY_NP = {np.dtype("float32"): "f32", np.dtype("float16"): "f16", np.dtype("uint8"): "u8"}


class BundleError(Exception):
    """Base class for container format failures."""


class BadMagicError(BundleError):
    pass


class UnsupportedVersionError(BundleError):
    pass


class HeaderError(BundleError):
    """Header bytes are not valid JSON or lack required fields."""


class RecordMismatchError(BundleError):
    """Tensor record table is internally inconsistent."""


class TruncatedPayloadError(BundleError):
    pass


class BundleValidationError(BundleError):
    """Decoded metadata violates a bundle invariant."""


class MaskSetError(Exception):
    """Base class for mask-set file failures."""


class RunLengthError(MaskSetError):
    pass


class PayloadMismatchError(MaskSetError):
    pass


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: str  # one of f32, f16, u8
    shape: tuple
    offset: int
    length: int

    def validate(self):
        if self.dtype not in DTYPES:
            raise RecordMismatchError(f"record {self.name!r}: unknown dtype {self.dtype!r}")
        if not self.shape or any(int(s) <= 0 for s in self.shape):
            raise RecordMismatchError(f"record {self.name!r}: non-positive extent in {self.shape}")
        width = DTYPES[self.dtype][1]
        expected = int(np.prod([int(s) for s in self.shape])) * width
        if self.length != expected:
            raise RecordMismatchError(
                f"record {self.name!r}: length {self.length} != "
                f"product(shape) * width = {expected}"
            )
        if self.offset % _ALIGN != 0:
            raise RecordMismatchError(
                f"record {self.name!r}: offset {self.offset} not {_ALIGN}-byte aligned"
            )


@dataclass(frozen=True)
class CropLayout:
    """Non-overlapping crop tiling of a resized image."""

    grid: tuple  # (gy, gx)
    crop_px: int
    resized_image: tuple  # (H', W')

    def __post_init__(self):
        gy, gx = self.grid
        if gy < 1 or gx < 1:
            raise BundleValidationError(f"crop grid must be >= 1x1, got {self.grid}")
        if self.resized_image != (gy * self.crop_px, gx * self.crop_px):
            raise BundleValidationError(
                f"resized image {self.resized_image} != grid {self.grid} "
                f"x crop_px {self.crop_px}"
            )


def _gelu_tanh(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


_erf = np.vectorize(math.erf)


def _gelu_exact(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + _erf(x / np.sqrt(2.0)))


_ACTIVATIONS = {"gelu_tanh": _gelu_tanh, "gelu_exact": _gelu_exact}


@dataclass
class LinearLayer:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)

    kind = "linear"

    def out_dim(self, in_dim: int) -> int:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise BundleValidationError("linear layer weight/bias shapes inconsistent")
        if self.weight.shape[1] != in_dim:
            raise BundleValidationError(
                f"linear layer expects input dim {self.weight.shape[1]}, got {in_dim}"
            )
        return self.weight.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.weight.astype(np.float64) @ x + self.bias.astype(np.float64)

    def _tensor_fields(self):
        return {"weight": self.weight, "bias": self.bias}

    def _meta(self):
        return {}


@dataclass
class LayerNormLayer:
    scale: np.ndarray  # (d,)
    shift: np.ndarray  # (d,)
    epsilon: float

    kind = "layer_norm"

    def out_dim(self, in_dim: int) -> int:
        if self.scale.shape != (in_dim,) or self.shift.shape != (in_dim,):
            raise BundleValidationError(
                f"layer_norm scale/shift must have dim {in_dim}"
            )
        if self.epsilon <= 0:
            raise BundleValidationError("layer_norm epsilon must be positive")
        return in_dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = x.astype(np.float64)
        mu = x.mean()
        var = x.var()
        return self.scale.astype(np.float64) * (x - mu) / np.sqrt(var + self.epsilon) + self.shift.astype(np.float64)

    def _tensor_fields(self):
        return {"scale": self.scale, "shift": self.shift}

    def _meta(self):
        return {"epsilon": self.epsilon}


@dataclass
class ResidualMlpLayer:
    w1: np.ndarray  # (d_hidden, d)
    b1: np.ndarray  # (d_hidden,)
    w2: np.ndarray  # (d, d_hidden)
    b2: np.ndarray  # (d,)
    activation: str  # gelu_tanh | gelu_exact

    kind = "residual_mlp"

    def out_dim(self, in_dim: int) -> int:
        if self.activation not in _ACTIVATIONS:
            raise BundleValidationError(f"unknown activation {self.activation!r}")
        hidden = self.w1.shape[0]
        ok = (
            self.w1.shape == (hidden, in_dim)
            and self.b1.shape == (hidden,)
            and self.w2.shape == (in_dim, hidden)
            and self.b2.shape == (in_dim,)
        )
        if not ok:
            raise BundleValidationError("residual_mlp layer shapes do not compose")
        return in_dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = x.astype(np.float64)
        act = _ACTIVATIONS[self.activation]
        hidden = act(self.w1.astype(np.float64) @ x + self.b1.astype(np.float64))
        return x + self.w2.astype(np.float64) @ hidden + self.b2.astype(np.float64)

    def _tensor_fields(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def _meta(self):
        return {"activation": self.activation}


_LAYER_KINDS = {
    "linear": LinearLayer,
    "layer_norm": LayerNormLayer,
    "residual_mlp": ResidualMlpLayer,
}


@dataclass
class HeadSpec:
    """Token-wise post-pooling computation of delegate pooling heads."""

    enabled: bool
    post_pool_layers: list

    def output_dim(self, in_dim: int) -> int:
        dim = in_dim
        for layer in self.post_pool_layers:
            dim = layer.out_dim(dim)
        return dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.post_pool_layers:
            out = layer.apply(out)
        return out


def _heads_equal(a, b) -> bool:
    if (a is None) != (b is None):
        return False
    if a is None:
        return True
    if a.enabled != b.enabled or len(a.post_pool_layers) != len(b.post_pool_layers):
        return False
    for la, lb in zip(a.post_pool_layers, b.post_pool_layers):
        if la.kind != lb.kind or la._meta() != lb._meta():
            return False
        ta, tb = la._tensor_fields(), lb._tensor_fields()
        for name in ta:
            if ta[name].dtype != tb[name].dtype or not np.array_equal(ta[name], tb[name]):
                return False
    return True


@dataclass(eq=False)
class FeatureBundle:
    """Per-image patch features plus the metadata the engine needs.

    ``tensors`` maps names to arrays of dtype float32, float16 or
    uint8.  Feature tensors are row-major ``(N, embed_dim)`` matrices:
    ``values_full`` over ``full_grid``, optional ``values_crops`` over
    ``crop_grid``, optional ``simfeat_full``/``simfeat_crops`` with the
    same shapes, and optional ``labels`` with ``label_names``.
    """

    model_id: str
    image_size: tuple  # (H, W)
    embed_dim: int
    full_grid: tuple  # (h0, w0)
    crop_layout: CropLayout | None = None
    crop_grid: tuple | None = None  # (gy*hc, gx*wc), required with values_crops
    fusion_weight: float = 1.0
    temperature: float = 100.0
    tensors: dict = field(default_factory=dict)
    label_names: list | None = None
    head: HeadSpec | None = None
    extra: dict = field(default_factory=dict)  # free-form exporter metadata

    def validate(self):
        if self.fusion_weight <= 0:
            raise BundleValidationError(f"fusion_weight must be > 0, got {self.fusion_weight}")
        if self.temperature <= 0:
            raise BundleValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.embed_dim < 1:
            raise BundleValidationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        for name, extents in (("image_size", self.image_size), ("full_grid", self.full_grid)):
            if len(extents) != 2 or any(int(e) <= 0 for e in extents):
                raise BundleValidationError(f"{name} must be two positive extents, got {extents}")
        for name, arr in self.tensors.items():
            if name.startswith(_HEAD_PREFIX):
                raise BundleValidationError(f"tensor name {name!r} uses the reserved head prefix")
            if arr.dtype not in _TAG_BY_NP:
                raise BundleValidationError(
                    f"tensor {name!r} has unsupported dtype {arr.dtype}; use f32, f16 or u8"
                )
        h0, w0 = self.full_grid
        self._check_feature_shape("values_full", h0 * w0)
        self._check_feature_shape("simfeat_full", h0 * w0)
        if "values_crops" in self.tensors or "simfeat_crops" in self.tensors:
            if self.crop_layout is None or self.crop_grid is None:
                raise BundleValidationError(
                    "crop feature tensors require crop_layout and crop_grid metadata"
                )
            gy, gx = self.crop_layout.grid
            ch, cw = self.crop_grid
            if ch % gy != 0 or cw % gx != 0:
                raise BundleValidationError(
                    f"crop_grid {self.crop_grid} is not divisible by crop layout grid {self.crop_layout.grid}"
                )
            self._check_feature_shape("values_crops", ch * cw)
            self._check_feature_shape("simfeat_crops", ch * cw)
        labels = self.tensors.get("labels")
        if (labels is None) != (self.label_names is None):
            raise BundleValidationError("labels tensor and label_names must be given together")
        if labels is not None:
            if labels.ndim != 2 or labels.shape[1] != self.embed_dim:
                raise BundleValidationError(
                    f"labels tensor must be (C, {self.embed_dim}), got {labels.shape}"
                )
            if len(self.label_names) != labels.shape[0]:
                raise BundleValidationError(
                    f"{len(self.label_names)} label names for {labels.shape[0]} label rows"
                )
        if self.head is not None:
            out_dim = self.head.output_dim(self.embed_dim)
            if labels is not None and out_dim != labels.shape[1]:
                raise BundleValidationError(
                    f"head output dim {out_dim} != label embedding dim {labels.shape[1]}"
                )

    def _check_feature_shape(self, name: str, n_expected: int):
        arr = self.tensors.get(name)
        if arr is None:
            return
        if arr.ndim != 2 or arr.shape != (n_expected, self.embed_dim):
            raise BundleValidationError(
                f"tensor {name!r} must have shape ({n_expected}, {self.embed_dim}) "
                f"per the grid metadata, got {arr.shape}"
            )

    def __eq__(self, other):
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        meta_equal = (
            self.model_id == other.model_id
            and tuple(self.image_size) == tuple(other.image_size)
            and self.embed_dim == other.embed_dim
            and tuple(self.full_grid) == tuple(other.full_grid)
            and self.crop_layout == other.crop_layout
            and (self.crop_grid is None) == (other.crop_grid is None)
            and (self.crop_grid is None or tuple(self.crop_grid) == tuple(other.crop_grid))
            and self.fusion_weight == other.fusion_weight
            and self.temperature == other.temperature
            and self.label_names == other.label_names
            and self.extra == other.extra
        )
        if not meta_equal or not _heads_equal(self.head, other.head):
            return False
        if set(self.tensors) != set(other.tensors):
            return False
        for name, arr in self.tensors.items():
            brr = other.tensors[name]
            if arr.dtype != brr.dtype or arr.shape != brr.shape or not np.array_equal(arr, brr):
                return False
        return True


@dataclass(eq=False)
class MaskSet:
    """Soft region masks with their RLE-decoded binary supports."""

    image_size: tuple  # (H, W)
    masks: list  # list[SoftMask]
    supports: list  # list[np.ndarray] of bool (H, W)
    generator: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.masks)

    def __eq__(self, other):
        if not isinstance(other, MaskSet):
            return NotImplemented
        if tuple(self.image_size) != tuple(other.image_size):
            return False
        if self.generator != other.generator or len(self.masks) != len(other.masks):
            return False
        for m, n, s, t in zip(self.masks, other.masks, self.supports, other.supports):
            if m.region_id != n.region_id:
                return False
            if not np.array_equal(m.values, n.values) or not np.array_equal(s, t):
                return False
        return True


def make_mask_set(masks, image_size=None, generator=None, bin_threshold: float = 0.5) -> MaskSet:
    """Build a MaskSet from soft masks, deriving supports by thresholding."""
    masks = list(masks)
    if image_size is None:
        if not masks:
            raise ValueError("image_size is required for an empty mask set")
        image_size = masks[0].values.shape
    supports = [m.values >= bin_threshold for m in masks]
    return MaskSet(
        image_size=tuple(image_size),
        masks=masks,
        supports=supports,
        generator=dict(generator or {}),
    )


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------


def _align_up(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def _payload_entries(bundle: FeatureBundle):
    """All payload arrays (user tensors plus reserved head tensors) by name."""
    entries = dict(bundle.tensors)
    if bundle.head is not None:
        for i, layer in enumerate(bundle.head.post_pool_layers):
            for fname, arr in layer._tensor_fields().items():
                entries[f"{_HEAD_PREFIX}.{i}.{fname}"] = arr
    return entries


def _build_records(entries):
    records = []
    offset = 0
    for name in sorted(entries):
        arr = entries[name]
        tag = _TAG_BY_NP.get(arr.dtype)
        if tag is None:
            raise BundleValidationError(
                f"tensor {name!r} has unsupported dtype {arr.dtype}"
            )
        length = arr.nbytes
        rec = TensorRecord(name=name, dtype=tag, shape=tuple(int(s) for s in arr.shape),
                           offset=offset, length=length)
        rec.validate()
        records.append(rec)
        offset = _align_up(offset + length)
    return records


def _head_to_meta(head: HeadSpec | None):
    if head is None:
        return None
    layers = []
    for i, layer in enumerate(head.post_pool_layers):
        meta = {"kind": layer.kind}
        meta.update(layer._meta())
        meta["tensors"] = {f: f"{_HEAD_PREFIX}.{i}.{f}" for f in layer._tensor_fields()}
        layers.append(meta)
    return {"enabled": head.enabled, "layers": layers}


def _head_from_meta(meta, arrays):
    if meta is None:
        return None
    layers = []
    for layer_meta in meta["layers"]:
        kind = layer_meta["kind"]
        cls = _LAYER_KINDS.get(kind)
        if cls is None:
            raise HeaderError(f"unknown head layer kind {kind!r}")
        kwargs = {f: arrays[name] for f, name in layer_meta["tensors"].items()}
        if kind == "layer_norm":
            kwargs["epsilon"] = float(layer_meta["epsilon"])
        elif kind == "residual_mlp":
            kwargs["activation"] = layer_meta["activation"]
        layers.append(cls(**kwargs))
    return HeadSpec(enabled=bool(meta["enabled"]), post_pool_layers=layers)


def _bundle_header(bundle: FeatureBundle, records) -> bytes:
    header = {
        "model_id": bundle.model_id,
        "image_size": [int(e) for e in bundle.image_size],
        "embed_dim": int(bundle.embed_dim),
        "full_grid": [int(e) for e in bundle.full_grid],
        "crop_layout": None
        if bundle.crop_layout is None
        else {
            "grid": [int(e) for e in bundle.crop_layout.grid],
            "crop_px": int(bundle.crop_layout.crop_px),
            "resized_image": [int(e) for e in bundle.crop_layout.resized_image],
        },
        "crop_grid": None if bundle.crop_grid is None else [int(e) for e in bundle.crop_grid],
        "fusion_weight": float(bundle.fusion_weight),
        "temperature": float(bundle.temperature),
        "label_names": bundle.label_names,
        "extra": bundle.extra,
        "head": _head_to_meta(bundle.head),
        "tensors": [
            {
                "name": r.name,
                "dtype": r.dtype,
                "shape": list(r.shape),
                "offset": r.offset,
                "length": r.length,
            }
            for r in records
        ],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_bundle(bundle: FeatureBundle, destination) -> int:
    """Serialize a bundle; returns the byte count written.

    Rejects invalid bundles before touching the sink; two writes of an
    equal bundle produce byte-identical files.
    """
    bundle.validate()
    entries = _payload_entries(bundle)
    records = _build_records(entries)
    header = _bundle_header(bundle, records)

    blob = bytearray()
    blob += BUNDLE_MAGIC
    blob += FORMAT_VERSION.to_bytes(4, "little")
    blob += len(header).to_bytes(8, "little")
    blob += header
    if records:
        blob += b"\x00" * (_align_up(len(blob)) - len(blob))
        base = len(blob)
        for rec in records:
            start = base + rec.offset
            blob += b"\x00" * (start - len(blob))
            arr = np.ascontiguousarray(entries[rec.name])
            blob += arr.tobytes()
    data = bytes(blob)
    _write_sink(destination, data)
    return len(data)


def read_bundle(source) -> FeatureBundle:
    """Parse and eagerly validate a bundle file."""
    buf = _read_source(source)
    if len(buf) < 4 or buf[:4] != BUNDLE_MAGIC:
        raise BadMagicError(f"not a TXRB file (magic {buf[:4]!r})")
    if len(buf) < 16:
        raise TruncatedPayloadError("file ends inside the fixed header")
    version = int.from_bytes(buf[4:8], "little")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported bundle version {version}")
    header_len = int.from_bytes(buf[8:16], "little")
    if 16 + header_len > len(buf):
        raise TruncatedPayloadError("header extends past end of file")
    try:
        header = json.loads(buf[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"malformed JSON header: {exc}") from None

    try:
        record_meta = header["tensors"]
        records = [
            TensorRecord(
                name=m["name"],
                dtype=m["dtype"],
                shape=tuple(int(s) for s in m["shape"]),
                offset=int(m["offset"]),
                length=int(m["length"]),
            )
            for m in record_meta
        ]
    except (KeyError, TypeError) as exc:
        raise HeaderError(f"record table missing fields: {exc}") from None
    for rec in records:
        rec.validate()
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise RecordMismatchError("duplicate tensor names in record table")
    prev_end = 0
    for rec in records:
        if rec.offset < prev_end:
            raise RecordMismatchError(
                f"record {rec.name!r} overlaps or is out of ascending offset order"
            )
        prev_end = rec.offset + rec.length

    header_end = 16 + header_len
    if records:
        base = _align_up(header_end)
        if len(buf) < base or any(buf[header_end:base]):
            if len(buf) < base:
                raise TruncatedPayloadError("file ends inside header padding")
            raise RecordMismatchError("nonzero padding between header and payload")
        expected = base + max(r.offset + r.length for r in records)
    else:
        base = header_end
        expected = header_end
    if len(buf) < expected:
        raise TruncatedPayloadError(
            f"payload needs {expected} bytes, file has {len(buf)}"
        )
    if len(buf) > expected:
        raise RecordMismatchError(
            f"{len(buf) - expected} trailing bytes beyond declared payload"
        )

    arrays = {}
    for rec in records:
        npdtype = np.dtype(DTYPES[rec.dtype][0])
        start = base + rec.offset
        raw = buf[start : start + rec.length]
        arrays[rec.name] = np.frombuffer(raw, dtype=npdtype).reshape(rec.shape).copy()

    try:
        head = _head_from_meta(header["head"], arrays)
        crop_layout = None
        if header["crop_layout"] is not None:
            cl = header["crop_layout"]
            crop_layout = CropLayout(
                grid=tuple(cl["grid"]),
                crop_px=int(cl["crop_px"]),
                resized_image=tuple(cl["resized_image"]),
            )
        bundle = FeatureBundle(
            model_id=header["model_id"],
            image_size=tuple(header["image_size"]),
            embed_dim=int(header["embed_dim"]),
            full_grid=tuple(header["full_grid"]),
            crop_layout=crop_layout,
            crop_grid=None if header["crop_grid"] is None else tuple(header["crop_grid"]),
            fusion_weight=float(header["fusion_weight"]),
            temperature=float(header["temperature"]),
            tensors={n: a for n, a in arrays.items() if not n.startswith(_HEAD_PREFIX)},
            label_names=header["label_names"],
            head=head,
            extra=header.get("extra", {}),
        )
    except KeyError as exc:
        raise HeaderError(f"header missing field {exc}") from None
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Mask-set serialization
# ---------------------------------------------------------------------------


def save_mask_set(mask_set: MaskSet, destination) -> int:
    """Serialize a mask set; soft values are quantized to u8."""
    height, width = (int(e) for e in mask_set.image_size)
    if height <= 0 or width <= 0:
        raise PayloadMismatchError(f"bad image size {mask_set.image_size}")
    if len(mask_set.masks) != len(mask_set.supports):
        raise PayloadMismatchError("masks and supports lists differ in length")
    total = height * width
    regions = []
    payloads = []
    offset = 0
    for mask, support in zip(mask_set.masks, mask_set.supports):
        if mask.values.shape != (height, width) or support.shape != (height, width):
            raise PayloadMismatchError(
                f"region {mask.region_id}: mask shape {mask.values.shape} "
                f"does not match image size ({height}, {width})"
            )
        runs = kernels.rle_encode(support.reshape(-1))
        quant = np.round(mask.values.astype(np.float64) * 255.0).astype(np.uint8)
        regions.append(
            {
                "region_id": int(mask.region_id),
                "rle": [int(r) for r in runs],
                "offset": offset,
                "length": total,
            }
        )
        payloads.append(quant.tobytes())
        offset += total
    header = json.dumps(
        {
            "image_size": [height, width],
            "region_count": len(regions),
            "generator": mask_set.generator,
            "regions": regions,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    blob = bytearray()
    blob += MASKSET_MAGIC
    blob += FORMAT_VERSION.to_bytes(4, "little")
    blob += len(header).to_bytes(8, "little")
    blob += header
    for payload in payloads:
        blob += payload
    data = bytes(blob)
    _write_sink(destination, data)
    return len(data)


def load_mask_set(source) -> MaskSet:
    """Parse a mask-set file into soft masks plus binary supports."""
    buf = _read_source(source)
    if len(buf) < 4 or buf[:4] != MASKSET_MAGIC:
        raise BadMagicError(f"not a TXRM file (magic {buf[:4]!r})")
    if len(buf) < 16:
        raise PayloadMismatchError("file ends inside the fixed header")
    version = int.from_bytes(buf[4:8], "little")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported mask-set version {version}")
    header_len = int.from_bytes(buf[8:16], "little")
    if 16 + header_len > len(buf):
        raise PayloadMismatchError("header extends past end of file")
    try:
        header = json.loads(buf[16 : 16 + header_len].decode("utf-8"))
        height, width = (int(e) for e in header["image_size"])
        region_meta = header["regions"]
        generator = header["generator"]
        declared_count = int(header["region_count"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise PayloadMismatchError(f"malformed mask-set header: {exc}") from None
    if declared_count != len(region_meta):
        raise PayloadMismatchError(
            f"region_count {declared_count} != {len(region_meta)} region entries"
        )
    total = height * width
    base = 16 + header_len
    payload_size = len(buf) - base
    masks = []
    supports = []
    for meta in region_meta:
        region_id = int(meta["region_id"])
        offset, length = int(meta["offset"]), int(meta["length"])
        if length != total:
            raise PayloadMismatchError(
                f"region {region_id}: quantized payload length {length} != {total} pixels"
            )
        if offset < 0 or offset + length > payload_size:
            raise PayloadMismatchError(
                f"region {region_id}: payload [{offset}, {offset + length}) "
                f"outside stored {payload_size} bytes"
            )
        try:
            flat = kernels.rle_decode(np.asarray(meta["rle"], dtype=np.int64), total)
        except ValueError as exc:
            raise RunLengthError(f"region {region_id}: {exc}") from None
        supports.append(flat.reshape(height, width).astype(bool))
        quant = np.frombuffer(buf[base + offset : base + offset + length], dtype=np.uint8)
        values = (quant.astype(np.float32) / 255.0).reshape(height, width)
        masks.append(SoftMask(region_id=region_id, values=values))
    return MaskSet(image_size=(height, width), masks=masks, supports=supports, generator=generator)


# ---------------------------------------------------------------------------
# Byte source / sink helpers
# ---------------------------------------------------------------------------


def _read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def _write_sink(destination, data: bytes):
    if hasattr(destination, "write"):
        destination.write(data)
        return
    with open(destination, "wb") as fh:
        fh.write(data)
