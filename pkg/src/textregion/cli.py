"""Command-line workflows over bundle/mask directories.

Commands: ``segment``, ``refer``, ``ground``, ``eval-seg``,
``eval-rec``, ``eval-ground``, ``inspect``.  Exit codes: 0 success,
1 some images failed (logged and counted), 2 configuration or path
errors, 3 malformed bundle/mask files.  Every non-zero exit writes one
machine-parsable JSON line to stderr.
"""

import argparse
import colorsys
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .bundle_io import (
    BundleError,
    BundleValidationError,
    MaskSetError,
    load_mask_set,
    read_bundle,
)
from .mask_ops import Box, PatchMask, SoftMask
from .metrics import (
    ConfusionMatrix,
    GroundingTally,
    accumulate_confusion,
    miou,
    rec_accuracy,
    summarize,
    write_metrics_csv,
)
from .predictor import (
    DEFAULT_CONTRAST_QUERY,
    LabelSet,
    ProposalSet,
    dense_prediction,
    ground_select,
    refer_select,
    region_logits,
)
from .region_engine import (
    EngineConfig,
    PatchFeatures,
    filter_global,
    fuse_multires,
    local_similarity,
    pool_regions,
    pool_regions_delegate,
)

EXIT_OK = 0
EXIT_IMAGE_FAILURES = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3


class ConfigError(Exception):
    """Bad flags, missing paths, or unresolvable inputs (exit 2)."""


@dataclass
class RunConfig:
    """Validated inputs of one CLI run."""

    bundles: Path
    masks: Path
    out: Path
    labels: Path | None = None
    images: Path | None = None
    gt: Path | None = None
    queries: Path | None = None
    assignments: Path | None = None
    proposals: Path | None = None
    ignore_masks: Path | None = None
    engine: EngineConfig = field(default_factory=EngineConfig)
    fusion_override: float | None = None
    ignore_index: int = 255
    contrast_template: str = DEFAULT_CONTRAST_QUERY
    threads: int = 1

    def validate(self, need=()):
        if self.threads < 1:
            raise ConfigError(f"thread count must be >= 1, got {self.threads}")
        if not 0 <= self.ignore_index <= 255:
            raise ConfigError(f"ignore index must fit u8 label maps, got {self.ignore_index}")
        for name in ("bundles", "masks") + tuple(need):
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"--{name.replace('_', '-')} is required for this command")
            if not Path(path).exists():
                raise ConfigError(f"path does not exist: {path}")
        self.out.mkdir(parents=True, exist_ok=True)


def _error_line(message: str, code: int):
    sys.stderr.write(json.dumps({"error": message, "exit": code}) + "\n")


def _image_ids(config: RunConfig):
    ids = sorted(p.stem for p in Path(config.bundles).glob("*.txrb"))
    if not ids:
        raise ConfigError(f"no .txrb bundles found in {config.bundles}")
    missing = [str(Path(config.masks) / f"{i}.txrm") for i in ids
               if not (Path(config.masks) / f"{i}.txrm").exists()]
    if missing:
        raise ConfigError(f"missing mask file: {missing[0]}")
    return ids


def _load_label_set(config: RunConfig, bundle=None) -> LabelSet:
    source = None
    if config.labels is not None:
        source = read_bundle(config.labels)
    elif bundle is not None and "labels" in bundle.tensors:
        source = bundle
    if source is None:
        raise ConfigError("no label embeddings: pass --labels or bundle-embedded labels")
    if "labels" not in source.tensors:
        raise ConfigError(f"labels file {config.labels} carries no 'labels' tensor")
    return LabelSet(
        names=list(source.label_names),
        embeddings=source.tensors["labels"].astype(np.float64),
        temperature=source.temperature,
    )


def _check_label_dims(bundle, labels: LabelSet):
    token_dim = bundle.embed_dim
    if bundle.head is not None and bundle.head.enabled:
        token_dim = bundle.head.output_dim(bundle.embed_dim)
    if labels.embeddings.shape[1] != token_dim:
        raise BundleValidationError(
            f"bundle token dim {token_dim} does not match label embedding dim "
            f"{labels.embeddings.shape[1]}"
        )


def _engine_features(bundle, config: RunConfig):
    """Working value features (multi-resolution fused when crops exist)
    plus the similarity features selected by the config."""
    tensors = bundle.tensors
    if "values_full" not in tensors:
        raise BundleValidationError("bundle has no values_full tensor")
    full = PatchFeatures(tensors["values_full"].astype(np.float64), bundle.full_grid)
    if "values_crops" in tensors:
        crops = PatchFeatures(tensors["values_crops"].astype(np.float64), bundle.crop_grid)
        lam = config.fusion_override if config.fusion_override is not None else bundle.fusion_weight
        values = fuse_multires(full, crops, bundle.crop_layout, lam)
        sim_name, sim_grid = "simfeat_crops", bundle.crop_grid
    else:
        values = full
        sim_name, sim_grid = "simfeat_full", bundle.full_grid
    if config.engine.similarity_source == "value":
        simfeat = values
    else:
        if sim_name not in tensors:
            raise ConfigError(
                f"similarity_source=block_input needs tensor {sim_name!r} in the bundle "
                f"(or pass --similarity-source value)"
            )
        simfeat = PatchFeatures(tensors[sim_name].astype(np.float64), sim_grid)
    return values, simfeat


def _region_tokens(bundle, mask_set, config: RunConfig):
    """Fuse, downsample, filter, and pool one image.

    Returns region tokens aligned with the surviving full-resolution
    soft masks.
    """
    values, simfeat = _engine_features(bundle, config)
    if len(mask_set) == 0:
        return None, []
    grid_h, grid_w = values.grid
    stack = np.stack([m.values for m in mask_set.masks]).astype(np.float64)
    down = kernels.resize_mask_batch(stack, grid_h, grid_w)
    patch_masks = [
        PatchMask(region_id=m.region_id, values=down[i])
        for i, m in enumerate(mask_set.masks)
    ]
    report = local_similarity(simfeat, patch_masks, config.engine.membership_threshold)
    filtered = filter_global(
        patch_masks, report, config.engine.tau, config.engine.empty_region_policy
    )
    # Realign the full-resolution masks with the surviving subsequence,
    # then drop regions whose downsampled mask carries no weight at all.
    kept_full = []
    j = 0
    for pm in filtered:
        while mask_set.masks[j].region_id != pm.region_id:
            j += 1
        kept_full.append(mask_set.masks[j])
        j += 1
    pooled_input = [pm for pm in filtered if np.any(pm.values > 0.0)]
    kept_full = [f for pm, f in zip(filtered, kept_full) if np.any(pm.values > 0.0)]
    if not pooled_input:
        return None, []
    if bundle.head is not None and bundle.head.enabled:
        tokens = pool_regions_delegate(
            values, pooled_input, bundle.head, config.engine.empty_region_policy
        )
    else:
        tokens = pool_regions(values, pooled_input)
    return tokens, kept_full


def _segment_one(bundle, mask_set, labels: LabelSet, config: RunConfig):
    """Full pipeline for one image; returns the dense label map."""
    _check_label_dims(bundle, labels)
    tokens, kept_full = _region_tokens(bundle, mask_set, config)
    height, width = (int(e) for e in bundle.image_size)
    if tokens is None or len(tokens) == 0:
        return np.full((height, width), config.ignore_index, dtype=np.int32)
    scores = region_logits(tokens, labels)
    dense = dense_prediction(scores, kept_full, config.ignore_index)
    if dense.label_map.shape != (height, width):
        raise BundleValidationError(
            f"mask resolution {dense.label_map.shape} does not match "
            f"bundle image size {(height, width)}"
        )
    return dense.label_map


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def class_palette() -> np.ndarray:
    """Deterministic 256-entry RGB palette; index 255 is black."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for i in range(255):
        hue = (i * 0.61803398875) % 1.0
        value = 0.95 if i % 2 == 0 else 0.70
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, value)
        palette[i] = (int(r * 255), int(g * 255), int(b * 255))
    return palette


def _write_label_png(path: Path, label_map: np.ndarray):
    img = Image.fromarray(label_map.astype(np.uint8), mode="P")
    img.putpalette(class_palette().reshape(-1).tolist())
    img.save(path)


def _write_overlay_png(path: Path, label_map: np.ndarray, ignore_index: int,
                       base_image: np.ndarray | None):
    height, width = label_map.shape
    if base_image is None:
        base = np.full((height, width, 3), 128, dtype=np.uint8)
    else:
        base = base_image
    colors = class_palette()[np.clip(label_map, 0, 255)]
    covered = label_map != ignore_index
    overlay = base.copy()
    overlay[covered] = ((base[covered].astype(np.uint16) + colors[covered]) // 2).astype(np.uint8)
    Image.fromarray(overlay, mode="RGB").save(path)


def _load_base_image(config: RunConfig, image_id: str, shape):
    if config.images is None:
        return None
    for ext in (".png", ".jpg", ".jpeg"):
        path = Path(config.images) / f"{image_id}{ext}"
        if path.exists():
            img = Image.open(path).convert("RGB").resize((shape[1], shape[0]), Image.NEAREST)
            return np.asarray(img)
    return None


def _load_label_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2:
        raise ConfigError(f"{path} is not a single-channel label map")
    return arr.astype(np.int32)


def _load_binary_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.float32)


# ---------------------------------------------------------------------------
# Per-command drivers
# ---------------------------------------------------------------------------


def _map_images(config: RunConfig, ids, worker):
    """Run ``worker(image_id)`` across images; deterministic reduce order.

    Returns ``(results, failures)`` where results is an id-keyed dict.
    """
    results = {}
    failures = []

    def run(image_id):
        return image_id, worker(image_id)

    if config.threads == 1:
        for image_id in ids:
            try:
                results[image_id] = worker(image_id)
            except (BundleError, MaskSetError, ConfigError):
                raise
            except Exception as exc:  # per-image numeric/data failure
                failures.append((image_id, f"{type(exc).__name__}: {exc}"))
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = {pool.submit(run, image_id): image_id for image_id in ids}
            for future, image_id in futures.items():
                try:
                    key, value = future.result()
                    results[key] = value
                except (BundleError, MaskSetError, ConfigError):
                    raise
                except Exception as exc:
                    failures.append((image_id, f"{type(exc).__name__}: {exc}"))
    for image_id, message in sorted(failures):
        sys.stderr.write(json.dumps({"image": image_id, "error": message}) + "\n")
    return results, failures


def _load_pair(config: RunConfig, image_id: str):
    bundle = read_bundle(Path(config.bundles) / f"{image_id}.txrb")
    mask_set = load_mask_set(Path(config.masks) / f"{image_id}.txrm")
    if tuple(mask_set.image_size) != tuple(bundle.image_size):
        raise BundleValidationError(
            f"{image_id}: mask set resolution {tuple(mask_set.image_size)} "
            f"!= bundle image size {tuple(bundle.image_size)}"
        )
    return bundle, mask_set


def cmd_segment(config: RunConfig) -> int:
    config.validate()
    ids = _image_ids(config)
    shared_labels = _load_label_set(config) if config.labels is not None else None

    def worker(image_id):
        bundle, mask_set = _load_pair(config, image_id)
        labels = shared_labels if shared_labels is not None else _load_label_set(config, bundle)
        label_map = _segment_one(bundle, mask_set, labels, config)
        _write_label_png(Path(config.out) / f"{image_id}.png", label_map)
        base = _load_base_image(config, image_id, label_map.shape)
        _write_overlay_png(
            Path(config.out) / f"{image_id}_overlay.png",
            label_map,
            config.ignore_index,
            base,
        )
        return True

    _, failures = _map_images(config, ids, worker)
    if failures:
        _error_line(f"{len(failures)} image(s) failed during segment", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    return EXIT_OK


def cmd_eval_seg(config: RunConfig) -> int:
    config.validate(need=("gt",))
    ids = _image_ids(config)
    for image_id in ids:
        if not (Path(config.gt) / f"{image_id}.png").exists():
            raise ConfigError(f"missing ground truth: {Path(config.gt) / (image_id + '.png')}")
    shared_labels = _load_label_set(config) if config.labels is not None else None

    def worker(image_id):
        bundle, mask_set = _load_pair(config, image_id)
        labels = shared_labels if shared_labels is not None else _load_label_set(config, bundle)
        label_map = _segment_one(bundle, mask_set, labels, config)
        gt = _load_label_png(Path(config.gt) / f"{image_id}.png")
        cm = ConfusionMatrix.zeros(len(labels))
        accumulate_confusion(cm, label_map, gt, config.ignore_index)
        return cm, labels.names

    results, failures = _map_images(config, ids, worker)
    if not results:
        _error_line("every image failed during eval-seg", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    names = next(iter(results.values()))[1]
    total = ConfusionMatrix.zeros(len(names))
    for image_id in sorted(results):
        total = total.merge(results[image_id][0])
    per_class, mean = miou(total)
    rows = [("miou", "", mean)]
    rows += [("iou", names[c], v) for c, v in enumerate(per_class)]
    write_metrics_csv(Path(config.out) / "metrics.csv", rows)
    summary = summarize(rows)
    (Path(config.out) / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    if failures:
        _error_line(f"{len(failures)} image(s) failed during eval-seg", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    return EXIT_OK


def _load_queries(config: RunConfig) -> LabelSet:
    if config.queries is None:
        raise ConfigError("--queries is required for this command")
    source = read_bundle(config.queries)
    if "labels" not in source.tensors or source.label_names is None:
        raise ConfigError(f"query file {config.queries} carries no named embeddings")
    return LabelSet(
        names=list(source.label_names),
        embeddings=source.tensors["labels"].astype(np.float64),
        temperature=source.temperature,
    )


def _load_assignments(config: RunConfig) -> dict:
    if config.assignments is None:
        raise ConfigError("--assignments is required for this command")
    with open(config.assignments) as fh:
        return json.load(fh)


def _query_row(queries: LabelSet, key) -> np.ndarray:
    if isinstance(key, int):
        if not 0 <= key < len(queries):
            raise ConfigError(f"query index {key} out of range [0, {len(queries)})")
        row = queries.embeddings[key]
    else:
        try:
            row = queries.embeddings[queries.names.index(key)]
        except ValueError:
            raise ConfigError(f"query {key!r} not found in the query embedding file") from None
    return row / np.linalg.norm(row)


def cmd_refer(config: RunConfig, collect=None) -> int:
    config.validate(need=("queries", "assignments", "proposals"))
    ids = _image_ids(config)
    queries = _load_queries(config)
    assignments = _load_assignments(config)
    with open(config.proposals) as fh:
        proposal_map = json.load(fh)
    for image_id in ids:
        if image_id not in assignments:
            raise ConfigError(f"no query assignment for image {image_id!r}")
        if image_id not in proposal_map:
            raise ConfigError(f"no proposals for image {image_id!r}")

    def worker(image_id):
        bundle, mask_set = _load_pair(config, image_id)
        tokens, kept_full = _region_tokens(bundle, mask_set, config)
        if tokens is None or len(tokens) == 0:
            raise ValueError("no usable regions for referring selection")
        query = _query_row(queries, assignments[image_id])
        proposals = ProposalSet(
            boxes=[Box(*(int(v) for v in box)) for box in proposal_map[image_id]]
        )
        box = refer_select(tokens, kept_full, query, proposals)
        return [box.x0, box.y0, box.x1, box.y1]

    results, failures = _map_images(config, ids, worker)
    boxes = {image_id: results[image_id] for image_id in sorted(results)}
    with open(Path(config.out) / "boxes.json", "w") as fh:
        json.dump(boxes, fh, indent=2, sort_keys=True)
    if collect is not None:
        collect.update(boxes)
    if failures:
        _error_line(f"{len(failures)} image(s) failed during refer", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    return EXIT_OK


def cmd_eval_rec(config: RunConfig) -> int:
    config.validate(need=("queries", "assignments", "proposals", "gt"))
    boxes: dict = {}
    status = cmd_refer(config, collect=boxes)
    with open(config.gt) as fh:
        gt_boxes = json.load(fh)
    pairs = []
    for image_id in sorted(boxes):
        if image_id not in gt_boxes:
            raise ConfigError(f"no ground-truth box for image {image_id!r}")
        pred = Box(*(int(v) for v in boxes[image_id]))
        gt = Box(*(int(v) for v in gt_boxes[image_id]))
        pairs.append((pred, gt))
    if not pairs:
        _error_line("no images produced boxes during eval-rec", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    accuracy = rec_accuracy(pairs)
    rows = [("rec_accuracy", "", accuracy)]
    write_metrics_csv(Path(config.out) / "metrics.csv", rows)
    summary = summarize(rows)
    (Path(config.out) / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return status


def _contrast_row(queries: LabelSet, assignment, config: RunConfig, query_key) -> np.ndarray:
    if isinstance(assignment, dict) and "contrast" in assignment:
        return _query_row(queries, assignment["contrast"])
    query_name = query_key if isinstance(query_key, str) else queries.names[query_key]
    contrast_name = config.contrast_template.replace("{interpreted query}", query_name)
    if contrast_name not in queries.names:
        raise ConfigError(
            f"contrast query {contrast_name!r} not found in the query embedding file"
        )
    return _query_row(queries, contrast_name)


def cmd_ground(config: RunConfig, collect=None) -> int:
    config.validate(need=("queries", "assignments"))
    ids = _image_ids(config)
    queries = _load_queries(config)
    assignments = _load_assignments(config)
    for image_id in ids:
        if image_id not in assignments:
            raise ConfigError(f"no query assignment for image {image_id!r}")

    def worker(image_id):
        bundle, mask_set = _load_pair(config, image_id)
        tokens, kept_full = _region_tokens(bundle, mask_set, config)
        height, width = (int(e) for e in bundle.image_size)
        assignment = assignments[image_id]
        query_key = assignment["query"] if isinstance(assignment, dict) else assignment
        if tokens is None or len(tokens) == 0:
            selected = SoftMask(region_id=-1, values=np.zeros((height, width)))
        else:
            query = _query_row(queries, query_key)
            contrast = _contrast_row(queries, assignment, config, query_key)
            selected = ground_select(tokens, kept_full, query, contrast)
        quant = np.round(selected.values * 255.0).astype(np.uint8)
        Image.fromarray(quant, mode="L").save(Path(config.out) / f"{image_id}_mask.png")
        return selected

    results, failures = _map_images(config, ids, worker)
    if collect is not None:
        collect.update(results)
    if failures:
        _error_line(f"{len(failures)} image(s) failed during ground", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    return EXIT_OK


def cmd_eval_ground(config: RunConfig) -> int:
    config.validate(need=("queries", "assignments", "gt"))
    predictions: dict = {}
    status = cmd_ground(config, collect=predictions)
    tally = GroundingTally()
    for image_id in sorted(predictions):
        gt_path = Path(config.gt) / f"{image_id}.png"
        if not gt_path.exists():
            raise ConfigError(f"missing ground-truth mask: {gt_path}")
        gt = SoftMask(region_id=-1, values=_load_binary_png(gt_path))
        ignore = None
        if config.ignore_masks is not None:
            ignore_path = Path(config.ignore_masks) / f"{image_id}.png"
            if ignore_path.exists():
                ignore = SoftMask(region_id=-1, values=_load_binary_png(ignore_path))
        tally.add(predictions[image_id], gt, ignore)
    if not tally.per_image_ious:
        _error_line("no images scored during eval-ground", EXIT_IMAGE_FAILURES)
        return EXIT_IMAGE_FAILURES
    rows = [("giou", "", tally.giou), ("ciou", "", tally.ciou)]
    write_metrics_csv(Path(config.out) / "metrics.csv", rows)
    summary = summarize(rows)
    (Path(config.out) / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return status


def cmd_inspect(path: Path) -> int:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"TXRB":
        bundle = read_bundle(path)
        info = {
            "format": "bundle",
            "model_id": bundle.model_id,
            "image_size": list(bundle.image_size),
            "embed_dim": bundle.embed_dim,
            "full_grid": list(bundle.full_grid),
            "crop_grid": None if bundle.crop_grid is None else list(bundle.crop_grid),
            "crop_layout": None
            if bundle.crop_layout is None
            else {
                "grid": list(bundle.crop_layout.grid),
                "crop_px": bundle.crop_layout.crop_px,
                "resized_image": list(bundle.crop_layout.resized_image),
            },
            "fusion_weight": bundle.fusion_weight,
            "temperature": bundle.temperature,
            "label_names": bundle.label_names,
            "extra": bundle.extra,
            "head_layers": None
            if bundle.head is None
            else [layer.kind for layer in bundle.head.post_pool_layers],
            "tensors": {
                name: {"dtype": str(arr.dtype), "shape": list(arr.shape)}
                for name, arr in sorted(bundle.tensors.items())
            },
        }
    elif magic == b"TXRM":
        mask_set = load_mask_set(path)
        info = {
            "format": "mask_set",
            "image_size": list(mask_set.image_size),
            "region_count": len(mask_set),
            "generator": mask_set.generator,
            "regions": [
                {
                    "region_id": mask.region_id,
                    "support_pixels": int(support.sum()),
                    "max_value": float(mask.values.max(initial=0.0)),
                }
                for mask, support in zip(mask_set.masks, mask_set.supports)
            ],
        }
    else:
        raise ConfigError(f"{path}: unknown magic {magic!r}")
    sys.stdout.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textregion",
        description="Region-token workflows over exported feature bundles and mask sets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--bundles", type=Path, required=True, help="directory of <id>.txrb files")
        p.add_argument("--masks", type=Path, required=True, help="directory of <id>.txrm files")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--labels", type=Path, help="label-embedding bundle (.txrb)")
        p.add_argument("--tau", type=float, default=0.07, help="global-patch threshold")
        p.add_argument("--fusion-weight", type=float, default=None,
                       help="override the bundle's multi-resolution fusion weight")
        p.add_argument("--membership-threshold", type=float, default=0.0)
        p.add_argument("--similarity-source", choices=("block_input", "value"),
                       default="block_input")
        p.add_argument("--empty-region-policy", choices=("fallback_unfiltered", "drop"),
                       default="fallback_unfiltered")
        p.add_argument("--ignore-index", type=int, default=255)
        p.add_argument("--contrast-template", default=DEFAULT_CONTRAST_QUERY)
        p.add_argument("--proposals", type=Path, help="JSON proposals per image id")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: TEXTREGION_THREADS or 1)")
        p.add_argument("--images", type=Path, help="optional directory of source images")
        p.add_argument("--queries", type=Path, help="query-embedding bundle (.txrb)")
        p.add_argument("--assignments", type=Path, help="JSON image id -> query")
        p.add_argument("--gt", type=Path, help="ground-truth directory or file")
        p.add_argument("--ignore-masks", type=Path, help="directory of ignore-region masks")

    for name in ("segment", "refer", "ground", "eval-seg", "eval-rec", "eval-ground"):
        add_common(sub.add_parser(name))

    inspect = sub.add_parser("inspect", help="dump bundle or mask-set metadata")
    inspect.add_argument("path", type=Path)
    return parser


def _config_from_args(args) -> RunConfig:
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("TEXTREGION_THREADS", "1"))
    try:
        engine = EngineConfig(
            tau=args.tau,
            membership_threshold=args.membership_threshold,
            similarity_source=args.similarity_source,
            empty_region_policy=args.empty_region_policy,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.fusion_weight is not None and args.fusion_weight <= 0:
        raise ConfigError(f"fusion weight must be > 0, got {args.fusion_weight}")
    return RunConfig(
        bundles=args.bundles,
        masks=args.masks,
        out=args.out,
        labels=args.labels,
        images=args.images,
        gt=args.gt,
        queries=args.queries,
        assignments=args.assignments,
        proposals=args.proposals,
        ignore_masks=args.ignore_masks,
        engine=engine,
        fusion_override=args.fusion_weight,
        ignore_index=args.ignore_index,
        contrast_template=args.contrast_template,
        threads=threads,
    )


_COMMANDS = {
    "segment": cmd_segment,
    "eval-seg": cmd_eval_seg,
    "refer": cmd_refer,
    "eval-rec": cmd_eval_rec,
    "ground": cmd_ground,
    "eval-ground": cmd_eval_ground,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.path)
        config = _config_from_args(args)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        _error_line(str(exc), EXIT_CONFIG)
        return EXIT_CONFIG
    except (BundleError, MaskSetError) as exc:
        _error_line(f"{type(exc).__name__}: {exc}", EXIT_FORMAT)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        _error_line(str(exc), EXIT_CONFIG)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
