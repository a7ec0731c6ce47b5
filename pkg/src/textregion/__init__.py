"""Text-aligned region tokens from exported patch features and soft
segmentation masks: open-vocabulary region classification, dense
segmentation, referring-expression selection, multi-object grounding,
and the matching evaluation metrics."""

from ._accel import HAVE_NUMBA, USE_NUMBA
from .bundle_io import (
    CropLayout,
    FeatureBundle,
    HeadSpec,
    LayerNormLayer,
    LinearLayer,
    MaskSet,
    ResidualMlpLayer,
    TensorRecord,
    load_mask_set,
    make_mask_set,
    read_bundle,
    save_mask_set,
    write_bundle,
)
from .mask_ops import (
    Box,
    PatchMask,
    SoftMask,
    box_iou,
    downsample_mask,
    mask_iou,
    mask_to_box,
    merge_masks,
)
from .metrics import (
    ConfusionMatrix,
    GroundingTally,
    accumulate_confusion,
    grounding_scores,
    miou,
    rec_accuracy,
)
from .predictor import (
    DEFAULT_CONTRAST_QUERY,
    INTERPRETED_CONTRAST_TEMPLATE,
    DenseLogits,
    LabelSet,
    ProposalSet,
    RegionLogits,
    dense_prediction,
    ground_select,
    refer_select,
    region_logits,
)
from .region_engine import (
    EngineConfig,
    GlobalPatchReport,
    PatchFeatures,
    RegionTokens,
    filter_global,
    fuse_multires,
    local_similarity,
    plan_crops,
    pool_regions,
    pool_regions_delegate,
)

__version__ = "0.1.0"
