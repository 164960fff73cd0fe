"""Bottom-up 3D objectness: over-segment, group pairs, withdraw bad merges."""

from .adjacency import VoxelGrid, adjacent_pairs, build_grid, merge_adjacency, voxel_of
from .evaluation import EvalReport, aabb_iou, point_set_iou, recall_at, recall_curves
from .geometry import (
    Aabb,
    LabeledCloud,
    SampledSegment,
    Segment,
    aabb,
    center_pair,
    load_ply,
    load_xyzl,
    sample_and_pad,
    save_xyzl,
)
from .grouping import (
    GroupingConfig,
    GroupingState,
    Proposal,
    grouping_step,
    regret_score,
    run_grouping,
    select_candidates,
    verify_regret_logic,
)
from .oversegment import (
    Plane,
    RansacConfig,
    fit_plane_ransac,
    oversegment,
    point_plane_distance,
    remove_background,
)
from .predictor import (
    AdamState,
    GroupingPredictor,
    HeuristicPredictor,
    NetPredictor,
    OraclePredictor,
    PredictorModel,
    adam_step,
    bce_loss,
    encode_segment,
    load_model,
    loss_gradients,
    predict_pair,
    save_model,
)
from .synthgen import SceneSpec, ShapeSpec, generate_dataset, generate_scene, sample_shape
from .training import TrainConfig, TrainScene, curriculum_train, train_phase

__version__ = "0.1.0"
