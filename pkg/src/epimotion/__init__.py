"""Dense flow trajectories, trifocal epipolar-distance maps and motion
saliency for rigid-scene sequences."""

from .errors import (
    ArgError,
    ConfigError,
    DataError,
    DegenerateError,
    EpimotionError,
    EpipoleError,
    EstimationError,
    FormatError,
    InsufficientDataError,
)
from .flow_io import FlowField, flow_to_color, read_flo, read_mask, read_pfm, write_flo, write_mask, write_pfm
from .geometry import (
    Correspondence3,
    Correspondences,
    RansacParams,
    TripletGeometry,
    cameras_to_fundamentals,
    detect_static_camera,
    epipolar_distance,
    epipolar_line,
    hartley_normalize,
    ransac_triplet,
    static_fundamentals,
    trifocal_six_point,
    triplet_distance,
    triplet_distances,
)
from .metrics import EvalReport, boundary_f, evaluate_sequence, iou, region_stats
from .pipeline import estimate_sequence_geometry, load_geometry, save_geometry
from .saliency import (
    TrajectoryED,
    default_tau,
    ed_maps,
    export_training_set,
    input_dropout,
    motion_images,
    normalize_ed,
    threshold_saliency,
    trajectory_ed,
)
from .synth import (
    BackgroundConfig,
    CameraPath,
    ForegroundPatch,
    PatchMotion,
    SceneConfig,
    SceneGroundTruth,
    generate,
    large_foreground_scene,
    standard_scene,
)
from .trajectories import (
    ConsistencyParams,
    Trajectory,
    TrajectorySet,
    build_trajectories,
    fb_consistency,
    load_trajectories,
    save_trajectories,
)

__version__ = "0.1.0"
