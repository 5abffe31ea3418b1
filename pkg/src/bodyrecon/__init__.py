"""Coarse-to-fine single-view clothed-body reconstruction toolkit.

The pipeline: a conditional occupancy network predicts a smoothed body from
a silhouette and 2D joint heatmaps; octree-refined marching cubes extracts
the mesh; a displacement network adds detail along vertex normals.  The
package also ships the synthetic-body data generator, the sampling and
ground-truth machinery, and the evaluation metrics.
"""

from .errors import (
    BodyReconError,
    BodySpecError,
    CameraFrameError,
    CheckpointError,
    ConfigError,
    FieldEvaluationError,
    MeshError,
    NoIsosurface,
    TrainingDiverged,
)
from .mesh import (
    Aabb,
    TriMesh,
    compute_vertex_normals,
    is_watertight,
    laplacian_smooth,
    load_obj,
    sample_surface,
    save_obj,
)
from .spatial import SurfaceIndex, contains, nearest_on_surface, surface_index
from .extraction import (
    FieldFn,
    OccupancyGrid,
    apply_displacements,
    marching_cubes,
    mise_extract,
    reconstruct_detailed,
    reconstruct_smooth,
)
from .sampling import (
    JOINT_NAMES,
    JointSet,
    Observation,
    OccupancySample,
    SampleSet,
    Strategy,
    displacement_ground_truth,
    make_training_points,
    render_heatmaps,
    sample_joint_spheres,
    sample_near_surface,
    sample_uniform,
)
from .losses import kl_gaussian, wbce
from .nets import (
    CoarseModel,
    DispModel,
    coarse_forward,
    disp_forward,
    encode_observation,
    encode_points_posterior,
    load_model,
    save_model,
)
from .train import (
    AdamState,
    CoarseItem,
    DispItem,
    TrainConfig,
    adam_step,
    train_coarse,
    train_disp,
)
from .estimators import CoarseOccupancyEstimator, DisplacementEstimator
from .metrics import (
    MetricsReport,
    chamfer,
    evaluate_pair,
    normal_consistency,
    point_to_surface,
    volumetric_iou,
)
from .bodygen import (
    BodySpec,
    OrthoCamera,
    body_joints,
    generate_body,
    normalize_pose,
    project_joints,
)
from .dataset import DatasetItem, GenParams, build_dataset, read_manifest, split_items
from .config import RunConfig, load_config

__version__ = "0.1.0"
