"""posefuse: multi-view, multi-class 6-DoF object pose estimation core.

Rigid-body geometry and pose rectification, an almost-uniform SE(3)
tessellation, the bin & delta pose codec, symmetry-robust closest-point
distances with a precomputed-table fast path, multi-view hypothesis voting,
and a seeded simulation harness that stands in for a trained predictor.
"""

from .codec import BinDeltaCode, CodecConfig, decode, encode, top_k_hypotheses
from .errors import (
    DegenerateRay,
    EmptyCode,
    EmptyHypothesisSet,
    EmptyInput,
    FileFormatError,
    InvalidRange,
    InvalidScale,
    InvalidShape,
    PoseFuseError,
    TableMismatch,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    Rotation,
    derectify_pose,
    geodesic_distance,
    rectification_rotation,
    rectify_pose,
    rescale_depth,
    view_ray,
)
from .metrics import (
    ObjectModel,
    PckCurve,
    add_s,
    approx_distance,
    exact_decoupled_distance,
    mpck,
    sym_add_s,
)
from .multiview import (
    AddSBackend,
    DecoupledBackend,
    FusionResult,
    Hypothesis,
    TableBackend,
    View,
    ViewSet,
    benchmark_voting,
    fuse,
    to_reference,
    top_k_accuracy,
    vote,
)
from .simharness import (
    Blob,
    Box,
    Cylinder,
    ExperimentConfig,
    NoiseSpec,
    SymmetrySpec,
    default_config,
    generate_model,
    noisy_predict,
    run_experiment,
    simulate_views,
)
from .tessellation import (
    AxisGrid,
    RotationBins,
    RotDistanceTable,
    make_axis_grid,
    nn_axis,
    nn_rotations,
    precompute_table,
    sample_so3_uniform,
)

__version__ = "0.1.0"
