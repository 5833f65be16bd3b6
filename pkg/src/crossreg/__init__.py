"""Coarse-to-fine detection and registration of a small query point
cloud inside a large scene point cloud: multi-scale descriptor retrieval
followed by joint-GMM fine registration with residual re-ranking."""

from .cloud import (
    PointCloud,
    SimilarityTransform,
    SpatialIndex,
    apply_transform,
    bounding_radius,
    centroid,
    crop_sphere,
    load_ply,
    nearest_neighbor,
    save_ply,
    uniform_downsample,
)
from .coarse import (
    CandidateRegion,
    MatchConfig,
    estimate_scale,
    generate_candidates,
    normalize_query,
    top_k_matches,
)
from .errors import (
    ConfigError,
    CrossregError,
    DataError,
    DegenerateGeometryError,
    PlyParseError,
    RegistrationError,
    StageError,
)
from .esf import ESF_LENGTH, compute_esf, descriptor_distance, trace_line_class, voxelize
from .pipeline import PipelineConfig, PipelineReport, evaluate_retrieval, run_on_clouds, run_pipeline
from .registration import (
    GmmState,
    RegistrationConfig,
    RegistrationResult,
    icp_register,
    init_gmm,
    jrmpc_register,
)
from .scoring import RankedMatch, ScoringConfig, final_score, rerank, residual_error
from .synthetic import SceneSpec, generate_synthetic_scene, make_default_scene_spec

__version__ = "0.1.0"

__all__ = [
    "CandidateRegion",
    "ConfigError",
    "CrossregError",
    "DataError",
    "DegenerateGeometryError",
    "ESF_LENGTH",
    "GmmState",
    "MatchConfig",
    "PipelineConfig",
    "PipelineReport",
    "PlyParseError",
    "PointCloud",
    "RankedMatch",
    "RegistrationConfig",
    "RegistrationError",
    "RegistrationResult",
    "SceneSpec",
    "ScoringConfig",
    "SimilarityTransform",
    "SpatialIndex",
    "StageError",
    "apply_transform",
    "bounding_radius",
    "centroid",
    "compute_esf",
    "crop_sphere",
    "descriptor_distance",
    "estimate_scale",
    "evaluate_retrieval",
    "final_score",
    "generate_candidates",
    "generate_synthetic_scene",
    "icp_register",
    "init_gmm",
    "jrmpc_register",
    "load_ply",
    "make_default_scene_spec",
    "nearest_neighbor",
    "normalize_query",
    "rerank",
    "residual_error",
    "run_on_clouds",
    "run_pipeline",
    "save_ply",
    "top_k_matches",
    "trace_line_class",
    "uniform_downsample",
    "voxelize",
]
