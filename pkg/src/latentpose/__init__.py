"""Human pose estimation with latent clothing attributes, trained as a latent structured SVM."""

from .evaluate import clustering_score, matched_f1, pairwise_f1, pcp
from .features import FeatureBank, FeatureConfig, joint_feature, make_layout
from .inference import brute_force_joint, infer_attributes, infer_joint, infer_pose, score
from .learning import pegasos_fit, train, train_banks
from .model import (
    AttributeAssignment,
    AttributeSchema,
    CandidateGrid,
    ImageRaster,
    JointLabel,
    ModelParams,
    PartCandidate,
    PoseAssignment,
    SkeletonTree,
    TrainConfig,
    TrainingSample,
    default_schema,
    default_skeleton,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeAssignment",
    "AttributeSchema",
    "CandidateGrid",
    "FeatureBank",
    "FeatureConfig",
    "ImageRaster",
    "JointLabel",
    "ModelParams",
    "PartCandidate",
    "PoseAssignment",
    "SkeletonTree",
    "TrainConfig",
    "TrainingSample",
    "brute_force_joint",
    "clustering_score",
    "default_schema",
    "default_skeleton",
    "infer_attributes",
    "infer_joint",
    "infer_pose",
    "joint_feature",
    "make_layout",
    "matched_f1",
    "pairwise_f1",
    "pcp",
    "pegasos_fit",
    "score",
    "train",
    "train_banks",
]
