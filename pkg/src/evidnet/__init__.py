"""Evidential Dirichlet CNN classification with Grad-CAM occlusion OOD detection."""

from .estimator import EvidentialCNNClassifier
from .evidential import (
    ALPHA_MAX_DEFAULT,
    AnnealSchedule,
    DirichletBelief,
    belief,
    evidence_from_logits,
    kl_dirichlet,
)
from .convnet import ConvNet, ModelConfig, SaliencyMap, grad_cam, load_checkpoint, save_checkpoint
from .metrics import (
    OperatingPoint,
    RocAnalysis,
    cohens_kappa,
    partial_auc,
    roc,
    select_threshold,
    tpr_at_specificity,
)
from .ood import OcclusionSpec, calibrate, evaluate_ood, make_ood
from .synthetic import AugmentConfig, SyntheticSample, augment, generate, read_dataset, write_dataset
from .trainer import TrainConfig, balanced_batches, train

__version__ = "0.1.0"

__all__ = [
    "ALPHA_MAX_DEFAULT",
    "AnnealSchedule",
    "AugmentConfig",
    "ConvNet",
    "DirichletBelief",
    "EvidentialCNNClassifier",
    "ModelConfig",
    "OcclusionSpec",
    "OperatingPoint",
    "RocAnalysis",
    "SaliencyMap",
    "SyntheticSample",
    "TrainConfig",
    "augment",
    "balanced_batches",
    "belief",
    "calibrate",
    "cohens_kappa",
    "evaluate_ood",
    "evidence_from_logits",
    "generate",
    "grad_cam",
    "kl_dirichlet",
    "load_checkpoint",
    "make_ood",
    "partial_auc",
    "read_dataset",
    "roc",
    "save_checkpoint",
    "select_threshold",
    "tpr_at_specificity",
    "train",
    "write_dataset",
]
