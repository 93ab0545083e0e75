"""Multi-prototype GMM domain adaptation on feature vectors.

Per-class Gaussian mixtures over source embeddings fitted with momentum
Sinkhorn-EM act as class prototypes; contrastive alignment pulls source and
target embeddings toward the right components, label-shift-corrected
posteriors pseudo-label the target, and a mean-teacher self-training loop
trains the small network end to end.
"""

__version__ = "0.1.0"

from .config import TrainConfig, parse_domain_spec, parse_train_config
from .data import Dataset, DomainSpec, generate_domain_pair, read_dataset, write_dataset
from .gmm_bank import ClassGmm, FifoBuffer, GmmBank
from .losses import LossConfig, LossOutput, confidence_weight, proto_contrastive_loss, weighted_cross_entropy
from .model import AdamState, AdaptModel, ModelConfig, TeacherStudent, optimizer_step
from .pipeline import TrainState, evaluate, init_state, train, train_iteration
from .proto_align import (
    PrototypeSelection,
    TargetPrototypes,
    select_source_prototypes,
    select_target_prototypes,
)
from .shift_priors import PriorTracker, assign_pseudo_label, corrected_posterior, source_class_posterior

__all__ = [
    "__version__",
    "TrainConfig",
    "parse_domain_spec",
    "parse_train_config",
    "Dataset",
    "DomainSpec",
    "generate_domain_pair",
    "read_dataset",
    "write_dataset",
    "ClassGmm",
    "FifoBuffer",
    "GmmBank",
    "LossConfig",
    "LossOutput",
    "confidence_weight",
    "proto_contrastive_loss",
    "weighted_cross_entropy",
    "AdamState",
    "AdaptModel",
    "ModelConfig",
    "TeacherStudent",
    "optimizer_step",
    "TrainState",
    "evaluate",
    "init_state",
    "train",
    "train_iteration",
    "PrototypeSelection",
    "TargetPrototypes",
    "select_source_prototypes",
    "select_target_prototypes",
    "PriorTracker",
    "assign_pseudo_label",
    "corrected_posterior",
    "source_class_posterior",
]
