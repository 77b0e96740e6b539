"""Dynamic graph embeddings with self-attention and teacher-student distillation.

A large teacher model learns node embeddings over the offline snapshot
prefix of a dynamic graph; a compact student model trains online against
a blend of its own task loss and a divergence from the frozen teacher's
embeddings, cutting parameter counts while keeping link-prediction
accuracy. The package ships the numerical core (tape-based reverse-mode
autodiff), the graph machinery, both training loops, the evaluation
protocol, and a CLI for reproducible experiments.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, no_grad
from .config import ExperimentConfig, load_config
from .evaluation import (
    build_split,
    compression_report,
    evaluate_step,
    roc_auc,
    train_logreg,
    unobserved_links,
)
from .graphs import (
    DynamicGraph,
    Snapshot,
    Window,
    load_dynamic_graph,
    load_edge_stream,
    save_dynamic_graph,
)
from .losses import (
    LossConfig,
    bce_embedding_loss,
    distillation_loss,
    similarity_distribution,
)
from .model import AttentionModel, ModelConfig, NodeEmbeddings, temporal_mask
from .optim import ParamStore
from .sampling import (
    NegativeSampler,
    WalkCorpus,
    negative_distribution,
    sample_walks,
    synth_dynamic_sbm,
)
from .train import (
    TrainConfig,
    teacher_infer_online,
    train_student,
    train_teacher,
)

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "ParamStore",
    "DynamicGraph",
    "Snapshot",
    "Window",
    "load_edge_stream",
    "load_dynamic_graph",
    "save_dynamic_graph",
    "WalkCorpus",
    "NegativeSampler",
    "sample_walks",
    "negative_distribution",
    "synth_dynamic_sbm",
    "ModelConfig",
    "AttentionModel",
    "NodeEmbeddings",
    "temporal_mask",
    "LossConfig",
    "bce_embedding_loss",
    "similarity_distribution",
    "distillation_loss",
    "TrainConfig",
    "train_teacher",
    "teacher_infer_online",
    "train_student",
    "unobserved_links",
    "build_split",
    "train_logreg",
    "roc_auc",
    "evaluate_step",
    "compression_report",
    "ExperimentConfig",
    "load_config",
]
