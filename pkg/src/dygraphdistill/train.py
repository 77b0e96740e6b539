"""Offline teacher training and online student training with distillation.

The teacher trains on the offline snapshot prefix with its temporal
window spanning the whole prefix, then freezes. The student advances one
anchor step at a time over the online portion: at anchor t it sees the
window ending at t, receives frozen-teacher embeddings for that same
window, minimizes the blended distillation objective, and emits its
embeddings for downstream link prediction of step t+1. Student parameters
warm-start from the previous anchor.

Anchor steps are indexed 0-based; the anchors are m-1 .. T-2, so the
prediction targets are exactly the online snapshots m .. T-1 (the first
anchor sits on the last offline snapshot and predicts the first online
one). Reported `time_step` values are 1-based online ordinals.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .errors import ContractError, TrainingDivergedError
from .graphs import DynamicGraph
from .losses import LossConfig, bce_embedding_loss, distillation_loss
from .model import AttentionModel, ModelConfig, NodeEmbeddings
from .optim import ADAM_DEFAULTS
from .sampling import (
    NegativeSampler,
    WalkCorpus,
    derive_seed,
    negative_distribution,
    sample_walks,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer and sampling settings shared by teacher and student."""

    lr: float = ADAM_DEFAULTS["lr"]
    beta1: float = ADAM_DEFAULTS["beta1"]
    beta2: float = ADAM_DEFAULTS["beta2"]
    eps: float = ADAM_DEFAULTS["eps"]
    epochs: int = 200
    anchors_per_batch: int = 0  # 0 = all anchor nodes in one batch
    walk_len: int = 40
    walks_per_node: int = 10
    context: int = 10
    neg_power: float = 0.75


@dataclass
class LogRow:
    time_step: int
    epoch: int
    loss_task: float
    loss_match: float
    loss_total: float
    wall_ms: float


@dataclass
class TeacherResult:
    model: AttentionModel
    log: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


@dataclass
class StudentResult:
    model: AttentionModel
    anchors: list = field(default_factory=list)
    embeddings: dict = field(default_factory=dict)  # anchor t -> NodeEmbeddings (constant)
    param_counts: dict = field(default_factory=dict)  # anchor t -> int
    final_match: dict = field(default_factory=dict)  # anchor t -> float
    log: list = field(default_factory=list)


def _check_finite_loss(value: float, where: str):
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss at {where}")


def _corpus_and_sampler(g: DynamicGraph, t: int, train_cfg: TrainConfig,
                        seed: int) -> tuple[WalkCorpus, NegativeSampler]:
    corpus = sample_walks(g, t, walk_len=train_cfg.walk_len,
                          walks_per_node=train_cfg.walks_per_node,
                          context=train_cfg.context,
                          seed=derive_seed(seed, "walks", t))
    sampler = negative_distribution(g, t, power=train_cfg.neg_power)
    return corpus, sampler


def _batched_corpora(corpus: WalkCorpus, anchors_per_batch: int,
                     rng: np.random.Generator) -> list[WalkCorpus]:
    """Split a corpus into mini-batches of whole anchor-node groups."""
    if anchors_per_batch <= 0:
        return [corpus]
    anchors = corpus.anchor_nodes()
    order = rng.permutation(len(anchors))
    batches = []
    for start in range(0, len(order), anchors_per_batch):
        chosen = set(anchors[order[start:start + anchors_per_batch]].tolist())
        keep = np.fromiter((a in chosen for a in corpus.anchors.tolist()), dtype=bool,
                           count=len(corpus))
        batches.append(WalkCorpus(t=corpus.t, anchors=corpus.anchors[keep],
                                  partners=corpus.partners[keep], seed=corpus.seed))
    return batches


def train_teacher(g: DynamicGraph, model_cfg: ModelConfig, loss_cfg: LossConfig,
                  train_cfg: TrainConfig, seed: int = 0) -> TeacherResult:
    """Minimize the walk BCE loss over all offline steps; return a frozen model.

    One epoch sweeps every offline anchor t in order, computing embeddings
    over the window ending at t and taking one Adam step per mini-batch.
    Aborts if the loss goes non-finite.
    """
    offline = [t for t in g.offline_steps() if not g.snapshots[t].is_empty()]
    if not offline:
        raise ContractError("every offline snapshot is empty; nothing to train on")
    capacity = max(int(g.snapshots[t].nodes.max()) for t in offline) + 1
    model = AttentionModel(model_cfg, capacity=capacity, seed=derive_seed(seed, "teacher-init"))
    data = {t: _corpus_and_sampler(g, t, train_cfg, derive_seed(seed, "teacher-data"))
            for t in offline}
    result = TeacherResult(model=model)
    for epoch in range(train_cfg.epochs):
        epoch_loss = 0.0
        for t, (corpus, sampler) in data.items():
            window = g.window(t, model_cfg.window)
            batch_rng = np.random.default_rng(derive_seed(seed, "teacher-batch", epoch, t))
            drop_rng = (np.random.default_rng(derive_seed(seed, "teacher-drop", epoch, t))
                        if model_cfg.dropout > 0 else None)
            for batch in _batched_corpora(corpus, train_cfg.anchors_per_batch, batch_rng):
                started = time.perf_counter()
                h = model.forward(window, dropout_rng=drop_rng)
                loss = bce_embedding_loss(h, batch, sampler, loss_cfg,
                                          seed=derive_seed(seed, "teacher-neg", epoch, t))
                value = loss.item()
                _check_finite_loss(value, f"teacher epoch {epoch} step {t}")
                model.store.zero_grad()
                model.store.backward(loss)
                model.store.adam_step(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
                epoch_loss += value
                result.log.append(LogRow(time_step=t, epoch=epoch, loss_task=value,
                                         loss_match=0.0, loss_total=value,
                                         wall_ms=(time.perf_counter() - started) * 1e3))
        result.epoch_losses.append(epoch_loss)
    model.freeze()
    return result


def teacher_infer_online(teacher: AttentionModel, window) -> NodeEmbeddings:
    """A pure forward pass of the frozen teacher over an online window.

    Nodes the teacher never saw get deterministic random embedding rows
    (appended once, never trained). Repeated calls are bit-identical.
    """
    if not teacher.frozen:
        raise ContractError("teacher must be frozen before online inference")
    with no_grad():
        h = teacher.forward(window)
    return NodeEmbeddings(h.ids, h.tensor)


def student_anchor_steps(g: DynamicGraph) -> list[int]:
    """Anchor steps whose prediction targets are the online snapshots."""
    return list(range(g.m - 1, g.T - 1))


def train_student(g: DynamicGraph, teacher: AttentionModel, model_cfg: ModelConfig,
                  loss_cfg: LossConfig, train_cfg: TrainConfig, seed: int = 0,
                  epochs: int | None = None) -> StudentResult:
    """Online training of the compact student against the frozen teacher.

    For each anchor step the student minimizes the distillation blend for
    `epochs` epochs (warm-starting from the previous anchor), then its
    embeddings, parameter count, and final matching-term value for that
    anchor are recorded. The matching term is measured post hoc with a
    fixed evaluation seed so runs with different gamma are comparable.
    """
    epochs = train_cfg.epochs if epochs is None else epochs
    anchors = student_anchor_steps(g)
    first_window = g.window(anchors[0], model_cfg.window)
    capacity = int(first_window.node_universe().max()) + 1
    student = AttentionModel(model_cfg, capacity=capacity, seed=derive_seed(seed, "student-init"))
    result = StudentResult(model=student, anchors=anchors)
    for t in anchors:
        window = g.window(t, model_cfg.window)
        h_teacher = teacher_infer_online(teacher, window)
        if g.snapshots[t].is_empty():
            logger.warning("anchor %d has an empty snapshot; skipping training there", t)
            continue
        corpus, sampler = _corpus_and_sampler(g, t, train_cfg, derive_seed(seed, "student-data"))
        batch_rng_seed = derive_seed(seed, "student-batch", t)
        for epoch in range(epochs):
            batch_rng = np.random.default_rng(derive_seed(batch_rng_seed, epoch))
            drop_rng = (np.random.default_rng(derive_seed(seed, "student-drop", t, epoch))
                        if model_cfg.dropout > 0 else None)
            for batch in _batched_corpora(corpus, train_cfg.anchors_per_batch, batch_rng):
                started = time.perf_counter()
                h = student.forward(window, dropout_rng=drop_rng)
                parts = distillation_loss(h, h_teacher, batch, sampler, loss_cfg,
                                          seed=derive_seed(seed, "student-loss", t, epoch))
                value = parts.total.item()
                _check_finite_loss(value, f"student anchor {t} epoch {epoch}")
                student.store.zero_grad()
                student.store.backward(parts.total)
                student.store.adam_step(train_cfg.lr, train_cfg.beta1, train_cfg.beta2,
                                        train_cfg.eps)
                result.log.append(LogRow(time_step=t, epoch=epoch, loss_task=parts.task,
                                         loss_match=parts.match, loss_total=value,
                                         wall_ms=(time.perf_counter() - started) * 1e3))
        with no_grad():
            h_final = student.forward(window)
        h_const = NodeEmbeddings(h_final.ids, h_final.tensor)
        parts = distillation_loss(h_const, h_teacher, corpus, sampler, loss_cfg,
                                  seed=derive_seed(seed, "student-eval", t))
        result.embeddings[t] = h_const
        result.param_counts[t] = student.parameter_count()
        result.final_match[t] = parts.match
        result.log.append(LogRow(time_step=t, epoch=epochs, loss_task=parts.task,
                                 loss_match=parts.match, loss_total=parts.total.item(),
                                 wall_ms=0.0))
    return result


def teacher_step_embeddings(g: DynamicGraph, teacher: AttentionModel) -> dict:
    """Frozen-teacher embeddings at every student anchor step."""
    out = {}
    for t in student_anchor_steps(g):
        window = g.window(t, teacher.config.window)
        out[t] = teacher_infer_online(teacher, window)
    return out
