"""Training objectives: the random-walk BCE loss and the distillation blend.

The task loss scores positive walk co-occurrences against degree-sampled
negatives through inner products of node embeddings. The distillation
loss blends that task loss with a teacher-matching term:

    total = (1 - gamma) * task + gamma * match

The default matching term compares, per anchor node, the softmax
similarity distribution of the student against the teacher's over a
shared candidate set (KL divergence, student distribution first). That
construction is dimension-agnostic, so a 64-dimensional student can match
a 256-dimensional teacher. Two alternatives are available: `kl-direct`
(softmax over raw embedding coordinates; requires equal dimensions) and
`bce` (per-candidate Bernoulli cross-entropy against the teacher's edge
probabilities). Gradients flow only into the student; teacher embeddings
enter as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, CoverageError
from .model import NodeEmbeddings
from .sampling import NegativeSampler, WalkCorpus

INNER_PRODUCT_CLIP = 15.0
PROB_FLOOR = 1e-12

DISTILL_MODES = ("kl-similarity", "kl-direct", "bce")


@dataclass
class LossConfig:
    """Knobs for the task and distillation objectives."""

    w_neg: float = 1.0
    neg_per_pos: int = 1
    gamma: float = 0.4
    tau: float = 1.0
    candidate_set_size: int = 32
    distill_mode: str = "kl-similarity"

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ContractError("gamma must lie in [0, 1]")
        if self.tau <= 0:
            raise ContractError("tau must be positive")
        if self.candidate_set_size < 2:
            raise ContractError("candidate_set_size must be >= 2")
        if self.distill_mode not in DISTILL_MODES:
            raise ContractError(f"distill_mode must be one of {DISTILL_MODES}")
        if self.neg_per_pos < 0:
            raise ContractError("neg_per_pos must be >= 0")
        if self.w_neg < 0:
            raise ContractError("w_neg must be >= 0")


def _pair_inner_products(h: Tensor, rows_a: np.ndarray, rows_b: np.ndarray) -> Tensor:
    return ad.rows_inner(h, rows_a, rows_b)


def bce_embedding_loss(h: NodeEmbeddings, corpus: WalkCorpus, sampler: NegativeSampler,
                       cfg: LossConfig, seed: int) -> Tensor:
    """Binary cross-entropy over walk pairs with sampled negatives.

    loss = sum over positive pairs of -ln s(<h_u, h_v>)
         - w_neg * sum over drawn negatives of ln(1 - s(<h_u', h_u>))

    Negatives are drawn per positive pair (`neg_per_pos` each) from the
    snapshot's degree-weighted distribution; inner products are clipped to
    +-15 before the sigmoid so the logs stay finite. Deterministic per seed.
    """
    if len(corpus) == 0:
        logging.getLogger(__name__).warning("empty walk corpus at t=%d; loss is zero", corpus.t)
        return Tensor(np.zeros((), dtype=h.tensor.dtype))
    if not h.covers(corpus.anchors) or not h.covers(corpus.partners):
        raise CoverageError("embeddings do not cover the walk corpus")
    rows_u = h.rows_for(corpus.anchors)
    rows_v = h.rows_for(corpus.partners)
    pos_ip = ad.clamp(_pair_inner_products(h.tensor, rows_u, rows_v),
                      -INNER_PRODUCT_CLIP, INNER_PRODUCT_CLIP)
    loss = -ad.tsum(ad.log(ad.sigmoid(pos_ip)))
    if cfg.w_neg > 0 and cfg.neg_per_pos > 0:
        rng = np.random.default_rng(seed)
        negatives = sampler.sample(rng, size=len(corpus) * cfg.neg_per_pos)
        anchor_rows = np.repeat(rows_u, cfg.neg_per_pos)
        neg_rows = h.rows_for(negatives)
        neg_ip = ad.clamp(_pair_inner_products(h.tensor, neg_rows, anchor_rows),
                          -INNER_PRODUCT_CLIP, INNER_PRODUCT_CLIP)
        # ln(1 - sigmoid(x)) == ln(sigmoid(-x))
        loss = loss - cfg.w_neg * ad.tsum(ad.log(ad.sigmoid(ad.neg(neg_ip))))
    return loss


def similarity_distribution(h: NodeEmbeddings, u: int, candidates, tau: float = 1.0) -> Tensor:
    """Softmax over the tempered inner products of u against a candidate set."""
    rows = h.rows_for(candidates)
    anchor = ad.reshape(ad.gather_rows(h.tensor, h.rows_for([u])), (h.dim, 1))
    logits = ad.reshape(ad.matmul(ad.gather_rows(h.tensor, rows), anchor), (len(rows),))
    return ad.softmax(logits * (1.0 / tau))


def build_candidate_sets(corpus: WalkCorpus, sampler: NegativeSampler,
                         size: int, seed: int) -> tuple:
    """Per-anchor candidate node sets for the similarity-matching term.

    Each anchor gets its walk partners (truncated to `size` if needed),
    topped up with draws from the negative distribution. Returns
    (anchors, candidates) with candidates of shape (n_anchors, size).
    Deterministic per seed; identical sets must be fed to both models.
    """
    rng = np.random.default_rng(seed)
    anchors = corpus.anchor_nodes()
    if len(anchors) == 0:
        return anchors, np.empty((0, size), dtype=np.int64)
    partner_lists = corpus.partners_by_anchor()
    rows = []
    for u in anchors.tolist():
        partners = partner_lists[u]
        if len(partners) > size:
            partners = rng.choice(partners, size=size, replace=False)
        fill = size - len(partners)
        if fill > 0:
            extra = sampler.sample(rng, size=fill)
            row = np.concatenate([partners, extra])
        else:
            row = partners
        rows.append(np.sort(row))
    return anchors, np.stack(rows).astype(np.int64)


def _similarity_rows(h: NodeEmbeddings, anchors: np.ndarray, candidates: np.ndarray,
                     tau: float) -> Tensor:
    """Row-wise softmax similarity distributions, shape (n_anchors, size)."""
    n, size = candidates.shape
    anchor_vecs = ad.reshape(ad.gather_rows(h.tensor, h.rows_for(anchors)), (n, 1, h.dim))
    cand_vecs = ad.reshape(ad.gather_rows(h.tensor, h.rows_for(candidates.ravel())),
                           (n, size, h.dim))
    logits = ad.tsum(ad.mul(anchor_vecs, cand_vecs), axis=2) * (1.0 / tau)
    return ad.masked_softmax(logits)


class DistillLoss(NamedTuple):
    total: Tensor
    task: float
    match: float


def distillation_match_term(h_student: NodeEmbeddings, h_teacher: NodeEmbeddings,
                            anchors: np.ndarray, candidates: np.ndarray,
                            cfg: LossConfig) -> Tensor:
    """The teacher-matching term, averaged over anchor nodes."""
    if not h_teacher.covers(anchors) or not h_teacher.covers(candidates.ravel()):
        raise CoverageError("teacher embeddings do not cover the candidate sets")
    teacher_const = NodeEmbeddings(h_teacher.ids, Tensor(h_teacher.numpy()))
    if cfg.distill_mode == "kl-direct":
        if h_student.dim != h_teacher.dim:
            raise ContractError("kl-direct needs equal embedding dimensions")
        p = ad.masked_softmax(ad.gather_rows(h_student.tensor, h_student.rows_for(anchors))
                              * (1.0 / cfg.tau))
        q = ad.masked_softmax(ad.gather_rows(teacher_const.tensor, teacher_const.rows_for(anchors))
                              * (1.0 / cfg.tau))
        p = ad.clamp(p, lo=PROB_FLOOR)
        q = ad.clamp(q, lo=PROB_FLOOR)
        per_row = ad.tsum(ad.mul(p, ad.sub(ad.log(p), ad.log(q))), axis=1)
        return ad.mean(per_row)
    p_s = _similarity_rows(h_student, anchors, candidates, cfg.tau)
    p_t = _similarity_rows(teacher_const, anchors, candidates, cfg.tau)
    if cfg.distill_mode == "kl-similarity":
        p = ad.clamp(p_s, lo=PROB_FLOOR)
        q = ad.clamp(p_t, lo=PROB_FLOOR)
        per_row = ad.tsum(ad.mul(p, ad.sub(ad.log(p), ad.log(q))), axis=1)
        return ad.mean(per_row)
    # bce: Bernoulli cross-entropy, teacher edge probabilities as soft targets
    p = ad.clamp(p_s, PROB_FLOOR, 1.0 - PROB_FLOOR)
    q = ad.clamp(p_t, PROB_FLOOR, 1.0 - PROB_FLOOR)
    per_row = ad.neg(ad.tsum(ad.mul(q, ad.log(p)) + ad.mul(1.0 - q, ad.log(1.0 - p)), axis=1))
    return ad.mean(per_row)


def distillation_loss(h_student: NodeEmbeddings, h_teacher: NodeEmbeddings,
                      corpus: WalkCorpus, sampler: NegativeSampler,
                      cfg: LossConfig, seed: int) -> DistillLoss:
    """The blended objective (1 - gamma) * task + gamma * match.

    The task term is the walk BCE loss on student embeddings; the match
    term is controlled by `distill_mode`. Teacher embeddings must cover
    every node the student covers at this step. Both endpoints are exact:
    gamma=0 returns the task loss alone and gamma=1 the match term alone.
    """
    missing = [int(u) for u in h_student.ids if int(u) not in h_teacher.index]
    if missing:
        raise CoverageError(f"teacher embeddings missing for window nodes {missing[:5]}")
    task = bce_embedding_loss(h_student, corpus, sampler, cfg, seed=seed)
    anchors, candidates = build_candidate_sets(
        corpus, sampler, cfg.candidate_set_size, seed=seed)
    if len(anchors) == 0:
        match = Tensor(np.zeros((), dtype=h_student.tensor.dtype))
    else:
        match = distillation_match_term(h_student, h_teacher, anchors, candidates, cfg)
    if cfg.gamma == 0.0:
        total = task
    elif cfg.gamma == 1.0:
        total = match
    else:
        total = (1.0 - cfg.gamma) * task + cfg.gamma * match
    return DistillLoss(total=total, task=task.item(), match=match.item())
