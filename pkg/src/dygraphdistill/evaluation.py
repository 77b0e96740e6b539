"""Link-prediction evaluation and parameter/compression accounting.

Prediction targets at anchor step t are the links of snapshot t+1 that
appear in no window snapshot. Each target link and an equal number of
sampled non-links are featurized as the Hadamard (elementwise) product of
the two endpoint embeddings, classified with an L2-regularized logistic
regression, and scored with rank-based AUC. The labeled pool is split
20% validation / 60% of the remainder train / rest test, stratified by
label; regularization strength is tuned on the validation part and the
reported number is test AUC, averaged over seeded repetitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DegenerateDataError,
    SamplingError,
    UndefinedMetricError,
)
from .graphs import DynamicGraph
from .model import NodeEmbeddings
from .sampling import derive_seed

logger = logging.getLogger(__name__)

L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def unobserved_links(g: DynamicGraph, t: int, l: int, embedded_nodes=None) -> tuple:
    """Links of snapshot t+1 absent from every snapshot of the window at t.

    Returns (links, dropped) where links is a sorted list of (u, v) pairs
    whose endpoints are all in `embedded_nodes` (when given) and dropped
    counts the links excluded for missing embeddings.
    """
    if t + 1 >= g.T:
        raise ContractError(f"snapshot {t + 1} does not exist")
    window = g.window(t, l)
    seen = window.edge_union()
    fresh = sorted(g.snapshots[t + 1].edge_set() - seen)
    if embedded_nodes is None:
        return fresh, 0
    have = set(int(u) for u in embedded_nodes)
    kept = [(u, v) for u, v in fresh if u in have and v in have]
    return kept, len(fresh) - len(kept)


@dataclass
class EvalSplit:
    """Labeled link pools partitioned into validation / train / test."""

    links: np.ndarray  # (n, 2) node pairs
    labels: np.ndarray  # (n,) in {0, 1}
    val_idx: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray


def _partition_sizes(count: int) -> tuple:
    """The 20% validation / 60%-of-remainder train / rest test rule."""
    n_val = round(0.2 * count)
    n_train = round(0.6 * (count - n_val))
    return n_val, n_train, count - n_val - n_train


def build_split(links, g: DynamicGraph, t: int, l: int, seed: int,
                embedded_nodes=None) -> EvalSplit:
    """Pair target links with sampled non-links and partition the pool.

    Negatives are uniform over non-edges among nodes active at t+1 (and
    restricted to nodes with embeddings when `embedded_nodes` is given);
    they avoid the target links and every window snapshot's edges. Both
    label classes are partitioned with the same fractions, so each part
    stays balanced within one link. Positives are seed-independent;
    negatives and the shuffles are deterministic per seed.
    """
    links = sorted((int(u), int(v)) if u < v else (int(v), int(u)) for u, v in links)
    if len(links) < 5:
        raise ContractError(f"need at least 5 target links, got {len(links)}")
    rng = np.random.default_rng(seed)
    forbidden = set(links) | g.window(t, l).edge_union() | g.snapshots[t + 1].edge_set()
    population = g.snapshots[t + 1].nodes
    if embedded_nodes is not None:
        have = set(int(u) for u in embedded_nodes)
        population = np.asarray([u for u in population.tolist() if u in have], dtype=np.int64)
    if len(population) < 2:
        raise SamplingError("fewer than two candidate nodes for negative sampling")
    negatives: list = []
    chosen: set = set()
    budget = 1000 * len(links)
    attempts = 0
    while len(negatives) < len(links):
        attempts += 1
        if attempts > budget:
            raise SamplingError(
                f"could not sample {len(links)} non-links in {budget} attempts")
        u, v = population[rng.integers(len(population), size=2)]
        if u == v:
            continue
        pair = (int(u), int(v)) if u < v else (int(v), int(u))
        if pair in forbidden or pair in chosen:
            continue
        chosen.add(pair)
        negatives.append(pair)

    all_links = np.asarray(links + negatives, dtype=np.int64)
    labels = np.concatenate([np.ones(len(links), dtype=np.int64),
                             np.zeros(len(negatives), dtype=np.int64)])
    parts = {"val": [], "train": [], "test": []}
    for label in (1, 0):
        idx = np.nonzero(labels == label)[0]
        idx = idx[rng.permutation(len(idx))]
        n_val, n_train, _ = _partition_sizes(len(idx))
        parts["val"].append(idx[:n_val])
        parts["train"].append(idx[n_val:n_val + n_train])
        parts["test"].append(idx[n_val + n_train:])
    return EvalSplit(
        links=all_links,
        labels=labels,
        val_idx=np.sort(np.concatenate(parts["val"])),
        train_idx=np.sort(np.concatenate(parts["train"])),
        test_idx=np.sort(np.concatenate(parts["test"])),
    )


def hadamard_features(h: NodeEmbeddings, links: np.ndarray) -> np.ndarray:
    rows_u = h.rows_for(links[:, 0])
    rows_v = h.rows_for(links[:, 1])
    values = h.tensor.data
    return values[rows_u] * values[rows_v]


def train_logreg(features: np.ndarray, labels: np.ndarray, l2: float = 1e-2,
                 iters: int = 100, tol: float = 1e-6) -> tuple:
    """Newton-Raphson fit of L2-regularized logistic regression.

    Maximizes the Bernoulli log-likelihood minus l2/2 * |w|^2 (bias
    unpenalized) until the gradient norm drops below `tol` or `iters`
    steps pass. Deterministic: starts from zero weights.
    Returns (weights, bias).
    """
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training data must contain both classes")
    x = np.concatenate([features, np.ones((len(features), 1))], axis=1)
    n, dim = x.shape
    w = np.zeros(dim)
    reg = np.full(dim, l2)
    reg[-1] = 0.0
    for _ in range(iters):
        z = np.clip(x @ w, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-z))
        grad = x.T @ (y - p) - reg * w
        if np.linalg.norm(grad) < tol:
            break
        s = np.maximum(p * (1.0 - p), 1e-10)
        hess = (x.T * s) @ x + np.diag(np.maximum(reg, 1e-10))
        w = w + np.linalg.solve(hess, grad)
    return w[:-1], float(w[-1])


def logreg_scores(features: np.ndarray, weights: np.ndarray, bias: float) -> np.ndarray:
    return features @ weights + bias


def roc_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class StepEvaluation:
    t: int
    auc_mean: float
    auc_std: float
    per_seed: list
    n_links: int
    dropped: int


def evaluate_step(h: NodeEmbeddings, g: DynamicGraph, t: int, l: int,
                  seeds=5, master_seed: int = 0, l2_grid=L2_GRID) -> StepEvaluation | None:
    """The full protocol at one anchor step, averaged over seeded runs.

    Per seed: build a split, featurize with Hadamard products, fit the
    classifier on the train part for each regularization strength, keep
    the one with the best validation AUC, and record test AUC. Returns
    None (with a warning) when there are too few target links.
    """
    links, dropped = unobserved_links(g, t, l, embedded_nodes=h.ids)
    if len(links) < 5:
        logger.warning("skipping evaluation at t=%d: only %d usable target links",
                       t, len(links))
        return None
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    aucs = []
    for s in seed_list:
        split = build_split(links, g, t, l, seed=derive_seed(master_seed, "split", t, s),
                            embedded_nodes=h.ids)
        feats = hadamard_features(h, split.links)
        y = split.labels
        best_auc, best_model = -1.0, None
        for l2 in l2_grid:
            w, b = train_logreg(feats[split.train_idx], y[split.train_idx], l2=l2)
            val_auc = roc_auc(logreg_scores(feats[split.val_idx], w, b), y[split.val_idx])
            if val_auc > best_auc:
                best_auc, best_model = val_auc, (w, b)
        w, b = best_model
        aucs.append(roc_auc(logreg_scores(feats[split.test_idx], w, b), y[split.test_idx]))
    arr = np.asarray(aucs)
    return StepEvaluation(t=t, auc_mean=float(arr.mean()),
                          auc_std=float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                          per_seed=aucs, n_links=len(links), dropped=dropped)


@dataclass
class CompressionRow:
    time_step: int
    name: str
    params: int
    ratio_vs_reference: float


@dataclass
class CompressionReport:
    rows: list = field(default_factory=list)
    averages: dict = field(default_factory=dict)


def compression_report(counts_by_model: dict) -> CompressionReport:
    """Per-step parameter counts and ratios against the first-listed model.

    `counts_by_model` maps a model name to its per-step parameter counts
    (all the same length). The first entry is the reference; ratios are
    count / reference_count per step, and `averages` holds their means.
    """
    if len(counts_by_model) < 2:
        raise ContractError("compression report needs at least two models")
    names = list(counts_by_model)
    steps = len(counts_by_model[names[0]])
    if any(len(v) != steps for v in counts_by_model.values()):
        raise ContractError("all models must report the same number of steps")
    reference = names[0]
    report = CompressionReport()
    for name in names:
        ratios = []
        for i in range(steps):
            ref = counts_by_model[reference][i]
            cnt = counts_by_model[name][i]
            ratio = cnt / ref
            ratios.append(ratio)
            report.rows.append(CompressionRow(time_step=i + 1, name=name,
                                              params=cnt, ratio_vs_reference=ratio))
        report.averages[name] = float(np.mean(ratios))
    return report
