"""Walk corpora, negative samplers, and a synthetic dynamic-graph generator.

Everything here is seed-driven and bit-reproducible: each function builds
its own `numpy.random.Generator` from the seed it is given, so concurrent
runs never share generator state.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .graphs import DynamicGraph, Snapshot, _collapse_edges


def derive_seed(master: int, *keys) -> int:
    """A stable child seed from a master seed and a mixed key path."""
    text = ":".join(str(k) for k in keys)
    return (int(master) * 0x9E3779B1 + zlib.crc32(text.encode())) % (2**63)


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


@dataclass
class WalkCorpus:
    """Positive co-occurrence pairs harvested from random walks at one step.

    `anchors[i]` co-occurred with `partners[i]` inside the context window
    of some walk; both directions of every co-occurrence are present.
    """

    t: int
    anchors: np.ndarray
    partners: np.ndarray
    seed: int

    def __len__(self):
        return len(self.anchors)

    def pairs(self):
        return zip(self.anchors.tolist(), self.partners.tolist())

    def anchor_nodes(self) -> np.ndarray:
        return np.unique(self.anchors)

    def partners_by_anchor(self) -> dict:
        """Deduplicated partner array per anchor node (cached)."""
        cached = getattr(self, "_partners_by_anchor", None)
        if cached is None:
            order = np.argsort(self.anchors, kind="stable")
            sorted_anchors = self.anchors[order]
            sorted_partners = self.partners[order]
            bounds = np.searchsorted(sorted_anchors, np.unique(sorted_anchors))
            bounds = np.append(bounds, len(sorted_anchors))
            cached = {
                int(sorted_anchors[bounds[i]]): np.unique(sorted_partners[bounds[i]:bounds[i + 1]])
                for i in range(len(bounds) - 1)
            }
            object.__setattr__(self, "_partners_by_anchor", cached)
        return cached


def sample_walks(g: DynamicGraph, t: int, walk_len: int = 40, walks_per_node: int = 10,
                 context: int = 10, seed: int = 0) -> WalkCorpus:
    """Uniform-neighbor random walks on snapshot t, turned into skip-gram pairs.

    Every walk starts `walks_per_node` times from each active node and
    steps to a uniformly random neighbor. Positive pairs are all ordered
    (walk[i], walk[j]) with 0 < |i - j| <= context and distinct endpoints
    (a walk revisiting its anchor does not pair the node with itself).
    A node without neighbors yields length-1 walks and no pairs.
    Deterministic per seed.
    """
    snap = g.snapshots[t]
    if snap.is_empty():
        raise ContractError(f"snapshot {t} is empty; nothing to walk")
    rng = np.random.default_rng(seed)
    anchors, partners = [], []
    for node in snap.nodes.tolist():
        for _ in range(walks_per_node):
            walk = [node]
            for _ in range(walk_len - 1):
                nbrs = snap.neighbors(walk[-1])
                if len(nbrs) == 0:
                    break
                walk.append(int(nbrs[rng.integers(len(nbrs))]))
            for i in range(len(walk)):
                for j in range(max(0, i - context), min(len(walk), i + context + 1)):
                    if i != j and walk[i] != walk[j]:
                        anchors.append(walk[i])
                        partners.append(walk[j])
    return WalkCorpus(
        t=t,
        anchors=np.asarray(anchors, dtype=np.int64),
        partners=np.asarray(partners, dtype=np.int64),
        seed=seed,
    )


@dataclass
class NegativeSampler:
    """Categorical distribution over the active nodes of one snapshot."""

    t: int
    nodes: np.ndarray
    probabilities: np.ndarray

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.nodes, size=size, p=self.probabilities)


def negative_distribution(g: DynamicGraph, t: int, power: float = 0.75) -> NegativeSampler:
    """Degree-weighted negative distribution: P(u) proportional to deg(u)^power."""
    snap = g.snapshots[t]
    if snap.is_empty():
        raise ContractError(f"snapshot {t} is empty; no negative distribution")
    weights = snap.degrees() ** power
    return NegativeSampler(t=t, nodes=snap.nodes.copy(), probabilities=weights / weights.sum())


def synth_dynamic_sbm(n: int, communities: int, p_in: float, p_out: float, T: int,
                      churn: float, seed: int = 0) -> DynamicGraph:
    """A dynamic stochastic block model for desk-scale validation.

    Nodes split into contiguous balanced communities. The first snapshot
    draws each pair independently (p_in within a community, p_out across).
    Between consecutive snapshots each pair is resampled from its block
    probability with probability `churn` and kept otherwise, so churn=0
    freezes the graph and the expected edge count stays stationary.
    The split index m defaults to T // 2; callers normally override it.
    """
    if not (0 <= p_out < p_in <= 1):
        raise ContractError("need 0 <= p_out < p_in <= 1")
    if not (0 <= churn <= 1):
        raise ContractError("churn must lie in [0, 1]")
    if T < 2:
        raise ContractError("need at least two snapshots")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) * communities) // n
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)

    present = (rng.random((n, n)) < prob) & upper
    snapshots = [_snapshot_from_matrix(present)]
    for _ in range(T - 1):
        resample = (rng.random((n, n)) < churn) & upper
        fresh = (rng.random((n, n)) < prob) & upper
        present = np.where(resample, fresh, present)
        snapshots.append(_snapshot_from_matrix(present))

    global_index = {str(i): i for i in range(n)}
    g = DynamicGraph(snapshots=snapshots, global_index=global_index, m=max(1, T // 2),
                     meta={"source": "synthetic-sbm", "n": n, "communities": communities,
                           "p_in": p_in, "p_out": p_out, "churn": churn, "seed": seed})
    g.meta["labels"] = labels
    return g


def _snapshot_from_matrix(present: np.ndarray) -> Snapshot:
    us, vs = np.nonzero(present)
    return Snapshot(_collapse_edges(zip(us.tolist(), vs.tolist(), [1.0] * len(us))))


def exact_walk_pair_distribution(snap: Snapshot, walk_len: int, context: int) -> dict:
    """Exact expected pair frequencies for `sample_walks`, via transition powers.

    Enumerates, for each start node and offset pair (i, j), the joint
    distribution of (walk[i], walk[j]) under the uniform-neighbor chain,
    assuming no dead ends (every active node has a neighbor). Returns a
    map (u, v) -> expected pairs per walk started anywhere, normalized to
    sum to 1. Used as an independent oracle in tests.
    """
    nodes = snap.nodes.tolist()
    n = len(nodes)
    pos = {u: i for i, u in enumerate(nodes)}
    P = np.zeros((n, n))
    for u in nodes:
        nbrs = snap.neighbors(u)
        if len(nbrs) == 0:
            raise ContractError("exact enumeration assumes no isolated nodes")
        for v in nbrs.tolist():
            P[pos[u], pos[v]] += 1.0 / len(nbrs)
    powers = [np.eye(n)]
    for _ in range(walk_len - 1):
        powers.append(powers[-1] @ P)
    counts = np.zeros((n, n))
    for i in range(walk_len):
        for j in range(walk_len):
            if i == j or abs(i - j) > context:
                continue
            lo, hi = min(i, j), max(i, j)
            # start -> position lo -> position hi; each start node equally likely
            for s in range(n):
                joint = powers[lo][s][:, None] * powers[hi - lo]
                if i < j:
                    counts += joint
                else:
                    counts += joint.T
    np.fill_diagonal(counts, 0.0)  # the sampler drops equal-endpoint pairs
    counts /= counts.sum()
    return {(nodes[a], nodes[b]): counts[a, b] for a in range(n) for b in range(n) if counts[a, b] > 0}
