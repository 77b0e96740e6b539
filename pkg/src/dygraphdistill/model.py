"""Two-layer self-attention over graph snapshots.

The architecture shared by teacher and student:

1. Structural attention per snapshot: each node aggregates its neighbors
   (self-loop included) with softmax coefficients computed from a learned
   per-head embedding table and attention vector; heads concatenate to a
   d-dimensional vector per node.
2. Learned position embeddings are added to each snapshot's structural
   output to form the temporal input sequence.
3. Masked scaled dot-product attention across the window (newest step
   attends to itself and the past); heads concatenate back to dimension d.
4. The final node embedding is the temporal output at the newest step.

A `literal` output mode that returns structural output + position
embedding directly (skipping the temporal result) is kept behind a config
switch, as is a `literal` mask convention under which the newest step may
only attend strictly forward in time and therefore has no valid
distribution (requesting it raises).

One-hot inputs are never materialized: multiplying a one-hot vector by a
weight matrix is a row lookup into the per-head embedding table. Node
capacity grows by appending Glorot-initialized rows when new nodes appear.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, CoverageError, DimensionError
from .graphs import Snapshot, Window
from .optim import ParamStore
from .sampling import rng_for

CHECKPOINT_FORMAT = "dygraphdistill-checkpoint"
CHECKPOINT_VERSION = 1

ELU_ALPHA = 1.0
LEAKY_SLOPE = 0.2


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    dim: embedding dimension d; heads_structural must divide it.
    window: temporal window l; the model sees at most window+1 snapshots.
    head_dim: per-head temporal projection size k; defaults to
        dim // heads_temporal so the temporal concat restores dimension d.
    """

    dim: int
    window: int
    heads_structural: int = 1
    heads_temporal: int = 1
    head_dim: int | None = None
    mask_convention: str = "causal"  # or "literal"
    output_mode: str = "temporal"  # or "literal"
    dropout: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.head_dim is None:
            if self.dim % self.heads_temporal != 0:
                raise ContractError("dim must be divisible by heads_temporal when head_dim is unset")
            self.head_dim = self.dim // self.heads_temporal
        if self.dim % self.heads_structural != 0:
            raise ContractError("heads_structural must divide dim")
        if self.heads_temporal * self.head_dim != self.dim:
            raise ContractError("heads_temporal * head_dim must equal dim")
        if self.window < 1:
            raise ContractError("window must be >= 1")
        if self.mask_convention not in ("causal", "literal"):
            raise ContractError(f"unknown mask convention {self.mask_convention!r}")
        if self.output_mode not in ("temporal", "literal"):
            raise ContractError(f"unknown output mode {self.output_mode!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ContractError("dropout must lie in [0, 1)")

    @property
    def struct_dim(self) -> int:
        return self.dim // self.heads_structural

    @property
    def max_seq_len(self) -> int:
        return self.window + 1


def temporal_mask(window_len: int, convention: str = "causal", dtype=np.float64) -> Tensor:
    """Additive {0, -inf} mask encoding temporal order for a window.

    causal: position i may attend to positions j <= i (self and past).
    literal: position i may attend only to j > i; the newest row is then
        fully masked and any softmax over it raises a degenerate-row error.
    """
    if window_len < 1:
        raise ContractError("window_len must be >= 1")
    i = np.arange(window_len)[:, None]
    j = np.arange(window_len)[None, :]
    if convention == "causal":
        allowed = j <= i
    elif convention == "literal":
        allowed = i < j
    else:
        raise ContractError(f"unknown mask convention {convention!r}")
    return Tensor(np.where(allowed, 0.0, ad.NEG_INF).astype(dtype))


def glorot_uniform(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class NodeEmbeddings:
    """Embeddings for one time step: a row per covered node, ids sorted."""

    def __init__(self, ids: np.ndarray, tensor: Tensor):
        self.ids = np.asarray(ids, dtype=np.int64)
        if len(self.ids) > 1 and not (np.diff(self.ids) > 0).all():
            raise ContractError("node ids must be strictly increasing")
        self.tensor = tensor
        self.index = {int(u): i for i, u in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.tensor.shape[1]

    def covers(self, nodes) -> bool:
        nodes = np.asarray(nodes, dtype=np.int64).ravel()
        if len(nodes) == 0:
            return True
        pos = np.searchsorted(self.ids, nodes)
        inside = pos < len(self.ids)
        return bool(inside.all() and (self.ids[pos[inside]] == nodes[inside]).all())

    def rows_for(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64).ravel()
        pos = np.searchsorted(self.ids, nodes)
        bad = (pos >= len(self.ids)) | (self.ids[np.minimum(pos, len(self.ids) - 1)] != nodes)
        if bad.any():
            raise CoverageError(f"no embedding for node {int(nodes[bad][0])}")
        return pos.astype(np.intp)

    def vector(self, u: int) -> np.ndarray:
        return self.tensor.data[self.index[int(u)]]

    def numpy(self) -> np.ndarray:
        return self.tensor.numpy()


class AttentionModel:
    """Parameter container plus the forward computation.

    Parameters live in a ParamStore under stable names:
    `struct{i}/embed` (capacity x d/h), `struct{i}/attn` (2 d/h),
    `temporal{i}/{query,key,value}` (d x k), and `positions`
    ((window+1) x d). Position rows are aligned to the window end, so the
    newest snapshot always uses the last row even when the window is
    truncated at the start of the sequence.
    """

    def __init__(self, config: ModelConfig, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.config = config
        self.capacity = capacity
        self.seed = seed
        dtype = np.dtype(config.dtype)
        self.store = ParamStore(dtype=dtype)
        rng = rng_for(seed, "init")
        dh = config.struct_dim
        for i in range(config.heads_structural):
            self.store.add(f"struct{i}/embed", glorot_uniform(rng, (capacity, dh), dtype))
            self.store.add(f"struct{i}/attn", glorot_uniform(rng, (2 * dh,), dtype))
        for i in range(config.heads_temporal):
            for role in ("query", "key", "value"):
                self.store.add(f"temporal{i}/{role}",
                               glorot_uniform(rng, (config.dim, config.head_dim), dtype))
        self.store.add("positions",
                       rng.normal(0.0, 0.01, size=(config.max_seq_len, config.dim)).astype(dtype))
        self._frozen_count: int | None = None

    # -- capacity ------------------------------------------------------

    def ensure_capacity(self, n: int):
        """Grow the per-head embedding tables to at least n rows.

        New rows are Glorot-initialized from a seed derived from the old
        capacity, so growth is deterministic and idempotent.
        """
        if n <= self.capacity:
            return
        rng = rng_for(self.seed, "grow", self.capacity, n)
        dh = self.config.struct_dim
        dtype = self.store.dtype
        for i in range(self.config.heads_structural):
            self.store.grow_rows(f"struct{i}/embed",
                                 glorot_uniform(rng, (n - self.capacity, dh), dtype))
        self.capacity = n

    # -- layers --------------------------------------------------------

    def _structural_alpha(self, snapshot: Snapshot, head: int) -> tuple:
        """(node_ids, feats, alpha): the coefficient matrix of one head."""
        nodes, adj = snapshot.dense_adjacency()
        if len(nodes) == 0:
            raise ContractError("structural attention over an empty snapshot")
        if nodes.max() >= self.capacity:
            raise ContractError(
                f"node id {int(nodes.max())} exceeds model capacity {self.capacity}")
        dh = self.config.struct_dim
        table = self.store[f"struct{head}/embed"]
        attn = self.store[f"struct{head}/attn"]
        feats = ad.gather_rows(table, nodes)  # (n, dh)
        a_src = ad.reshape(ad.gather_rows(attn, np.arange(dh)), (dh, 1))
        a_dst = ad.reshape(ad.gather_rows(attn, np.arange(dh, 2 * dh)), (dh, 1))
        left = ad.matmul(feats, a_src)  # (n, 1)
        right = ad.transpose(ad.matmul(feats, a_dst))  # (1, n)
        dtype = self.store.dtype
        scores = ad.leaky_relu(ad.mul(left + right, Tensor(adj.astype(dtype))),
                               slope=LEAKY_SLOPE)
        mask = Tensor(np.where(adj > 0, 0.0, ad.NEG_INF).astype(dtype))
        return nodes, feats, ad.masked_softmax(scores, mask)

    def structural_attention(self, snapshot: Snapshot, head: int,
                             dropout_rng: np.random.Generator | None = None) -> tuple:
        """One head of neighbor attention over a snapshot.

        Returns (node_ids, Z) where Z[i] is the aggregated representation
        of node_ids[i]. Scores are LeakyReLU(A(u,v) * (a_src . W[u] +
        a_dst . W[v])) restricted to the neighborhood (self-loop
        included), normalized per row, then aggregated through ELU.
        """
        nodes, feats, alpha = self._structural_alpha(snapshot, head)
        alpha = self._maybe_dropout(alpha, dropout_rng)
        z = ad.elu(ad.matmul(alpha, feats), alpha=ELU_ALPHA)
        return nodes, z

    def structural_coefficients(self, snapshot: Snapshot, head: int) -> tuple:
        """(node_ids, alpha) through the layer's own softmax path."""
        with ad.no_grad():
            nodes, _, alpha = self._structural_alpha(snapshot, head)
        return nodes, alpha.data

    def multi_head_structural(self, snapshot: Snapshot,
                              dropout_rng: np.random.Generator | None = None) -> tuple:
        """All structural heads concatenated: (node_ids, C) with C (n, d)."""
        nodes, first = self.structural_attention(snapshot, 0, dropout_rng)
        parts = [first]
        for head in range(1, self.config.heads_structural):
            parts.append(self.structural_attention(snapshot, head, dropout_rng)[1])
        return nodes, (parts[0] if len(parts) == 1 else ad.concat(parts, axis=1))

    def _temporal_beta(self, seq: Tensor, head: int, mask: Tensor) -> tuple:
        """(beta, values): masked scaled dot-product coefficients of one head."""
        if seq.ndim != 3 or seq.shape[2] != self.config.dim:
            raise DimensionError(f"temporal input must be (n, L, {self.config.dim}), got {seq.shape}")
        k = self.config.head_dim
        q = ad.matmul(seq, self.store[f"temporal{head}/query"])
        key = ad.matmul(seq, self.store[f"temporal{head}/key"])
        v = ad.matmul(seq, self.store[f"temporal{head}/value"])
        scores = ad.matmul(q, ad.transpose(key, (0, 2, 1))) * (1.0 / np.sqrt(k))
        return ad.masked_softmax(scores, mask), v

    def temporal_attention(self, seq: Tensor, head: int, mask: Tensor,
                           dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Scaled dot-product attention along the window axis for one head.

        seq is (n, L, d), rows ordered oldest to newest; returns (n, L, k).
        """
        beta, v = self._temporal_beta(seq, head, mask)
        beta = self._maybe_dropout(beta, dropout_rng)
        return ad.matmul(beta, v)

    def temporal_coefficients(self, seq: Tensor, head: int, mask: Tensor) -> np.ndarray:
        """The (n, L, L) beta matrix through the layer's own softmax path."""
        with ad.no_grad():
            beta, _ = self._temporal_beta(seq, head, mask)
        return beta.data

    def multi_head_temporal(self, seq: Tensor, mask: Tensor,
                            dropout_rng: np.random.Generator | None = None) -> Tensor:
        parts = [self.temporal_attention(seq, head, mask, dropout_rng)
                 for head in range(self.config.heads_temporal)]
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=2)

    def _maybe_dropout(self, t: Tensor, rng: np.random.Generator | None) -> Tensor:
        rate = self.config.dropout
        if rate <= 0.0 or rng is None:
            return t
        keep = (rng.random(t.shape) >= rate).astype(t.data.dtype) / (1.0 - rate)
        return ad.mul(t, Tensor(keep))

    # -- full pipeline ---------------------------------------------------

    def forward(self, window: Window,
                dropout_rng: np.random.Generator | None = None,
                return_sequence: bool = False) -> NodeEmbeddings:
        """Embeddings at the newest step of the window.

        Structural outputs per snapshot are scattered over the window's
        node universe (a node missing from an older snapshot contributes a
        zero vector there), position embeddings are added, and the masked
        temporal layer runs across the sequence. The returned embeddings
        are the temporal output at the newest position; `return_sequence`
        instead exposes the full (n, L, d) temporal output. In the
        `literal` output mode the temporal result is skipped and the
        newest structural output plus its position embedding is returned.
        """
        length = len(window)
        if length == 0:
            raise ContractError("forward over an empty window")
        if length > self.config.max_seq_len:
            raise ContractError(
                f"window of {length} snapshots exceeds model horizon {self.config.max_seq_len}")
        universe = window.node_universe()
        if len(universe) == 0:
            raise ContractError("window contains no active nodes")
        self.ensure_capacity(int(universe.max()) + 1)
        pos_of = {int(u): i for i, u in enumerate(universe)}
        n = len(universe)

        # Position rows are end-aligned: the newest snapshot uses the last row.
        row_offset = self.config.max_seq_len - length
        pos_rows = ad.gather_rows(self.store["positions"],
                                  np.arange(row_offset, self.config.max_seq_len))

        per_step = []
        for snap in window.snapshots:
            if snap.is_empty():
                per_step.append(Tensor(np.zeros((1, n, self.config.dim), dtype=self.store.dtype)))
                continue
            ids, c = self.multi_head_structural(snap, dropout_rng)
            placed = ad.scatter_rows(c, [pos_of[int(u)] for u in ids], n)
            per_step.append(ad.reshape(placed, (1, n, self.config.dim)))

        if self.config.output_mode == "literal":
            newest = ad.reshape(per_step[-1], (n, self.config.dim))
            last_pos = ad.reshape(ad.gather_rows(self.store["positions"],
                                                 [self.config.max_seq_len - 1]),
                                  (1, self.config.dim))
            return NodeEmbeddings(universe, newest + last_pos)

        stacked = per_step[0] if length == 1 else ad.concat(per_step, axis=0)  # (L, n, d)
        seq = ad.transpose(stacked, (1, 0, 2)) + pos_rows  # (n, L, d)
        mask = temporal_mask(length, self.config.mask_convention, dtype=self.store.dtype)
        out = self.multi_head_temporal(seq, mask, dropout_rng)  # (n, L, d)
        if return_sequence:
            return NodeEmbeddings(universe, out)
        last = ad.gather_rows(ad.transpose(out, (1, 0, 2)), [length - 1])
        return NodeEmbeddings(universe, ad.reshape(last, (n, self.config.dim)))

    # -- accounting and persistence ---------------------------------------

    def parameter_count(self) -> int:
        """Element count over all trainable tensors.

        Frozen models report their size at freeze time: rows appended
        afterwards (for unseen nodes) are never trained.
        """
        if self._frozen_count is not None:
            return self._frozen_count
        return self.store.total_count()

    def freeze(self):
        self._frozen_count = self.store.total_count()
        self.store.freeze()

    @property
    def frozen(self) -> bool:
        return self._frozen_count is not None

    def save(self, path, global_index: dict | None = None):
        """Write a version-tagged .npz checkpoint with config and parameters."""
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "capacity": self.capacity,
            "seed": self.seed,
            "frozen_count": self._frozen_count,
            "global_index": global_index,
        }
        arrays = {f"param::{name}": values for name, values in self.store.state_arrays().items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> tuple:
        """Load a checkpoint; returns (model, global_index_or_None)."""
        with np.load(path) as blob:
            meta = json.loads(bytes(blob["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ContractError(f"{path} is not a {CHECKPOINT_FORMAT} file")
            config = ModelConfig(**meta["config"])
            model = cls(config, capacity=1, seed=meta["seed"])
            arrays = {name[len("param::"):]: blob[name] for name in blob.files if name.startswith("param::")}
        model.store.load_state_arrays(arrays)
        model.capacity = meta["capacity"]
        if meta.get("frozen_count") is not None:
            model._frozen_count = meta["frozen_count"]
            model.store.freeze()
        index = meta.get("global_index")
        return model, index
