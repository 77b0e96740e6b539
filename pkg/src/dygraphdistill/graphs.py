"""Dynamic-graph data model: snapshots, windows, ingestion, serialization.

A dynamic graph is an ordered sequence of undirected snapshot graphs over
a shared dense node index, split at `m` into an offline prefix (teacher
territory) and an online suffix (student territory). Snapshots carry
positive edge weights; every active node also attends to itself through
an implicit unit self-loop, so attention softmaxes are never empty.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError

logger = logging.getLogger(__name__)

GRAPH_FORMAT = "dygraphdistill-graph"
GRAPH_FORMAT_VERSION = 1


class Snapshot:
    """One undirected weighted graph observed in a single time bucket.

    Edges are stored canonically with u < v and strictly positive weights.
    `neighbors(u)` returns real neighbors only; the unit self-loop that
    every active node carries shows up in `dense_adjacency` (used by the
    attention layer) but not in walks or degrees.
    """

    def __init__(self, edges):
        us, vs, ws = [], [], []
        seen = {}
        for u, v, w in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ContractError("self-loop edges are implicit; do not pass u == v")
            if w <= 0:
                raise ContractError(f"edge ({u}, {v}) has non-positive weight {w}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise ContractError(f"duplicate edge {key}; collapse weights before construction")
            seen[key] = True
            us.append(key[0])
            vs.append(key[1])
            ws.append(float(w))
        self.edge_u = np.asarray(us, dtype=np.int64)
        self.edge_v = np.asarray(vs, dtype=np.int64)
        self.edge_w = np.asarray(ws, dtype=np.float64)
        order = np.lexsort((self.edge_v, self.edge_u))
        self.edge_u = self.edge_u[order]
        self.edge_v = self.edge_v[order]
        self.edge_w = self.edge_w[order]
        self.nodes = np.unique(np.concatenate([self.edge_u, self.edge_v])) if len(us) else np.empty(0, dtype=np.int64)
        self._neighbors: dict[int, np.ndarray] | None = None
        self._dense_cache: tuple | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def is_empty(self) -> bool:
        return self.n_edges == 0

    def edge_set(self) -> set:
        return set(zip(self.edge_u.tolist(), self.edge_v.tolist()))

    def _build_neighbors(self):
        nbrs: dict[int, list] = {int(n): [] for n in self.nodes}
        for u, v in zip(self.edge_u.tolist(), self.edge_v.tolist()):
            nbrs[u].append(v)
            nbrs[v].append(u)
        self._neighbors = {u: np.asarray(sorted(vs), dtype=np.int64) for u, vs in nbrs.items()}

    def neighbors(self, u: int) -> np.ndarray:
        if self._neighbors is None:
            self._build_neighbors()
        return self._neighbors.get(int(u), np.empty(0, dtype=np.int64))

    def degrees(self) -> np.ndarray:
        """Weighted degree (self-loop excluded) aligned with `self.nodes`."""
        pos = {int(n): i for i, n in enumerate(self.nodes)}
        deg = np.zeros(self.n_nodes, dtype=np.float64)
        for u, v, w in zip(self.edge_u.tolist(), self.edge_v.tolist(), self.edge_w.tolist()):
            deg[pos[u]] += w
            deg[pos[v]] += w
        return deg

    def dense_adjacency(self):
        """(nodes, A) where A is the weighted adjacency over active nodes.

        A carries unit self-loop weights on the diagonal. Cached; the
        snapshot is immutable after construction.
        """
        if self._dense_cache is None:
            n = self.n_nodes
            pos = {int(v): i for i, v in enumerate(self.nodes)}
            a = np.zeros((n, n), dtype=np.float64)
            for u, v, w in zip(self.edge_u.tolist(), self.edge_v.tolist(), self.edge_w.tolist()):
                i, j = pos[u], pos[v]
                a[i, j] = w
                a[j, i] = w
            np.fill_diagonal(a, 1.0)
            self._dense_cache = (self.nodes.copy(), a)
        return self._dense_cache


@dataclass(frozen=True)
class Window:
    """The sub-sequence of snapshots ending at step t, at most l+1 long."""

    t: int
    l: int
    indices: tuple
    snapshots: tuple

    def __len__(self):
        return len(self.snapshots)

    def node_universe(self) -> np.ndarray:
        if not self.snapshots:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([s.nodes for s in self.snapshots]))

    def edge_union(self) -> set:
        out: set = set()
        for s in self.snapshots:
            out |= s.edge_set()
        return out


@dataclass
class DynamicGraph:
    """Ordered snapshots plus the global node index and offline/online split."""

    snapshots: list
    global_index: dict  # external id (str) -> dense int id
    m: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (1 <= self.m < len(self.snapshots)):
            raise ContractError(f"split m={self.m} must satisfy 1 <= m < T={len(self.snapshots)}")

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def n_nodes(self) -> int:
        return len(self.global_index)

    def window(self, t: int, l: int) -> Window:
        """Snapshots [t-l, t], truncated at the start of the sequence."""
        if not (0 <= t < self.T):
            raise ContractError(f"time step {t} outside [0, {self.T})")
        if l < 1:
            raise ContractError("window length l must be >= 1")
        lo = max(0, t - l)
        idx = tuple(range(lo, t + 1))
        return Window(t=t, l=l, indices=idx, snapshots=tuple(self.snapshots[i] for i in idx))

    def offline_steps(self) -> range:
        return range(0, self.m)

    def online_steps(self) -> range:
        return range(self.m, self.T)

    def content_hash(self) -> str:
        """SHA-256 over the canonical graph content (nodes, edges, split)."""
        h = hashlib.sha256()
        h.update(f"m={self.m};T={self.T}\n".encode())
        for ext, dense in sorted(self.global_index.items(), key=lambda kv: kv[1]):
            h.update(f"{ext}\t{dense}\n".encode())
        for s in self.snapshots:
            h.update(b"#snapshot\n")
            for u, v, w in zip(s.edge_u.tolist(), s.edge_v.tolist(), s.edge_w.tolist()):
                h.update(f"{u}\t{v}\t{w!r}\n".encode())
        return h.hexdigest()


def _collapse_edges(raw):
    """Merge duplicate undirected edges within one bucket by summing weights."""
    acc: dict[tuple, float] = {}
    for u, v, w in raw:
        key = (u, v) if u < v else (v, u)
        acc[key] = acc.get(key, 0.0) + w
    return [(u, v, w) for (u, v), w in acc.items()]


def default_split(T: int) -> int:
    return max(1, T // 2)


def load_edge_stream(path, bucket_width=None, bucket_count=None, m=None) -> DynamicGraph:
    """Parse a temporal edge list into a bucketed dynamic graph.

    Format: UTF-8 text, one edge per line, tab-separated
    `src<TAB>dst<TAB>timestamp[<TAB>weight]`. Timestamps are nonnegative
    integers; weight defaults to 1.0; lines starting with `#` (and blank
    lines) are ignored. Exactly one of `bucket_width` / `bucket_count`
    selects the bucketing rule. Buckets are anchored at the minimum
    timestamp; a bucket with no edges is kept as an empty snapshot with a
    warning. Duplicate edges within a bucket collapse with summed weight.
    Lines with src == dst mark the node active but add no edge (the unit
    self-loop is implicit).
    """
    if (bucket_width is None) == (bucket_count is None):
        raise ContractError("specify exactly one of bucket_width or bucket_count")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(parts)}", lineno)
            src, dst = parts[0], parts[1]
            try:
                ts = int(parts[2])
            except ValueError:
                raise ParseError(f"timestamp {parts[2]!r} is not an integer", lineno) from None
            if ts < 0:
                raise ParseError(f"timestamp {ts} is negative", lineno)
            if len(parts) == 4:
                try:
                    w = float(parts[3])
                except ValueError:
                    raise ParseError(f"weight {parts[3]!r} is not a number", lineno) from None
                if w <= 0:
                    raise ParseError(f"weight {w} is not positive", lineno)
            else:
                w = 1.0
            records.append((src, dst, ts, w))
    if not records:
        raise ParseError("no edges found in input", None)

    ts_min = min(r[2] for r in records)
    ts_max = max(r[2] for r in records)
    if bucket_width is not None:
        if bucket_width <= 0:
            raise ContractError("bucket_width must be positive")
        width = int(bucket_width)
        n_buckets = (ts_max - ts_min) // width + 1
    else:
        if bucket_count <= 0:
            raise ContractError("bucket_count must be positive")
        n_buckets = int(bucket_count)
        width = max(1, -((ts_min - ts_max - 1) // n_buckets))  # ceil division

    global_index: dict[str, int] = {}

    def dense_id(ext: str) -> int:
        if ext not in global_index:
            global_index[ext] = len(global_index)
        return global_index[ext]

    buckets: list[list] = [[] for _ in range(n_buckets)]
    activations: list[set] = [set() for _ in range(n_buckets)]
    for src, dst, ts, w in sorted(records, key=lambda r: r[2]):
        b = min((ts - ts_min) // width, n_buckets - 1)
        u, v = dense_id(src), dense_id(dst)
        if u == v:
            activations[b].add(u)
        else:
            buckets[b].append((u, v, w))

    snapshots = []
    for b, raw in enumerate(buckets):
        if not raw and not activations[b]:
            logger.warning("bucket %d is empty; keeping an empty snapshot", b)
        if activations[b]:
            logger.warning("bucket %d: %d self-loop lines treated as node activations only",
                           b, len(activations[b]))
        snapshots.append(Snapshot(_collapse_edges(raw)))

    split = default_split(len(snapshots)) if m is None else int(m)
    return DynamicGraph(snapshots=snapshots, global_index=global_index, m=split,
                        meta={"source": str(path), "bucket_width": width, "buckets": n_buckets})


# ---------------------------------------------------------------------------
# Serialization: JSON manifest plus per-snapshot edge lists
# ---------------------------------------------------------------------------


def save_dynamic_graph(g: DynamicGraph, outdir) -> str:
    """Write `manifest.json` plus `snapshots/snap_NNNN.tsv`; returns manifest path."""
    outdir = str(outdir)
    snapdir = os.path.join(outdir, "snapshots")
    os.makedirs(snapdir, exist_ok=True)
    files = []
    for i, s in enumerate(g.snapshots):
        rel = os.path.join("snapshots", f"snap_{i:04d}.tsv")
        files.append(rel)
        with open(os.path.join(outdir, rel), "w", encoding="utf-8") as fh:
            for u, v, w in zip(s.edge_u.tolist(), s.edge_v.tolist(), s.edge_w.tolist()):
                fh.write(f"{u}\t{v}\t{w!r}\n")
    nodes_in_order = [ext for ext, _ in sorted(g.global_index.items(), key=lambda kv: kv[1])]
    manifest = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_FORMAT_VERSION,
        "snapshot_count": g.T,
        "split": g.m,
        "nodes": nodes_in_order,
        "snapshots": files,
        "content_hash": g.content_hash(),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_dynamic_graph(path, m=None) -> DynamicGraph:
    """Load a graph saved by `save_dynamic_graph` (manifest path or its directory)."""
    path = str(path)
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != GRAPH_FORMAT:
        raise ParseError(f"{path} is not a {GRAPH_FORMAT} manifest", None)
    base = os.path.dirname(path)
    snapshots = []
    for rel in manifest["snapshots"]:
        edges = []
        with open(os.path.join(base, rel), "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ParseError(f"{rel}: expected 3 fields", lineno)
                edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        snapshots.append(Snapshot(edges))
    global_index = {ext: i for i, ext in enumerate(manifest["nodes"])}
    split = manifest["split"] if m is None else int(m)
    g = DynamicGraph(snapshots=snapshots, global_index=global_index, m=split,
                     meta={"source": path})
    stored = manifest.get("content_hash")
    if stored and m is None and g.content_hash() != stored:
        raise ParseError("content hash mismatch; snapshot files were modified", None)
    return g


def is_graph_manifest(path) -> bool:
    path = str(path)
    if os.path.isdir(path):
        return os.path.exists(os.path.join(path, "manifest.json"))
    return path.endswith(".json")
