"""Multimodal graph container, CSR adjacency and the on-disk bundle format.

A bundle is a directory with a ``graph.json`` manifest and raw
little-endian arrays::

    graph.json   {n, d_v, d_t, edge_file, feat_v_file, feat_t_file,
                  labels_file?, num_classes?, allow_drop?}
    edges        u32 pairs
    feat_v/t     f32, row-major n x d
    labels       u32
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class CSR:
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.degree())

    def edges(self) -> np.ndarray:
        """Undirected edge list (u < v), shape |E| x 2, row-major order."""
        rows = self.row_ids()
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        a[self.row_ids(), self.indices] = True
        return a

    def mean_operator(self, dtype=np.float64) -> sp.csr_matrix:
        """Row-normalized adjacency; empty rows stay zero."""
        deg = self.degree()
        w = 1.0 / np.repeat(np.maximum(deg, 1), deg)
        return sp.csr_matrix((w.astype(dtype), self.indices, self.indptr), shape=(self.n, self.n))

    def permute(self, perm: np.ndarray) -> CSR:
        """Relabel node ``i`` as ``perm[i]``."""
        e = self.edges()
        return build_adjacency(perm[e] if len(e) else e, self.n)

    def __eq__(self, other):
        return (isinstance(other, CSR) and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))


def build_adjacency(edges, n: int) -> CSR:
    """Symmetric, deduplicated, self-loop-free CSR with sorted rows.

    Self-loops are dropped here; callers that must reject them check first.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise IndexError(f"edge endpoint out of range for n={n}")
    e = e[e[:, 0] != e[:, 1]]
    both = np.concatenate([e, e[:, ::-1]])
    keys = np.unique(both[:, 0] * n + both[:, 1])
    rows, cols = keys // n, keys % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return CSR(indptr, cols.astype(np.int64))


@dataclass(frozen=True, eq=False)
class MultimodalGraph:
    adjacency: CSR
    feat_v: np.ndarray
    feat_t: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        n = self.adjacency.n
        if self.feat_v.shape[0] != n or self.feat_t.shape[0] != n:
            raise BundleError("feature matrices need one row per node")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise BundleError("labels need one entry per node")
            c = self.num_classes if self.num_classes is not None else int(self.labels.max()) + 1
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= c):
                raise BundleError("label outside [0, num_classes)")
        for arr in (self.feat_v, self.feat_t, self.adjacency.indptr, self.adjacency.indices):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.adjacency.n

    @property
    def edge_count(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def d_v(self) -> int:
        return self.feat_v.shape[1]

    @property
    def d_t(self) -> int:
        return self.feat_t.shape[1]

    @cached_property
    def classes(self) -> int:
        if self.num_classes is not None:
            return self.num_classes
        return int(self.labels.max()) + 1 if self.labels is not None else 0

    @cached_property
    def canonical_order(self) -> np.ndarray:
        """Node order that depends only on node content, not on labels.

        Sorting by feature rows (then degree) lets every reduction over nodes
        run in the same order however the caller numbered the nodes, which
        makes downstream results bitwise relabeling-equivariant. Nodes with
        identical features and degree keep their relative input order.
        """
        keys = np.concatenate([self.feat_v, self.feat_t], axis=1).astype(np.float64)
        cols = [self.adjacency.degree()] + [keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)]
        return np.lexsort(cols)

    @cached_property
    def canonical(self) -> MultimodalGraph:
        return self.permute(np.argsort(self.canonical_order))

    def mean_operator(self, dtype=np.float64):
        cache = self.__dict__.setdefault("_mean_ops", {})
        key = np.dtype(dtype).str
        if key not in cache:
            cache[key] = self.adjacency.mean_operator(dtype)
        return cache[key]

    def with_adjacency(self, adjacency: CSR) -> MultimodalGraph:
        return MultimodalGraph(adjacency, self.feat_v, self.feat_t, self.labels, self.num_classes)

    def permute(self, perm) -> MultimodalGraph:
        """Node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        labels = None if self.labels is None else self.labels[inv]
        return MultimodalGraph(self.adjacency.permute(perm), self.feat_v[inv], self.feat_t[inv],
                               labels, self.num_classes)

    def equals(self, other: MultimodalGraph) -> bool:
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels))
        return (self.adjacency == other.adjacency and np.array_equal(self.feat_v, other.feat_v)
                and np.array_equal(self.feat_t, other.feat_t) and same_labels)


# ---------------------------------------------------------------- bundle I/O

def _read_array(path: Path, dtype: str, count: int, what: str) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing {what} file: {path}")
    raw = path.read_bytes()
    item = np.dtype(dtype).itemsize
    if len(raw) != count * item:
        raise BundleError(f"{what}: {len(raw)} bytes but manifest implies {count * item}")
    return np.frombuffer(raw, dtype=dtype).astype(np.dtype(dtype).newbyteorder("="))


def load_bundle(path) -> MultimodalGraph:
    root = Path(path)
    manifest_path = root / "graph.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no graph.json in {root}")
    m = json.loads(manifest_path.read_text())
    n, d_v, d_t = int(m["n"]), int(m["d_v"]), int(m["d_t"])

    edge_bytes = (root / m["edge_file"])
    if not edge_bytes.is_file():
        raise FileNotFoundError(f"missing edge file: {edge_bytes}")
    size = edge_bytes.stat().st_size
    if size % 8:
        raise BundleError("edge file length is not a whole number of u32 pairs")
    edges = _read_array(edge_bytes, "<u4", size // 4, "edges").astype(np.int64).reshape(-1, 2)
    if edges.size and edges.max() >= n:
        raise IndexError(f"edge endpoint {edges.max()} out of range for n={n}")
    loops = edges[:, 0] == edges[:, 1]
    if loops.any() and not m.get("allow_drop", False):
        raise BundleError(f"{int(loops.sum())} self-loop(s) in edge file (set allow_drop to drop them)")

    feat_v = _read_array(root / m["feat_v_file"], "<f4", n * d_v, "feat_v").reshape(n, d_v)
    feat_t = _read_array(root / m["feat_t_file"], "<f4", n * d_t, "feat_t").reshape(n, d_t)
    for name, f in (("feat_v", feat_v), ("feat_t", feat_t)):
        if not np.isfinite(f).all():
            raise BundleError(f"{name} contains non-finite values")

    labels = None
    if m.get("labels_file"):
        labels = _read_array(root / m["labels_file"], "<u4", n, "labels").astype(np.int64)
    num_classes = m.get("num_classes")
    return MultimodalGraph(build_adjacency(edges, n), feat_v, feat_t, labels,
                           int(num_classes) if num_classes is not None else None)


def save_bundle(graph: MultimodalGraph, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n": graph.n, "d_v": graph.d_v, "d_t": graph.d_t,
        "edge_file": "edges.u32", "feat_v_file": "feat_v.f32", "feat_t_file": "feat_t.f32",
    }
    (root / "edges.u32").write_bytes(graph.adjacency.edges().astype("<u4").tobytes())
    (root / "feat_v.f32").write_bytes(np.ascontiguousarray(graph.feat_v, dtype="<f4").tobytes())
    (root / "feat_t.f32").write_bytes(np.ascontiguousarray(graph.feat_t, dtype="<f4").tobytes())
    if graph.labels is not None:
        manifest["labels_file"] = "labels.u32"
        manifest["num_classes"] = graph.classes
        (root / "labels.u32").write_bytes(graph.labels.astype("<u4").tobytes())
    (root / "graph.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root
