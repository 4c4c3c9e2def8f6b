"""Euclidean vector indexes over id-keyed tables: an exact brute-force oracle
and a navigable small-world graph, with a common binary serialization.

Vectors are stored as float32 (matching the on-disk format exactly, so a
serialization round trip cannot change search results); distances accumulate
in float64. Cosine is implemented as L2 over unit-normalized copies. Ties
break by ascending id, which equals ascending row order because rows are
id-sorted at build time.
"""
from __future__ import annotations

import io
import struct
from typing import Optional

import numpy as np

from . import _hnsw as hnsw
from ._kernels import sq_dists_to_many

MAGIC = b"HYIX"
FORMAT_VERSION = 1
_KINDS = ("exact", "graph")
_METRICS = ("l2", "cosine")

DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 200


def default_ef_search(L: int) -> int:
    return max(64, 2 * L)


class VectorIndex:
    def __init__(self, kind, metric, ids, vectors, M=DEFAULT_M, ef_construction=DEFAULT_EF_CONSTRUCTION, seed=0):
        if kind not in _KINDS:
            raise ValueError(f"unknown index kind {kind!r}")
        if metric not in _METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        self.kind = kind
        self.metric = metric
        self.ids = list(ids)
        self.vectors = vectors  # float32 [n, dim]
        self.dim = int(vectors.shape[1])
        self.M = int(M)
        self.M0 = 2 * int(M)
        self.ef_construction = int(ef_construction)
        self.seed = int(seed)
        self.levels = None
        self.adj0 = None
        self.cnt0 = None
        self.adjU = None
        self.cntU = None
        self.entry = 0
        self.max_level = 0

    def __len__(self):
        return len(self.ids)

    def _prep_query(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).ravel()
        if q.shape[0] != self.dim:
            raise ValueError(f"query dim {q.shape[0]} does not match index dim {self.dim}")
        if self.metric == "cosine":
            n = np.linalg.norm(q)
            if n > 0:
                q = q / n
        return q

    def search(self, query, L: int, ef_search: Optional[int] = None):
        """Top-L by metric distance as [(id, distance)]; ties by ascending id."""
        if L < 1:
            raise ValueError("L must be >= 1")
        q = self._prep_query(query)
        n = len(self.ids)
        if self.kind == "exact":
            d2 = sq_dists_to_many(q, self.vectors)
            top = min(L, n)
            order = np.lexsort((np.arange(n), d2))[:top]
            return [(self.ids[i], float(np.sqrt(d2[i]))) for i in order]
        ef = ef_search if ef_search is not None else default_ef_search(L)
        ef = min(max(ef, L), n)
        d2s, rows = hnsw.hnsw_search(
            self.vectors, self.entry, self.max_level, self.adj0, self.cnt0, self.adjU, self.cntU, q, ef, min(L, n)
        )
        return [(self.ids[int(r)], float(np.sqrt(d))) for d, r in zip(d2s, rows)]


def build_index(
    table,
    metric: str = "l2",
    kind: str = "exact",
    M: int = DEFAULT_M,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    seed: int = 0,
) -> VectorIndex:
    """Build an index from an id-keyed vector table (dict) or (ids, matrix)."""
    if isinstance(table, dict):
        if not table:
            raise ValueError("cannot build an index from an empty table")
        ids = sorted(table)
        mat = np.asarray([table[i] for i in ids], dtype=np.float64)
    else:
        ids, mat = table
        ids = list(ids)
        mat = np.asarray(mat, dtype=np.float64)
        if len(ids) != mat.shape[0]:
            raise ValueError("ids and matrix row count differ")
        order = np.argsort(np.asarray(ids, dtype=object))
        ids = [ids[i] for i in order]
        mat = mat[order]
    if mat.ndim != 2:
        raise ValueError("vectors must share one dimension")
    if not np.all(np.isfinite(mat)):
        raise ValueError("non-finite vector in index input")
    if metric == "cosine":
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        mat = mat / np.maximum(norms, 1e-12)
    vecs = np.ascontiguousarray(mat, dtype=np.float32)
    idx = VectorIndex(kind, metric, ids, vecs, M=M, ef_construction=ef_construction, seed=seed)
    if kind == "graph":
        _build_graph(idx)
    return idx


def _build_graph(idx: VectorIndex) -> None:
    n = len(idx.ids)
    idx.levels = hnsw.draw_levels(n, idx.seed)
    n_upper = max(1, int(idx.levels.max()))
    idx.adj0 = np.zeros((n, idx.M0), dtype=np.int32)
    idx.cnt0 = np.zeros(n, dtype=np.int32)
    idx.adjU = np.zeros((n_upper, n, idx.M), dtype=np.int32)
    idx.cntU = np.zeros((n_upper, n), dtype=np.int32)
    entry, max_level = hnsw.hnsw_build(
        idx.vectors, idx.levels, idx.M, idx.M0, idx.ef_construction, idx.adj0, idx.cnt0, idx.adjU, idx.cntU
    )
    idx.entry = int(entry)
    idx.max_level = int(max_level)


# ---------------------------------------------------------------------------
# binary serialization (HYIX), little-endian; layout documented in the README
# ---------------------------------------------------------------------------


def serialize_index(idx: VectorIndex) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<B", _KINDS.index(idx.kind)))
    buf.write(struct.pack("<B", _METRICS.index(idx.metric)))
    buf.write(struct.pack("<I", idx.dim))
    buf.write(struct.pack("<Q", len(idx.ids)))
    for nid in idx.ids:
        raw = nid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long to serialize: {nid[:32]!r}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    buf.write(np.ascontiguousarray(idx.vectors, dtype="<f4").tobytes())
    if idx.kind == "graph":
        buf.write(struct.pack("<IIIQ", idx.M, idx.M0, idx.ef_construction, idx.seed))
        buf.write(struct.pack("<qi", idx.entry, idx.max_level))
        n_upper = idx.adjU.shape[0]
        buf.write(struct.pack("<I", n_upper))
        buf.write(idx.levels.astype("<i4").tobytes())
        buf.write(idx.cnt0.astype("<i4").tobytes())
        buf.write(idx.adj0.astype("<i4").tobytes())
        buf.write(idx.cntU.astype("<i4").tobytes())
        buf.write(idx.adjU.astype("<i4").tobytes())
    return buf.getvalue()


def deserialize_index(data: bytes) -> VectorIndex:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ValueError("not an index file (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported index format version {version}")
    kind = _KINDS[struct.unpack("<B", buf.read(1))[0]]
    metric = _METRICS[struct.unpack("<B", buf.read(1))[0]]
    (dim,) = struct.unpack("<I", buf.read(4))
    (count,) = struct.unpack("<Q", buf.read(8))
    ids = []
    for _ in range(count):
        (ln,) = struct.unpack("<H", buf.read(2))
        ids.append(buf.read(ln).decode("utf-8"))
    vecs = np.frombuffer(buf.read(count * dim * 4), dtype="<f4").reshape(count, dim).copy()
    idx = VectorIndex(kind, metric, ids, vecs)
    if kind == "graph":
        idx.M, idx.M0, idx.ef_construction, idx.seed = struct.unpack("<IIIQ", buf.read(20))
        idx.entry, idx.max_level = struct.unpack("<qi", buf.read(12))
        (n_upper,) = struct.unpack("<I", buf.read(4))
        idx.levels = np.frombuffer(buf.read(count * 4), dtype="<i4").copy()
        idx.cnt0 = np.frombuffer(buf.read(count * 4), dtype="<i4").copy()
        idx.adj0 = np.frombuffer(buf.read(count * idx.M0 * 4), dtype="<i4").reshape(count, idx.M0).copy()
        idx.cntU = np.frombuffer(buf.read(n_upper * count * 4), dtype="<i4").reshape(n_upper, count).copy()
        idx.adjU = (
            np.frombuffer(buf.read(n_upper * count * idx.M * 4), dtype="<i4").reshape(n_upper, count, idx.M).copy()
        )
    return idx


def save_index(idx: VectorIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_index(idx))


def load_index(path) -> VectorIndex:
    with open(path, "rb") as fh:
        return deserialize_index(fh.read())


def index_nbytes(idx: VectorIndex) -> int:
    """Serialized size in bytes (the footprint reported by the efficiency probe)."""
    return len(serialize_index(idx))
