"""Text-to-vector encoders and the Euclidean-to-hyperbolic adapter.

Two encoder routes: a deterministic character-3-gram feature-hashing encoder
(self-contained, unit-norm output) and a loader for precomputed embedding
files, so external sentence encoders can be plugged in without running them
in-process.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import lorentz_exp0

logger = logging.getLogger(__name__)

EMB_FORMAT = "emb-v1"

_EMPTY_MARKER = "\x00empty\x00"


class HashingEncoder:
    """Signed character-3-gram feature hashing, L2-normalized.

    Deterministic given (text, dim, seed); identical strings map to identical
    vectors. Empty strings carry no information and map to the unit vector of
    the empty-marker token (logged as a warning).
    """

    unit_norm = True

    def __init__(self, dim: int = 128, seed: int = 0):
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self.dim = dim
        self.seed = seed
        self._bucket_key = zlib.crc32(f"bucket:{seed}".encode("utf-8"))
        self._sign_key = zlib.crc32(f"sign:{seed}".encode("utf-8"))

    def encode(self, text: str) -> np.ndarray:
        norm = " ".join(text.lower().split())
        if not norm:
            logger.warning("hash-encoding empty string; using empty-marker token")
            norm = _EMPTY_MARKER
        padded = "#" + norm + "#"
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3].encode("utf-8")
            bucket = zlib.crc32(gram, self._bucket_key) % self.dim
            sign = 1.0 if zlib.crc32(gram, self._sign_key) & 1 else -1.0
            vec[bucket] += sign
        n = np.linalg.norm(vec)
        if n == 0.0:
            # pathological self-cancelling text; fall back to the marker bucket
            bucket = zlib.crc32(_EMPTY_MARKER.encode("utf-8"), self._bucket_key) % self.dim
            vec[bucket] = 1.0
            n = 1.0
        return vec / n

    def encode_batch(self, texts) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts])


def load_embeddings(path_or_lines):
    """Read an emb-v1 file: header {"format","dim"} then {"id","vec"} lines.

    Returns (table, dim) with float64 vectors. Raises ValueError naming the
    offending record on dimension mismatch, duplicate id, or non-finite value.
    """
    if isinstance(path_or_lines, str) and "\n" in path_or_lines:
        lines = path_or_lines.splitlines()
    else:
        with open(path_or_lines, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != EMB_FORMAT:
        raise ValueError(f"unsupported embedding format: {header.get('format')!r}")
    dim = int(header["dim"])
    table = {}
    for ln in lines[1:]:
        rec = json.loads(ln)
        rid = rec["id"]
        if rid in table:
            raise ValueError(f"duplicate id {rid!r} in embedding file")
        vec = np.asarray(rec["vec"], dtype=np.float64)
        if vec.shape != (dim,):
            raise ValueError(f"record {rid!r} has dim {vec.shape[0]}, expected {dim}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"record {rid!r} contains a non-finite value")
        table[rid] = vec
    return table, dim


def save_embeddings(table: dict, path, dim: Optional[int] = None) -> None:
    if dim is None:
        dim = len(next(iter(table.values())))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": EMB_FORMAT, "dim": int(dim)}) + "\n")
        for rid in sorted(table):
            fh.write(json.dumps({"id": rid, "vec": [float(x) for x in table[rid]]}) + "\n")


def entity_text(node) -> str:
    """Canonical entity text: preferred label plus the first definition sentence."""
    if not node.definition:
        return node.label
    definition = node.definition.strip()
    cut = definition.find(". ")
    first = definition if cut < 0 else definition[: cut + 1]
    return f"{node.label} {first}"


# ---------------------------------------------------------------------------
# adapter g: Euclidean text embedding -> origin tangent space -> hyperboloid
# ---------------------------------------------------------------------------


@dataclass
class AdapterParams:
    """Affine (or two-layer tanh) map from text space into tangent space.

    linear:    t = W e + b              with W [d, d_e]
    two-layer: t = W tanh(W1 e + b1) + b  with W1 [h, d_e], W [d, h]
    """

    variant: str
    W: np.ndarray
    b: np.ndarray
    W1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1] if self.variant == "two-layer" else self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def arrays(self):
        if self.variant == "two-layer":
            return (self.W1, self.b1, self.W, self.b)
        return (self.W, self.b)


def init_adapter(dim: int, text_dim: int, variant: str = "linear", seed: int = 0, scale: float = 0.01) -> AdapterParams:
    rng = np.random.default_rng(seed)
    if variant == "linear":
        W = rng.normal(scale=scale, size=(dim, text_dim))
        return AdapterParams(variant="linear", W=W, b=np.zeros(dim))
    if variant == "two-layer":
        hidden = dim
        W1 = rng.normal(scale=scale, size=(hidden, text_dim))
        W = rng.normal(scale=scale, size=(dim, hidden))
        return AdapterParams(variant="two-layer", W=W, b=np.zeros(dim), W1=W1, b1=np.zeros(hidden))
    raise ValueError(f"unknown adapter variant {variant!r}")


def adapt_tangent(e: np.ndarray, params: AdapterParams) -> np.ndarray:
    """Tangent coordinates of the adapted embedding (the indexable query vector)."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != params.in_dim:
        raise ValueError(f"embedding dim {e.shape[-1]} does not match adapter input {params.in_dim}")
    if params.variant == "two-layer":
        hid = np.tanh(e @ params.W1.T + params.b1)
        return hid @ params.W.T + params.b
    return e @ params.W.T + params.b


def adapt(e: np.ndarray, params: AdapterParams) -> np.ndarray:
    """Full adapter: exp-map the tangent output onto the hyperboloid."""
    return lorentz_exp0(adapt_tangent(e, params))
