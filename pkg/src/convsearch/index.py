"""Offline passage embedding store and exact cosine top-k search.

The store keeps unit-normalized float32 rows, so search is one matrix-vector
product plus a full sort. Ties break toward the ascending passage id, which
makes every ranking fully deterministic. The on-disk format is bit-exact
under save/load round trips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Passage
from .model import ModelConfig, embed_passages_batch
from .tokenizer import ContextOverflowError, Vocab, encode_passage

STORE_MAGIC = b"CRVE"
STORE_VERSION = 1


class StoreFormatError(ValueError):
    """Raised when a store file is malformed."""


@dataclass(frozen=True)
class RankedResult:
    """Descending-score (passage_id, score) pairs, at most k of them."""

    entries: tuple


@dataclass
class EmbeddingStore:
    ids: list
    matrix: np.ndarray  # (count, dim) float32, rows unit length
    dim: int

    def __post_init__(self):
        if self.matrix.shape != (len(self.ids), self.dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match"
                f" {len(self.ids)} ids x dim {self.dim}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate passage ids in store")
        self._ids_arr = np.asarray(self.ids)

    @property
    def count(self) -> int:
        return len(self.ids)


def build_store(
    collection: Sequence[Passage],
    vocab: Vocab,
    params: dict,
    config: ModelConfig,
    batch_size: int = 128,
) -> EmbeddingStore:
    """Embed every passage offline and L2-normalize the rows, collection order."""
    encoded = []
    for p in collection:
        try:
            encoded.append(encode_passage(p.text, vocab, context_len=config.context_len))
        except ContextOverflowError as exc:
            raise ContextOverflowError(f"passage {p.id!r} too long: {exc}") from exc
    rows = []
    with ad.no_grad():
        for lo in range(0, len(encoded), batch_size):
            pooled = embed_passages_batch(encoded[lo:lo + batch_size], params, config)
            rows.append(pooled.data.astype(np.float32))
    matrix = np.concatenate(rows, axis=0) if rows else np.zeros((0, config.d_model), np.float32)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        zero_row = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise ValueError(f"passage {collection[zero_row].id!r} embedded to the zero vector")
    matrix = matrix / norms
    return EmbeddingStore(ids=[p.id for p in collection], matrix=matrix,
                          dim=matrix.shape[1])


def search(store: EmbeddingStore, query_embedding, k: int) -> RankedResult:
    """Exact cosine top-k: full scan, full sort, id-ascending tie break.

    Scores are float64 row sums of the elementwise products, a fixed
    expression any reimplementation reproduces bit-for-bit; BLAS matrix
    products would reassociate the additions and drift in the last bit.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_embedding, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dim:
        raise ValueError(f"query dim {q.shape[0]} does not match store dim {store.dim}")
    norm = np.sqrt((q * q).sum())
    if norm == 0.0:
        raise ValueError("zero query vector")
    q = q / norm
    scores = (store.matrix.astype(np.float64) * q).sum(axis=1)
    order = np.lexsort((store._ids_arr, -scores))
    top = order[: min(k, store.count)]
    return RankedResult(entries=tuple((store.ids[i], float(scores[i])) for i in top))


def save_store(store: EmbeddingStore, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<I", STORE_VERSION))
        fh.write(struct.pack("<Q", store.count))
        fh.write(struct.pack("<I", store.dim))
        for pid in store.ids:
            raw = pid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise StoreFormatError("truncated store file")
    return raw


def load_store(path: str) -> EmbeddingStore:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != STORE_MAGIC:
            raise StoreFormatError(f"bad magic {magic!r}, expected {STORE_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != STORE_VERSION:
            raise StoreFormatError(f"unsupported store version {version}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        (dim,) = struct.unpack("<I", _read_exact(fh, 4))
        ids = []
        for _ in range(count):
            (length,) = struct.unpack("<I", _read_exact(fh, 4))
            ids.append(_read_exact(fh, length).decode("utf-8"))
        payload = _read_exact(fh, 4 * count * dim)
        if fh.read(1):
            raise StoreFormatError("trailing bytes after embedding rows")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    return EmbeddingStore(ids=ids, matrix=matrix, dim=dim)
