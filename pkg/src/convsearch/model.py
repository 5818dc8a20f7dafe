"""Tiny decoder-only causal transformer on the autodiff engine.

The same trunk serves two outputs: next-token logits for the generation
objective, and hidden states pooled into retrieval embeddings. Query
embeddings pool only the current-query span at the end of the input;
passage embeddings pool the passage content tokens.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import ContextOverflowError, EncodedPassage, PAD

CHECKPOINT_MAGIC = b"CRCK"
CHECKPOINT_VERSION = 1

# structural markers end greedy decoding; UNK is ordinary content
GENERATION_STOP_IDS = frozenset({0, 2, 3, 4, 5})

_NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context_len: int = 256
    ff_mult: int = 4
    dropout: float = 0.0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for field in ("vocab_size", "d_model", "n_layers", "n_heads", "context_len", "ff_mult"):
            if getattr(self, field) < 0 or (field != "n_layers" and getattr(self, field) < 1):
                raise ValueError(f"{field} out of range")


def param_order(config: ModelConfig) -> list:
    """Fixed declaration order of parameter names (checkpoint layout)."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        prefix = f"layers.{i}."
        names.extend(prefix + n for n in (
            "ln1.gamma", "ln1.beta",
            "attn.wq", "attn.wk", "attn.wv", "attn.wo",
            "ln2.gamma", "ln2.beta",
            "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
        ))
    names.extend(["ln_f.gamma", "ln_f.beta", "lm_head"])
    return names


def _param_shape(name: str, config: ModelConfig) -> tuple:
    d, v = config.d_model, config.vocab_size
    ff = config.d_model * config.ff_mult
    if name == "tok_emb":
        return (v, d)
    if name == "pos_emb":
        return (config.context_len, d)
    if name == "lm_head":
        return (d, v)
    leaf = name.split(".", 2)[-1] if name.startswith("layers.") else name
    return {
        "ln1.gamma": (d,), "ln1.beta": (d,),
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "ln2.gamma": (d,), "ln2.beta": (d,),
        "ffn.w1": (d, ff), "ffn.b1": (ff,), "ffn.w2": (ff, d), "ffn.b2": (d,),
        "ln_f.gamma": (d,), "ln_f.beta": (d,),
    }[leaf]


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Fresh parameters: N(0, 0.02) weights, ones/zeros for norms and biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict = {}
    for name in param_order(config):
        shape = _param_shape(name, config)
        if name.endswith("gamma"):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith(("beta", ".b1", ".b2")):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = rng.normal(0.0, 0.02, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
    return params


def parameter_count(params: dict) -> int:
    return sum(p.data.size for p in params.values())


def _affine_norm(x: Tensor, params: dict, prefix: str) -> Tensor:
    return ad.layer_norm(x) * params[prefix + ".gamma"] + params[prefix + ".beta"]


def _causal_mask(t: int, dtype) -> np.ndarray:
    mask = np.triu(np.full((t, t), _NEG_INF, dtype=dtype), k=1)
    return mask.reshape(1, 1, t, t)


def forward_batch(
    ids_batch: np.ndarray,
    params: dict,
    config: ModelConfig,
    want_logits: bool = True,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Run the transformer over a (batch, time) id matrix.

    Sequences must be padded at the end; the causal mask then suffices, and
    pad rows simply produce hidden states nobody pools or scores.
    Returns (hidden (B,T,d), logits (B,T,vocab) or None).
    """
    ids_batch = np.asarray(ids_batch)
    if ids_batch.ndim != 2:
        raise ad.ShapeError(f"expected (batch, time) ids, got shape {ids_batch.shape}")
    batch, time = ids_batch.shape
    if time > config.context_len:
        raise ContextOverflowError(
            f"sequence length {time} exceeds context_len {config.context_len}"
        )
    dtype = params["tok_emb"].dtype
    drop = config.dropout if dropout_rng is not None else 0.0

    x = ad.gather_rows(params["tok_emb"], ids_batch)
    pos = ad.gather_rows(params["pos_emb"], np.arange(time))
    x = x + pos
    if drop > 0.0:
        x = ad.dropout(x, drop, dropout_rng)

    mask = Tensor(_causal_mask(time, dtype))
    n_heads = config.n_heads
    head_dim = config.d_model // n_heads
    scale = 1.0 / float(np.sqrt(head_dim))

    for i in range(config.n_layers):
        prefix = f"layers.{i}"
        normed = _affine_norm(x, params, prefix + ".ln1")
        q = _split_heads(normed @ params[prefix + ".attn.wq"], batch, time, n_heads, head_dim)
        k = _split_heads(normed @ params[prefix + ".attn.wk"], batch, time, n_heads, head_dim)
        v = _split_heads(normed @ params[prefix + ".attn.wv"], batch, time, n_heads, head_dim)
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * scale
        attn = ad.softmax(scores + mask)
        ctx = attn @ v
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, time, config.d_model))
        out = merged @ params[prefix + ".attn.wo"]
        if drop > 0.0:
            out = ad.dropout(out, drop, dropout_rng)
        x = x + out

        normed = _affine_norm(x, params, prefix + ".ln2")
        h = ad.gelu(normed @ params[prefix + ".ffn.w1"] + params[prefix + ".ffn.b1"])
        h = h @ params[prefix + ".ffn.w2"] + params[prefix + ".ffn.b2"]
        if drop > 0.0:
            h = ad.dropout(h, drop, dropout_rng)
        x = x + h

    # degenerate zero-layer model is just embeddings, no final norm
    hidden = _affine_norm(x, params, "ln_f") if config.n_layers > 0 else x
    logits = hidden @ params["lm_head"] if want_logits else None
    return hidden, logits


def _split_heads(x: Tensor, batch: int, time: int, n_heads: int, head_dim: int) -> Tensor:
    return ad.transpose(ad.reshape(x, (batch, time, n_heads, head_dim)), (0, 2, 1, 3))


def forward(ids: Sequence[int], params: dict, config: ModelConfig):
    """Single-sequence forward: returns (hidden (N,d), logits (N,vocab))."""
    if len(ids) == 0:
        raise ad.ShapeError("cannot run the model on an empty sequence")
    ids_batch = np.asarray(ids, dtype=np.int64).reshape(1, -1)
    hidden, logits = forward_batch(ids_batch, params, config, want_logits=True)
    n = ids_batch.shape[1]
    d = config.d_model
    return (
        ad.reshape(hidden, (n, d)),
        ad.reshape(logits, (n, config.vocab_size)),
    )


def extract_query_embedding(hidden: Tensor, query_length: int) -> Tensor:
    """Mean of the last query_length rows of hidden — the retrieval embedding.

    Not normalized here; cosine normalization happens at index/search time.
    """
    n = hidden.shape[0]
    if not 1 <= query_length <= n:
        raise ValueError(f"query_length {query_length} out of range for {n} rows")
    rows = ad.gather_rows(hidden, np.arange(n - query_length, n))
    return ad.tmean(rows, axis=0)


def pool_span_batch(hidden: Tensor, spans: Sequence[tuple]) -> Tensor:
    """Mean-pool each batch row over its own (start, end) span via one matmul."""
    batch, time, d = hidden.shape
    weights = np.zeros((batch, 1, time), dtype=hidden.dtype)
    for b, (start, end) in enumerate(spans):
        if not 0 <= start < end <= time:
            raise ValueError(f"bad span ({start}, {end}) for time {time}")
        weights[b, 0, start:end] = 1.0 / (end - start)
    pooled = Tensor(weights) @ hidden
    return ad.reshape(pooled, (batch, d))


def embed_passage(encoded: EncodedPassage, params: dict, config: ModelConfig) -> Tensor:
    """Retrieval embedding of one passage: mean over its content tokens."""
    pooled = embed_passages_batch([encoded], params, config)
    return ad.reshape(pooled, (config.d_model,))


def embed_passages_batch(
    encoded: Sequence[EncodedPassage], params: dict, config: ModelConfig
) -> Tensor:
    """Embed passages in one padded forward; returns a (count, d) tensor."""
    if not encoded:
        raise ValueError("no passages to embed")
    time = max(e.length for e in encoded)
    ids = np.full((len(encoded), time), PAD, dtype=np.int64)
    for b, e in enumerate(encoded):
        ids[b, : e.length] = e.ids
    hidden, _ = forward_batch(ids, params, config, want_logits=False)
    return pool_span_batch(hidden, [e.content_span for e in encoded])


def generate_greedy(
    prompt_ids: Sequence[int],
    params: dict,
    config: ModelConfig,
    max_new: int,
) -> list:
    """Argmax decoding; stops on any structural marker or after max_new tokens.

    Ties break toward the lowest token id (np.argmax convention).
    """
    if len(prompt_ids) + max_new > config.context_len:
        raise ContextOverflowError(
            f"prompt of {len(prompt_ids)} tokens plus {max_new} new ones"
            f" exceeds context_len {config.context_len}"
        )
    ids = list(prompt_ids)
    generated: list = []
    with ad.no_grad():
        for _ in range(max_new):
            _, logits = forward(ids, params, config)
            next_id = int(np.argmax(logits.data[-1]))
            if next_id in GENERATION_STOP_IDS:
                break
            generated.append(next_id)
            ids.append(next_id)
    return generated


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file is malformed."""


def _write_string(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointFormatError("truncated checkpoint file")
    return raw


def _read_string(fh) -> str:
    (length,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, length).decode("utf-8")


def save_checkpoint(path: str, config: ModelConfig, params: dict,
                    extra: Optional[dict] = None) -> None:
    """Binary checkpoint: magic, version, config fields, tensors in fixed order."""
    entries = {f.name: repr(getattr(config, f.name)) for f in fields(ModelConfig)}
    if extra:
        entries.update({k: str(v) for k, v in extra.items()})
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for key, value in entries.items():
            _write_string(fh, key)
            _write_string(fh, value)
        for name in param_order(config):
            data = np.ascontiguousarray(params[name].data, dtype=np.float32)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def load_checkpoint(path: str):
    """Returns (config, params, extra) from a checkpoint file."""
    config_fields = {f.name: f.type for f in fields(ModelConfig)}
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4))
        entries: dict = {}
        for _ in range(n_entries):
            key = _read_string(fh)
            entries[key] = _read_string(fh)
        kwargs = {}
        for name in config_fields:
            if name not in entries:
                raise CheckpointFormatError(f"checkpoint missing config field {name!r}")
            raw = entries.pop(name)
            kwargs[name] = float(raw) if name == "dropout" else int(raw)
        config = ModelConfig(**kwargs)
        config.validate()
        params: dict = {}
        for name in param_order(config):
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank)
            )
            expected = _param_shape(name, config)
            if shape != expected:
                raise CheckpointFormatError(
                    f"parameter {name!r} has shape {shape}, expected {expected}"
                )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
            params[name] = Tensor(data.astype(np.float32, copy=True), requires_grad=True)
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after final parameter")
    return config, params, entries
