"""A small bidirectional transformer encoder trained with masked-token
prediction, written directly in numpy with hand-derived gradients.

Parameters live in a plain ``dict[str, np.ndarray]`` keyed by the names in
``param_shapes``; the dict order is the checkpoint manifest order.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, LengthError, UsageError
from .scene_lang import MASK, N_SPECIAL

log = logging.getLogger(__name__)

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 6
    n_heads: int = 12
    hidden_dim: int = 96
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    max_seq_len: int = 64
    dropout_prob: float = 0.1
    n_cells: int = 1  # grid cells per category; token layout for category-level scoring
    seed: int = 0

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)
        if self.hidden_dim % self.n_heads:
            raise UsageError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}", module="model")
        if min(self.n_layers, self.n_heads, self.hidden_dim, self.ffn_dim, self.max_seq_len) < 1:
            raise UsageError("model dimensions must be positive", module="model")
        if self.vocab_size <= N_SPECIAL:
            raise UsageError(f"vocab_size {self.vocab_size} leaves no object tokens", module="model")
        if (self.vocab_size - N_SPECIAL) % self.n_cells:
            raise UsageError("object token count is not a multiple of n_cells", module="model")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise UsageError("dropout_prob must lie in [0, 1)", module="model")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = cfg.hidden_dim, cfg.ffn_dim, cfg.vocab_size
    shapes = {"tok_emb": (v, d), "pos_emb": (cfg.max_seq_len, d)}
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        for proj in "qkvo":
            shapes[f"{p}.attn.{proj}.w"] = (d, d)
            shapes[f"{p}.attn.{proj}.b"] = (d,)
        shapes[f"{p}.ln1.scale"] = (d,)
        shapes[f"{p}.ln1.shift"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
        shapes[f"{p}.ln2.scale"] = (d,)
        shapes[f"{p}.ln2.shift"] = (d,)
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    return shapes


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """Truncated normal (std 0.02, cut at 2 std) weights, zero biases, unit LN scales."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".scale"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape)
            bad = np.abs(arr) > 2.0
            while bad.any():
                arr[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(arr) > 2.0
            arr *= INIT_STD
        params[name] = arr.astype(dtype)
    return params


def n_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


# ---------------------------------------------------------------- primitives

def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * (u * u * u)))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def _layer_norm(r, scale, shift):
    mu = r.mean(axis=-1, keepdims=True)
    xc = r - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * scale + shift, (xhat, rstd)


def _layer_norm_back(dy, scale, cache):
    xhat, rstd = cache
    dxhat = dy * scale
    dr = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dy.ndim - 1))
    return dr, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _dropout_mask(rng, shape, p, dtype):
    if rng is None or p == 0.0:
        return None
    return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)


def _split_heads(x, n_heads):
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


# ---------------------------------------------------------------- forward / backward

def _encode(params, cfg: ModelConfig, ids, valid, rng=None):
    """Run the encoder stack. ``rng`` enables dropout (training only)."""
    b, l = ids.shape
    dtype = params["tok_emb"].dtype
    p = cfg.dropout_prob
    caches = []
    x = params["tok_emb"][ids] + params["pos_emb"][:l]
    emb_drop = _dropout_mask(rng, x.shape, p, dtype)
    if emb_drop is not None:
        x = x * emb_drop
    key_bias = np.where(valid, 0.0, -np.inf).astype(dtype)[:, None, None, :]
    scale = 1.0 / math.sqrt(cfg.head_dim)

    for i in range(cfg.n_layers):
        pre = f"layer{i}"
        x_in = x
        q = _split_heads(x @ params[f"{pre}.attn.q.w"] + params[f"{pre}.attn.q.b"], cfg.n_heads)
        k = _split_heads(x @ params[f"{pre}.attn.k.w"] + params[f"{pre}.attn.k.b"], cfg.n_heads)
        v = _split_heads(x @ params[f"{pre}.attn.v.w"] + params[f"{pre}.attn.v.b"], cfg.n_heads)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale + key_bias
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(a @ v)
        o = ctx @ params[f"{pre}.attn.o.w"] + params[f"{pre}.attn.o.b"]
        drop1 = _dropout_mask(rng, o.shape, p, dtype)
        if drop1 is not None:
            o = o * drop1
        h1, ln1 = _layer_norm(x_in + o, params[f"{pre}.ln1.scale"], params[f"{pre}.ln1.shift"])
        u = h1 @ params[f"{pre}.ffn.w1"] + params[f"{pre}.ffn.b1"]
        g, t = _gelu(u)
        f = g @ params[f"{pre}.ffn.w2"] + params[f"{pre}.ffn.b2"]
        drop2 = _dropout_mask(rng, f.shape, p, dtype)
        if drop2 is not None:
            f = f * drop2
        x, ln2 = _layer_norm(h1 + f, params[f"{pre}.ln2.scale"], params[f"{pre}.ln2.shift"])
        caches.append((x_in, q, k, v, a, ctx, drop1, h1, ln1, u, g, t, drop2, ln2))
    return x, (ids, emb_drop, caches)


def _encode_back(params, cfg: ModelConfig, dx, cache, grads):
    ids, emb_drop, caches = cache
    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.n_layers)):
        pre = f"layer{i}"
        x_in, q, k, v, a, ctx, drop1, h1, ln1, u, g, t, drop2, ln2 = caches[i]
        d = x_in.shape[-1]

        dr2, grads[f"{pre}.ln2.scale"], grads[f"{pre}.ln2.shift"] = _layer_norm_back(
            dx, params[f"{pre}.ln2.scale"], ln2
        )
        df = dr2 if drop2 is None else dr2 * drop2
        grads[f"{pre}.ffn.w2"] = g.reshape(-1, g.shape[-1]).T @ df.reshape(-1, d)
        grads[f"{pre}.ffn.b2"] = df.sum(axis=(0, 1))
        du = (df @ params[f"{pre}.ffn.w2"].T) * _gelu_grad(u, t)
        grads[f"{pre}.ffn.w1"] = h1.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
        grads[f"{pre}.ffn.b1"] = du.sum(axis=(0, 1))
        dh1 = dr2 + du @ params[f"{pre}.ffn.w1"].T

        dr1, grads[f"{pre}.ln1.scale"], grads[f"{pre}.ln1.shift"] = _layer_norm_back(
            dh1, params[f"{pre}.ln1.scale"], ln1
        )
        do = dr1 if drop1 is None else dr1 * drop1
        grads[f"{pre}.attn.o.w"] = ctx.reshape(-1, d).T @ do.reshape(-1, d)
        grads[f"{pre}.attn.o.b"] = do.sum(axis=(0, 1))
        dctx = _split_heads(do @ params[f"{pre}.attn.o.w"].T, cfg.n_heads)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q

        dx = dr1
        x2 = x_in.reshape(-1, d)
        for proj, dp in (("q", dq), ("k", dk), ("v", dv)):
            dp = _merge_heads(dp)
            grads[f"{pre}.attn.{proj}.w"] = x2.T @ dp.reshape(-1, d)
            grads[f"{pre}.attn.{proj}.b"] = dp.sum(axis=(0, 1))
            dx = dx + dp @ params[f"{pre}.attn.{proj}.w"].T

    if emb_drop is not None:
        dx = dx * emb_drop
    l = dx.shape[1]
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:l] = dx.sum(axis=0)
    grads["pos_emb"] = dpos
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    grads["tok_emb"] = dtok


def _head_logits(params, hsel):
    logits = hsel @ params["head.w"] + params["head.b"]
    logits[:, :N_SPECIAL] = -np.inf
    return logits


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _pack(cfg: ModelConfig, seqs: Sequence[Sequence[int]], masks: Sequence[Sequence[int]]):
    """Pad to a batch; masked slots get MASK. Returns ids, valid, (rows, cols) of masked slots, targets."""
    lengths = [len(s) for s in seqs]
    l = max(lengths)
    if l > cfg.max_seq_len:
        raise LengthError(f"sequence length {l} exceeds max_seq_len {cfg.max_seq_len}")
    ids = np.zeros((len(seqs), l), dtype=np.int64)
    valid = np.zeros((len(seqs), l), dtype=bool)
    for r, (s, m) in enumerate(zip(seqs, masks)):
        if len(m) != len(s):
            raise UsageError(f"mask length {len(m)} != token length {len(s)}", module="model")
        ids[r, : len(s)] = s
        valid[r, : len(s)] = True
    mask_arr = np.ones_like(ids)
    for r, m in enumerate(masks):
        mask_arr[r, : len(m)] = m
    rows, cols = np.nonzero((mask_arr == 0) & valid)
    targets = ids[rows, cols].copy()
    ids[rows, cols] = MASK
    return ids, valid, (rows, cols), targets


def forward(params, cfg: ModelConfig, tokens: Sequence[int], mask: Sequence[int]) -> np.ndarray:
    """Per-position distributions over the vocabulary for one sequence.

    Returns an (n, vocab_size) array; PAD and MASK columns are exactly 0 and
    every row sums to 1.
    """
    if len(tokens) != len(mask):
        raise UsageError(f"mask length {len(mask)} != token length {len(tokens)}", module="model")
    if len(tokens) > cfg.max_seq_len:
        raise LengthError(f"sequence length {len(tokens)} exceeds max_seq_len {cfg.max_seq_len}")
    ids = np.asarray(tokens, dtype=np.int64).copy()
    ids[np.asarray(mask) == 0] = MASK
    h, _ = _encode(params, cfg, ids[None, :], np.ones((1, len(ids)), dtype=bool))
    return _softmax_rows(_head_logits(params, h[0]))


def masked_probs(params, cfg: ModelConfig, seqs: Sequence[Sequence[int]], positions: Sequence[int]) -> np.ndarray:
    """Distribution at ``positions[r]`` of ``seqs[r]`` with that single slot masked; shape (N, vocab_size)."""
    masks = []
    for s, i in zip(seqs, positions):
        m = [1] * len(s)
        m[i] = 0
        masks.append(m)
    ids, valid, (rows, cols), _ = _pack(cfg, seqs, masks)
    h, _ = _encode(params, cfg, ids, valid)
    return _softmax_rows(_head_logits(params, h[rows, cols]))


def mlm_loss_and_grads(params, cfg: ModelConfig, batch, rng=None):
    """Mean cross-entropy over masked slots and its exact gradient.

    ``batch`` is a sequence of (tokens, mask) pairs, mask 0 marking hidden
    slots. Passing ``rng`` turns dropout on.
    """
    seqs = [t for t, _ in batch]
    masks = [m for _, m in batch]
    for r, m in enumerate(masks):
        if all(x != 0 for x in m):
            raise UsageError(f"batch example {r} has no masked position", module="model")
    ids, valid, (rows, cols), targets = _pack(cfg, seqs, masks)
    h, cache = _encode(params, cfg, ids, valid, rng=rng)
    hsel = h[rows, cols]
    z = _head_logits(params, hsel)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=-1, keepdims=True)
    probs = e / denom
    n = len(targets)
    logp_true = z[np.arange(n), targets] - np.log(denom[:, 0])
    loss = float(-logp_true.astype(np.float64).mean())

    dlogits = probs
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    grads = {"head.w": hsel.T @ dlogits, "head.b": dlogits.sum(axis=0)}
    dh = np.zeros_like(h)
    np.add.at(dh, (rows, cols), dlogits @ params["head.w"].T)
    _encode_back(params, cfg, dh, cache, grads)
    return loss, {name: grads[name] for name in params}


# ---------------------------------------------------------------- optimizer / training

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_update(params, grads, opt: OptimizerState) -> None:
    """In-place Adam step with bias correction."""
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    step_size = opt.lr * math.sqrt(1.0 - b2**opt.step) / (1.0 - b1**opt.step)
    for name, p in params.items():
        g = grads[name]
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (step_size * m / (np.sqrt(v) + opt.eps)).astype(p.dtype)


def train(
    params,
    cfg: ModelConfig,
    opt: OptimizerState | None,
    corpus: Sequence[Sequence[int]],
    epochs: int,
    batch_size: int = 64,
    seed: int = 0,
    callback=None,
):
    """Dynamic single-slot masking with Adam. Returns (params, per-epoch mean loss).

    Input parameters are copied, never mutated. Every epoch reshuffles and
    draws a fresh masked slot for every sentence.
    """
    if len(corpus) == 0:
        raise UsageError("cannot train on an empty corpus", module="model")
    if batch_size < 1:
        raise UsageError("batch_size must be positive", module="model")
    seqs = []
    n_trunc = 0
    for s in corpus:
        if len(s) == 0:
            raise UsageError("training sentences must be non-empty", module="model")
        if len(s) > cfg.max_seq_len:
            n_trunc += 1
            s = s[: cfg.max_seq_len]
        seqs.append(list(s))
    if n_trunc:
        log.warning("truncated %d sentences to max_seq_len=%d", n_trunc, cfg.max_seq_len)

    params = {k: p.copy() for k, p in params.items()}
    if opt is None:
        opt = OptimizerState.for_params(params)
    order_rng = np.random.default_rng([seed, 0])
    drop_rng = np.random.default_rng([seed, 1]) if cfg.dropout_prob > 0 else None
    lengths = np.array([len(s) for s in seqs])
    history = []
    for epoch in range(epochs):
        order = order_rng.permutation(len(seqs))
        slots = (order_rng.random(len(seqs)) * lengths[order]).astype(np.int64)
        total, count = 0.0, 0
        for start in range(0, len(seqs), batch_size):
            batch = []
            for j in range(start, min(start + batch_size, len(seqs))):
                s = seqs[order[j]]
                m = [1] * len(s)
                m[slots[j]] = 0
                batch.append((s, m))
            loss, grads = mlm_loss_and_grads(params, cfg, batch, rng=drop_rng)
            adam_update(params, grads, opt)
            total += loss * len(batch)
            count += len(batch)
        history.append(total / count)
        log.info("epoch %d/%d loss %.4f", epoch + 1, epochs, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return params, history


def masked_nll(params, cfg: ModelConfig, corpus: Sequence[Sequence[int]], chunk: int = 512) -> float:
    """Mean -log p(true token) with each position of each sentence masked in turn."""
    seqs, pos = [], []
    for s in corpus:
        for i in range(len(s)):
            seqs.append(s)
            pos.append(i)
    total = 0.0
    for a in range(0, len(seqs), chunk):
        p = masked_probs(params, cfg, seqs[a : a + chunk], pos[a : a + chunk])
        tgt = np.array([seqs[r][pos[r]] for r in range(a, min(a + chunk, len(seqs)))])
        p_true = np.maximum(p[np.arange(len(tgt)), tgt].astype(np.float64), np.finfo(np.float64).tiny)
        total += float(-np.log(p_true).sum())
    return total / len(seqs)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"SCNBERT1"
CHECKPOINT_VERSION = 1


def save_checkpoint(params, cfg: ModelConfig, path) -> None:
    """Magic, u64-LE header length, JSON header, then little-endian float32 data in manifest order."""
    shapes = param_shapes(cfg)
    manifest = []
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise CheckpointError(f"parameter {name} has shape {params[name].shape}, config expects {shape}")
        manifest.append([name, list(shape)])
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": cfg.to_json(), "params": manifest}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in shapes:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Returns (params as float32, config). Any structural defect raises CheckpointError."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[off : off + 8])
    off += 8
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: truncated or corrupt header") from None
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    try:
        cfg = ModelConfig.from_json(header["config"])
    except (TypeError, UsageError) as exc:
        raise CheckpointError(f"{path}: invalid config in header ({exc})") from None
    if expect is not None and expect != cfg:
        raise CheckpointError(f"{path}: checkpoint config {cfg} does not match expected {expect}")
    expected = param_shapes(cfg)
    manifest = [(n, tuple(s)) for n, s in header["params"]]
    if manifest != list(expected.items()):
        raise CheckpointError(f"{path}: parameter manifest does not match config shapes")
    need = sum(int(np.prod(s)) for _, s in manifest) * 4
    if len(raw) - off != need:
        raise CheckpointError(f"{path}: expected {need} data bytes, found {len(raw) - off}")
    params = {}
    for name, shape in manifest:
        size = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += size * 4
    return params, cfg
