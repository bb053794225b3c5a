"""Compact transformer relation classifier with hand-derived gradients.

Encoder: learned token + position embeddings feeding post-layer-norm
transformer blocks (multi-head self-attention, then a GELU feed-forward,
each followed by residual add and layer norm). Classification features per
instance are the elementwise max over each entity span's final hidden
states, optionally the hidden states at the two start markers, and
optionally a tanh-pooled transform of the sequence-start hidden state; the
concatenation passes through two fully connected layers (relu between,
dropout in training mode) to per-label logits.

Feature layout, in order: e1-span max, e2-span max, [s1 marker, s2 marker,]
[pooled]. All gradients are analytic and checked against central finite
differences in the test suite; every array op routes through
``relex.kernels`` so the compiled and pure backends are interchangeable.

Parameters live in a flat name -> ndarray mapping. Freeze modes restrict
which names are trainable; the classification head always trains:

* ``all_frozen``: head only;
* ``last_layer_unfrozen``: head, pooler, and the topmost block;
* ``all_unfrozen``: everything.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .encoding import CLS, PAD, EncodedInstance

LN_EPS = 1e-5
_MASK_NEG = 1e30
_MAGIC = b"RELX"
FORMAT_VERSION = 1
FREEZE_MODES = ("all_frozen", "all_unfrozen", "last_layer_unfrozen")


class ModelError(RuntimeError):
    pass


class NonFiniteLossError(ModelError):
    pass


class ModelIOError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_labels: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_seq_len: int = 128
    use_marker_states: bool = True
    use_pooled_output: bool = True
    dropout_rate: float = 0.1
    head_hidden: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def feature_dim(self) -> int:
        n_parts = 2 + 2 * int(self.use_marker_states) + int(self.use_pooled_output)
        return self.d_model * n_parts

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "vocab_size", "n_labels", "d_model", "n_layers", "n_heads", "d_ff",
            "max_seq_len", "use_marker_states", "use_pooled_output",
            "dropout_rate", "head_hidden")}


@dataclass
class RelModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    labels: tuple[str, ...]
    vocab_hash: str
    freeze: str = "all_unfrozen"
    dtype: np.dtype = np.dtype(np.float32)

    def trainable_names(self) -> list[str]:
        if self.freeze not in FREEZE_MODES:
            raise ValueError(f"unknown freeze mode {self.freeze!r}; "
                             f"expected one of {FREEZE_MODES}")
        if self.freeze == "all_unfrozen":
            return sorted(self.params)
        names = [n for n in self.params if n.startswith("head.")]
        if self.freeze == "last_layer_unfrozen":
            top = f"layers.{self.config.n_layers - 1}."
            names += [n for n in self.params
                      if n.startswith(top) or n.startswith("pooler.")]
        return sorted(names)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "RelModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def _param_names(config: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        p = f"layers.{i}"
        # no key bias: a per-key constant shifts every attention row
        # uniformly and cancels in the softmax, so it could never train
        names += [f"{p}.attn.{w}" for w in ("wq", "bq", "wk", "wv", "bv", "wo", "bo")]
        names += [f"{p}.ln1.gamma", f"{p}.ln1.beta"]
        names += [f"{p}.ffn.w1", f"{p}.ffn.b1", f"{p}.ffn.w2", f"{p}.ffn.b2"]
        names += [f"{p}.ln2.gamma", f"{p}.ln2.beta"]
    names += ["pooler.w", "head.w1", "head.b1", "head.w2", "head.b2"]
    return names


def _param_shape(name: str, config: ModelConfig) -> tuple[int, ...]:
    d, dff = config.d_model, config.d_ff
    if name == "tok_emb":
        return (config.vocab_size, d)
    if name == "pos_emb":
        return (config.max_seq_len, d)
    if name == "pooler.w":
        return (d, d)
    if name == "head.w1":
        return (config.feature_dim, config.head_hidden)
    if name == "head.b1":
        return (config.head_hidden,)
    if name == "head.w2":
        return (config.head_hidden, config.n_labels)
    if name == "head.b2":
        return (config.n_labels,)
    leaf = name.split(".", 2)[2]
    return {
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "attn.bq": (d,), "attn.bv": (d,), "attn.bo": (d,),
        "ln1.gamma": (d,), "ln1.beta": (d,), "ln2.gamma": (d,), "ln2.beta": (d,),
        "ffn.w1": (d, dff), "ffn.b1": (dff,), "ffn.w2": (dff, d), "ffn.b2": (d,),
    }[leaf]


def init_model(config: ModelConfig, labels, vocab_hash: str, seed: int = 0,
               dtype=np.float32, freeze: str = "all_unfrozen",
               init_std: float = 0.02) -> RelModel:
    """Fresh model: weights ~ N(0, init_std), biases 0, layer-norm gain 1."""
    labels = tuple(labels)
    if len(labels) != config.n_labels:
        raise ValueError(f"{len(labels)} labels but config.n_labels={config.n_labels}")
    if freeze not in FREEZE_MODES:
        raise ValueError(f"unknown freeze mode {freeze!r}; expected one of {FREEZE_MODES}")
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    params: dict[str, np.ndarray] = {}
    for name in _param_names(config):
        shape = _param_shape(name, config)
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".beta", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.normal(0.0, init_std, size=shape).astype(dtype)
    return RelModel(config=config, params=params, labels=labels,
                    vocab_hash=vocab_hash, freeze=freeze, dtype=dtype)


def _prepare_batch(model: RelModel, batch: list[EncodedInstance]):
    """Pad to a common length and collect span/marker/label index arrays."""
    cfg = model.config
    if not batch:
        raise ValueError("empty batch")
    t_max = max(inst.attention_len for inst in batch)
    if t_max > cfg.max_seq_len:
        raise ModelError(f"batch length {t_max} exceeds max_seq_len {cfg.max_seq_len}")
    b = len(batch)
    ids = np.full((b, t_max), PAD, dtype=np.int64)
    mask = np.zeros((b, t_max), dtype=model.dtype)
    e1 = np.zeros((b, 2), dtype=np.int64)
    e2 = np.zeros((b, 2), dtype=np.int64)
    markers = np.zeros((b, 4), dtype=np.int64) if cfg.use_marker_states else None
    labels = np.zeros(b, dtype=np.int64)
    for i, inst in enumerate(batch):
        n = inst.attention_len
        if len(inst.token_ids) != n or inst.token_ids[0] != CLS:
            raise ModelError("encoder contract violated: bad token sequence")
        for lo, hi in (inst.e1_span, inst.e2_span):
            if not (0 <= lo < hi <= n):
                raise ModelError(f"encoder contract violated: span ({lo},{hi}) "
                                 f"outside attention_len {n}")
        ids[i, :n] = inst.token_ids
        mask[i, :n] = 1.0
        e1[i] = inst.e1_span
        e2[i] = inst.e2_span
        if markers is not None:
            if inst.marker_idx is None:
                raise ModelError("use_marker_states requires marker-encoded instances")
            if any(not 0 <= m < n for m in inst.marker_idx):
                raise ModelError("encoder contract violated: marker index outside "
                                 f"attention_len {n}")
            markers[i] = inst.marker_idx
        labels[i] = inst.label_id
    return ids, mask, e1, e2, markers, labels


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return np.ascontiguousarray(
        x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)


def _layer_norm(x3d, gamma, beta):
    b, t, d = x3d.shape
    y, mean, rstd = kernels.layer_norm_forward(
        np.ascontiguousarray(x3d.reshape(b * t, d)), gamma, beta, LN_EPS)
    return y.reshape(b, t, d), mean, rstd


def forward(model: RelModel, batch: list[EncodedInstance], train_mode: bool = False,
            rng: np.random.Generator | None = None):
    """Run the batch through the network; returns (logits, cache). Dropout
    fires only when ``train_mode`` and the configured rate is positive, and
    then requires ``rng``."""
    cfg = model.config
    p = model.params
    ids, mask, e1, e2, markers, labels = _prepare_batch(model, batch)
    b, t = ids.shape
    h_heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    scale = 1.0 / math.sqrt(dh)

    x = p["tok_emb"][ids] + p["pos_emb"][:t]
    attn_bias = ((mask - 1.0) * _MASK_NEG)[:, None, None, :]

    layer_caches = []
    h = x
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        q = _split_heads(h @ p[f"{pre}.attn.wq"] + p[f"{pre}.attn.bq"], h_heads)
        k = _split_heads(h @ p[f"{pre}.attn.wk"], h_heads)
        v = _split_heads(h @ p[f"{pre}.attn.wv"] + p[f"{pre}.attn.bv"], h_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + attn_bias
        probs = kernels.softmax_rows(
            np.ascontiguousarray(scores.reshape(-1, t))).reshape(b, h_heads, t, t)
        ctx = _merge_heads(probs @ v)
        attn_out = ctx @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"]
        res1 = h + attn_out
        h1, mean1, rstd1 = _layer_norm(res1, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
        z1 = h1 @ p[f"{pre}.ffn.w1"] + p[f"{pre}.ffn.b1"]
        g = kernels.gelu_forward(
            np.ascontiguousarray(z1.reshape(-1, cfg.d_ff))).reshape(b, t, cfg.d_ff)
        ffn_out = g @ p[f"{pre}.ffn.w2"] + p[f"{pre}.ffn.b2"]
        res2 = h1 + ffn_out
        h_out, mean2, rstd2 = _layer_norm(res2, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])
        layer_caches.append({"h_in": h, "q": q, "k": k, "v": v, "probs": probs,
                             "ctx": ctx, "res1": res1, "mean1": mean1, "rstd1": rstd1,
                             "h1": h1, "z1": z1, "g": g, "res2": res2,
                             "mean2": mean2, "rstd2": rstd2})
        h = h_out

    rows = np.arange(b)
    parts = []
    argmax1 = np.empty((b, cfg.d_model), dtype=np.int64)
    argmax2 = np.empty((b, cfg.d_model), dtype=np.int64)
    f_e1 = np.empty((b, cfg.d_model), dtype=model.dtype)
    f_e2 = np.empty((b, cfg.d_model), dtype=model.dtype)
    for i in range(b):
        s, e = e1[i]
        span = h[i, s:e]
        argmax1[i] = span.argmax(axis=0) + s
        f_e1[i] = span.max(axis=0)
        s, e = e2[i]
        span = h[i, s:e]
        argmax2[i] = span.argmax(axis=0) + s
        f_e2[i] = span.max(axis=0)
    parts += [f_e1, f_e2]
    if cfg.use_marker_states:
        parts += [h[rows, markers[:, 0]], h[rows, markers[:, 2]]]
    pooled = z_pool = None
    if cfg.use_pooled_output:
        z_pool = h[:, 0, :] @ p["pooler.w"]
        pooled = np.tanh(z_pool)
        parts.append(pooled)
    feature = np.concatenate(parts, axis=1)

    z_h1 = feature @ p["head.w1"] + p["head.b1"]
    a1 = np.maximum(z_h1, 0.0)
    drop_mask = None
    if train_mode and cfg.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode forward with dropout requires an rng")
        keep = 1.0 - cfg.dropout_rate
        drop_mask = (rng.random(a1.shape) < keep).astype(model.dtype) / keep
        a1 = a1 * drop_mask
    logits = a1 @ p["head.w2"] + p["head.b2"]

    cache = {"ids": ids, "mask": mask, "e1": e1, "e2": e2, "markers": markers,
             "labels": labels, "layers": layer_caches, "h_final": h,
             "argmax1": argmax1, "argmax2": argmax2, "z_pool": z_pool,
             "pooled": pooled, "feature": feature, "z_h1": z_h1, "a1": a1,
             "drop_mask": drop_mask, "logits": logits}
    return logits, cache


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(model: RelModel, batch: list[EncodedInstance],
                   class_weights: np.ndarray,
                   rng: np.random.Generator | None = None):
    """Class-weighted mean cross-entropy and its gradients for every
    parameter trainable under the model's freeze mode.

    loss = mean_i w[y_i] * (-log softmax(logits_i)[y_i])
    """
    cfg = model.config
    p = model.params
    class_weights = np.asarray(class_weights, dtype=model.dtype)
    if class_weights.shape != (cfg.n_labels,):
        raise ValueError(f"class_weights must have shape ({cfg.n_labels},)")
    if not np.all(class_weights > 0):
        raise ValueError("class weights must be strictly positive")

    logits, cache = forward(model, batch, train_mode=True, rng=rng)
    labels = cache["labels"]
    if np.any(labels < 0) or np.any(labels >= cfg.n_labels):
        raise ModelError("batch contains instances without a valid label id")
    b = logits.shape[0]
    rows = np.arange(b)
    logp = _log_softmax(logits)
    w = class_weights[labels]
    loss = float(np.mean(-w * logp[rows, labels]))
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss on batch of {b}: max|logit|="
            f"{np.abs(logits).max():.3g}, labels={labels.tolist()}")

    probs = np.exp(logp)
    dlogits = probs * (w / b)[:, None]
    dlogits[rows, labels] -= w / b

    grads: dict[str, np.ndarray] = {name: None for name in model.params}

    # classification head
    a1 = cache["a1"]
    grads["head.w2"] = a1.T @ dlogits
    grads["head.b2"] = dlogits.sum(axis=0)
    d_a1 = dlogits @ p["head.w2"].T
    if cache["drop_mask"] is not None:
        d_a1 = d_a1 * cache["drop_mask"]
    d_z1 = d_a1 * (cache["z_h1"] > 0)
    feature = cache["feature"]
    grads["head.w1"] = feature.T @ d_z1
    grads["head.b1"] = d_z1.sum(axis=0)
    d_feature = d_z1 @ p["head.w1"].T

    # split feature gradient back to its parts
    d = cfg.d_model
    offset = 0
    d_fe1 = d_feature[:, offset:offset + d]; offset += d
    d_fe2 = d_feature[:, offset:offset + d]; offset += d
    dh = np.zeros_like(cache["h_final"])
    e1, e2 = cache["e1"], cache["e2"]
    cols = np.arange(d)
    for i in range(b):
        dh[i, cache["argmax1"][i], cols] += d_fe1[i]
        dh[i, cache["argmax2"][i], cols] += d_fe2[i]
    if cfg.use_marker_states:
        d_fs1 = d_feature[:, offset:offset + d]; offset += d
        d_fs2 = d_feature[:, offset:offset + d]; offset += d
        markers = cache["markers"]
        for i in range(b):
            dh[i, markers[i, 0]] += d_fs1[i]
            dh[i, markers[i, 2]] += d_fs2[i]
    if cfg.use_pooled_output:
        d_pool = d_feature[:, offset:offset + d]
        dz_pool = d_pool * (1.0 - cache["pooled"] ** 2)
        cls_states = cache["h_final"][:, 0, :]
        grads["pooler.w"] = cls_states.T @ dz_pool
        dh[:, 0, :] += dz_pool @ p["pooler.w"].T
    else:
        grads["pooler.w"] = np.zeros_like(p["pooler.w"])

    # transformer blocks, top down
    t = dh.shape[1]
    h_heads, dh_dim = cfg.n_heads, d // cfg.n_heads
    scale = 1.0 / math.sqrt(dh_dim)
    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}"
        lc = cache["layers"][i]
        flat = lambda a: np.ascontiguousarray(a.reshape(-1, a.shape[-1]))

        d_res2, dg2, db2 = kernels.layer_norm_backward(
            flat(dh), flat(lc["res2"]), p[f"{pre}.ln2.gamma"], lc["mean2"], lc["rstd2"])
        grads[f"{pre}.ln2.gamma"], grads[f"{pre}.ln2.beta"] = dg2, db2
        d_res2 = d_res2.reshape(dh.shape)

        d_ffn = d_res2
        g = lc["g"]
        grads[f"{pre}.ffn.w2"] = flat(g).T @ flat(d_ffn)
        grads[f"{pre}.ffn.b2"] = flat(d_ffn).sum(axis=0)
        d_g = d_ffn @ p[f"{pre}.ffn.w2"].T
        d_z = kernels.gelu_backward(flat(lc["z1"]), flat(d_g)).reshape(g.shape)
        grads[f"{pre}.ffn.w1"] = flat(lc["h1"]).T @ flat(d_z)
        grads[f"{pre}.ffn.b1"] = flat(d_z).sum(axis=0)
        d_h1 = d_res2 + d_z @ p[f"{pre}.ffn.w1"].T

        d_res1, dg1, db1 = kernels.layer_norm_backward(
            flat(d_h1), flat(lc["res1"]), p[f"{pre}.ln1.gamma"], lc["mean1"], lc["rstd1"])
        grads[f"{pre}.ln1.gamma"], grads[f"{pre}.ln1.beta"] = dg1, db1
        d_res1 = d_res1.reshape(dh.shape)

        d_attn_out = d_res1
        ctx = lc["ctx"]
        grads[f"{pre}.attn.wo"] = flat(ctx).T @ flat(d_attn_out)
        grads[f"{pre}.attn.bo"] = flat(d_attn_out).sum(axis=0)
        d_ctx = _split_heads(d_attn_out @ p[f"{pre}.attn.wo"].T, h_heads)

        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        d_probs = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = probs.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = kernels.softmax_backward_rows(
            np.ascontiguousarray(probs.reshape(-1, t)),
            np.ascontiguousarray(d_probs.reshape(-1, t))).reshape(probs.shape)
        d_scores *= scale
        d_q = d_scores @ k
        d_k = d_scores.transpose(0, 1, 3, 2) @ q

        h_in = lc["h_in"]
        d_h_in = d_res1.copy()
        for nm, bias, d_part in (("wq", "bq", d_q), ("wk", None, d_k), ("wv", "bv", d_v)):
            merged = _merge_heads(d_part)
            grads[f"{pre}.attn.{nm}"] = flat(h_in).T @ flat(merged)
            if bias is not None:
                grads[f"{pre}.attn.{bias}"] = flat(merged).sum(axis=0)
            d_h_in += merged @ p[f"{pre}.attn.{nm}"].T
        dh = d_h_in

    ids = cache["ids"]
    d_tok = np.zeros_like(p["tok_emb"])
    np.add.at(d_tok, ids.reshape(-1), dh.reshape(-1, d))
    grads["tok_emb"] = d_tok
    d_pos = np.zeros_like(p["pos_emb"])
    d_pos[:t] = dh.sum(axis=0)
    grads["pos_emb"] = d_pos

    trainable = set(model.trainable_names())
    return loss, {name: g for name, g in grads.items() if name in trainable}


def predict_proba(model: RelModel, batch: list[EncodedInstance],
                  batch_size: int = 64) -> np.ndarray:
    """Softmax probabilities, batched; rows sum to 1."""
    out = []
    for lo in range(0, len(batch), batch_size):
        logits, _ = forward(model, batch[lo:lo + batch_size], train_mode=False)
        out.append(np.exp(_log_softmax(logits)))
    return np.concatenate(out, axis=0)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(model: RelModel, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update in place on the model's trainable
    parameters; ``state`` accumulates moments and the shared step count."""
    trainable = set(model.trainable_names())
    unknown = set(grads) - trainable
    if unknown:
        raise ValueError(f"gradients for non-trainable parameters: {sorted(unknown)}")
    state.step += 1
    for name in sorted(grads):
        param = model.params[name]
        grad = np.ascontiguousarray(grads[name], dtype=param.dtype)
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match "
                             f"parameter {name} shape {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        kernels.adam_update(param.reshape(-1), grad.reshape(-1),
                            state.m[name].reshape(-1), state.v[name].reshape(-1),
                            lr, betas[0], betas[1], eps, state.step)
        if not np.all(np.isfinite(param)):
            raise ModelError(f"non-finite values in parameter {name} after "
                             f"update step {state.step}")
    return state


def _dtype_tag(dtype) -> str:
    return {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64"}[np.dtype(dtype)]


def save(model: RelModel, path, optimizer_state: AdamState | None = None) -> None:
    """Single-file container: magic, JSON header (config, labels, vocab
    hash, freeze mode, parameter manifest), then raw little-endian parameter
    blocks in manifest order, then optimizer moment blocks when present."""
    names = list(model.params)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_json_dict(),
        "labels": list(model.labels),
        "vocab_hash": model.vocab_hash,
        "freeze": model.freeze,
        "dtype": _dtype_tag(model.dtype),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "optimizer": ({"step": optimizer_state.step,
                       "names": sorted(optimizer_state.m)}
                      if optimizer_state is not None else None),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    wire = "<f4" if model.dtype == np.float32 else "<f8"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype=wire).tobytes())
        if optimizer_state is not None:
            for n in sorted(optimizer_state.m):
                fh.write(np.ascontiguousarray(optimizer_state.m[n], dtype=wire).tobytes())
                fh.write(np.ascontiguousarray(optimizer_state.v[n], dtype=wire).tobytes())


def load_checkpoint(path, expect_vocab_hash: str | None = None,
                    ) -> tuple[RelModel, AdamState | None]:
    """Load a container; returns (model, optimizer state or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ModelIOError(f"{path}: not a model file (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, 4)
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelIOError(f"{path}: corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelIOError(f"{path}: format version {header.get('format_version')} "
                           f"does not match supported version {FORMAT_VERSION}")
    if expect_vocab_hash is not None and header["vocab_hash"] != expect_vocab_hash:
        raise ModelIOError(f"{path}: vocab hash {header['vocab_hash'][:12]}... does not "
                           f"match expected {expect_vocab_hash[:12]}...")
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, ValueError) as exc:
        raise ModelIOError(f"{path}: invalid config in header: {exc}") from None
    dtype = {"float32": np.float32, "float64": np.float64}.get(header["dtype"])
    if dtype is None:
        raise ModelIOError(f"{path}: unsupported dtype {header['dtype']!r}")
    dtype = np.dtype(dtype)
    wire = "<f4" if dtype == np.float32 else "<f8"
    itemsize = dtype.itemsize

    expected_names = _param_names(config)
    manifest = header["params"]
    if [m["name"] for m in manifest] != expected_names:
        raise ModelIOError(f"{path}: parameter manifest does not match config")
    offset = 12 + header_len
    params: dict[str, np.ndarray] = {}
    for m in manifest:
        shape = tuple(m["shape"])
        if shape != _param_shape(m["name"], config):
            raise ModelIOError(f"{path}: parameter {m['name']} shape {shape} does not "
                               f"match config-derived shape")
        nbytes = int(np.prod(shape)) * itemsize if shape else itemsize
        block = raw[offset:offset + nbytes]
        if len(block) != nbytes:
            raise ModelIOError(f"{path}: truncated parameter block for {m['name']}")
        params[m["name"]] = np.frombuffer(block, dtype=wire).astype(dtype).reshape(shape)
        offset += nbytes
    model = RelModel(config=config, params=params, labels=tuple(header["labels"]),
                     vocab_hash=header["vocab_hash"], freeze=header["freeze"],
                     dtype=dtype)

    opt = None
    if header.get("optimizer") is not None:
        opt = AdamState(step=header["optimizer"]["step"])
        for n in header["optimizer"]["names"]:
            if n not in params:
                raise ModelIOError(f"{path}: optimizer state for unknown parameter {n}")
            nbytes = params[n].size * itemsize
            for slot in (opt.m, opt.v):
                block = raw[offset:offset + nbytes]
                if len(block) != nbytes:
                    raise ModelIOError(f"{path}: truncated optimizer block for {n}")
                slot[n] = np.frombuffer(block, dtype=wire).astype(dtype).reshape(
                    params[n].shape)
                offset += nbytes
    if offset != len(raw):
        raise ModelIOError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, opt


def load(path, expect_vocab_hash: str | None = None) -> RelModel:
    return load_checkpoint(path, expect_vocab_hash)[0]
