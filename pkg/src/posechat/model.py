"""Tiny decoder-only transformer with an observation prefix, a reserved
pose token, and a pose projection head.

The language model is a standard pre-LN causal transformer with learned
positional embeddings.  Observation vectors (the frozen stand-in for a
vision pathway) occupy prefix positions through a frozen input
projection and are attendable by every token position.  When the
reserved pose token appears in an answer, the hidden state at the
position that *predicts* it is projected by an MLP head to 24 six-dim
rotations, which are orthonormalized into rotation matrices.

Low-rank adapters follow W_eff = W + (alpha/rank) * A @ B with B
initialized to zero, so an adapted model reproduces its base exactly at
initialization and adapters can be merged into the base weights after
training.

Forward and backward passes are written out explicitly in numpy; the
backward functions return parameter gradients as flat name -> array
dicts keyed like the parameter store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    ConfigError,
    MissingPoseToken,
    MultiplePoseTokens,
    SequenceTooLong,
)
from .nnops import ACTIVATIONS, layernorm, layernorm_backward, softmax
from .rotmath import IDENTITY_6D, NUM_JOINTS, rot6d_to_matrix
from .tok import EOS, POSE, Vocab

FROZEN_ALWAYS = ("obs_proj.w", "obs_proj.b")

ADAPTER_TARGET_GROUPS = {
    "attn": ("attn.wq", "attn.wk", "attn.wv", "attn.wo"),
    "ffn": ("ffn.w1", "ffn.w2"),
    "lm_head": ("lm_head.w",),
    "tok_emb": ("tok_emb",),
}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq: int = 256
    d_obs: int = 16
    lora_rank: int = 8
    lora_alpha: float = 16.0
    pose_activation: str = "gelu"
    pose_grad_to_llm: bool = True
    adapter_targets: tuple = ("attn", "ffn", "lm_head", "tok_emb")

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq",
                     "d_obs", "lora_rank"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.lora_rank >= self.d_model:
            raise ConfigError("lora_rank must be smaller than d_model")
        if self.pose_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown pose_activation {self.pose_activation!r}")
        for target in self.adapter_targets:
            if target not in ADAPTER_TARGET_GROUPS:
                raise ConfigError(f"unknown adapter target {target!r}")
        object.__setattr__(self, "adapter_targets", tuple(self.adapter_targets))


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict
    adapters: dict = field(default_factory=dict)

    def effective(self, name: str) -> np.ndarray:
        w = self.params[name]
        if name in self.adapters:
            a, b = self.adapters[name]
            return w + self.adapter_scale() * (a @ b)
        return w

    def adapter_scale(self) -> float:
        return self.config.lora_alpha / self.config.lora_rank

    def adapter_param_names(self) -> list:
        out = []
        for name in self.adapters:
            out.append(f"{name}.lora_a")
            out.append(f"{name}.lora_b")
        return sorted(out)


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    rng = np.random.default_rng(seed)
    d, v = config.d_model, config.vocab_size
    params = {
        "tok_emb": rng.normal(0.0, 0.02, (v, d)),
        "pos_emb": rng.normal(0.0, 0.02, (config.max_seq, d)),
        "obs_proj.w": rng.normal(0.0, 1.0 / np.sqrt(config.d_obs), (config.d_obs, d)),
        "obs_proj.b": np.zeros(d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "ln1.g"] = np.ones(d)
        params[p + "ln1.b"] = np.zeros(d)
        for m in ("wq", "wk", "wv", "wo"):
            params[p + "attn." + m] = rng.normal(0.0, 0.02, (d, d))
        params[p + "ln2.g"] = np.ones(d)
        params[p + "ln2.b"] = np.zeros(d)
        params[p + "ffn.w1"] = rng.normal(0.0, 0.02, (d, config.d_ff))
        params[p + "ffn.b1"] = np.zeros(config.d_ff)
        params[p + "ffn.w2"] = rng.normal(0.0, 0.02, (config.d_ff, d))
        params[p + "ffn.b2"] = np.zeros(d)
    params["ln_f.g"] = np.ones(d)
    params["ln_f.b"] = np.zeros(d)
    params["lm_head.w"] = rng.normal(0.0, 0.02, (d, v))
    params["lm_head.b"] = np.zeros(v)
    # Zero pose-head output weights plus an identity-6D bias decode any
    # embedding to the identity pose at initialization.
    params["pose_head.w1"] = rng.normal(0.0, 0.02, (d, d))
    params["pose_head.b1"] = np.zeros(d)
    params["pose_head.w2"] = np.zeros((d, 6 * NUM_JOINTS))
    params["pose_head.b2"] = np.tile(IDENTITY_6D, NUM_JOINTS)
    return ModelWeights(config, params)


def adapter_target_names(config: ModelConfig) -> list:
    names = []
    for group in config.adapter_targets:
        for suffix in ADAPTER_TARGET_GROUPS[group]:
            if suffix.startswith(("lm_head", "tok_emb")):
                names.append(suffix)
            else:
                names.extend(f"layers.{i}.{suffix}" for i in range(config.n_layers))
    return sorted(names)


def apply_adapters(weights: ModelWeights, seed: int) -> ModelWeights:
    """Attach fresh adapters (B = 0) to the configured target matrices.

    Base parameter arrays are shared, not copied; the adapted model's
    forward equals the base forward until B moves away from zero.
    """
    rng = np.random.default_rng(seed)
    r = weights.config.lora_rank
    adapters = {}
    for name in adapter_target_names(weights.config):
        n_in, n_out = weights.params[name].shape
        a = rng.normal(0.0, 0.02, (n_in, r))
        b = np.zeros((r, n_out))
        adapters[name] = (a, b)
    return ModelWeights(weights.config, dict(weights.params), adapters)


def merge_adapters(weights: ModelWeights) -> ModelWeights:
    """Fold every adapter into its base matrix; returns an adapter-free model."""
    params = dict(weights.params)
    for name in weights.adapters:
        params[name] = weights.effective(name)
    return ModelWeights(weights.config, params)


@dataclass
class ForwardPass:
    logits: np.ndarray      # (T, vocab)
    hidden: np.ndarray      # (T, d_model) post final layernorm
    prefix_len: int
    cache: dict | None = None


def forward(weights: ModelWeights, obs, tokens, need_cache: bool = False) -> ForwardPass:
    """Run the model on an optional observation prefix plus token ids."""
    cfg = weights.config
    tokens = np.asarray(tokens, dtype=np.int64)
    t = len(tokens)
    obs_vectors = None
    p = 0
    if obs is not None:
        obs_vectors = np.asarray(obs.vectors if hasattr(obs, "vectors") else obs, dtype=np.float64)
        p = obs_vectors.shape[0]
    total = p + t
    if total > cfg.max_seq:
        raise SequenceTooLong(f"sequence length {total} exceeds max_seq {cfg.max_seq}")

    x = np.empty((total, cfg.d_model))
    if p:
        x[:p] = obs_vectors @ weights.effective("obs_proj.w") + weights.params["obs_proj.b"]
    x[p:] = weights.effective("tok_emb")[tokens]
    x = x + weights.params["pos_emb"][:total]

    cache = {"tokens": tokens, "obs": obs_vectors, "p": p, "layers": []} if need_cache else None
    mask = np.triu(np.full((total, total), -1e30), k=1)

    dh = cfg.d_model // cfg.n_heads
    scale = 1.0 / np.sqrt(dh)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        h1, ln1_cache = layernorm(x, weights.params[pre + "ln1.g"], weights.params[pre + "ln1.b"])
        wq = weights.effective(pre + "attn.wq")
        wk = weights.effective(pre + "attn.wk")
        wv = weights.effective(pre + "attn.wv")
        wo = weights.effective(pre + "attn.wo")
        q = (h1 @ wq).reshape(total, cfg.n_heads, dh).transpose(1, 0, 2)
        k = (h1 @ wk).reshape(total, cfg.n_heads, dh).transpose(1, 0, 2)
        v = (h1 @ wv).reshape(total, cfg.n_heads, dh).transpose(1, 0, 2)
        scores = scale * (q @ k.transpose(0, 2, 1)) + mask
        probs = softmax(scores)
        ctx = (probs @ v).transpose(1, 0, 2).reshape(total, cfg.d_model)
        attn_out = ctx @ wo
        x_attn = x + attn_out

        h2, ln2_cache = layernorm(x_attn, weights.params[pre + "ln2.g"], weights.params[pre + "ln2.b"])
        u = h2 @ weights.effective(pre + "ffn.w1") + weights.params[pre + "ffn.b1"]
        act, _ = ACTIVATIONS["gelu"]
        a = act(u)
        f = a @ weights.effective(pre + "ffn.w2") + weights.params[pre + "ffn.b2"]
        x_out = x_attn + f

        if need_cache:
            cache["layers"].append({
                "x": x, "h1": h1, "ln1": ln1_cache, "q": q, "k": k, "v": v,
                "probs": probs, "ctx": ctx, "x_attn": x_attn, "h2": h2,
                "ln2": ln2_cache, "u": u, "a": a,
            })
        x = x_out

    hfin, lnf_cache = layernorm(x, weights.params["ln_f.g"], weights.params["ln_f.b"])
    hidden = hfin[p:]
    logits = hidden @ weights.effective("lm_head.w") + weights.params["lm_head.b"]
    if need_cache:
        cache["x_final"] = x
        cache["lnf"] = lnf_cache
        cache["hfin"] = hfin
    return ForwardPass(logits=logits, hidden=hidden, prefix_len=p, cache=cache)


def _matmul_grads(grads, weights, name, inp, dout):
    """Accumulate dW (and adapter grads) for out = inp @ W_eff."""
    dw = inp.T @ dout
    _add(grads, name, dw)
    if name in weights.adapters:
        a, b = weights.adapters[name]
        s = weights.adapter_scale()
        _add(grads, f"{name}.lora_a", s * (dw @ b.T))
        _add(grads, f"{name}.lora_b", s * (a.T @ dw))
    return dout @ weights.effective(name).T


def _add(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def backward(weights: ModelWeights, fp: ForwardPass, dlogits: np.ndarray,
             dhidden: np.ndarray | None = None, grads: dict | None = None) -> dict:
    """Backpropagate through a cached forward pass.

    dlogits is (T, vocab); dhidden optionally injects extra gradient into
    the post-layernorm hidden states (used by the pose head).  Gradients
    accumulate into `grads` keyed by parameter name; adapter factors use
    the `<name>.lora_a` / `<name>.lora_b` suffixes.
    """
    cfg = weights.config
    cache = fp.cache
    if cache is None:
        raise ValueError("forward pass was run without need_cache=True")
    if grads is None:
        grads = {}
    p = cache["p"]
    total = cache["x_final"].shape[0]
    dh = cfg.d_model // cfg.n_heads
    scale = 1.0 / np.sqrt(dh)

    dhid = _matmul_grads(grads, weights, "lm_head.w", fp.hidden, dlogits)
    _add(grads, "lm_head.b", dlogits.sum(axis=0))
    if dhidden is not None:
        dhid = dhid + dhidden

    dhfin = np.zeros((total, cfg.d_model))
    dhfin[p:] = dhid
    dx, dg, db = layernorm_backward(dhfin, cache["lnf"])
    _add(grads, "ln_f.g", dg)
    _add(grads, "ln_f.b", db)

    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}."
        lc = cache["layers"][i]
        # FFN branch
        da = dx @ weights.effective(pre + "ffn.w2").T
        _matmul_grads(grads, weights, pre + "ffn.w2", lc["a"], dx)
        _add(grads, pre + "ffn.b2", dx.sum(axis=0))
        _, act_grad = ACTIVATIONS["gelu"]
        du = da * act_grad(lc["u"])
        dh2 = _matmul_grads(grads, weights, pre + "ffn.w1", lc["h2"], du)
        _add(grads, pre + "ffn.b1", du.sum(axis=0))
        dx_attn, dg2, db2 = layernorm_backward(dh2, lc["ln2"])
        _add(grads, pre + "ln2.g", dg2)
        _add(grads, pre + "ln2.b", db2)
        dx_attn = dx_attn + dx  # residual

        # attention branch
        dctx = _matmul_grads(grads, weights, pre + "attn.wo", lc["ctx"], dx_attn)
        dctx = dctx.reshape(total, cfg.n_heads, dh).transpose(1, 0, 2)
        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        dv = probs.transpose(0, 2, 1) @ dctx
        dprobs = dctx @ v.transpose(0, 2, 1)
        rowdot = (dprobs * probs).sum(axis=-1, keepdims=True)
        dscores = (dprobs - rowdot) * probs
        dq = scale * (dscores @ k)
        dk = scale * (dscores.transpose(0, 2, 1) @ q)
        dq = dq.transpose(1, 0, 2).reshape(total, cfg.d_model)
        dk = dk.transpose(1, 0, 2).reshape(total, cfg.d_model)
        dv = dv.transpose(1, 0, 2).reshape(total, cfg.d_model)
        dh1 = _matmul_grads(grads, weights, pre + "attn.wq", lc["h1"], dq)
        dh1 = dh1 + _matmul_grads(grads, weights, pre + "attn.wk", lc["h1"], dk)
        dh1 = dh1 + _matmul_grads(grads, weights, pre + "attn.wv", lc["h1"], dv)
        dx_res, dg1, db1 = layernorm_backward(dh1, lc["ln1"])
        _add(grads, pre + "ln1.g", dg1)
        _add(grads, pre + "ln1.b", db1)
        dx = dx_res + dx_attn  # residual

    _add(grads, "pos_emb", _pad_rows(dx, cfg.max_seq))
    tokens = cache["tokens"]
    dtok = np.zeros_like(weights.params["tok_emb"])
    np.add.at(dtok, tokens, dx[p:])
    _add(grads, "tok_emb", dtok)
    if "tok_emb" in weights.adapters:
        a, b = weights.adapters["tok_emb"]
        s = weights.adapter_scale()
        _add(grads, "tok_emb.lora_a", s * (dtok @ b.T))
        _add(grads, "tok_emb.lora_b", s * (a.T @ dtok))
    if p:
        dobs_in = dx[:p]
        _add(grads, "obs_proj.w", cache["obs"].T @ dobs_in)
        _add(grads, "obs_proj.b", dobs_in.sum(axis=0))
    return grads


def _pad_rows(dx, max_rows):
    out = np.zeros((max_rows, dx.shape[1]))
    out[: dx.shape[0]] = dx
    return out


def find_pose_position(tokens) -> int:
    """Index of the single POSE id; raises if absent or repeated."""
    tokens = np.asarray(tokens)
    hits = np.flatnonzero(tokens == POSE)
    if len(hits) == 0:
        raise MissingPoseToken("no pose token in sequence")
    if len(hits) > 1:
        raise MultiplePoseTokens(f"{len(hits)} pose tokens in sequence")
    pos = int(hits[0])
    if pos == 0:
        raise MissingPoseToken("pose token has no predicting position")
    return pos


def extract_pose_embedding(hidden: np.ndarray, tokens) -> np.ndarray:
    """Hidden state at the position whose output predicts the pose token."""
    return hidden[find_pose_position(tokens) - 1]


def pose_head_raw(weights: ModelWeights, e: np.ndarray):
    """(raw 144 outputs, cache) of the pose MLP before 6D conversion."""
    act, _ = ACTIVATIONS[weights.config.pose_activation]
    u = e @ weights.params["pose_head.w1"] + weights.params["pose_head.b1"]
    h = act(u)
    raw = h @ weights.params["pose_head.w2"] + weights.params["pose_head.b2"]
    return raw, (e, u, h)


def pose_head(weights: ModelWeights, e: np.ndarray) -> np.ndarray:
    """Project a pose embedding to a (24, 3, 3) pose."""
    raw, _ = pose_head_raw(weights, e)
    return rot6d_to_matrix(raw.reshape(NUM_JOINTS, 6))


def pose_head_backward(weights: ModelWeights, cache, draw: np.ndarray, grads: dict):
    """Gradient of the pose MLP; returns d(embedding)."""
    e, u, h = cache
    _, act_grad = ACTIVATIONS[weights.config.pose_activation]
    _add(grads, "pose_head.w2", np.outer(h, draw))
    _add(grads, "pose_head.b2", draw)
    dh = weights.params["pose_head.w2"] @ draw
    du = dh * act_grad(u)
    _add(grads, "pose_head.w1", np.outer(e, du))
    _add(grads, "pose_head.b1", du)
    return weights.params["pose_head.w1"] @ du


def rot6d_backward(r6: np.ndarray, dmat: np.ndarray) -> np.ndarray:
    """Gradient of rot6d_to_matrix: (..., 3, 3) upstream -> (..., 6)."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., 0:3], r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    dot = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - dot * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    b2 = u2 / n2

    db1 = dmat[..., :, 0] + np.cross(b2, dmat[..., :, 2])
    db2 = dmat[..., :, 1] + np.cross(dmat[..., :, 2], b1)
    du2 = (db2 - np.sum(b2 * db2, axis=-1, keepdims=True) * b2) / n2
    da2 = du2 - np.sum(b1 * du2, axis=-1, keepdims=True) * b1
    db1 = db1 - np.sum(du2 * b1, axis=-1, keepdims=True) * a2 - dot * du2
    da1 = (db1 - np.sum(b1 * db1, axis=-1, keepdims=True) * b1) / n1
    return np.concatenate([da1, da2], axis=-1)


def generate(weights: ModelWeights, obs, prompt_tokens, max_new: int,
             mode: str = "greedy", temperature: float = 1.0, seed: int = 0):
    """Autoregressive decoding; returns (new token ids, pose or None).

    If the pose token is emitted, the hidden state of the position that
    predicted it is captured at emission time and decoded by the pose
    head (first emission wins).
    """
    if mode not in ("greedy", "sampled"):
        raise ConfigError(f"unknown decode mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "sampled" else None
    tokens = list(prompt_tokens)
    new_tokens = []
    pose = None
    for _ in range(max_new):
        fp = forward(weights, obs, tokens)
        logits = fp.logits[-1]
        if mode == "greedy":
            nxt = int(np.argmax(logits))
        else:
            probs = softmax(logits / temperature)
            nxt = int(rng.choice(len(probs), p=probs))
        if nxt == POSE and pose is None:
            pose = pose_head(weights, fp.hidden[-1])
        tokens.append(nxt)
        new_tokens.append(nxt)
        if nxt == EOS:
            break
    return new_tokens, pose


# ------------------------------------------------------------- checkpoints

CKPT_FORMAT = "posechat-ckpt-v1"


def save_checkpoint(weights: ModelWeights, vocab: Vocab, path) -> None:
    cfg = asdict(weights.config)
    cfg["adapter_targets"] = list(weights.config.adapter_targets)
    blob = {
        "format": CKPT_FORMAT,
        "config": cfg,
        "vocab": vocab.tokens,
        "params": {k: _arr_to_obj(v) for k, v in sorted(weights.params.items())},
        "adapters": {
            k: {"a": _arr_to_obj(a), "b": _arr_to_obj(b)}
            for k, (a, b) in sorted(weights.adapters.items())
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(blob, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as f:
        blob = json.load(f)
    if blob.get("format") != CKPT_FORMAT:
        raise ConfigError(f"not a {CKPT_FORMAT} checkpoint: {path}")
    cfg = dict(blob["config"])
    cfg["adapter_targets"] = tuple(cfg["adapter_targets"])
    config = ModelConfig(**cfg)
    params = {k: _obj_to_arr(v) for k, v in blob["params"].items()}
    adapters = {k: (_obj_to_arr(v["a"]), _obj_to_arr(v["b"])) for k, v in blob["adapters"].items()}
    return ModelWeights(config, params, adapters), Vocab(blob["vocab"])


def _arr_to_obj(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}


def _obj_to_arr(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])
