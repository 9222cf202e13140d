"""Composite text/pose loss, exact gradients, AdamW, and the two-stage
training recipe.

The objective is `lambda_text * CE + lambda_pose * L1`: teacher-forced
cross-entropy over answer tokens (token-mean within a record, averaged
over records) plus the mean absolute difference between predicted and
target rotation-matrix elements, averaged over pose-bearing records.
Gradient accumulation collects whole micro-batches before normalizing,
so accumulated and single-batch updates agree exactly.

Stage "base" trains every transformer parameter (observation projection
stays frozen) on plain text QA.  Stage "finetune" freezes the base
model, attaches low-rank adapters, and trains adapters plus the pose
head on the 2:1:1 mixture of observation-, text-, and QA-records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .data.batches import mixed_batches
from .errors import ConfigError, NanLoss
from .model import (
    FROZEN_ALWAYS,
    ModelConfig,
    ModelWeights,
    apply_adapters,
    backward as model_backward,
    find_pose_position,
    forward,
    init_weights,
    pose_head_raw,
    pose_head_backward,
    rot6d_backward,
    save_checkpoint,
)
from .nnops import softmax
from .rotmath import NUM_JOINTS, matrix_to_rot6d, rot6d_to_matrix
from .tok import ASSISTANT, BOS, EOS, USER, Vocab, encode

MATRIX_ELEMENTS = NUM_JOINTS * 9


@dataclass(frozen=True)
class LossConfig:
    lambda_text: float = 1.0
    lambda_pose: float = 0.1
    pose_loss_space: str = "matrix"   # "matrix" per the main recipe, "rot6d" ablation

    def __post_init__(self):
        if self.lambda_text < 0 or self.lambda_pose < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.pose_loss_space not in ("matrix", "rot6d"):
            raise ConfigError(f"unknown pose_loss_space {self.pose_loss_space!r}")


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_accum_steps: int = 2
    batch_size: int = 16
    max_steps: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.grad_accum_steps < 1:
            raise ConfigError("grad_accum_steps must be >= 1")
        if self.batch_size < 1 or self.max_steps < 1:
            raise ConfigError("batch_size and max_steps must be >= 1")


@dataclass
class Example:
    """A tokenized record ready for teacher forcing."""

    tokens: np.ndarray            # full sequence ids incl BOS/roles/EOS
    loss_positions: np.ndarray    # positions whose next token is supervised
    targets: np.ndarray           # supervised next tokens, aligned
    obs: object | None
    pose_pos: int | None          # index of the POSE id, when supervised
    target_pose: np.ndarray | None


def prepare_example(record, vocab: Vocab) -> Example:
    q_ids = encode(record.question, vocab)
    a_ids = encode(record.answer, vocab)
    tokens = np.array([BOS, USER] + q_ids + [ASSISTANT] + a_ids + [EOS], dtype=np.int64)
    asst = 2 + len(q_ids)
    answer_positions = np.arange(asst + 1, len(tokens))
    loss_positions = answer_positions - 1
    targets = tokens[answer_positions]
    pose_pos = None
    if record.target_pose is not None:
        pose_pos = find_pose_position(tokens)
    return Example(tokens, loss_positions, targets, record.observation, pose_pos,
                   record.target_pose)


def _as_examples(batch, vocab):
    return [r if isinstance(r, Example) else prepare_example(r, vocab) for r in batch]


def _pose_target_flat(example, space):
    if space == "matrix":
        return example.target_pose.reshape(-1)
    return matrix_to_rot6d(example.target_pose).reshape(-1)


def _pose_pred_flat(raw144, space):
    if space == "matrix":
        return rot6d_to_matrix(raw144.reshape(NUM_JOINTS, 6)).reshape(-1)
    return raw144


def loss(weights: ModelWeights, batch, loss_config: LossConfig, vocab: Vocab):
    """Returns (total, {"ce": ..., "pose_l1": ...}) over a batch of records."""
    examples = _as_examples(batch, vocab)
    ce_sum, pose_sum, n_pose = 0.0, 0.0, 0
    for ex in examples:
        fp = forward(weights, ex.obs, ex.tokens)
        probs = softmax(fp.logits[ex.loss_positions])
        picked = probs[np.arange(len(ex.targets)), ex.targets]
        ce_sum += float(-np.log(picked + 1e-300).mean())
        if ex.pose_pos is not None:
            raw, _ = pose_head_raw(weights, fp.hidden[ex.pose_pos - 1])
            pred = _pose_pred_flat(raw, loss_config.pose_loss_space)
            pose_sum += float(np.abs(pred - _pose_target_flat(ex, loss_config.pose_loss_space)).mean())
            n_pose += 1
    ce = ce_sum / len(examples)
    pose_l1 = pose_sum / n_pose if n_pose else 0.0
    total = loss_config.lambda_text * ce + loss_config.lambda_pose * pose_l1
    return total, {"ce": ce, "pose_l1": pose_l1}


def backward(weights: ModelWeights, batch, loss_config: LossConfig, vocab: Vocab,
             trainable=None):
    """Exact gradients of the total loss; returns (grads, components).

    Gradients cover every parameter (and adapter factor); names outside
    `trainable`, and the always-frozen observation projection, are zeroed.
    """
    examples = _as_examples(batch, vocab)
    n_rec = len(examples)
    n_pose = sum(1 for ex in examples if ex.pose_pos is not None)
    ce_coeff = loss_config.lambda_text / n_rec
    pose_coeff = (loss_config.lambda_pose / (n_pose * MATRIX_ELEMENTS)) if n_pose else 0.0
    if loss_config.pose_loss_space == "rot6d":
        pose_coeff = (loss_config.lambda_pose / (n_pose * 6 * NUM_JOINTS)) if n_pose else 0.0

    grads: dict = {}
    ce_sum, pose_sum = 0.0, 0.0
    for ex in examples:
        fp = forward(weights, ex.obs, ex.tokens, need_cache=True)
        probs = softmax(fp.logits[ex.loss_positions])
        picked = probs[np.arange(len(ex.targets)), ex.targets]
        ce_sum += float(-np.log(picked + 1e-300).mean())
        dlogits = np.zeros_like(fp.logits)
        drows = probs.copy()
        drows[np.arange(len(ex.targets)), ex.targets] -= 1.0
        dlogits[ex.loss_positions] = drows * (ce_coeff / len(ex.targets))

        dhidden = None
        if ex.pose_pos is not None:
            h_pose = fp.hidden[ex.pose_pos - 1]
            raw, head_cache = pose_head_raw(weights, h_pose)
            target = _pose_target_flat(ex, loss_config.pose_loss_space)
            pred = _pose_pred_flat(raw, loss_config.pose_loss_space)
            diff = pred - target
            pose_sum += float(np.abs(diff).mean())
            dpred = np.sign(diff) * pose_coeff
            if loss_config.pose_loss_space == "matrix":
                r6 = raw.reshape(NUM_JOINTS, 6)
                draw = rot6d_backward(r6, dpred.reshape(NUM_JOINTS, 3, 3)).reshape(-1)
            else:
                draw = dpred
            de = pose_head_backward(weights, head_cache, draw, grads)
            if weights.config.pose_grad_to_llm:
                dhidden = np.zeros_like(fp.hidden)
                dhidden[ex.pose_pos - 1] = de
        model_backward(weights, fp, dlogits, dhidden, grads)

    for name in weights.params:
        if name not in grads:
            grads[name] = np.zeros_like(weights.params[name])
    for name in weights.adapter_param_names():
        if name not in grads:
            grads[name] = np.zeros_like(_get_param(weights, name))
    for name in FROZEN_ALWAYS:
        grads[name] = np.zeros_like(grads[name])
    if trainable is not None:
        trainable = set(trainable)
        for name in grads:
            if name not in trainable:
                grads[name] = np.zeros_like(grads[name])
    ce = ce_sum / n_rec
    pose_l1 = pose_sum / n_pose if n_pose else 0.0
    components = {"ce": ce, "pose_l1": pose_l1,
                  "total": loss_config.lambda_text * ce + loss_config.lambda_pose * pose_l1}
    return grads, components


def trainable_names(weights: ModelWeights, stage: str) -> set:
    if stage == "base":
        return {n for n in weights.params if n not in FROZEN_ALWAYS}
    if stage == "finetune":
        names = set(weights.adapter_param_names())
        names |= {n for n in weights.params if n.startswith("pose_head.")}
        return names
    raise ConfigError(f"unknown stage {stage!r}")


@dataclass
class AdamWState:
    t: int
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, grads: dict) -> "AdamWState":
        return cls(0, {k: np.zeros_like(g) for k, g in grads.items()},
                   {k: np.zeros_like(g) for k, g in grads.items()})


def _get_param(weights: ModelWeights, name: str):
    if name.endswith(".lora_a"):
        return weights.adapters[name[: -len(".lora_a")]][0]
    if name.endswith(".lora_b"):
        return weights.adapters[name[: -len(".lora_b")]][1]
    return weights.params[name]


def adamw_step(state: AdamWState, weights: ModelWeights, grads: dict,
               cfg: OptimConfig, trainable) -> None:
    """Bias-corrected adaptive-moment update with decoupled weight decay.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)
    """
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name in sorted(trainable):
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        w = _get_param(weights, name)
        w -= cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w)


def train_loop(stage: str, datasets: dict, vocab: Vocab, model_config: ModelConfig,
               loss_config: LossConfig, optim_config: OptimConfig, out_ckpt,
               base_weights: ModelWeights | None = None, log_path=None,
               ckpt_every: int | None = None, init_seed: int = 0) -> ModelWeights:
    """Run one training stage and write the final checkpoint.

    Stage "base" expects {"vqa": records} without pose targets and
    initializes fresh weights.  Stage "finetune" expects the three mixed
    sources plus `base_weights` and trains adapters and the pose head at
    the 2:1:1 mixing ratio.
    """
    if stage == "base":
        if set(datasets) != {"vqa"}:
            raise ConfigError("stage base trains on a single 'vqa' source")
        if any(r.target_pose is not None for r in datasets["vqa"]):
            raise ConfigError("stage base data must not contain pose targets")
        weights = init_weights(model_config, init_seed)
        ratio = {"vqa": 1}
    elif stage == "finetune":
        if base_weights is None:
            raise ConfigError("stage finetune needs a base checkpoint")
        required = {"obs2pose", "text2pose", "vqa"}
        if set(datasets) != required:
            raise ConfigError(f"stage finetune needs sources {sorted(required)}")
        weights = apply_adapters(base_weights, seed=init_seed)
        ratio = {"obs2pose": 2, "text2pose": 1, "vqa": 1}
    else:
        raise ConfigError(f"unknown stage {stage!r}")

    trainable = trainable_names(weights, stage)
    prepared = {k: [prepare_example(r, vocab) for r in v] for k, v in datasets.items()}
    batches = mixed_batches(prepared, ratio, optim_config.batch_size, optim_config.rng_seed)
    state = None
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(optim_config.max_steps):
            group = []
            for _ in range(optim_config.grad_accum_steps):
                group.extend(next(batches))
            grads, components = backward(weights, group, loss_config, vocab, trainable)
            if not np.isfinite(components["total"]):
                raise NanLoss(step)
            if state is None:
                state = AdamWState.zeros_like({k: grads[k] for k in trainable})
            adamw_step(state, weights, grads, optim_config, trainable)
            if log_f:
                log_f.write(json.dumps({"step": step, "ce": components["ce"],
                                        "pose_l1": components["pose_l1"],
                                        "total": components["total"]},
                                       sort_keys=True) + "\n")
            if ckpt_every and (step + 1) % ckpt_every == 0 and (step + 1) < optim_config.max_steps:
                save_checkpoint(weights, vocab, f"{out_ckpt}.step{step + 1}")
    finally:
        if log_f:
            log_f.close()
    save_checkpoint(weights, vocab, out_ckpt)
    return weights


# ------------------------------------------------------- config file format

def parse_config_file(path) -> dict:
    """key = value lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
    return raw


_CONFIG_CLASSES = (ModelConfig, LossConfig, OptimConfig)


def _convert(value: str, typ):
    if typ is bool or typ == "bool":
        return value.lower() in ("1", "true", "yes")
    if typ is int or typ == "int":
        return int(value)
    if typ is float or typ == "float":
        return float(value)
    if typ is tuple or typ == "tuple":
        return tuple(v for v in value.replace(",", " ").split() if v)
    return value


def build_configs(raw: dict, vocab_size: int, overrides: dict | None = None):
    """Split raw key=value strings into the three config dataclasses."""
    merged = dict(raw)
    merged.update(overrides or {})
    known = {}
    for cls in _CONFIG_CLASSES:
        for f in fields(cls):
            known.setdefault(f.name, (cls, f))
    unknown = [k for k in merged if k not in known and k != "vocab_size"]
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {cls: {} for cls in _CONFIG_CLASSES}
    for key, value in merged.items():
        if key == "vocab_size":
            continue
        cls, f = known[key]
        kwargs[cls][key] = _convert(value, f.type)
    model_cfg = ModelConfig(vocab_size=vocab_size, **kwargs[ModelConfig])
    return model_cfg, LossConfig(**kwargs[LossConfig]), OptimConfig(**kwargs[OptimConfig])
