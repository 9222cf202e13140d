"""Evaluation quantities: joint position errors, rotation errors,
retrieval recall with a small contrastive dual encoder, and the
closed-loop caption consistency rate.

Position errors are reported in millimeters.  MPJPE root-aligns on
joint 0; PA-MPJPE solves the full similarity Procrustes problem
(rotation via SVD with reflection excluded, optimal uniform scale,
translation).  MPJRE is the mean per-joint geodesic angle in radians
times 100.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data.posegen import caption_pose
from .errors import ConfigError, DegenerateGeometry, SizeMismatch
from .nnops import gelu, gelu_grad, l2_normalize, l2_normalize_backward, softmax
from .rotmath import NUM_JOINTS, geodesic_distance, matrix_to_rot6d
from .tok import Vocab, encode

M_TO_MM = 1000.0


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error after root alignment, millimeters."""
    pred = _check_joints(pred)
    gt = _check_joints(gt)
    pred = pred - pred[0]
    gt = gt - gt[0]
    return float(np.linalg.norm(pred - gt, axis=1).mean() * M_TO_MM)


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray, allow_scale: bool = True) -> float:
    """Position error after optimal similarity alignment of pred to gt.

    Reflections are excluded via the determinant sign correction; set
    allow_scale=False for rigid-only alignment.
    """
    pred = _check_joints(pred)
    gt = _check_joints(gt)
    x = pred - pred.mean(axis=0)
    y = gt - gt.mean(axis=0)
    if np.linalg.norm(y) < 1e-9:
        raise DegenerateGeometry("ground-truth joints are coincident")
    cov = x.T @ y / NUM_JOINTS
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    corr = np.diag([1.0, 1.0, d])
    rot = vt.T @ corr @ u.T
    if allow_scale:
        var_x = (x * x).sum() / NUM_JOINTS
        scale = float((s * np.diag(corr)).sum() / var_x)
    else:
        scale = 1.0
    aligned = scale * x @ rot.T
    return float(np.linalg.norm(aligned - y, axis=1).mean() * M_TO_MM)


def mpjre(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint geodesic rotation error, radians x 100."""
    return float(geodesic_distance(pred, gt).mean() * 100.0)


def mean_pose(poses) -> np.ndarray:
    """Per-joint chordal mean rotation (SVD projection, no reflections)."""
    stack = np.stack([np.asarray(p) for p in poses])
    avg = stack.mean(axis=0)
    out = np.empty((NUM_JOINTS, 3, 3))
    for j in range(NUM_JOINTS):
        u, _, vt = np.linalg.svd(avg[j])
        d = np.sign(np.linalg.det(u @ vt))
        out[j] = u @ np.diag([1.0, 1.0, d]) @ vt
    return out


def _check_joints(joints) -> np.ndarray:
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (NUM_JOINTS, 3):
        raise SizeMismatch(f"expected (24, 3) joints, got {joints.shape}")
    return joints


def caption_consistency(generated_poses, source_captions) -> float:
    """Fraction of poses whose re-caption equals the source caption."""
    poses = list(generated_poses)
    captions = list(source_captions)
    if len(poses) != len(captions):
        raise SizeMismatch("pose and caption lists differ in length")
    hits = sum(1 for p, c in zip(poses, captions) if caption_pose(p) == c)
    return hits / len(poses)


# ------------------------------------------------------ retrieval encoders

@dataclass(frozen=True)
class RetrievalConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    temperature: float = 0.07
    learning_rate: float = 3e-3
    batch_size: int = 32
    steps: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("retrieval batch_size must be >= 2")


@dataclass
class RetrievalModel:
    """Dual encoder: bag-of-token text branch and flattened-6D pose branch."""

    vocab: Vocab
    params: dict
    config: RetrievalConfig

    def encode_texts(self, texts) -> np.ndarray:
        bags = np.stack([_bag(t, self.vocab) for t in texts])
        z, _ = _encode(self.params, "t", bags)
        return z

    def encode_poses(self, poses) -> np.ndarray:
        feats = np.stack([matrix_to_rot6d(p).reshape(-1) for p in poses])
        z, _ = _encode(self.params, "p", feats)
        return z


def _bag(text: str, vocab: Vocab) -> np.ndarray:
    bag = np.zeros(len(vocab))
    for i in encode(text, vocab):
        bag[i] += 1.0
    norm = np.linalg.norm(bag)
    return bag / norm if norm > 0 else bag


def _encode(params, prefix, x):
    u = x @ params[prefix + "w1"] + params[prefix + "b1"]
    h = gelu(u)
    e = h @ params[prefix + "w2"] + params[prefix + "b2"]
    z, norm_cache = l2_normalize(e)
    return z, (x, u, h, norm_cache)


def _encode_backward(params, prefix, cache, dz, grads):
    x, u, h, norm_cache = cache
    de = l2_normalize_backward(dz, norm_cache)
    grads[prefix + "w2"] = grads.get(prefix + "w2", 0) + h.T @ de
    grads[prefix + "b2"] = grads.get(prefix + "b2", 0) + de.sum(axis=0)
    dhh = de @ params[prefix + "w2"].T
    du = dhh * gelu_grad(u)
    grads[prefix + "w1"] = grads.get(prefix + "w1", 0) + x.T @ du
    grads[prefix + "b1"] = grads.get(prefix + "b1", 0) + du.sum(axis=0)


def train_retrieval(pairs, vocab: Vocab, config: RetrievalConfig | None = None) -> RetrievalModel:
    """Fit the dual encoder with a symmetric in-batch contrastive loss."""
    config = config or RetrievalConfig()
    if len(pairs) < 2:
        raise ConfigError("need at least two (caption, pose) pairs")
    captions = [c for c, _ in pairs]
    if len(set(captions)) < 2:
        raise ConfigError("need at least two distinct captions")
    rng = np.random.default_rng(config.seed)
    text_feats = np.stack([_bag(c, vocab) for c in captions])
    pose_feats = np.stack([matrix_to_rot6d(p).reshape(-1) for _, p in pairs])
    v, e, h = text_feats.shape[1], config.embed_dim, config.hidden_dim
    params = {
        "tw1": rng.normal(0, 0.05, (v, h)), "tb1": np.zeros(h),
        "tw2": rng.normal(0, 0.05, (h, e)), "tb2": np.zeros(e),
        "pw1": rng.normal(0, 0.05, (pose_feats.shape[1], h)), "pb1": np.zeros(h),
        "pw2": rng.normal(0, 0.05, (h, e)), "pb2": np.zeros(e),
    }
    m = {k: np.zeros_like(p) for k, p in params.items()}
    s = {k: np.zeros_like(p) for k, p in params.items()}
    n = len(pairs)
    bs = min(config.batch_size, n)
    for step in range(config.steps):
        idx = rng.choice(n, size=bs, replace=False)
        zt, ct = _encode(params, "t", text_feats[idx])
        zp, cp = _encode(params, "p", pose_feats[idx])
        logits = zt @ zp.T / config.temperature
        pt = softmax(logits, axis=1)     # text -> pose
        pp = softmax(logits, axis=0)     # pose -> text
        eye = np.eye(bs)
        dlogits = ((pt - eye) + (pp - eye)) / (2.0 * bs * config.temperature)
        dzt = dlogits @ zp
        dzp = dlogits.T @ zt
        grads: dict = {}
        _encode_backward(params, "t", ct, dzt, grads)
        _encode_backward(params, "p", cp, dzp, grads)
        t = step + 1
        for k in params:
            g = grads[k]
            m[k] = 0.9 * m[k] + 0.1 * g
            s[k] = 0.999 * s[k] + 0.001 * g * g
            mh = m[k] / (1 - 0.9**t)
            sh = s[k] / (1 - 0.999**t)
            params[k] -= config.learning_rate * mh / (np.sqrt(sh) + 1e-8)
    return RetrievalModel(vocab, params, config)


def recall_at_k(model, queries, gallery, direction: str, ks=(5, 10, 20)) -> dict:
    """Fraction of queries whose true match (same index) ranks in top k.

    direction "T2P": queries are captions, gallery is poses; "P2T" the
    reverse.  Ties in cosine similarity break toward the lower gallery
    index.
    """
    if len(queries) != len(gallery):
        raise SizeMismatch("queries and gallery must align by index")
    if direction == "T2P":
        zq = model.encode_texts(queries)
        zg = model.encode_poses(gallery)
    elif direction == "P2T":
        zq = model.encode_poses(queries)
        zg = model.encode_texts(gallery)
    else:
        raise ConfigError(f"unknown direction {direction!r}")
    sims = zq @ zg.T
    n = sims.shape[0]
    true_scores = sims[np.arange(n), np.arange(n)]
    better = (sims > true_scores[:, None]).sum(axis=1)
    eq_lower = ((sims == true_scores[:, None]) & (np.arange(n)[None, :] < np.arange(n)[:, None])).sum(axis=1)
    rank = better + eq_lower
    return {int(k): float((rank < k).mean()) for k in ks}


# ------------------------------------------------------------------ report

@dataclass
class MetricReport:
    mpjpe: float = 0.0
    pa_mpjpe: float = 0.0
    mpjre_x100: float = 0.0
    recall: dict = field(default_factory=dict)   # e.g. {"T2P@5": 0.31}
    caption_consistency: float | None = None
    n_samples: int = 1
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {"type": "report", "mpjpe": self.mpjpe, "pa_mpjpe": self.pa_mpjpe,
               "mpjre_x100": self.mpjre_x100, "recall": self.recall,
               "caption_consistency": self.caption_consistency,
               "n_samples": self.n_samples, "extras": self.extras}
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        return cls(mpjpe=obj["mpjpe"], pa_mpjpe=obj["pa_mpjpe"],
                   mpjre_x100=obj["mpjre_x100"], recall=obj["recall"],
                   caption_consistency=obj["caption_consistency"],
                   n_samples=obj["n_samples"], extras=obj["extras"])

    def format_table(self) -> str:
        lines = [
            "metric            value",
            "-----------------------",
            f"MPJPE (mm)        {self.mpjpe:10.3f}",
            f"PA-MPJPE (mm)     {self.pa_mpjpe:10.3f}",
            f"MPJRE (x100)      {self.mpjre_x100:10.3f}",
        ]
        for direction in ("T2P", "P2T"):
            ks = sorted(int(k.split("@")[1]) for k in self.recall if k.startswith(direction))
            if ks:
                vals = " / ".join(f"{self.recall[f'{direction}@{k}'] * 100:.1f}" for k in ks)
                lines.append(f"R^{direction} @{'/'.join(str(k) for k in ks)}   {vals}")
        if self.caption_consistency is not None:
            lines.append(f"caption consist.  {self.caption_consistency:10.3f}")
        for key in sorted(self.extras):
            lines.append(f"{key:<17} {self.extras[key]:10.3f}")
        lines.append(f"n_samples         {self.n_samples:10d}")
        return "\n".join(lines)
