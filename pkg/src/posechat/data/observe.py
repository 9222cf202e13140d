"""Observation encoding: the stand-in for the frozen vision pathway.

A person's 24 joints are perspective-projected by a fixed camera,
perturbed with 2D Gaussian noise, and each 2D point is lifted to a
d_obs-dimensional vector by a fixed seeded linear map.  Multi-person
scenes concatenate per-person blocks in list order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..body import KinematicTree, forward_kinematics
from ..rotmath import NUM_JOINTS
from .posegen import ACTIVITY_TAGS

DEFAULT_D_OBS = 16
DEFAULT_NOISE_STD = 0.01
_EMBED_SEED = 7243901

PLACEMENT_OFFSET = {"left": -0.9, "center": 0.0, "right": 0.9}
SIZE_SCALE = {"short": 0.85, "average": 1.0, "tall": 1.15}

ATTRIBUTE_VOCAB = frozenset(PLACEMENT_OFFSET) | frozenset(SIZE_SCALE) | frozenset(ACTIVITY_TAGS)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera at the origin looking along +z."""

    focal: float = 1.0
    depth: float = 3.0


@dataclass(frozen=True)
class ObservationSeq:
    vectors: np.ndarray      # (person_count * 24, d_obs)
    person_count: int

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vectors)
        if self.person_count < 1:
            raise ValueError("person_count must be >= 1")
        if vectors.ndim != 2 or vectors.shape[0] != self.person_count * NUM_JOINTS:
            raise ValueError(
                f"expected {self.person_count * NUM_JOINTS} observation vectors, got {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise ValueError("observation vectors must be finite")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class AttributedPerson:
    pose: np.ndarray
    attributes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "attributes", frozenset(self.attributes))
        if not self.attributes:
            raise ValueError("person needs at least one attribute tag")
        unknown = self.attributes - ATTRIBUTE_VOCAB
        if unknown:
            raise ValueError(f"unknown attribute tags: {sorted(unknown)}")

    def placement(self) -> str:
        for tag in self.attributes:
            if tag in PLACEMENT_OFFSET:
                return tag
        return "center"

    def size(self) -> str:
        for tag in self.attributes:
            if tag in SIZE_SCALE:
                return tag
        return "average"


def embedding_map(d_obs: int = DEFAULT_D_OBS) -> np.ndarray:
    """The fixed seeded (d_obs, 2) linear map lifting 2D points."""
    return np.random.default_rng(_EMBED_SEED).normal(size=(d_obs, 2))


def project_person(person: AttributedPerson, tree: KinematicTree, camera: Camera) -> np.ndarray:
    """Noise-free 2D keypoints (24, 2) of one placed person."""
    joints = forward_kinematics(person.pose, tree)
    root = joints[0]
    joints = root + SIZE_SCALE[person.size()] * (joints - root)
    joints = joints + np.array([PLACEMENT_OFFSET[person.placement()], 0.0, camera.depth])
    z = joints[:, 2]
    if np.any(z <= 0):
        raise ValueError("person behind the camera")
    return camera.focal * joints[:, :2] / z[:, None]


def observe(
    persons,
    tree: KinematicTree,
    camera: Camera | None = None,
    noise_std: float = DEFAULT_NOISE_STD,
    rng_seed: int = 0,
    d_obs: int = DEFAULT_D_OBS,
) -> ObservationSeq:
    """Encode one or more persons into an observation sequence."""
    if len(persons) < 1:
        raise ValueError("need at least one person")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    camera = camera or Camera()
    rng = np.random.default_rng(rng_seed)
    w = embedding_map(d_obs)
    blocks = []
    for person in persons:
        uv = project_person(person, tree, camera)
        if noise_std > 0:
            uv = uv + rng.normal(0.0, noise_std, size=uv.shape)
        blocks.append(uv @ w.T)
    return ObservationSeq(np.concatenate(blocks, axis=0), len(persons))


def mask_observation(obs: ObservationSeq, fraction: float, rng_seed: int = 0) -> ObservationSeq:
    """Zero out a fraction of observation positions (occlusion probe)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    n = len(obs)
    k = int(np.floor(fraction * n))
    if k == 0:
        return obs
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=k, replace=False)
    vectors = obs.vectors.copy()
    vectors[idx] = 0.0
    return ObservationSeq(vectors, obs.person_count)
