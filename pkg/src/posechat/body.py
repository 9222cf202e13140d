"""Kinematic body model: 24-joint tree and forward kinematics.

The skeleton covers the usual 24-joint body layout (pelvis root, legs,
spine, arms).  Only joint positions are computed; there is no mesh,
skinning, or shape variation.  The shipped default skeleton is a fixed
synthetic one with human-like proportions (about 1.7 m tall, T-pose
rest with +y up and +z forward); real rest-joint tables can be supplied
through the text file format documented in :func:`load_tree`.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ParseError, TopologyError
from .rotmath import NUM_JOINTS

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck",
    "l_collar", "r_collar", "head", "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
]

_DEFAULT_PARENT = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]

# Offset of each joint from its parent in the rest pose, meters.
_DEFAULT_OFFSET = [
    (0.0, 0.0, 0.0),        # pelvis (root at origin)
    (0.09, -0.08, 0.0),     # l_hip
    (-0.09, -0.08, 0.0),    # r_hip
    (0.0, 0.11, 0.0),       # spine1
    (0.0, -0.4, 0.0),       # l_knee
    (0.0, -0.4, 0.0),       # r_knee
    (0.0, 0.12, 0.0),       # spine2
    (0.0, -0.42, 0.0),      # l_ankle
    (0.0, -0.42, 0.0),      # r_ankle
    (0.0, 0.12, 0.0),       # spine3
    (0.0, -0.05, 0.13),     # l_foot
    (0.0, -0.05, 0.13),     # r_foot
    (0.0, 0.1, 0.0),        # neck
    (0.07, 0.06, 0.0),      # l_collar
    (-0.07, 0.06, 0.0),     # r_collar
    (0.0, 0.13, 0.0),       # head
    (0.1, 0.02, 0.0),       # l_shoulder
    (-0.1, 0.02, 0.0),      # r_shoulder
    (0.27, 0.0, 0.0),       # l_elbow
    (-0.27, 0.0, 0.0),      # r_elbow
    (0.25, 0.0, 0.0),       # l_wrist
    (-0.25, 0.0, 0.0),      # r_wrist
    (0.08, 0.0, 0.0),       # l_hand
    (-0.08, 0.0, 0.0),      # r_hand
]


@dataclass(frozen=True)
class KinematicTree:
    """Parent indices and rest-pose offsets; parent[0] == -1 marks the root."""

    parent: np.ndarray
    rest_offset: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        offset = np.asarray(self.rest_offset, dtype=np.float64)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "rest_offset", offset)
        if parent.shape != (NUM_JOINTS,) or offset.shape != (NUM_JOINTS, 3):
            raise ValueError("tree must have 24 parents and 24 offsets")
        if parent[0] != -1:
            raise TopologyError(0, "joint 0 must be the root (parent -1)")
        for j in range(1, NUM_JOINTS):
            if not 0 <= parent[j] < j:
                raise TopologyError(j, f"joint {j}")
        if not np.all(np.isfinite(offset)):
            raise ValueError("offsets must be finite")
        nonzero = np.linalg.norm(offset[1:], axis=1) > 0
        if not np.all(nonzero):
            bad = 1 + int(np.argmin(nonzero))
            raise TopologyError(bad, f"joint {bad} has a zero rest offset")


def default_tree() -> KinematicTree:
    """The fixed synthetic skeleton shipped with the package."""
    return KinematicTree(np.array(_DEFAULT_PARENT), np.array(_DEFAULT_OFFSET))


def default_tree_path():
    """Path to the shipped skeleton asset file."""
    return resources.files("posechat.assets").joinpath("default_skeleton.txt")


def forward_kinematics(pose: np.ndarray, tree: KinematicTree) -> np.ndarray:
    """World positions (24, 3) of all joints for a (24, 3, 3) pose.

    Root orientation: G_0 = R_0, p_0 = rest_offset[0]; children compose
    p_j = p_parent + G_parent @ rest_offset[j], G_j = G_parent @ R_j.
    """
    pose = np.asarray(pose, dtype=np.float64)
    positions = np.empty((NUM_JOINTS, 3))
    global_rot = np.empty((NUM_JOINTS, 3, 3))
    positions[0] = tree.rest_offset[0]
    global_rot[0] = pose[0]
    for j in range(1, NUM_JOINTS):
        p = tree.parent[j]
        positions[j] = positions[p] + global_rot[p] @ tree.rest_offset[j]
        global_rot[j] = global_rot[p] @ pose[j]
    return positions


def save_tree(tree: KinematicTree, path) -> None:
    lines = [f"joints {NUM_JOINTS}"]
    for j in range(NUM_JOINTS):
        ox, oy, oz = (_fmt(v) for v in tree.rest_offset[j])
        lines.append(f"{j} {tree.parent[j]} {ox} {oy} {oz}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_tree(path) -> KinematicTree:
    with open(path, "r", encoding="utf-8") as f:
        raw = [line.strip() for line in f]
    lines = [(i + 1, line) for i, line in enumerate(raw) if line]
    if not lines:
        raise ParseError("empty skeleton file", line=1)
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2 or parts[0] != "joints":
        raise ParseError(f"expected 'joints {NUM_JOINTS}' header", line=lineno)
    try:
        count = int(parts[1])
    except ValueError:
        raise ParseError("joint count is not an integer", line=lineno) from None
    if count != NUM_JOINTS:
        raise ParseError(f"expected {NUM_JOINTS} joints, got {count}", line=lineno)
    if len(lines) - 1 != NUM_JOINTS:
        raise ParseError(f"expected {NUM_JOINTS} joint lines, got {len(lines) - 1}", line=lineno)
    parent = np.full(NUM_JOINTS, -2, dtype=np.int64)
    offset = np.zeros((NUM_JOINTS, 3))
    for lineno, line in lines[1:]:
        fields = line.split()
        if len(fields) != 5:
            raise ParseError("expected 'index parent ox oy oz'", line=lineno)
        try:
            idx = int(fields[0])
            par = int(fields[1])
            vals = [float(v) for v in fields[2:]]
        except ValueError:
            raise ParseError("malformed number", line=lineno) from None
        if not 0 <= idx < NUM_JOINTS:
            raise ParseError(f"joint index {idx} out of range", line=lineno)
        if parent[idx] != -2:
            raise ParseError(f"duplicate joint {idx}", line=lineno)
        parent[idx] = par
        offset[idx] = vals
    return KinematicTree(parent, offset)


def _fmt(v: float) -> str:
    # Positional decimal notation that round-trips float64 exactly.
    return np.format_float_positional(v, unique=True, trim="0")
