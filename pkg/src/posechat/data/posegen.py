"""Pose sampling, rule-based captioning, and activity labeling.

The captioner is a fixed rule table: a handful of tracked joints each
carry a rotation axis and a short list of named angle bands.  A pose is
captioned by projecting each tracked joint's axis-angle onto its axis
and reading off the band whose interval contains the projection, so
captions partition pose space deterministically and double as an exact
oracle for the closed-loop consistency metric.

Poses for pose-bearing records are sampled per cell: pick an activity
prototype, occasionally mutate individual joints to another band, and
add small jitter.  This keeps the pose nearly determined by its caption
(band centers are ~1 rad apart, jitter is ~0.01 rad) while still
exercising every band combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rotmath import NUM_JOINTS, axis_angle_to_matrix, geodesic_distance

NEUTRAL_CAPTION = "the person stands in a neutral pose"

JITTER_STD = 0.008
CENTER_SLACK = 0.03
MUTATE_PROB = 0.15


@dataclass(frozen=True)
class BandRule:
    """One tracked joint: rotation axis and named angle bands along it."""

    name: str
    joint: int
    axis: tuple
    centers: tuple       # ascending projection values, one per band
    phrases: tuple       # caption phrase per band, None = silent band


# Order fixed: it is also the phrase order inside captions.  Every
# phrase carries one globally unique keyword (twisted, hangs, crooked,
# ...) so that band membership stays linearly decodable from a plain
# bag of words; without that, mirrored captions like "left elbow bent,
# right knee bent" vs "right elbow bent, left knee bent" would collide.
BAND_RULES = (
    BandRule("root_yaw", 0, (0.0, 1.0, 0.0), (-0.9, 0.0, 0.9),
             ("the body is twisted toward the right", None, "the body is turned toward the left")),
    BandRule("l_shoulder", 16, (0.0, 0.0, 1.0), (-1.3, 0.0, 1.2),
             ("the left arm hangs down", None, "the left arm is lifted high")),
    BandRule("r_shoulder", 17, (0.0, 0.0, 1.0), (-1.2, 0.0, 1.3),
             ("the right arm is raised high", None, "the right arm rests at the side")),
    BandRule("l_elbow", 18, (0.0, -1.0, 0.0), (0.0, 1.3, 2.3),
             (None, "the left elbow is crooked", "the left arm is curled tight")),
    BandRule("r_elbow", 19, (0.0, 1.0, 0.0), (0.0, 1.3, 2.3),
             (None, "the right elbow is bent", "the right arm is folded tight")),
    BandRule("l_hip", 1, (-1.0, 0.0, 0.0), (0.0, 1.4),
             (None, "the left leg strides forward")),
    BandRule("r_hip", 2, (-1.0, 0.0, 0.0), (0.0, 1.4),
             (None, "the right leg swings forward")),
    BandRule("l_knee", 4, (1.0, 0.0, 0.0), (0.0, 1.2, 2.2),
             (None, "the left knee is flexed", "the left leg is crouched low")),
    BandRule("r_knee", 5, (1.0, 0.0, 0.0), (0.0, 1.2, 2.2),
             (None, "the right knee is bowed", "the right leg is tucked under")),
)

_RULE_BY_NAME = {r.name: r for r in BAND_RULES}


@dataclass(frozen=True)
class ActivityPrototype:
    tag: str             # single-word attribute used in scene queries
    sentence: str        # implicit description of the pose
    bands: dict          # rule name -> band center value (missing = 0)


ACTIVITY_PROTOTYPES = (
    ActivityPrototype("standing", "this person is standing still with both arms relaxed.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3}),
    ActivityPrototype("stretching", "this person is holding both arms straight out to the sides.",
                      {}),
    ActivityPrototype("sitting", "this person is sitting on a chair.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3, "l_hip": 1.4, "r_hip": 1.4,
                       "l_knee": 1.2, "r_knee": 1.2}),
    ActivityPrototype("squatting", "this person is squatting close to the ground.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3, "l_elbow": 1.3, "r_elbow": 1.3,
                       "l_hip": 1.4, "r_hip": 1.4, "l_knee": 2.2, "r_knee": 2.2}),
    ActivityPrototype("cheering", "this person is cheering with both arms lifted high.",
                      {"l_shoulder": 1.2, "r_shoulder": -1.2}),
    ActivityPrototype("waving", "this person is waving at someone with the right hand.",
                      {"l_shoulder": -1.3, "r_shoulder": -1.2, "r_elbow": 1.3}),
    ActivityPrototype("walking", "this person is walking forward at an easy pace.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3, "l_elbow": 1.3, "r_knee": 1.2}),
    ActivityPrototype("boxing", "this person is guarding the face like a boxer.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3, "l_elbow": 2.3, "r_elbow": 2.3}),
    ActivityPrototype("turning", "this person is turning around to look behind.",
                      {"root_yaw": 0.9, "l_shoulder": -1.3, "r_shoulder": 1.3}),
    ActivityPrototype("kicking", "this person is kicking with the right leg stretched out.",
                      {"l_shoulder": -1.3, "r_shoulder": 1.3, "r_hip": 1.4}),
)

ACTIVITY_TAGS = tuple(p.tag for p in ACTIVITY_PROTOTYPES)


@dataclass(frozen=True)
class PosePrior:
    """Per-joint component-wise axis-angle bounds, radians."""

    lower: np.ndarray    # (24, 3)
    upper: np.ndarray    # (24, 3)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != (NUM_JOINTS, 3) or upper.shape != (NUM_JOINTS, 3):
            raise ValueError("prior bounds must have shape (24, 3)")
        if np.any(lower > upper):
            raise ValueError("prior lower bound exceeds upper bound")
        if np.any(np.abs(lower) > np.pi) or np.any(np.abs(upper) > np.pi):
            raise ValueError("prior bounds must lie within [-pi, pi]")
        # Box corners must stay inside the pi-ball so axis-angle samples
        # survive the matrix round trip unchanged.
        corner = np.maximum(np.abs(lower), np.abs(upper))
        if np.any(np.linalg.norm(corner, axis=1) > np.pi):
            raise ValueError("prior box extends beyond angle pi")


def default_prior() -> PosePrior:
    lower = np.full((NUM_JOINTS, 3), -0.3)
    upper = np.full((NUM_JOINTS, 3), 0.3)
    for rule in BAND_RULES:
        axis = np.array(rule.axis)
        lo, hi = rule.centers[0] - 0.3, rule.centers[-1] + 0.3
        for c in range(3):
            if axis[c] > 0:
                lower[rule.joint, c], upper[rule.joint, c] = lo, hi
            elif axis[c] < 0:
                lower[rule.joint, c], upper[rule.joint, c] = -hi, -lo
    return PosePrior(lower, upper)


def sample_pose(rng_seed: int, prior: PosePrior) -> np.ndarray:
    """Uniform (24, 3, 3) pose inside the prior box; deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    aa = prior.lower + rng.random((NUM_JOINTS, 3)) * (prior.upper - prior.lower)
    return axis_angle_to_matrix(aa)


def _cell_axis_angles(bands: dict, rng: np.random.Generator | None) -> np.ndarray:
    aa = np.zeros((NUM_JOINTS, 3))
    for rule in BAND_RULES:
        center = bands.get(rule.name, 0.0)
        scalar = center
        if rng is not None:
            scalar = center + rng.uniform(-CENTER_SLACK, CENTER_SLACK)
        aa[rule.joint] = scalar * np.array(rule.axis)
    if rng is not None:
        aa = aa + rng.normal(0.0, JITTER_STD, size=(NUM_JOINTS, 3))
    return aa


def prototype_pose(index: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Pose of an activity prototype, optionally jittered inside its cell."""
    proto = ACTIVITY_PROTOTYPES[index]
    return axis_angle_to_matrix(_cell_axis_angles(proto.bands, rng))


def sample_cell_pose(rng: np.random.Generator, mutate_prob: float = MUTATE_PROB):
    """Sample (pose, prototype index): jittered prototype with band mutations."""
    idx = int(rng.integers(len(ACTIVITY_PROTOTYPES)))
    bands = dict(ACTIVITY_PROTOTYPES[idx].bands)
    for rule in BAND_RULES:
        if rng.random() < mutate_prob:
            bands[rule.name] = rule.centers[int(rng.integers(len(rule.centers)))]
    return axis_angle_to_matrix(_cell_axis_angles(bands, rng)), idx


def _band_index(rule: BandRule, scalar: float) -> int:
    idx = 0
    for i in range(1, len(rule.centers)):
        threshold = 0.5 * (rule.centers[i - 1] + rule.centers[i])
        if scalar > threshold:
            idx = i
    return idx


def caption_pose(pose: np.ndarray) -> str:
    """Deterministic rule-based description of a (24, 3, 3) pose."""
    from ..rotmath import matrix_to_axis_angle

    phrases = []
    aa = matrix_to_axis_angle(pose)
    for rule in BAND_RULES:
        scalar = float(np.dot(aa[rule.joint], np.array(rule.axis)))
        phrase = rule.phrases[_band_index(rule, scalar)]
        if phrase is not None:
            phrases.append(phrase)
    if not phrases:
        return NEUTRAL_CAPTION
    return ", ".join(phrases)


def activity_of(pose: np.ndarray) -> str:
    """Activity sentence of the nearest prototype (mean per-joint geodesic)."""
    return ACTIVITY_PROTOTYPES[_nearest_prototype(pose)].sentence


def activity_tag_of(pose: np.ndarray) -> str:
    return ACTIVITY_PROTOTYPES[_nearest_prototype(pose)].tag


def _nearest_prototype(pose: np.ndarray) -> int:
    best, best_d = 0, np.inf
    for i in range(len(ACTIVITY_PROTOTYPES)):
        d = float(np.mean(geodesic_distance(prototype_pose(i), pose)))
        if d < best_d:
            best, best_d = i, d
    return best
