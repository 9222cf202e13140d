"""Chat records: QA templates, record construction, and dataset files.

Dataset files are JSON lines, one record per line, with poses stored as
144 numbers (24 x 6D, row-major) and observations flattened with their
person count.  All construction is a pure function of the seed, so
regenerating a dataset reproduces it byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..body import default_tree
from ..errors import AmbiguousQuery, ConfigError
from ..rotmath import NUM_JOINTS, matrix_to_rot6d, rot6d_to_matrix, validate_pose
from ..tok import tokenize
from .observe import (
    ATTRIBUTE_VOCAB,
    DEFAULT_D_OBS,
    DEFAULT_NOISE_STD,
    AttributedPerson,
    ObservationSeq,
    PLACEMENT_OFFSET,
    SIZE_SCALE,
    observe,
)
from .posegen import (
    ACTIVITY_PROTOTYPES,
    NEUTRAL_CAPTION,
    BAND_RULES,
    activity_tag_of,
    caption_pose,
    sample_cell_pose,
)

RECORD_KINDS = ("text2pose", "obs2pose", "rpe", "vqa")

TEXT2POSE_QUESTIONS = (
    "{description}, can you give the smpl pose of this person?",
    "there is a person: {description}. please output the smpl pose of this person.",
    "{description}. give the smpl pose.",
    "what is the smpl pose of this person? {description}.",
    "a person is described as: {description}. use the smpl pose to reflect this.",
    "human pose can be described with words: {description}. what is the smpl pose?",
)

OBS2POSE_QUESTIONS = (
    "<obs> can you predict the smpl pose of the person in this scene?",
    "<obs> there is a person in the middle of the scene, please output the smpl pose of this person.",
    "<obs> what is the human pose in this scene? please respond with smpl pose.",
    "<obs> what is the person doing in this scene? please output smpl pose.",
    "<obs> there is a person in this scene, use smpl to describe the pose.",
)

RPE_QUESTIONS = (
    "<obs> {query}, can you give the smpl pose of this person?",
    "<obs> {query}, please output the smpl pose of this person.",
)

SPG_QUESTIONS = (
    "{activity} can you give the smpl pose of this person?",
    "{activity} what smpl pose might this person be in?",
)

POSE_ANSWERS = (
    "the smpl pose is <pose>.",
    "it is <pose>.",
    "sure, it is <pose>.",
    "sure, the smpl pose is <pose>.",
    "<pose>.",
    "the smpl pose of the person is <pose>.",
)

PLACEMENT_QUERY = {
    "left": "the person on the left",
    "center": "the person in the center",
    "right": "the person on the right",
}
SIZE_QUERY = {
    "short": "the short person",
    "average": "the average sized person",
    "tall": "the tall person",
}


def attribute_query(tag: str) -> str:
    if tag in PLACEMENT_QUERY:
        return PLACEMENT_QUERY[tag]
    if tag in SIZE_QUERY:
        return SIZE_QUERY[tag]
    return f"the person who is {tag}"


# Generic text QA used to keep plain language ability during training.
_VQA_FACTS = (
    ("what color is grass", "grass is green"),
    ("what color is the sky on a clear day", "the sky is blue"),
    ("what color is snow", "snow is white"),
    ("what color is coal", "coal is black"),
    ("what color is a ripe banana", "a ripe banana is yellow"),
    ("what color is a ripe tomato", "a ripe tomato is red"),
    ("what color is chocolate", "chocolate is brown"),
    ("what color is a carrot", "a carrot is orange"),
    ("what sound does a dog make", "a dog says woof"),
    ("what sound does a cat make", "a cat says meow"),
    ("what sound does a cow make", "a cow says moo"),
    ("what sound does a duck make", "a duck says quack"),
    ("what sound does a sheep make", "a sheep says baa"),
    ("how many legs does a cat have", "a cat has four legs"),
    ("how many legs does a spider have", "a spider has eight legs"),
    ("how many legs does a bird have", "a bird has two legs"),
    ("how many legs does an insect have", "an insect has six legs"),
    ("how many wheels does a bicycle have", "a bicycle has two wheels"),
    ("how many days are in a week", "a week has seven days"),
    ("how many months are in a year", "a year has twelve months"),
    ("what is the opposite of hot", "the opposite of hot is cold"),
    ("what is the opposite of big", "the opposite of big is small"),
    ("what is the opposite of fast", "the opposite of fast is slow"),
    ("what is the opposite of up", "the opposite of up is down"),
    ("what is the opposite of day", "the opposite of day is night"),
    ("what is the opposite of wet", "the opposite of wet is dry"),
    ("what is two plus two", "two plus two is four"),
    ("what is three plus three", "three plus three is six"),
    ("what is five minus two", "five minus two is three"),
    ("what is ten minus one", "ten minus one is nine"),
    ("where do fish live", "fish live in water"),
    ("where do birds build nests", "birds build nests in trees"),
    ("where does the sun rise", "the sun rises in the east"),
    ("where does the sun set", "the sun sets in the west"),
    ("what do bees make", "bees make honey"),
    ("what do cows give us", "cows give us milk"),
    ("what do hens lay", "hens lay eggs"),
    ("what season comes after winter", "spring comes after winter"),
    ("what season comes after summer", "autumn comes after summer"),
    ("what do you use to cut paper", "you use scissors to cut paper"),
    ("what do you use to write on paper", "you use a pen to write on paper"),
    ("what melts in the sun", "ice melts in the sun"),
    ("what falls from clouds when it rains", "water falls from clouds when it rains"),
    ("which animal is known as the king of the jungle", "the lion is known as the king of the jungle"),
    ("which animal has a very long neck", "the giraffe has a very long neck"),
    ("which animal carries its house on its back", "the snail carries its house on its back"),
    ("what do plants need to grow", "plants need water and light to grow"),
    ("what shines in the sky at night", "the moon shines in the sky at night"),
    ("how many fingers are on one hand", "one hand has five fingers"),
    ("how many toes are on one foot", "one foot has five toes"),
)

_VQA_QUESTION_FORMS = (
    "{q}?",
    "{q}? please answer briefly.",
    "tell me, {q}?",
    "here is a question: {q}?",
)

VQA_PAIRS = tuple(
    (form.format(q=q), a + ".")
    for q, a in _VQA_FACTS
    for form in _VQA_QUESTION_FORMS
)


@dataclass(frozen=True)
class ChatRecord:
    question: str
    answer: str
    kind: str
    target_pose: np.ndarray | None = None
    observation: ObservationSeq | None = None
    seed: int | None = None
    # Poses of the non-queried persons in an rpe scene; lets evaluation
    # check that a prediction resolves to the right person.
    distractors: tuple = ()


def validate_record(record: ChatRecord) -> ChatRecord:
    if record.kind not in RECORD_KINDS:
        raise ValueError(f"unknown record kind {record.kind!r}")
    n_pose = sum(1 for t in tokenize(record.answer) if t == "<pose>")
    if record.target_pose is not None:
        validate_pose(record.target_pose)
        if n_pose != 1:
            raise ValueError("pose-bearing answer must contain exactly one <pose>")
    elif n_pose != 0:
        raise ValueError("answer has a <pose> placeholder but no target pose")
    needs_obs = record.kind in ("obs2pose", "rpe")
    if needs_obs != (record.observation is not None):
        raise ValueError(f"kind {record.kind} and observation presence disagree")
    if record.distractors and record.kind != "rpe":
        raise ValueError("only rpe records carry distractor poses")
    for pose in record.distractors:
        validate_pose(pose)
    return record


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def make_record(kind: str, *, rng_seed: int, pose=None, caption=None, observation=None,
                scene=None, query_tag=None, templates=None) -> ChatRecord:
    """Instantiate one ChatRecord of the given kind from seeded templates."""
    rng = np.random.default_rng(rng_seed)
    if kind == "text2pose":
        if caption is None:
            caption = caption_pose(pose)
        question = _pick(rng, templates or TEXT2POSE_QUESTIONS).format(description=caption)
        answer = _pick(rng, POSE_ANSWERS)
        record = ChatRecord(question, answer, kind, target_pose=pose, seed=rng_seed)
    elif kind == "obs2pose":
        question = _pick(rng, templates or OBS2POSE_QUESTIONS)
        answer = _pick(rng, POSE_ANSWERS)
        record = ChatRecord(question, answer, kind, target_pose=pose,
                            observation=observation, seed=rng_seed)
    elif kind == "rpe":
        if query_tag not in ATTRIBUTE_VOCAB:
            raise ValueError(f"unknown query tag {query_tag!r}")
        matches = [p for p in scene if query_tag in p.attributes]
        if len(matches) != 1:
            raise AmbiguousQuery(
                f"query {query_tag!r} matches {len(matches)} persons, need exactly 1")
        question = _pick(rng, templates or RPE_QUESTIONS).format(query=attribute_query(query_tag))
        answer = _pick(rng, POSE_ANSWERS)
        others = tuple(p.pose for p in scene if query_tag not in p.attributes)
        record = ChatRecord(question, answer, kind, target_pose=matches[0].pose,
                            observation=observation, seed=rng_seed, distractors=others)
    elif kind == "vqa":
        question, answer = _pick(rng, templates or VQA_PAIRS)
        record = ChatRecord(question, answer, kind, seed=rng_seed)
    else:
        raise ConfigError(f"unknown record kind {kind!r}")
    return validate_record(record)


def scene_attributes(pose, placement: str, size: str) -> frozenset:
    return frozenset({placement, size, activity_tag_of(pose)})


def generate_scene(rng: np.random.Generator, n_persons: int) -> list:
    """Persons with placement/size/activity tags; placements spread out."""
    placements = list(PLACEMENT_OFFSET)
    order = rng.permutation(len(placements))
    chosen = [placements[i] for i in order]
    while len(chosen) < n_persons:
        chosen.append(placements[int(rng.integers(len(placements)))])
    persons = []
    for i in range(n_persons):
        pose, _ = sample_cell_pose(rng)
        size = _pick(rng, tuple(SIZE_SCALE))
        persons.append(AttributedPerson(pose, scene_attributes(pose, chosen[i], size)))
    return persons


def unique_tags(scene) -> list:
    counts: dict[str, int] = {}
    for person in scene:
        for tag in person.attributes:
            counts[tag] = counts.get(tag, 0) + 1
    return sorted(t for t, c in counts.items() if c == 1)


def generate_records(kind: str, n: int, seed: int, tree=None,
                     noise_std: float = DEFAULT_NOISE_STD,
                     d_obs: int = DEFAULT_D_OBS) -> list:
    """n records of one kind, deterministically derived from the seed."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    tree = tree or default_tree()
    master = np.random.default_rng(seed)
    records = []
    while len(records) < n:
        child = int(master.integers(0, 2**62))
        rng = np.random.default_rng(child)
        if kind == "text2pose":
            pose, _ = sample_cell_pose(rng)
            records.append(make_record("text2pose", rng_seed=child, pose=pose))
        elif kind == "obs2pose":
            pose, _ = sample_cell_pose(rng)
            person = AttributedPerson(pose, scene_attributes(pose, "center", "average"))
            obs = observe([person], tree, noise_std=noise_std, rng_seed=child, d_obs=d_obs)
            records.append(make_record("obs2pose", rng_seed=child, pose=pose, observation=obs))
        elif kind == "rpe":
            scene = generate_scene(rng, int(rng.integers(2, 5)))
            tags = unique_tags(scene)
            if not tags:
                continue
            tag = _pick(rng, tags)
            obs = observe(scene, tree, noise_std=noise_std, rng_seed=child, d_obs=d_obs)
            records.append(make_record("rpe", rng_seed=child, scene=scene,
                                       query_tag=tag, observation=obs))
        elif kind == "vqa":
            records.append(make_record("vqa", rng_seed=child))
        else:
            raise ConfigError(f"unknown record kind {kind!r}")
    return records


# ---------------------------------------------------------------- file IO

def record_to_obj(record: ChatRecord) -> dict:
    obj = {"kind": record.kind, "question": record.question, "answer": record.answer}
    if record.target_pose is not None:
        obj["target_pose"] = matrix_to_rot6d(record.target_pose).reshape(-1).tolist()
    if record.observation is not None:
        obj["observation"] = {
            "person_count": record.observation.person_count,
            "vectors": record.observation.vectors.reshape(-1).tolist(),
            "d_obs": record.observation.vectors.shape[1],
        }
    if record.seed is not None:
        obj["seed"] = record.seed
    if record.distractors:
        obj["distractor_poses"] = [
            matrix_to_rot6d(p).reshape(-1).tolist() for p in record.distractors
        ]
    return obj


def _pose_from_flat(flat) -> np.ndarray:
    return rot6d_to_matrix(np.asarray(flat, dtype=np.float64).reshape(NUM_JOINTS, 6))


def record_from_obj(obj: dict) -> ChatRecord:
    pose = None
    if "target_pose" in obj:
        pose = _pose_from_flat(obj["target_pose"])
    obs = None
    if "observation" in obj:
        blob = obj["observation"]
        vectors = np.asarray(blob["vectors"], dtype=np.float64).reshape(-1, blob["d_obs"])
        obs = ObservationSeq(vectors, blob["person_count"])
    distractors = tuple(_pose_from_flat(p) for p in obj.get("distractor_poses", ()))
    return validate_record(ChatRecord(
        question=obj["question"], answer=obj["answer"], kind=obj["kind"],
        target_pose=pose, observation=obs, seed=obj.get("seed"),
        distractors=distractors))


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record_to_obj(record), sort_keys=True, separators=(",", ":")))
            f.write("\n")


def read_records(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(record_from_obj(json.loads(line)))
    return records


def write_poses(poses, path) -> None:
    """Pose file: header 'poses N 144', then one 144-number line per pose."""
    poses = list(poses)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"poses {len(poses)} 144\n")
        for pose in poses:
            flat = matrix_to_rot6d(pose).reshape(-1)
            f.write(" ".join(repr(float(v)) for v in flat) + "\n")


def read_poses(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 3 or header[0] != "poses" or header[2] != "144":
            raise ConfigError("bad pose file header")
        n = int(header[1])
        poses = []
        for _ in range(n):
            flat = np.array([float(v) for v in f.readline().split()])
            poses.append(rot6d_to_matrix(flat.reshape(NUM_JOINTS, 6)))
    return poses


def corpus_texts() -> list:
    """Every text the generators can emit; the tokenizer corpus."""
    texts = []
    texts += [t.replace("{description}", "") for t in TEXT2POSE_QUESTIONS]
    texts += list(OBS2POSE_QUESTIONS)
    texts += [t.replace("{query}", "") for t in RPE_QUESTIONS]
    texts += [t.replace("{activity}", "") for t in SPG_QUESTIONS]
    texts += list(POSE_ANSWERS)
    texts.append(NEUTRAL_CAPTION)
    for rule in BAND_RULES:
        texts += [p for p in rule.phrases if p]
    for proto in ACTIVITY_PROTOTYPES:
        texts.append(proto.sentence)
        texts.append(attribute_query(proto.tag))
    texts += list(PLACEMENT_QUERY.values())
    texts += list(SIZE_QUERY.values())
    for q, a in VQA_PAIRS:
        texts.append(q)
        texts.append(a)
    return texts
