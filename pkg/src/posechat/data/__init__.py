"""Synthetic closed-loop dataset generation.

Pose sampling, rule-based captioning, activity labeling, observation
encoding (the stand-in for images), QA record construction, batch
mixing, and benchmark builders.
"""

from .posegen import (
    PosePrior,
    default_prior,
    sample_pose,
    sample_cell_pose,
    caption_pose,
    activity_of,
    activity_tag_of,
    ACTIVITY_PROTOTYPES,
    prototype_pose,
)
from .observe import (
    ObservationSeq,
    AttributedPerson,
    Camera,
    observe,
    mask_observation,
    ATTRIBUTE_VOCAB,
)
from .records import (
    ChatRecord,
    make_record,
    validate_record,
    write_records,
    read_records,
    write_poses,
    read_poses,
    generate_records,
    corpus_texts,
)
from .batches import mixed_batches
from .benchmarks import build_benchmark

__all__ = [
    "PosePrior", "default_prior", "sample_pose", "sample_cell_pose",
    "caption_pose", "activity_of", "activity_tag_of", "ACTIVITY_PROTOTYPES",
    "prototype_pose", "ObservationSeq", "AttributedPerson", "Camera",
    "observe", "mask_observation", "ATTRIBUTE_VOCAB", "ChatRecord",
    "make_record", "validate_record", "write_records", "read_records",
    "write_poses", "read_poses", "generate_records", "corpus_texts",
    "mixed_batches", "build_benchmark",
]
