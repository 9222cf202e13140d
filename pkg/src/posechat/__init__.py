"""posechat: a desk-scale chat language model that emits a pose token
decoded into 24-joint body rotations, together with the synthetic data,
training, and evaluation stack around it."""

__version__ = "0.1.0"

from . import body, data, metrics, model, rotmath, tok, train  # noqa: F401
