"""Bit-exact model checkpoints in the shared container format."""

from __future__ import annotations

import numpy as np

from ..container import read_container, write_container
from ..errors import FormatError, ShapeError
from .model import Model, ModelConfig

CHECKPOINT_MAGIC = b"CAPCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in model.buffers.items()})
    meta = {"config": model.config.to_dict(), "dtype": model.dtype.str,
            "training": bool(model.training)}
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta, arrays)


def load_checkpoint(path) -> Model:
    _, meta, arrays = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        model = Model(ModelConfig.from_dict(meta["config"]), dtype=np.dtype(meta["dtype"]))
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        buffers = {k[len("buffer/"):]: v for k, v in arrays.items() if k.startswith("buffer/")}
        model.load_state(params, buffers)
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise FormatError(f"{path}: checkpoint does not match its config: {exc}") from exc
    model.training = bool(meta["training"])
    return model
