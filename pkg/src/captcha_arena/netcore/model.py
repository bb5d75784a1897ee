"""Model definition, forward pass, cross-entropy loss and backpropagation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from .layers import BatchNorm, Conv2D, Dense, Flatten, Layer, MaxPool, ReLU, softmax

LOG_FLOOR = 1e-12

_KINDS = ("conv", "batchnorm", "relu", "maxpool", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    out_channels: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind == "softmax":
            raise ConfigError("softmax is applied by the output heads; do not list it as a layer")
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid geometry in {self}")
        if self.kind == "conv" and self.out_channels < 1:
            raise ConfigError("conv layer needs out_channels >= 1")
        if self.kind == "dense" and self.out_features < 1:
            raise ConfigError("dense layer needs out_features >= 1")


def conv(out_channels, kernel=3, stride=1, padding=1) -> LayerSpec:
    return LayerSpec("conv", kernel, stride, padding, out_channels=out_channels)


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(kernel=2, stride=2) -> LayerSpec:
    return LayerSpec("maxpool", kernel, stride)


def dense(out_features) -> LayerSpec:
    return LayerSpec("dense", out_features=out_features)


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int] = (1, 24, 72)
    layers: tuple[LayerSpec, ...] = ()
    n_heads: int = 4
    num_classes: int = 36

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(
            spec if isinstance(spec, LayerSpec) else LayerSpec(**spec) for spec in self.layers))
        if self.n_heads < 1 or self.num_classes < 2:
            raise ConfigError("need at least one head and two classes")
        self.feature_shapes()

    def feature_shapes(self) -> list[tuple[int, ...]]:
        """Shape (without batch axis) after each layer; raises on incompatible chains."""
        shape = self.input_shape
        shapes = []
        for spec in self.layers:
            if spec.kind == "conv":
                if len(shape) != 3:
                    raise ConfigError("conv layer after a dense layer")
                ho, wo = Conv2D.output_hw(shape[1], shape[2], spec.kernel, spec.stride, spec.padding)
                shape = (spec.out_channels, ho, wo)
            elif spec.kind == "maxpool":
                if len(shape) != 3:
                    raise ConfigError("maxpool layer after a dense layer")
                shape = (shape[0], (shape[1] - spec.kernel) // spec.stride + 1,
                         (shape[2] - spec.kernel) // spec.stride + 1)
            elif spec.kind == "dense":
                shape = (spec.out_features,)
            if any(d < 1 for d in shape):
                raise ConfigError(f"layer {spec} collapses the feature map to {shape}")
            shapes.append(shape)
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(input_shape=tuple(d["input_shape"]),
                   layers=tuple(LayerSpec(**s) for s in d["layers"]),
                   n_heads=d["n_heads"], num_classes=d["num_classes"])


def desk_model_config(input_shape=(1, 24, 72)) -> ModelConfig:
    """Four conv blocks [16, 32, 32, 64], one dense trunk layer, four heads."""
    return ModelConfig(input_shape=input_shape, layers=(
        conv(16), batchnorm(), relu(), maxpool(),
        conv(32), batchnorm(), relu(), maxpool(),
        conv(32), batchnorm(), relu(),
        conv(64), batchnorm(), relu(), maxpool(),
        dense(128), batchnorm(), relu(),
    ))


def full_model_config(input_shape=(1, 48, 144)) -> ModelConfig:
    """Nine conv layers with the [32,32,64,64,128,128,256,64,32] feature schedule.

    Three of them downsample with stride 2; three dense trunk layers precede
    the heads.
    """
    widths = [32, 32, 64, 64, 128, 128, 256, 64, 32]
    downsample = {1, 3, 5}
    layers = []
    for i, width in enumerate(widths):
        layers += [conv(width, stride=2 if i in downsample else 1, padding=1),
                   batchnorm(), relu()]
    layers.append(maxpool())
    for width in (256, 128, 64):
        layers += [dense(width), batchnorm(), relu()]
    return ModelConfig(input_shape=input_shape, layers=tuple(layers))


class Model:
    """Layer stack plus ``n_heads`` parallel softmax heads.

    The heads are stored as one dense layer of width ``n_heads * num_classes``
    whose output is reshaped to ``(N, n_heads, num_classes)``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.training = False
        rng = np.random.default_rng(seed)
        self.layers: list[tuple[str, Layer]] = []
        shape = config.input_shape
        for i, (spec, out_shape) in enumerate(zip(config.layers, config.feature_shapes())):
            name = f"layer{i}"
            if spec.kind == "conv":
                layer = Conv2D(shape[0], spec.out_channels, spec.kernel, spec.stride,
                               spec.padding, rng, self.dtype)
            elif spec.kind == "batchnorm":
                layer = BatchNorm(shape[0], self.dtype)
            elif spec.kind == "relu":
                layer = ReLU()
            elif spec.kind == "maxpool":
                layer = MaxPool(spec.kernel, spec.stride)
            else:
                if len(shape) == 3:
                    self.layers.append((f"flatten{i}", Flatten()))
                    shape = (int(np.prod(shape)),)
                layer = Dense(shape[0], spec.out_features, rng, self.dtype)
            self.layers.append((name, layer))
            shape = out_shape
        if len(shape) == 3:
            self.layers.append(("flatten_heads", Flatten()))
            shape = (int(np.prod(shape)),)
        self.layers.append(("heads", Dense(shape[0], config.n_heads * config.num_classes,
                                           rng, self.dtype)))

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{k}": v for lname, layer in self.layers for k, v in layer.params.items()}

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{k}": v for lname, layer in self.layers for k, v in layer.buffers.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{k}": v for lname, layer in self.layers for k, v in layer.grads.items()}

    def load_state(self, params: dict, buffers: dict) -> None:
        """Copy parameter and buffer values in place (shapes must match)."""
        for store, values in ((self.params, params), (self.buffers, buffers)):
            if set(store) != set(values):
                raise ShapeError(f"state names differ: {sorted(set(store) ^ set(values))}")
            for name, arr in store.items():
                if arr.shape != values[name].shape:
                    raise ShapeError(f"{name}: shape {values[name].shape} != {arr.shape}")
                arr[...] = values[name]

    def copy(self) -> Model:
        clone = Model(self.config, dtype=self.dtype)
        clone.load_state(self.params, self.buffers)
        clone.training = self.training
        return clone

    def logits(self, batch: np.ndarray, record: bool = True) -> np.ndarray:
        """Head logits ``(N, n_heads, num_classes)``.

        With ``record=False`` the model must be in eval mode; layers keep no
        backward caches, which is faster but leaves ``backward`` unusable.
        """
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[1:] != self.config.input_shape:
            raise ShapeError(f"expected batch of shape (N, {', '.join(map(str, self.config.input_shape))}), "
                             f"got {batch.shape}")
        x = batch.astype(self.dtype, copy=False).transpose(0, 2, 3, 1)
        if not record and not self.training:
            x = np.array(x)  # infer() may write in place
            for _, layer in self.layers:
                x = layer.infer(x)
        else:
            for _, layer in self.layers:
                x = layer.forward(x, self.training)
        return x.reshape(len(x), self.config.n_heads, self.config.num_classes)

    def backward_logits(self, dlogits: np.ndarray) -> np.ndarray:
        """Backpropagate a gradient w.r.t. the head logits; returns the input gradient."""
        d = dlogits.reshape(len(dlogits), -1).astype(self.dtype, copy=False)
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return np.ascontiguousarray(d.transpose(0, 3, 1, 2))


def forward(model: Model, batch: np.ndarray, record: bool = True) -> np.ndarray:
    """Per-head class probabilities, shape ``(N, n_heads, num_classes)``."""
    return softmax(model.logits(batch, record))


def _check_labels(probs: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None]
    if labels.shape != probs.shape[:2]:
        raise ShapeError(f"labels shape {labels.shape} does not match heads {probs.shape[:2]}")
    return labels


def loss_ce(probs: np.ndarray, labels) -> float:
    """Categorical cross-entropy summed over heads and averaged over the batch."""
    labels = _check_labels(probs, labels)
    n, h = labels.shape
    p_true = probs[np.arange(n)[:, None], np.arange(h)[None, :], labels]
    return float(-np.log(np.maximum(p_true, LOG_FLOOR)).sum(axis=1).mean())


def forward_backward(model: Model, batch, labels) -> tuple[float, dict, np.ndarray]:
    probs = forward(model, batch)
    labels = _check_labels(probs, labels)
    loss = loss_ce(probs, labels)
    n, h = labels.shape
    dlogits = probs.copy()
    dlogits[np.arange(n)[:, None], np.arange(h)[None, :], labels] -= 1.0
    dlogits /= n
    dx = model.backward_logits(dlogits)
    return loss, model.grads, dx


def backward(model: Model, batch, labels) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the mean loss w.r.t. every parameter and the input batch."""
    _, grads, dx = forward_backward(model, batch, labels)
    return {k: v.copy() for k, v in grads.items()}, dx
