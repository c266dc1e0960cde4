"""Small numpy classifiers with hand-written reverse mode.

Three architectures are supported:

* ``LINEAR_SOFTMAX``: ``scores = W x + b``
* ``MLP``: one ReLU hidden layer
* ``SMALL_CNN``: 5x5 conv (8 maps) -> ReLU -> 2x2 max-pool -> dense

Parameters live in one flat float32 vector (the on-disk precision); all
arithmetic is done in float64.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, EmptyDataset, FormatError
from .image import Image, warp
from .transforms import Transform

__all__ = [
    "Architecture",
    "ClassifierModel",
    "LabeledDataset",
    "init_model",
    "forward",
    "forward_batch",
    "predict",
    "predict_batch",
    "input_gradient",
    "train_sgd",
    "finetune_adversarial",
    "accuracy",
    "softmax_cross_entropy",
    "save_weights",
    "load_weights",
]

CONV_MAPS = 8
CONV_SIZE = 5
WEIGHTS_MAGIC = b"MFW1"
_HEADER = struct.Struct("<4sIIIII")


class Architecture(enum.IntEnum):
    LINEAR_SOFTMAX = 1
    MLP = 2
    SMALL_CNN = 3

    @classmethod
    def parse(cls, name: str) -> "Architecture":
        key = name.strip().lower().replace("-", "_")
        table = {"linear": cls.LINEAR_SOFTMAX, "linear_softmax": cls.LINEAR_SOFTMAX,
                 "mlp": cls.MLP, "cnn": cls.SMALL_CNN, "small_cnn": cls.SMALL_CNN}
        if key not in table:
            raise ValueError(f"unknown architecture {name!r}")
        return table[key]


def _shape_table(arch: Architecture, c: int, width: int, height: int, hidden: int):
    n = width * height
    if arch is Architecture.LINEAR_SOFTMAX:
        return [("W", (c, n)), ("b", (c,))]
    if arch is Architecture.MLP:
        return [("W1", (hidden, n)), ("b1", (hidden,)), ("W2", (c, hidden)), ("b2", (c,))]
    ho, wo = height - CONV_SIZE + 1, width - CONV_SIZE + 1
    if ho < 2 or wo < 2:
        raise ValueError("image too small for the 5x5 convolution + pooling")
    pooled = CONV_MAPS * (ho // 2) * (wo // 2)
    return [("K", (CONV_MAPS, CONV_SIZE, CONV_SIZE)), ("kb", (CONV_MAPS,)),
            ("W", (c, pooled)), ("b", (c,))]


def _fan_in(name: str, shape) -> int:
    if name in ("K", "kb"):
        return CONV_SIZE * CONV_SIZE
    if name.startswith("b"):
        return None
    return int(shape[1])


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    arch: Architecture
    num_classes: int
    width: int
    height: int
    params: np.ndarray
    hidden: int = 0

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float32).reshape(-1)
        if p.size != self.param_count:
            raise ValueError(f"{self.arch.name} needs {self.param_count} parameters, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def shapes(self):
        return _shape_table(self.arch, self.num_classes, self.width, self.height, self.hidden)

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes)

    @property
    def input_dims(self) -> tuple[int, int]:
        return self.width, self.height

    def layers(self) -> dict[str, np.ndarray]:
        """float64 views of each parameter block, keyed by name."""
        out, pos = {}, 0
        flat = self.params.astype(np.float64)
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    def with_params(self, params) -> "ClassifierModel":
        return replace(self, params=params)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: Sequence[Image]
    labels: Sequence[int]
    _stack: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        images, labels = list(self.images), [int(v) for v in self.labels]
        if len(images) != len(labels):
            raise ValueError("images and labels differ in length")
        if images and any(im.shape != images[0].shape for im in images):
            raise ValueError("dataset images must share dimensions")
        object.__setattr__(self, "images", tuple(images))
        object.__setattr__(self, "labels", tuple(labels))

    def __len__(self):
        return len(self.labels)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._stack is None:
            stack = np.stack([im.pixels for im in self.images]) if self.images else np.zeros((0, 0, 0))
            object.__setattr__(self, "_stack", stack)
        return self._stack, np.asarray(self.labels, dtype=np.intp)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset([self.images[i] for i in indices], [self.labels[i] for i in indices])


def init_model(arch: Architecture, num_classes: int, width: int, height: int,
               seed: int = 0, hidden: int = 64) -> ClassifierModel:
    """Uniform(-s, s) initialisation with s = 1/sqrt(fan_in)."""
    if arch is not Architecture.MLP:
        hidden = 0
    rng = np.random.default_rng(seed)
    table = _shape_table(arch, num_classes, width, height, hidden)
    blocks = []
    for i, (name, shape) in enumerate(table):
        fan = _fan_in(name, shape)
        if fan is None:  # bias: same bound as its weight block
            fan = _fan_in(*table[i - 1])
        s = 1.0 / np.sqrt(fan)
        blocks.append(rng.uniform(-s, s, size=shape).ravel())
    return ClassifierModel(arch, num_classes, width, height, np.concatenate(blocks), hidden)


# ---- forward / backward -------------------------------------------------

def _check_batch(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (model.height, model.width):
        raise DimensionMismatch(
            f"model expects {model.width}x{model.height} input, got {x.shape[2]}x{x.shape[1]}"
        )
    return x


def _forward(model: ClassifierModel, x: np.ndarray):
    p = model.layers()
    b = x.shape[0]
    flat = x.reshape(b, -1)
    if model.arch is Architecture.LINEAR_SOFTMAX:
        return flat @ p["W"].T + p["b"], (flat,)
    if model.arch is Architecture.MLP:
        z = flat @ p["W1"].T + p["b1"]
        a = np.maximum(z, 0.0)
        return a @ p["W2"].T + p["b2"], (flat, z, a)
    patches = sliding_window_view(x, (CONV_SIZE, CONV_SIZE), axis=(1, 2))  # b,ho,wo,5,5
    z = np.einsum("bhwij,kij->bkhw", patches, p["K"]) + p["kb"][None, :, None, None]
    a = np.maximum(z, 0.0)
    hp, wp = z.shape[2] // 2, z.shape[3] // 2
    win = a[:, :, :2 * hp, :2 * wp].reshape(b, CONV_MAPS, hp, 2, wp, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, CONV_MAPS, hp, wp, 4)
    arg = np.argmax(win, axis=-1)  # first maximum in scan order
    pooled = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    feat = pooled.reshape(b, -1)
    return feat @ p["W"].T + p["b"], (x, patches, z, arg, feat)


def _backward(model: ClassifierModel, cache, dlogits: np.ndarray, want_params: bool = True):
    """Return (input gradient (b,h,w), flat parameter gradient or None)."""
    p = model.layers()
    b = dlogits.shape[0]
    grads = {}
    if model.arch is Architecture.LINEAR_SOFTMAX:
        (flat,) = cache
        if want_params:
            grads = {"W": dlogits.T @ flat, "b": dlogits.sum(0)}
        dx = dlogits @ p["W"]
    elif model.arch is Architecture.MLP:
        flat, z, a = cache
        da = dlogits @ p["W2"]
        dz = da * (z > 0)
        if want_params:
            grads = {"W1": dz.T @ flat, "b1": dz.sum(0), "W2": dlogits.T @ a, "b2": dlogits.sum(0)}
        dx = dz @ p["W1"]
    else:
        x, patches, z, arg, feat = cache
        dfeat = dlogits @ p["W"]
        hp, wp = arg.shape[2], arg.shape[3]
        dwin = np.zeros(arg.shape + (4,))
        np.put_along_axis(dwin, arg[..., None], dfeat.reshape(arg.shape)[..., None], axis=-1)
        dwin = dwin.reshape(b, CONV_MAPS, hp, wp, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        da = np.zeros_like(z)
        da[:, :, :2 * hp, :2 * wp] = dwin.reshape(b, CONV_MAPS, 2 * hp, 2 * wp)
        dz = da * (z > 0)
        if want_params:
            grads = {
                "K": np.einsum("bkhw,bhwij->kij", dz, patches),
                "kb": dz.sum(axis=(0, 2, 3)),
                "W": dlogits.T @ feat,
                "b": dlogits.sum(0),
            }
        ho, wo = z.shape[2], z.shape[3]
        dx = np.zeros_like(x)
        kern = p["K"]
        for i in range(CONV_SIZE):
            for j in range(CONV_SIZE):
                dx[:, i:i + ho, j:j + wo] += np.einsum("bkhw,k->bhw", dz, kern[:, i, j])
    dx = dx.reshape(b, model.height, model.width)
    if not want_params:
        return dx, None
    flat_grad = np.concatenate([grads[name].ravel() for name, _ in model.shapes])
    return dx, flat_grad


def forward_batch(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    """Raw logits for a stack of images shaped (b, height, width)."""
    return _forward(model, _check_batch(model, images))[0]


def forward(model: ClassifierModel, img: Image) -> np.ndarray:
    return forward_batch(model, img.pixels)[0]


def predict_batch(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(model, images), axis=1)


def predict(model: ClassifierModel, img: Image) -> int:
    # np.argmax returns the first maximal index: ties go to the lowest label
    return int(np.argmax(forward(model, img)))


def input_gradient(model: ClassifierModel, img: Image, out_weights) -> np.ndarray:
    """Gradient of ``sum_k out_weights[k] * f_k`` w.r.t. the pixels, flattened."""
    w = np.asarray(out_weights, dtype=np.float64).reshape(1, -1)
    if w.shape[1] != model.num_classes:
        raise DimensionMismatch(f"expected {model.num_classes} output weights, got {w.shape[1]}")
    x = _check_batch(model, img.pixels)
    _, cache = _forward(model, x)
    dx, _ = _backward(model, cache, w, want_params=False)
    return dx.reshape(-1)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def accuracy(model: ClassifierModel, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise EmptyDataset("cannot score an empty dataset")
    x, y = data.arrays()
    preds = np.concatenate([predict_batch(model, x[i:i + 512]) for i in range(0, len(y), 512)])
    return float(np.mean(preds == y))


def dataset_loss(model: ClassifierModel, data: LabeledDataset) -> float:
    x, y = data.arrays()
    total = 0.0
    for i in range(0, len(y), 512):
        loss, _ = softmax_cross_entropy(forward_batch(model, x[i:i + 512]), y[i:i + 512])
        total += loss * len(y[i:i + 512])
    return total / len(y)


def train_sgd(model: ClassifierModel, data: LabeledDataset, epochs: int, lr: float,
              batch_size: int = 32, seed: int = 0, lr_decay: float = 1.0,
              losses: Optional[list] = None) -> ClassifierModel:
    """Minibatch SGD on softmax cross-entropy, continuing from ``model``'s weights.

    Epoch ``e`` (from 0) uses step size ``lr * lr_decay**e``.  ``seed``
    drives the per-epoch shuffles only.  When ``losses`` is given, the
    full-dataset loss after every epoch is appended to it.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    x, y = data.arrays()
    if x.shape[1:] != (model.height, model.width):
        raise DimensionMismatch("dataset images do not match the model input size")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError("labels out of range for this model")
    rng = np.random.default_rng(seed)
    params = model.params.astype(np.float64)
    current = model
    for epoch in range(epochs):
        step = lr * lr_decay ** epoch
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            logits, cache = _forward(current, x[idx])
            _, dlogits = softmax_cross_entropy(logits, y[idx])
            _, grad = _backward(current, cache, dlogits)
            params = params - step * grad
            current = current.with_params(params.astype(np.float32))
            params = current.params.astype(np.float64)
        if losses is not None:
            losses.append(dataset_loss(current, data))
    return current


def warp_dataset(data: LabeledDataset, transforms: Sequence[Optional[Transform]]) -> LabeledDataset:
    if len(transforms) != len(data):
        raise ValueError("need one (possibly None) transform per image")
    images = [im if t is None else warp(im, t) for im, t in zip(data.images, transforms)]
    return LabeledDataset(images, data.labels)


def finetune_adversarial(model: ClassifierModel, data: LabeledDataset,
                         fool_transforms: Sequence[Optional[Transform]], epochs: int,
                         lr: float, lr_scale: float = 0.5, batch_size: int = 32,
                         seed: int = 0) -> ClassifierModel:
    """Continue SGD at ``lr * lr_scale`` on the images warped by their fooling
    transforms (``None`` keeps the original image), with the original labels."""
    if len(data) == 0:
        raise EmptyDataset("cannot fine-tune on an empty dataset")
    warped = warp_dataset(data, fool_transforms)
    return train_sgd(model, warped, epochs, lr * lr_scale, batch_size, seed)


# ---- weights file -------------------------------------------------------

def weights_bytes(model: ClassifierModel) -> bytes:
    header = _HEADER.pack(WEIGHTS_MAGIC, int(model.arch), model.num_classes,
                          model.width, model.height, model.param_count)
    return header + model.params.astype("<f4").tobytes()


def save_weights(model: ClassifierModel, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    payload = weights_bytes(model)
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        Path(sink).write_bytes(payload)


def load_weights(source: Union[str, os.PathLike, BinaryIO, bytes]) -> ClassifierModel:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("weights file shorter than its header")
    magic, tag, c, width, height, count = _HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"bad weights magic {magic!r}")
    try:
        arch = Architecture(tag)
    except ValueError:
        raise FormatError(f"unknown architecture tag {tag}") from None
    hidden = 0
    if arch is Architecture.MLP:
        # hidden width is implied by the parameter count
        per_unit = width * height + 1 + c
        if (count - c) % per_unit:
            raise FormatError("parameter count inconsistent with an MLP")
        hidden = (count - c) // per_unit
    try:
        expected = sum(int(np.prod(s)) for _, s in _shape_table(arch, c, width, height, hidden))
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    if count != expected:
        raise FormatError(f"header says {count} parameters, architecture needs {expected}")
    body = data[_HEADER.size:]
    if len(body) != 4 * count:
        raise FormatError(f"expected {4 * count} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f4").astype(np.float32)
    return ClassifierModel(arch, c, width, height, params, hidden)
