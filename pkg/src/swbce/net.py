"""A three-layer per-pixel edge predictor with hand-written backprop.

Layers: 3x3 conv (1 -> 8) + ReLU, 3x3 conv (8 -> 8) + ReLU, 1x1 conv
(8 -> 1) + sigmoid.  3x3 convolutions pad by edge replication so the output
has the input's size.  Everything is float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, InvalidSpec, IoFailure, MalformedHeader, NonFiniteLoss, TruncatedData
from .image_io import list_pgm_stems, read_binary, read_json, read_soft, write_csv, write_soft
from .losses import LossConfig, Normalization, get_loss
from .maps import as_soft_map
from .synth import make_rng

HIDDEN = 8
PARAM_SHAPES = {
    "conv1.weight": (HIDDEN, 1, 3, 3),
    "conv1.bias": (HIDDEN,),
    "conv2.weight": (HIDDEN, HIDDEN, 3, 3),
    "conv2.bias": (HIDDEN,),
    "conv3.weight": (1, HIDDEN, 1, 1),
    "conv3.bias": (1,),
}
TRAINABLE_LOSSES = ("wbce", "swbce", "pred")


def init_params(seed: int) -> dict[str, np.ndarray]:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = make_rng(seed, 0)
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith("weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_params() -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}


def _im2col3(x):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    cols = np.stack([xp[:, dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)], axis=1)
    return cols.reshape(c * 9, h * w)


def _col2im3(dcols, shape):
    c, h, w = shape
    d = dcols.reshape(c, 9, h, w)
    g = np.zeros((c, h + 2, w + 2))
    for k in range(9):
        dy, dx = divmod(k, 3)
        g[:, dy : dy + h, dx : dx + w] += d[:, k]
    # replicate padding: border cells feed back into the outermost row / column
    g[:, :, 1] += g[:, :, 0]
    g[:, :, -2] += g[:, :, -1]
    g = g[:, :, 1:-1]
    g[:, 1, :] += g[:, 0, :]
    g[:, -2, :] += g[:, -1, :]
    return g[:, 1:-1, :]


def _forward(params, image):
    h, w = image.shape
    x0 = image[None]
    cols1 = _im2col3(x0)
    z1 = params["conv1.weight"].reshape(HIDDEN, -1) @ cols1 + params["conv1.bias"][:, None]
    a1 = np.maximum(z1, 0.0)
    cols2 = _im2col3(a1.reshape(HIDDEN, h, w))
    z2 = params["conv2.weight"].reshape(HIDDEN, -1) @ cols2 + params["conv2.bias"][:, None]
    a2 = np.maximum(z2, 0.0)
    z3 = params["conv3.weight"].reshape(1, HIDDEN) @ a2 + params["conv3.bias"][:, None]
    out = expit(z3).reshape(h, w)
    return out, (cols1, z1, cols2, z2, a2, out)


def forward(params, image) -> np.ndarray:
    image = as_soft_map(image, "image")
    return _forward(params, image)[0]


def backward(params, image, loss_grad) -> dict[str, np.ndarray]:
    """Gradients of ``sum(loss_grad * forward(image))`` w.r.t. every parameter."""
    image = as_soft_map(image, "image")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != image.shape:
        raise DimensionMismatch(f"loss gradient {loss_grad.shape} vs output {image.shape}")
    return _backward(params, _forward(params, image)[1], loss_grad)


def _backward(params, cache, loss_grad):
    cols1, z1, cols2, z2, a2, out = cache
    h, w = out.shape
    dz3 = (loss_grad * out * (1.0 - out)).reshape(1, h * w)
    grads = {
        "conv3.weight": (dz3 @ a2.T).reshape(PARAM_SHAPES["conv3.weight"]),
        "conv3.bias": dz3.sum(axis=1),
    }
    da2 = params["conv3.weight"].reshape(1, HIDDEN).T @ dz3
    dz2 = da2 * (z2 > 0)
    grads["conv2.weight"] = (dz2 @ cols2.T).reshape(PARAM_SHAPES["conv2.weight"])
    grads["conv2.bias"] = dz2.sum(axis=1)
    dcols2 = params["conv2.weight"].reshape(HIDDEN, -1).T @ dz2
    da1 = _col2im3(dcols2, (HIDDEN, h, w)).reshape(HIDDEN, h * w)
    dz1 = da1 * (z1 > 0)
    grads["conv1.weight"] = (dz1 @ cols1.T).reshape(PARAM_SHAPES["conv1.weight"])
    grads["conv1.bias"] = dz1.sum(axis=1)
    return {name: grads[name] for name in PARAM_SHAPES}


# -- optimisation -------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls):
        return cls(zero_params(), zero_params(), 0)


def adam_step(params, grads, state: AdamState, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with decoupled weight decay, in place."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        params[name] -= lr * update + lr * weight_decay * params[name]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-8
    epochs: int = 50
    batch_size: int = 8
    crop: tuple[int, int] | None = None
    seed: int = 0
    loss: str = "swbce"
    loss_config: LossConfig = LossConfig()

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidSpec("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidSpec("batch_size must be >= 1")
        if self.loss not in TRAINABLE_LOSSES:
            raise InvalidSpec(f"loss must be one of {TRAINABLE_LOSSES}")
        if self.crop is not None:
            object.__setattr__(self, "crop", tuple(int(v) for v in self.crop))

    def to_json(self) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop) if self.crop else None
        lc = self.loss_config
        d["loss_config"] = {
            "lambda_label": lc.lambda_label,
            "lambda_pred": lc.lambda_pred,
            "balance_b": lc.balance_b,
            "clamp_eps": lc.clamp_eps,
            "grad_mode": lc.grad_mode.value,
            "normalization": Normalization.PER_PIXEL_MEAN.value,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss_config"] = LossConfig(**d["loss_config"])
        d["crop"] = tuple(d["crop"]) if d.get("crop") else None
        return cls(**d)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    history: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)


# -- checkpoint file ----------------------------------------------------------
#
# little-endian layout:
#   8s   magic b"SWBCECKP"
#   u32  format version (1)
#   u32  completed epochs
#   u64  adam step count
#   u32  config JSON byte length, then that many UTF-8 bytes
#   u32  tensor count T
#   T x [u16 name length, name bytes, u32 ndim, ndim x u32 dims]
#   u32  history length
#   f64  parameters (table order), then Adam first moments, then second
#        moments, then the history values

MAGIC = b"SWBCECKP"
VERSION = 1


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<IIQ", VERSION, ckpt.epoch, ckpt.adam.step)]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(PARAM_SHAPES))]
    for name, shape in PARAM_SHAPES.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack(f"<I{len(shape)}I", len(shape), *shape)]
    parts.append(struct.pack("<I", len(ckpt.history)))
    for group in (ckpt.params, ckpt.adam.m, ckpt.adam.v):
        for name in PARAM_SHAPES:
            parts.append(np.ascontiguousarray(group[name], dtype="<f8").tobytes())
    parts.append(np.asarray(ckpt.history, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Checkpoint:
    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise TruncatedData("checkpoint ends early")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    def take_bytes(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedData("checkpoint ends early")
        out = data[pos : pos + n]
        pos += n
        return out

    pos = 0
    if take_bytes(8) != MAGIC:
        raise MalformedHeader("not a checkpoint file")
    version, epoch, step = take("<IIQ")
    if version != VERSION:
        raise MalformedHeader(f"unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = json.loads(take_bytes(cfg_len).decode("utf-8"))
    (n_tensors,) = take("<I")
    table = []
    for _ in range(n_tensors):
        (name_len,) = take("<H")
        name = take_bytes(name_len).decode("utf-8")
        (ndim,) = take("<I")
        table.append((name, take(f"<{ndim}I")))
    if dict(table) != PARAM_SHAPES:
        raise MalformedHeader("checkpoint tensors do not match this network")
    (hist_len,) = take("<I")
    groups = []
    for _ in range(3):
        group = {}
        for name, shape in table:
            count = int(np.prod(shape))
            group[name] = np.frombuffer(take_bytes(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        groups.append(group)
    history = np.frombuffer(take_bytes(8 * hist_len), dtype="<f8").tolist()
    return Checkpoint(groups[0], AdamState(groups[1], groups[2], step), epoch, history, config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(encode_checkpoint(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_checkpoint(data)


def write_history(ckpt: Checkpoint, path) -> None:
    rows = [(i + 1, f"{v:.10g}") for i, v in enumerate(ckpt.history)]
    write_csv(("epoch", "mean_loss"), rows, path)


# -- training -------------------------------------------------------------------


def load_split(data_dir, split="train"):
    data_dir = Path(data_dir)
    manifest = read_json(data_dir / "manifest.json")
    entries = manifest.get(split)
    if not entries:
        raise IoFailure(f"{data_dir}/manifest.json has no {split!r} entries")
    images = [read_soft(data_dir / e["image"]) for e in entries]
    edges = [read_binary(data_dir / e["edges"]) for e in entries]
    return [e["id"] for e in entries], images, edges


def _crop(rng, image, edges, crop):
    if crop is None:
        return image, edges
    ch, cw = crop
    h, w = image.shape
    if ch > h or cw > w:
        raise InvalidSpec(f"crop {crop} larger than image {image.shape}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return image[top : top + ch, left : left + cw], edges[top : top + ch, left : left + cw]


def sample_loss_and_grads(params, image, edges, loss_fn, loss_cfg):
    with np.errstate(over="ignore", invalid="ignore"):
        out, cache = _forward(params, as_soft_map(image, "image"))
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss("network output became non-finite")
    res = loss_fn(out, edges, loss_cfg)
    with np.errstate(over="ignore", invalid="ignore"):
        return res.value, _backward(params, cache, res.gradient)


def train_arrays(
    images,
    edges,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Mini-batch Adam over in-memory samples.

    Batch order and crops for epoch ``e`` come from the stream
    ``(seed, 1, e)``, so resuming from a checkpoint continues exactly as an
    uninterrupted run would.
    """
    loss_fn = get_loss(cfg.loss)
    loss_cfg = LossConfig(**cfg.to_json()["loss_config"])
    if resume is None:
        ckpt = Checkpoint(init_params(cfg.seed), AdamState.zeros(), 0, [], cfg.to_json())
    else:
        ckpt = resume
        ckpt.config = cfg.to_json()
    n = len(images)
    for epoch in range(ckpt.epoch, cfg.epochs):
        rng = make_rng(cfg.seed, 1, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}
            for idx in batch:
                img, edg = _crop(rng, images[idx], edges[idx], cfg.crop)
                try:
                    value, grads = sample_loss_and_grads(ckpt.params, img, edg, loss_fn, loss_cfg)
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(f"{exc} at epoch {epoch + 1}, sample {idx}") from None
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"non-finite loss {value} at epoch {epoch + 1}, sample {idx}")
                losses.append(value)
                for name in total:
                    total[name] += grads[name]
            for name in total:
                total[name] /= len(batch)
            # blow-ups surface as NonFiniteLoss on the next forward pass
            with np.errstate(over="ignore", invalid="ignore"):
                adam_step(ckpt.params, total, ckpt.adam, cfg.learning_rate, cfg.weight_decay)
        mean_loss = float(np.mean(losses))
        ckpt.history.append(mean_loss)
        ckpt.epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(ckpt.epoch, mean_loss)
    return ckpt


def train(data_dir, cfg: TrainConfig, resume: Checkpoint | None = None, on_epoch=None) -> Checkpoint:
    _, images, edges = load_split(data_dir, "train")
    return train_arrays(images, edges, cfg, resume, on_epoch)


def predict_dir(ckpt: Checkpoint, images_dir, out_dir) -> list[Path]:
    """Write one 16-bit PGM prediction per ``*.pgm`` in ``images_dir``."""
    written = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stem, path in list_pgm_stems(images_dir).items():
        pred = forward(ckpt.params, read_soft(path))
        target = out_dir / f"{stem}.pgm"
        write_soft(pred, target, maxval=65535)
        written.append(target)
    return written
