"""Realism network: a small conv/relu/maxpool/fc classifier whose output is the
pre-sigmoid log-odds that an image is a natural photo.

Tensors are NHWC. Training runs in float32; scoring, input gradients and
feature extraction run in float64 on the stored float32 weights.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .imgcore import ImageShapeError, read_image, resize_bilinear

log = logging.getLogger(__name__)

DEFAULT_ARCH = "in64x64x3|conv3-16|relu|pool2|conv3-32|relu|pool2|conv3-64|relu|pool2|fc128|relu|fc1"
WEIGHTS_MAGIC = b"RLNW1"
_DTYPE_F32 = 1

ShapeError = ImageShapeError


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # "conv" | "relu" | "pool" | "fc"
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Weights of the realism network. Treat as immutable."""

    arch: str
    layers: tuple[Layer, ...]
    _f64: list = field(default_factory=list, repr=False, compare=False)

    @property
    def fingerprint(self) -> str:
        return self.arch

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return parse_arch(self.arch)[0]

    @property
    def feature_dim(self) -> int:
        fcs = [l for l in self.layers if l.kind == "fc"]
        return int(fcs[-1].weight.shape[0])

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            if layer.weight is not None:
                out[f"{layer.name}.weight"] = layer.weight
                out[f"{layer.name}.bias"] = layer.bias
        return out

    def weights64(self) -> list[tuple[np.ndarray | None, np.ndarray | None]]:
        if not self._f64:
            for layer in self.layers:
                if layer.weight is None:
                    self._f64.append((None, None))
                else:
                    self._f64.append((layer.weight.astype(np.float64), layer.bias.astype(np.float64)))
        return self._f64

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "NetworkParams":
        layers = []
        for layer in self.layers:
            if layer.weight is None:
                layers.append(layer)
            else:
                layers.append(replace(layer,
                                      weight=np.array(tensors[f"{layer.name}.weight"], dtype=np.float32),
                                      bias=np.array(tensors[f"{layer.name}.bias"], dtype=np.float32)))
        return NetworkParams(self.arch, tuple(layers))


def parse_arch(arch: str):
    """Split an architecture string into the input shape and layer list.

    Each layer is ``(name, kind, out_channels_or_units)``; weight shapes are
    implied by the running shape.
    """
    parts = arch.split("|")
    if not parts or not parts[0].startswith("in"):
        raise ValueError(f"bad architecture string {arch!r}")
    h, w, c = (int(v) for v in parts[0][2:].split("x"))
    layers = []
    counts = {"conv": 0, "fc": 0, "relu": 0, "pool": 0}
    for tok in parts[1:]:
        if tok.startswith("conv3-"):
            kind, size = "conv", int(tok[6:])
        elif tok.startswith("fc"):
            kind, size = "fc", int(tok[2:])
        elif tok == "relu":
            kind, size = "relu", 0
        elif tok == "pool2":
            kind, size = "pool", 0
        else:
            raise ValueError(f"unknown layer token {tok!r}")
        counts[kind] += 1
        layers.append((f"{kind}{counts[kind]}", kind, size))
    if not layers or layers[-1][1] != "fc" or layers[-1][2] != 1:
        raise ValueError("architecture must end in a single-unit fc layer")
    return (h, w, c), layers


def _weight_shapes(arch: str):
    (h, w, c), layers = parse_arch(arch)
    shapes = []
    flat = None
    for name, kind, size in layers:
        if kind == "conv":
            if flat is not None:
                raise ValueError("conv after fc is not supported")
            shapes.append((name, kind, (9 * c, size), 9 * c))
            c = size
        elif kind == "pool":
            if h % 2 or w % 2:
                raise ValueError("pool2 needs even spatial size")
            h, w = h // 2, w // 2
            shapes.append((name, kind, None, 0))
        elif kind == "relu":
            shapes.append((name, kind, None, 0))
        else:
            fan_in = flat if flat is not None else h * w * c
            shapes.append((name, kind, (fan_in, size), fan_in))
            flat = size
    return shapes


def init_params(arch: str = DEFAULT_ARCH, seed: int = 0) -> NetworkParams:
    """He-scaled Gaussian weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for name, kind, shape, fan_in in _weight_shapes(arch):
        if shape is None:
            layers.append(Layer(name, kind))
        else:
            wgt = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
            layers.append(Layer(name, kind, wgt.astype(np.float32), np.zeros(shape[1], np.float32)))
    return NetworkParams(arch, tuple(layers))


def zero_params(arch: str = DEFAULT_ARCH) -> NetworkParams:
    layers = []
    for name, kind, shape, _ in _weight_shapes(arch):
        if shape is None:
            layers.append(Layer(name, kind))
        else:
            layers.append(Layer(name, kind, np.zeros(shape, np.float32), np.zeros(shape[1], np.float32)))
    return NetworkParams(arch, tuple(layers))


# ---------------------------------------------------------------- forward / backward

def _forward(layers: Sequence[Layer], weights, x: np.ndarray, keep: bool, stop_before_last: bool = False):
    caches = []
    n_layers = len(layers) - 1 if stop_before_last else len(layers)
    for i in range(n_layers):
        layer = layers[i]
        wgt, b = weights[i]
        if layer.kind == "conv":
            n, h, w, c = x.shape
            xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
            cols = _accel.im2col3(xp, h, w)
            y = (cols @ wgt + b).reshape(n, h, w, wgt.shape[1])
            caches.append((cols, x.shape) if keep else None)
        elif layer.kind == "relu":
            y = np.maximum(x, 0)
            caches.append(x > 0 if keep else None)
        elif layer.kind == "pool":
            y, arg = _accel.maxpool2(x)
            caches.append(arg if keep else None)
        else:
            shape = x.shape
            x2 = x.reshape(shape[0], -1)
            if x2.shape[1] != wgt.shape[0]:
                raise ShapeError("fc input width mismatch", x2.shape, wgt.shape)
            y = x2 @ wgt + b
            caches.append((x2, shape) if keep else None)
        x = y
    return x, caches


def _backward(layers: Sequence[Layer], weights, caches, dy: np.ndarray, need_input: bool,
              need_params: bool = True):
    grads: dict[str, np.ndarray] = {}
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        wgt, _ = weights[i]
        cache = caches[i]
        last = i == 0 and not need_input
        if layer.kind == "conv":
            cols, xshape = cache
            n, h, w, c = xshape
            dy2 = dy.reshape(-1, wgt.shape[1])
            if need_params:
                grads[f"{layer.name}.weight"] = cols.T @ dy2
                grads[f"{layer.name}.bias"] = dy2.sum(axis=0)
            if last:
                return grads, None
            dy = _accel.col2im3(dy2 @ wgt.T, n, h, w, c)
        elif layer.kind == "relu":
            dy = dy * cache
        elif layer.kind == "pool":
            dy = _accel.maxpool2_back(dy, cache)
        else:
            x2, shape = cache
            if need_params:
                grads[f"{layer.name}.weight"] = x2.T @ dy
                grads[f"{layer.name}.bias"] = dy.sum(axis=0)
            if last:
                return grads, None
            dy = (dy @ wgt.T).reshape(shape)
    return grads, dy


def _check_input(params: NetworkParams, images: np.ndarray) -> None:
    if images.shape[1:] != params.input_shape:
        raise ShapeError("input does not match network input", images.shape[1:], params.input_shape)


def preprocess(image: np.ndarray, params: NetworkParams | None = None) -> np.ndarray:
    """Bilinear resize to the network's input resolution."""
    h, w, _ = params.input_shape if params is not None else parse_arch(DEFAULT_ARCH)[0]
    return resize_bilinear(image, h, w)


def forward_scores(params: NetworkParams, images: np.ndarray, batch: int = 64) -> np.ndarray:
    """Log-odds for a batch ``(N, H, W, 3)`` of preprocessed images."""
    images = np.asarray(images, dtype=np.float64)
    _check_input(params, images)
    weights = params.weights64()
    out = [_forward(params.layers, weights, images[i:i + batch], keep=False)[0][:, 0]
           for i in range(0, len(images), batch)]
    return np.concatenate(out) if out else np.zeros(0)


def forward_score(params: NetworkParams, image: np.ndarray) -> float:
    """Realism score of one preprocessed image: log-odds of "natural"."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError("expected one (H, W, 3) image", image.shape)
    return float(forward_scores(params, image[None])[0])


def score_image(params: NetworkParams, image: np.ndarray) -> float:
    """:func:`forward_score` after resizing to the input resolution."""
    return forward_score(params, preprocess(image, params))


def score_images(params: NetworkParams, images: Iterable[np.ndarray]) -> np.ndarray:
    return forward_scores(params, np.stack([preprocess(im, params) for im in images]))


def score_and_input_gradient(params: NetworkParams, image: np.ndarray) -> tuple[float, np.ndarray]:
    """Score and its input gradient from a single forward pass."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError("expected one (H, W, 3) image", image.shape)
    x = image[None]
    _check_input(params, x)
    weights = params.weights64()
    out, caches = _forward(params.layers, weights, x, keep=True)
    _, dx = _backward(params.layers, weights, caches, np.ones((1, 1)), need_input=True, need_params=False)
    return float(out[0, 0]), dx[0]


def input_gradient(params: NetworkParams, image: np.ndarray) -> np.ndarray:
    """Gradient of :func:`forward_score` with respect to every input value."""
    return score_and_input_gradient(params, image)[1]


def extract_features_batch(params: NetworkParams, images: np.ndarray, batch: int = 64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    _check_input(params, images)
    weights = params.weights64()
    out = []
    for i in range(0, len(images), batch):
        act, _ = _forward(params.layers, weights, images[i:i + batch], keep=False, stop_before_last=True)
        out.append(act.reshape(len(act), -1))
    return np.concatenate(out)


def extract_features(params: NetworkParams, image: np.ndarray) -> np.ndarray:
    """Penultimate-layer activations (after its relu) of one preprocessed image."""
    image = np.asarray(image, dtype=np.float64)
    return extract_features_batch(params, image[None])[0]


def param_gradients(params: NetworkParams, images: np.ndarray, labels: np.ndarray,
                    dtype=np.float64) -> tuple[float, dict[str, np.ndarray]]:
    """Mean logistic loss and its gradient for one batch."""
    weights = params.weights64() if dtype == np.float64 else [
        (None, None) if l.weight is None else (l.weight, l.bias) for l in params.layers]
    x = np.asarray(images, dtype=dtype)
    _check_input(params, x)
    z, caches = _forward(params.layers, weights, x, keep=True)
    loss, dz = _logistic(z[:, 0].astype(np.float64), np.asarray(labels, dtype=np.float64))
    grads, _ = _backward(params.layers, weights, caches, dz[:, None].astype(dtype), need_input=False)
    return loss, grads


def _logistic(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    # y = 1 for natural; loss = softplus(-z) if y else softplus(z)
    s = np.where(y > 0.5, -z, z)
    loss = np.logaddexp(0.0, s)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(loss.mean()), (sig - y) / len(z)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    decay_factor: float = 0.1
    decay_step: int = 3000
    momentum: float = 0.9
    batch_size: int = 32
    max_iterations: int = 6000
    head_lr_mult: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0 or self.decay_step < 1:
            raise ValueError("bad iteration schedule")

    def rate_at(self, iteration: int) -> float:
        return self.learning_rate * self.decay_factor ** (iteration // self.decay_step)


PRESETS: dict[str, TrainConfig] = {
    "desk": TrainConfig(),
    "smoke": TrainConfig(max_iterations=500),
    "paper-vgg": TrainConfig(learning_rate=0.0001, decay_factor=0.1, decay_step=10000, momentum=0.9,
                             batch_size=50, max_iterations=25000, head_lr_mult=10.0),
}


def load_preset(name_or_path: str, **overrides) -> TrainConfig:
    """A named preset, or a file of ``key=value`` lines / a JSON object."""
    if name_or_path in PRESETS:
        cfg = PRESETS[name_or_path]
    else:
        text = Path(name_or_path).read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if line:
                    key, _, value = line.partition("=")
                    raw[key.strip()] = value.strip()
        base = PRESETS[raw.pop("base", "desk")]
        types = {k: type(v) for k, v in asdict(base).items()}
        unknown = set(raw) - set(types)
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        cfg = replace(base, **{k: types[k](v) for k, v in raw.items()})
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class TrainResult:
    params: NetworkParams
    losses: list[float]


def load_manifest_images(records, base_dir, params: NetworkParams | None = None):
    """Read manifest records into a preprocessed image stack and 0/1 labels."""
    base_dir = Path(base_dir)
    imgs, labels = [], []
    for rec in records:
        imgs.append(preprocess(read_image(base_dir / rec["path"]), params).astype(np.float32))
        labels.append(1.0 if rec["label"] == "natural" else 0.0)
    return np.stack(imgs), np.asarray(labels)


def train(params0: NetworkParams, manifest, cfg: TrainConfig, base_dir=None) -> TrainResult:
    """Train on a manifest (``DatasetManifest`` or list of record dicts)."""
    records = getattr(manifest, "records", manifest)
    base_dir = base_dir if base_dir is not None else getattr(manifest, "base_dir", ".")
    if not records:
        raise ValueError("empty manifest")
    images, labels = load_manifest_images(records, base_dir, params0)
    return train_arrays(params0, images, labels, cfg)


def train_arrays(params0: NetworkParams, images: np.ndarray, labels: np.ndarray,
                 cfg: TrainConfig, log_every: int = 500) -> TrainResult:
    """SGD with momentum on the logistic loss; label 1 = natural.

    Deterministic in (params0, sample order, cfg.seed).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain both classes")
    if cfg.max_iterations == 0:
        return TrainResult(params0, [])
    images = np.asarray(images, dtype=np.float32)
    _check_input(params0, images)

    tensors = {k: v.astype(np.float32).copy() for k, v in params0.tensors().items()}
    velocity = {k: np.zeros_like(v) for k, v in tensors.items()}
    head = [l.name for l in params0.layers if l.kind == "fc"][-1]
    rng = np.random.default_rng(cfg.seed)
    order = np.empty(0, dtype=np.int64)
    losses = []
    n = len(images)
    for it in range(cfg.max_iterations):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        cur = params0.with_tensors(tensors)
        loss, grads = param_gradients(cur, images[idx], labels[idx], dtype=np.float32)
        losses.append(loss)
        rate = cfg.rate_at(it)
        for key, g in grads.items():
            lr = rate * (cfg.head_lr_mult if key.startswith(head + ".") else 1.0)
            v = velocity[key]
            v *= cfg.momentum
            v -= np.float32(lr) * g.astype(np.float32)
            tensors[key] += v
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d  loss %.4f  lr %.2g", it + 1, float(np.mean(losses[-log_every:])), rate)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training diverged at iteration {it}")
    return TrainResult(params0.with_tensors(tensors), losses)


# ---------------------------------------------------------------- serialization

def save_params(params: NetworkParams, path) -> None:
    """Write the RLNW1 weights file."""
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        arch = params.fingerprint.encode("utf-8")
        fh.write(struct.pack("<I", len(arch)) + arch)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)) + raw_name)
            fh.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if not data.startswith(WEIGHTS_MAGIC):
        raise ValueError(f"{path}: not an RLNW1 weights file")
    pos = len(WEIGHTS_MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (alen,) = take("<I")
    arch = data[pos:pos + alen].decode("utf-8")
    pos += alen
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, rank = take("<BB")
        if code != _DTYPE_F32:
            raise ValueError(f"{path}: unsupported dtype code {code}")
        dims = take(f"<{rank}I")
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    template = zero_params(arch)
    expected = {k: v.shape for k, v in template.tensors().items()}
    got = {k: v.shape for k, v in tensors.items()}
    if expected != got:
        raise ValueError(f"{path}: tensors do not match architecture {arch!r}")
    return template.with_tensors(tensors)


# ---------------------------------------------------------------- linear head

@dataclass(frozen=True)
class LinearHead:
    """Hinge-loss linear scorer on standardized features."""

    weight: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def decision_function(self, features) -> np.ndarray:
        x = (np.atleast_2d(np.asarray(features, dtype=np.float64)) - self.mean) / self.scale
        norm = float(np.linalg.norm(self.weight)) or 1.0
        return (x @ self.weight + self.bias) / norm

    def predict(self, features) -> np.ndarray:
        return (self.decision_function(features) > 0).astype(int)


def fit_linear_head(features, labels, C: float = 1.0, seed: int = 0, iterations: int = 2000) -> LinearHead:
    """L2-regularized linear SVM by full-batch sub-gradient descent.

    Minimizes ``||w||^2 / (2C) + mean(hinge)`` with an unregularized bias and
    returns the best iterate seen. ``labels`` are 1 (realistic) / 0.
    """
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    x = np.asarray(features, dtype=np.float64)
    y01 = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y01):
        raise ValueError("features must be (n, d) with one label per row")
    if len(np.unique(y01)) < 2:
        raise ValueError("linear head needs both classes")
    y = np.where(y01 > 0, 1.0, -1.0)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    lam = 1.0 / C
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(x.shape[1]) * 1e-6
    b = 0.0
    radius = 1.0 / math.sqrt(lam)

    def objective(w_, b_):
        margin = y * (xs @ w_ + b_)
        return 0.5 * lam * float(w_ @ w_) + float(np.maximum(0.0, 1.0 - margin).mean())

    best = (objective(w, b), w.copy(), b)
    for t in range(1, iterations + 1):
        margin = y * (xs @ w + b)
        active = margin < 1.0
        gw = lam * w - (y[active, None] * xs[active]).sum(axis=0) / len(y)
        gb = -y[active].sum() / len(y)
        step = 1.0 / (lam * (t + 10))
        w = w - step * gw
        b = b - step * gb
        nrm = float(np.linalg.norm(w))
        if nrm > radius:
            w *= radius / nrm
        obj = objective(w, b)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    return LinearHead(best[1], float(best[2]), mean, scale)
