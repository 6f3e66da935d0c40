"""Small differentiable classifiers with exact input gradients.

Two architectures: "linear" (softmax regression) and "mlp1" (one ReLU hidden
layer). Weights are stored float32; forward and backward passes run in
float64 so finite-difference checks of the input gradient hold tightly.
Models are immutable after training; predict/loss/gradient are pure.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .images import Dataset, Image

ARCHITECTURES = ("linear", "mlp1")

MODEL_MAGIC = b"BFM1"


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class NonFiniteGradient(RuntimeError):
    """A gradient computation produced NaN or infinity."""


@dataclass(frozen=True)
class Model:
    architecture: str
    input_dims: tuple
    num_classes: int
    weights: MappingProxyType

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        frozen = {}
        for name, arr in dict(self.weights).items():
            arr = np.asarray(arr, dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite weights in {name!r}")
            arr.setflags(write=False)
            frozen[name] = arr
        expect = (
            {"w", "b"} if self.architecture == "linear" else {"w1", "b1", "w2", "b2"}
        )
        if set(frozen) != expect:
            raise ValueError(f"{self.architecture} model needs weights {sorted(expect)}")
        d = int(np.prod(self.input_dims))
        if self.architecture == "linear":
            if frozen["w"].shape != (d, self.num_classes) or frozen["b"].shape != (self.num_classes,):
                raise ValueError("linear weight shapes inconsistent with dims")
        else:
            hidden = frozen["w1"].shape[1]
            if (
                frozen["w1"].shape != (d, hidden)
                or frozen["b1"].shape != (hidden,)
                or frozen["w2"].shape != (hidden, self.num_classes)
                or frozen["b2"].shape != (self.num_classes,)
            ):
                raise ValueError("mlp1 weight shapes inconsistent with dims")
        object.__setattr__(self, "weights", MappingProxyType(frozen))

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_dims))

    @property
    def hidden_width(self) -> int:
        if self.architecture == "linear":
            return 0
        return self.weights["w1"].shape[1]

    @classmethod
    def zeros(cls, architecture: str, input_dims: tuple, num_classes: int, hidden: int = 64):
        d = int(np.prod(input_dims))
        if architecture == "linear":
            w = {"w": np.zeros((d, num_classes)), "b": np.zeros(num_classes)}
        else:
            w = {
                "w1": np.zeros((d, hidden)),
                "b1": np.zeros(hidden),
                "w2": np.zeros((hidden, num_classes)),
                "b2": np.zeros(num_classes),
            }
        return cls(architecture, tuple(input_dims), num_classes, w)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    l2_penalty: float = 0.0
    architecture: str = "mlp1"
    hidden: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")


@dataclass(frozen=True)
class TrainResult:
    model: Model
    train_accuracy: float
    epoch_losses: tuple = field(default_factory=tuple)


def _as_input(model: Model, x: Image) -> np.ndarray:
    if x.shape != tuple(model.input_dims):
        raise ValueError(f"input shape {x.shape} != model dims {tuple(model.input_dims)}")
    return x.data.reshape(-1).astype(np.float64)


def _weights64(model: Model) -> dict:
    return {k: v.astype(np.float64) for k, v in model.weights.items()}


def logits_batch(model: Model, X: np.ndarray) -> np.ndarray:
    """Logits for a batch of flattened float64 inputs, shape (n, d) -> (n, K)."""
    w = _weights64(model)
    if model.architecture == "linear":
        return X @ w["w"] + w["b"]
    hidden = np.maximum(X @ w["w1"] + w["b1"], 0.0)
    return hidden @ w["w2"] + w["b2"]


def logits(model: Model, x: Image) -> np.ndarray:
    return logits_batch(model, _as_input(model, x)[None, :])[0]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def predict(model: Model, x: Image) -> int:
    """Argmax class; ties resolve to the lowest class index."""
    return int(np.argmax(logits(model, x)))


def predict_batch(model: Model, images) -> np.ndarray:
    X = np.stack([_as_input(model, im) for im in images])
    return np.argmax(logits_batch(model, X), axis=1)


def loss(model: Model, x: Image, y: int) -> float:
    """Cross-entropy of softmax(logits) against class y, log-sum-exp stabilized."""
    if not 0 <= y < model.num_classes:
        raise ValueError(f"label {y} out of range for {model.num_classes} classes")
    return float(-_log_softmax(logits(model, x))[y])


def loss_and_input_gradient(model: Model, arr: np.ndarray, y: int):
    """Cross-entropy loss and its exact input gradient for a raw (H, W, C) array.

    Array-level twin of loss/input_gradient, used by the iterative descent
    loops. Computes in float64; the gradient comes back image-shaped.
    """
    if not 0 <= y < model.num_classes:
        raise ValueError(f"label {y} out of range for {model.num_classes} classes")
    xin = np.asarray(arr, dtype=np.float64).reshape(-1)
    if xin.size != model.input_size:
        raise ValueError(f"input size {xin.size} != model size {model.input_size}")
    w = _weights64(model)
    if model.architecture == "linear":
        z = xin @ w["w"] + w["b"]
        p = softmax(z)
        dz = p.copy()
        dz[y] -= 1.0
        grad = w["w"] @ dz
    else:
        pre = xin @ w["w1"] + w["b1"]
        hidden = np.maximum(pre, 0.0)
        z = hidden @ w["w2"] + w["b2"]
        p = softmax(z)
        dz = p.copy()
        dz[y] -= 1.0
        dhidden = w["w2"] @ dz
        dhidden[pre <= 0.0] = 0.0
        grad = w["w1"] @ dhidden
    ce = float(-_log_softmax(z)[y])
    return ce, grad.reshape(model.input_dims)


def input_gradient(model: Model, x: Image, y: int) -> np.ndarray:
    """Exact gradient of loss(model, x, y) with respect to every input element.

    Returned as a float64 array shaped like the image.
    """
    _as_input(model, x)  # shape check against the model
    return loss_and_input_gradient(model, x.data, y)[1]


def linear_margin_radius(model: Model, x: Image) -> tuple:
    """Predicted class and its certified sup-norm robustness radius.

    Only meaningful for the linear architecture, where a perturbation bounded
    by r in sup norm changes the logit gap (z_y - z_k) by at most
    r * ||w_y - w_k||_1. Returns (predicted_class, radius).
    """
    if model.architecture != "linear":
        raise ValueError("margin radius is only available for linear models")
    z = logits(model, x)
    y = int(np.argmax(z))
    w = model.weights["w"].astype(np.float64)
    radius = np.inf
    for k in range(model.num_classes):
        if k == y:
            continue
        l1 = np.abs(w[:, y] - w[:, k]).sum()
        gap = z[y] - z[k]
        radius = min(radius, gap / l1 if l1 > 0 else np.inf)
    return y, float(radius)


def features(model: Model, x) -> np.ndarray:
    """Penultimate-layer activations: hidden ReLU output for mlp1, logits for linear."""
    if isinstance(x, Image):
        xin = _as_input(model, x)
    else:
        xin = np.asarray(x, dtype=np.float64).reshape(-1)
    w = _weights64(model)
    if model.architecture == "linear":
        return xin @ w["w"] + w["b"]
    return np.maximum(xin @ w["w1"] + w["b1"], 0.0)


def feature_gap_and_gradient(model: Model, x: np.ndarray, target_features: np.ndarray):
    """Squared distance ||features(x) - target||^2 and its input gradient."""
    xin = np.asarray(x, dtype=np.float64).reshape(-1)
    w = _weights64(model)
    if model.architecture == "linear":
        phi = xin @ w["w"] + w["b"]
        resid = phi - target_features
        grad = w["w"] @ (2.0 * resid)
    else:
        pre = xin @ w["w1"] + w["b1"]
        phi = np.maximum(pre, 0.0)
        resid = phi - target_features
        dphi = 2.0 * resid
        dphi[pre <= 0.0] = 0.0
        grad = w["w1"] @ dphi
    return float(resid @ resid), grad.reshape(x.shape)


def _init_weights(cfg: TrainConfig, d: int, num_classes: int) -> dict:
    rng = np.random.default_rng(cfg.seed)
    if cfg.architecture == "linear":
        return {
            "w": (rng.standard_normal((d, num_classes)) * np.sqrt(1.0 / d)),
            "b": np.zeros(num_classes),
        }
    return {
        "w1": (rng.standard_normal((d, cfg.hidden)) * np.sqrt(2.0 / d)),
        "b1": np.zeros(cfg.hidden),
        "w2": (rng.standard_normal((cfg.hidden, num_classes)) * np.sqrt(1.0 / cfg.hidden)),
        "b2": np.zeros(num_classes),
    }


def train(data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Plain minibatch SGD, deterministic for a fixed seed.

    No momentum; one shuffling stream per run drawn from the seed. The L2
    penalty applies to weight matrices only. Raises TrainingDiverged if the
    loss stops being finite.
    """
    X = np.stack([s.image.data.reshape(-1).astype(np.float64) for s in data])
    y = np.array([s.label for s in data], dtype=np.int64)
    n, d = X.shape
    K = data.num_classes
    w = _init_weights(cfg, d, K)
    shuffle_rng = np.random.default_rng((cfg.seed, 1))
    onehot = np.eye(K)[y]
    epoch_losses = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb, ohb = X[idx], y[idx], onehot[idx]
            m = len(idx)
            if cfg.architecture == "linear":
                z = xb @ w["w"] + w["b"]
            else:
                pre = xb @ w["w1"] + w["b1"]
                hid = np.maximum(pre, 0.0)
                z = hid @ w["w2"] + w["b2"]
            logp = _log_softmax(z)
            batch_loss = float(-logp[np.arange(m), yb].mean())
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss {batch_loss}")
            epoch_loss += batch_loss * m
            dz = (np.exp(logp) - ohb) / m
            if cfg.architecture == "linear":
                gw = xb.T @ dz + cfg.l2_penalty * w["w"]
                w["w"] -= cfg.learning_rate * gw
                w["b"] -= cfg.learning_rate * dz.sum(axis=0)
            else:
                gw2 = hid.T @ dz + cfg.l2_penalty * w["w2"]
                dh = dz @ w["w2"].T
                dh[pre <= 0.0] = 0.0
                gw1 = xb.T @ dh + cfg.l2_penalty * w["w1"]
                w["w2"] -= cfg.learning_rate * gw2
                w["b2"] -= cfg.learning_rate * dz.sum(axis=0)
                w["w1"] -= cfg.learning_rate * gw1
                w["b1"] -= cfg.learning_rate * dh.sum(axis=0)
        epoch_losses.append(epoch_loss / n)
    model = Model(cfg.architecture, data.image_shape, K, w)
    acc = float((np.argmax(logits_batch(model, X), axis=1) == y).mean())
    return TrainResult(model, acc, tuple(epoch_losses))


# --- checkpoints ---

_ARCH_CODES = {"linear": 0, "mlp1": 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_CODES.items()}
_TENSOR_ORDER = {"linear": ("w", "b"), "mlp1": ("w1", "b1", "w2", "b2")}


def save_model(model: Model, path) -> None:
    h, w_, c = model.input_dims
    head = MODEL_MAGIC + struct.pack(
        "<BIIIII", _ARCH_CODES[model.architecture], h, w_, c, model.num_classes, model.hidden_width
    )
    body = b"".join(model.weights[n].astype("<f4").tobytes() for n in _TENSOR_ORDER[model.architecture])
    Path(path).write_bytes(head + body)


def load_model(path) -> Model:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"bad model magic {blob[:4]!r}")
    arch_code, h, w_, c, K, hidden = struct.unpack("<BIIIII", blob[4:25])
    if arch_code not in _ARCH_NAMES:
        raise ValueError(f"unknown architecture code {arch_code}")
    arch = _ARCH_NAMES[arch_code]
    d = h * w_ * c
    shapes = (
        {"w": (d, K), "b": (K,)}
        if arch == "linear"
        else {"w1": (d, hidden), "b1": (hidden,), "w2": (hidden, K), "b2": (K,)}
    )
    weights = {}
    offset = 25
    for name in _TENSOR_ORDER[arch]:
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise ValueError("model file truncated")
        weights[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        offset = end
    if offset != len(blob):
        raise ValueError("trailing bytes in model file")
    return Model(arch, (h, w_, c), K, weights)
