"""A compact per-voxel segmentation model with hand-derived gradients.

Each voxel is classified independently from an 8-channel input: the four
modality intensities plus four availability bits (absent modalities are
zero-filled and their bit cleared). One tanh hidden layer feeds a linear
4-class head; classes 0..3 correspond to labels 0, 1, 2, 4. Parameters are
float64 so analytic gradients can be checked against central differences to
tight tolerance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .volume import LabelVolume, MultiModalVolume

N_CLASSES = 4
INPUT_CHANNELS = 8  # 4 intensities + 4 availability bits
DEFAULT_HIDDEN = 16

CLASS_LABELS = np.array([0, 1, 2, 4], dtype=np.uint8)
# label value -> class index (slot 3 unused)
_LABEL_TO_CLASS = np.array([0, 1, 2, 0, 3], dtype=np.int64)

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(eq=False)
class ToyModel:
    w1: np.ndarray  # (hidden, 8)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (4, hidden)
    b2: np.ndarray  # (4,)

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"parameter {name} contains NaN or Inf")
            setattr(self, name, arr)
        h = self.w1.shape[0]
        if self.w1.shape != (h, INPUT_CHANNELS) or self.b1.shape != (h,):
            raise ValueError(f"bad hidden shapes: w1 {self.w1.shape}, b1 {self.b1.shape}")
        if self.w2.shape != (N_CLASSES, h) or self.b2.shape != (N_CLASSES,):
            raise ValueError(f"bad head shapes: w2 {self.w2.shape}, b2 {self.b2.shape}")

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @staticmethod
    def init(hidden: int = DEFAULT_HIDDEN, rng: np.random.Generator | None = None) -> "ToyModel":
        if hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {hidden}")
        rng = np.random.default_rng(0) if rng is None else rng
        return ToyModel(
            w1=rng.normal(0.0, 1.0 / np.sqrt(INPUT_CHANNELS), (hidden, INPUT_CHANNELS)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (N_CLASSES, hidden)),
            b2=np.zeros(N_CLASSES),
        )

    def copy(self) -> "ToyModel":
        return ToyModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def digest(self) -> str:
        """SHA-256 over the little-endian parameter bytes, for bit-level
        snapshot comparisons."""
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes())
        return h.hexdigest()

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write ``<path>`` as raw little-endian float64 blobs plus a JSON
        descriptor at ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = b"".join(
            np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes()
            for name in PARAM_NAMES
        )
        path.write_bytes(blob)
        descriptor = {
            "format": "toymodel-v1",
            "dtype": "<f8",
            "hidden": self.hidden,
            "tensors": [
                {"name": name, "shape": list(getattr(self, name).shape)}
                for name in PARAM_NAMES
            ],
        }
        Path(str(path) + ".json").write_text(json.dumps(descriptor, sort_keys=True, indent=2))

    @staticmethod
    def load(path: str | Path) -> "ToyModel":
        path = Path(path)
        descriptor = json.loads(Path(str(path) + ".json").read_text())
        if descriptor.get("format") != "toymodel-v1":
            raise ValueError(f"unknown checkpoint format {descriptor.get('format')!r}")
        blob = path.read_bytes()
        tensors = {}
        offset = 0
        for spec in descriptor["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            tensors[spec["name"]] = arr.reshape(shape).copy()
            offset += count * 8
        return ToyModel(**tensors)


# ---------------------------------------------------------------------------
# Input encoding


def encode_inputs(image: MultiModalVolume) -> np.ndarray:
    """Flatten a modality bundle to an (n_voxels, 8) float64 matrix."""
    n = int(np.prod(image.dims))
    out = np.zeros((n, INPUT_CHANNELS), dtype=np.float64)
    for i, vol in image.present():
        out[:, i] = vol.data.reshape(-1)
        out[:, 4 + i] = 1.0
    return out


def drop_encoded(encoded: np.ndarray, slot: int) -> np.ndarray:
    """Clear one modality's intensity channel and availability bit."""
    out = encoded.copy()
    out[:, slot] = 0.0
    out[:, 4 + slot] = 0.0
    return out


def encode_labels(labels: LabelVolume) -> np.ndarray:
    """Flatten labels to class indices 0..3."""
    return _LABEL_TO_CLASS[labels.data.reshape(-1)]


def class_to_labels(classes: np.ndarray, dims: tuple[int, int, int]) -> LabelVolume:
    return LabelVolume(CLASS_LABELS[classes.reshape(dims)])


# ---------------------------------------------------------------------------
# Forward / losses / backward


def forward(model: ToyModel, inputs: MultiModalVolume | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel forward pass.

    Returns (features, scores): features are the tanh hidden activations
    (n, hidden), scores the raw class logits (n, 4).
    """
    x = inputs if isinstance(inputs, np.ndarray) else encode_inputs(inputs)
    features = np.tanh(x @ model.w1.T + model.b1)
    scores = features @ model.w2.T + model.b2
    return features, scores


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def seg_loss(scores: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-voxel cross-entropy and its gradient w.r.t. the scores."""
    if scores.shape[0] != classes.shape[0]:
        raise DimensionMismatch(f"{scores.shape[0]} score rows vs {classes.shape[0]} labels")
    n = scores.shape[0]
    p = softmax(scores)
    idx = np.arange(n)
    loss = float(-np.log(p[idx, classes]).mean())
    grad = p
    grad[idx, classes] -= 1.0
    grad /= n
    return loss, grad


def soft_dice_loss(
    scores: np.ndarray, classes: np.ndarray, smooth: float = 1.0
) -> tuple[float, np.ndarray]:
    """1 - mean per-class soft Dice over softmax probabilities (alternative
    segmentation loss; cross-entropy is the default)."""
    if scores.shape[0] != classes.shape[0]:
        raise DimensionMismatch(f"{scores.shape[0]} score rows vs {classes.shape[0]} labels")
    n = scores.shape[0]
    p = softmax(scores)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), classes] = 1.0
    num = 2.0 * (p * onehot).sum(axis=0) + smooth
    den = p.sum(axis=0) + onehot.sum(axis=0) + smooth
    loss = float(1.0 - (num / den).mean())
    # d loss / d p, then back through softmax
    dp = -(2.0 * onehot * den - num) / (den * den) / N_CLASSES
    inner = (dp * p).sum(axis=1, keepdims=True)
    grad = p * (dp - inner)
    return loss, grad


def kd_loss(f_teacher: np.ndarray, f_student: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every voxel-feature entry; gradient w.r.t. the
    student features."""
    if f_teacher.shape != f_student.shape:
        raise DimensionMismatch(
            f"feature shapes differ: {f_teacher.shape} vs {f_student.shape}"
        )
    diff = f_student - f_teacher
    loss = float((diff * diff).mean())
    grad = (2.0 / diff.size) * diff
    return loss, grad


def backward(
    model: ToyModel,
    x: np.ndarray,
    features: np.ndarray,
    dscores: np.ndarray | None = None,
    dfeatures: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradients at the scores and/or
    directly at the features."""
    h = features
    dh = np.zeros_like(h)
    grads: dict[str, np.ndarray] = {}
    if dscores is not None:
        grads["w2"] = dscores.T @ h
        grads["b2"] = dscores.sum(axis=0)
        dh += dscores @ model.w2
    else:
        grads["w2"] = np.zeros_like(model.w2)
        grads["b2"] = np.zeros_like(model.b2)
    if dfeatures is not None:
        dh += dfeatures
    dpre = dh * (1.0 - h * h)  # tanh'
    grads["w1"] = dpre.T @ x
    grads["b1"] = dpre.sum(axis=0)
    return grads


def post_loss_and_grads(
    student: ToyModel,
    x_student: np.ndarray,
    classes: np.ndarray,
    f_teacher: np.ndarray,
    distill_scores: np.ndarray | None = None,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Segmentation + distillation loss of the student and its gradients.

    ``distill_scores``, when given, adds an MSE term between teacher and
    student logits into the distillation loss (optional variant, off by
    default in training).
    """
    f_s, scores = forward(student, x_student)
    l_seg, dscores = seg_loss(scores, classes)
    l_kd, dfeat = kd_loss(f_teacher, f_s)
    if distill_scores is not None:
        l_pred, dpred = kd_loss(distill_scores, scores)
        l_kd += l_pred
        dscores = dscores + dpred
    grads = backward(student, x_student, f_s, dscores, dfeat)
    return l_seg, l_kd, grads


def predict_classes(model: ToyModel, inputs: MultiModalVolume | np.ndarray) -> np.ndarray:
    _, scores = forward(model, inputs)
    return scores.argmax(axis=1)


def predict_labels(model: ToyModel, image: MultiModalVolume) -> LabelVolume:
    """Argmax segmentation in label vocabulary space."""
    return class_to_labels(predict_classes(model, image), image.dims)


# ---------------------------------------------------------------------------
# Optimization


def poly_lr(lr0: float, step: int, total: int, power: float = 0.9) -> float:
    """Polynomial decay reaching exactly zero at ``step == total``."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    frac = min(max(step / total, 0.0), 1.0)
    return lr0 * (1.0 - frac) ** power


class Adam:
    """Standard first/second-moment optimizer over the model's parameters."""

    def __init__(self, model: ToyModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params().items()}

    def step(self, model: ToyModel, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in PARAM_NAMES:
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            param = getattr(model, name)
            param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Gradient verification


def grad_check(
    model: ToyModel,
    x_student: np.ndarray,
    classes: np.ndarray,
    f_teacher: np.ndarray,
    epsilon: float = 1e-5,
    n_coords: int = 60,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients of the post-training
    loss and central finite differences over a random coordinate subset."""
    rng = np.random.default_rng(0) if rng is None else rng
    probe = model.copy()

    def total_loss() -> float:
        f_s, scores = forward(probe, x_student)
        l_seg, _ = seg_loss(scores, classes)
        l_kd, _ = kd_loss(f_teacher, f_s)
        return l_seg + l_kd

    l_seg, l_kd, grads = post_loss_and_grads(probe, x_student, classes, f_teacher)
    sizes = {name: getattr(probe, name).size for name in PARAM_NAMES}
    total = sum(sizes.values())
    n_coords = min(n_coords, total)
    coords = rng.choice(total, size=n_coords, replace=False)

    max_rel = 0.0
    for flat_idx in coords:
        idx = int(flat_idx)
        for name in PARAM_NAMES:
            if idx < sizes[name]:
                break
            idx -= sizes[name]
        param = getattr(probe, name).reshape(-1)
        orig = param[idx]
        param[idx] = orig + epsilon
        hi = total_loss()
        param[idx] = orig - epsilon
        lo = total_loss()
        param[idx] = orig
        numeric = (hi - lo) / (2 * epsilon)
        analytic = grads[name].reshape(-1)[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
