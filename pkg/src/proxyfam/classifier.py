"""One-vs-rest linear classification trained by hinge-loss SGD.

One binary discriminator per class: targets are +1 for the class and -1
otherwise, the loss is max(0, 1 - y*(w.x + b)) with an L2 penalty on w
(bias unregularized), and the step size follows the inverse schedule
eta_t = 1/(lambda*(t + t0)) with t0 = 1/(lambda*eta0). Inputs are
L2-normalized per sample both at train and predict time, so uniformly
scaling an input cannot move its scores. Training is seeded and
deterministic: per-epoch visit orders come from a per-class generator, and
the per-sample update itself runs in the active kernel backend.

The model file is little-endian binary with a versioned header carrying the
class list, block layout, per-feature training means (consumed by the
attribution module), the capa vocabulary, and a config echo.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import get_kernels
from .corpus import pack_layout, unpack_layout, _pack_str, _unpack_str
from .errors import DataError, ModelFormatError

MODEL_MAGIC = b"PFLINM01"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-4
    epochs: int = 10
    seed: int = 0
    eta0: float = 0.01

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be > 0")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Per-class weights and bias over a fixed feature layout.

    ``feature_means`` is the mean of the (normalized) training inputs; the
    attribution module uses it as the explanation baseline.
    """

    classes: tuple[str, ...]
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    feature_means: np.ndarray  # (dim,)
    layout: tuple[tuple[str, int, int], ...]
    config: TrainConfig
    capa_vocab: tuple[str, ...] = field(default=())

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


def l2_normalize_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows pass through unchanged."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return X / safe


def binary_objective(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float
) -> float:
    """Regularized empirical hinge objective over a training set."""
    margins = y * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins)
    return 0.5 * lam * float(w @ w) + float(hinge.mean())


def sample_objective(
    w: np.ndarray, b: float, x: np.ndarray, y: float, lam: float
) -> float:
    """Per-sample objective whose subgradient drives one SGD update."""
    margin = y * (float(x @ w) + b)
    return 0.5 * lam * float(w @ w) + max(0.0, 1.0 - margin)


def fit_binary(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    class_index: int = 0,
) -> tuple[np.ndarray, float, list[float]]:
    """Fit one binary hinge problem; returns (w, b, per-epoch objectives).

    X must already be row-normalized. Visit order is a fresh seeded
    permutation per epoch, derived from (config.seed, class_index).
    """
    kernels = get_kernels()
    m, d = X.shape
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, class_index])
    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    t = 0
    objectives: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(m).astype(np.int64)
        b, t = kernels.sgd_epoch(w, X, y, order, config.lam, config.eta0, t, b)
        objectives.append(binary_objective(w, b, X, y, config.lam))
    return w, float(b), objectives


def train(
    X: np.ndarray,
    labels: Sequence[str],
    config: TrainConfig = TrainConfig(),
    layout: Sequence[tuple[str, int, int]] | None = None,
    capa_vocab: Sequence[str] = (),
) -> LinearModel:
    """Train a one-vs-rest model; deterministic given (data order, config)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ValueError("X must be (n_samples, dim) aligned with labels")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise DataError(f"need >= 2 distinct classes, got {classes}")
    Xn = l2_normalize_rows(X)
    means = Xn.mean(axis=0)
    label_arr = np.asarray(labels)
    weights = np.zeros((len(classes), X.shape[1]), dtype=np.float64)
    bias = np.zeros(len(classes), dtype=np.float64)
    for ci, cls in enumerate(classes):
        y = np.where(label_arr == cls, 1.0, -1.0)
        w, b, _ = fit_binary(Xn, y, config, class_index=ci)
        weights[ci] = w
        bias[ci] = b
    if layout is None:
        layout = (("features", 0, X.shape[1]),)
    return LinearModel(
        classes=classes,
        weights=weights,
        bias=bias,
        feature_means=means,
        layout=tuple(layout),
        config=config,
        capa_vocab=tuple(capa_vocab),
    )


def decision_scores(
    model: LinearModel, x: np.ndarray, *, normalize: bool = True
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DataError(
            f"input has dimension {x.shape}, model expects ({model.dim},)"
        )
    if normalize:
        norm = np.linalg.norm(x)
        if norm > 0:
            x = x / norm
    return model.weights @ x + model.bias


def predict(model: LinearModel, x: np.ndarray) -> tuple[str, np.ndarray]:
    """(label, per-class scores); ties go to the lowest sorted class index."""
    scores = decision_scores(model, x)
    return model.classes[int(np.argmax(scores))], scores


def predict_batch(
    model: LinearModel, X: np.ndarray
) -> tuple[list[str], np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DataError(
            f"input has shape {X.shape}, model expects (*, {model.dim})"
        )
    Xn = l2_normalize_rows(X)
    scores = Xn @ model.weights.T + model.bias
    picks = np.argmax(scores, axis=1)
    return [model.classes[int(i)] for i in picks], scores


def save_model(model: LinearModel, path: Path | str) -> None:
    buf = bytearray()
    buf += MODEL_MAGIC
    buf += struct.pack("<II", MODEL_VERSION, model.dim)
    buf += struct.pack("<I", len(model.classes))
    for cls in model.classes:
        buf += _pack_str(cls)
    buf += pack_layout(model.layout)
    buf += struct.pack("<I", len(model.capa_vocab))
    for rule in model.capa_vocab:
        buf += _pack_str(rule)
    cfg = model.config
    buf += struct.pack(
        "<dIQd", cfg.lam, cfg.epochs, cfg.seed & 0xFFFFFFFFFFFFFFFF, cfg.eta0
    )
    buf += np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(model.bias, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(model.feature_means, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_model(path: Path | str) -> LinearModel:
    buf = Path(path).read_bytes()
    if buf[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"not a model file: {path}")
    off = 8
    try:
        version, dim = struct.unpack_from("<II", buf, off)
        off += 8
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        (n_classes,) = struct.unpack_from("<I", buf, off)
        off += 4
        classes = []
        for _ in range(n_classes):
            cls, off = _unpack_str(buf, off)
            classes.append(cls)
        layout, off = unpack_layout(buf, off)
        (n_vocab,) = struct.unpack_from("<I", buf, off)
        off += 4
        vocab = []
        for _ in range(n_vocab):
            rule, off = _unpack_str(buf, off)
            vocab.append(rule)
        lam, epochs, seed, eta0 = struct.unpack_from("<dIQd", buf, off)
        off += struct.calcsize("<dIQd")
        need = (n_classes * dim + n_classes + dim) * 8
        if off + need != len(buf):
            raise ModelFormatError("truncated or oversized model payload")
        weights = (
            np.frombuffer(buf, dtype="<f8", count=n_classes * dim, offset=off)
            .reshape(n_classes, dim)
            .astype(np.float64)
        )
        off += n_classes * dim * 8
        bias = np.frombuffer(buf, dtype="<f8", count=n_classes, offset=off).astype(
            np.float64
        )
        off += n_classes * 8
        means = np.frombuffer(buf, dtype="<f8", count=dim, offset=off).astype(
            np.float64
        )
    except struct.error as exc:
        raise ModelFormatError(f"truncated model file: {exc}") from exc
    return LinearModel(
        classes=tuple(classes),
        weights=weights,
        bias=bias,
        feature_means=means,
        layout=layout,
        config=TrainConfig(lam=lam, epochs=epochs, seed=seed, eta0=eta0),
        capa_vocab=tuple(vocab),
    )
