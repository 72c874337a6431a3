"""Multinomial logistic regression and two-layer MLPs, trained from scratch.

All geometry elsewhere in the package operates on the flat weight vectors
these models expose; biases are always part of the flat vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    patience_epochs: int = 3
    min_accuracy_delta: float = 1e-3
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class WeightVector:
    """Flat parameter vector plus the (rows, cols) blocks it unpacks into."""

    values: np.ndarray
    blocks: tuple  # ordered ((rows, cols), ...); bias vectors use rows=1

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        blocks = tuple((int(r), int(c)) for r, c in self.blocks)
        if len(values) != sum(r * c for r, c in blocks):
            raise ValueError("flat length does not match block sizes")
        if not np.all(np.isfinite(values)):
            raise ValueError("weight vector contains non-finite entries")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return len(self.values)

    def split_blocks(self) -> list:
        out, offset = [], 0
        for r, c in self.blocks:
            out.append(self.values[offset : offset + r * c].reshape(r, c))
            offset += r * c
        return out

    def to_bytes(self) -> bytes:
        header = struct.pack("<I", len(self.blocks))
        header += b"".join(struct.pack("<II", r, c) for r, c in self.blocks)
        return header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "WeightVector":
        (n_blocks,) = struct.unpack_from("<I", raw, 0)
        blocks = [struct.unpack_from("<II", raw, 4 + 8 * i) for i in range(n_blocks)]
        body = np.frombuffer(raw, dtype="<f8", offset=4 + 8 * n_blocks)
        return cls(body.copy(), tuple(blocks))


def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _onehot(labels, n_classes):
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class LogisticModel:
    """Softmax classifier: logits = X @ W + b."""

    W: np.ndarray  # [n_features, n_classes]
    b: np.ndarray  # [n_classes]

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    def logits(self, X):
        return X @ self.W + self.b

    def predict(self, X):
        return np.argmax(self.logits(X), axis=1)

    def to_weight_vector(self) -> WeightVector:
        f, c = self.W.shape
        flat = np.concatenate([self.W.ravel(), self.b.ravel()])
        return WeightVector(flat, ((f, c), (1, c)))

    @classmethod
    def from_weight_vector(cls, wv: WeightVector) -> "LogisticModel":
        W, b = wv.split_blocks()
        return cls(W.copy(), b.ravel().copy())

    @classmethod
    def from_flat(cls, values, n_features, n_classes) -> "LogisticModel":
        values = np.asarray(values, dtype=np.float64).ravel()
        W = values[: n_features * n_classes].reshape(n_features, n_classes)
        b = values[n_features * n_classes :]
        return cls(W.copy(), b.copy())


@dataclass(frozen=True)
class MlpModel:
    """Two-layer perceptron with a rectifier hidden layer.

    Dropout applies only inside training loops; inference is deterministic.
    """

    W1: np.ndarray  # [n_features, hidden]
    b1: np.ndarray  # [hidden]
    W2: np.ndarray  # [hidden, n_classes]
    b2: np.ndarray  # [n_classes]
    dropout_rate: float = 0.5

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[1]

    def hidden(self, X):
        return _relu(X @ self.W1 + self.b1)

    def logits(self, X):
        return self.hidden(X) @ self.W2 + self.b2

    def predict(self, X):
        return np.argmax(self.logits(X), axis=1)

    def to_weight_vector(self) -> WeightVector:
        f, h = self.W1.shape
        _, c = self.W2.shape
        flat = np.concatenate(
            [self.W1.ravel(), self.b1.ravel(), self.W2.ravel(), self.b2.ravel()]
        )
        return WeightVector(flat, ((f, h), (1, h), (h, c), (1, c)))

    @classmethod
    def from_weight_vector(cls, wv: WeightVector, dropout_rate: float = 0.5) -> "MlpModel":
        W1, b1, W2, b2 = wv.split_blocks()
        return cls(W1.copy(), b1.ravel().copy(), W2.copy(), b2.ravel().copy(),
                   dropout_rate=dropout_rate)


def logistic_loss_grads(W, b, X, y_onehot):
    """Mean softmax cross-entropy and its analytic gradients."""
    n = len(X)
    P = _softmax(X @ W + b)
    loss = -np.sum(y_onehot * np.log(P + 1e-300)) / n
    dlogits = (P - y_onehot) / n
    return loss, X.T @ dlogits, dlogits.sum(axis=0)


def mlp_loss_grads(W1, b1, W2, b2, X, y_onehot, dropout_mask=None):
    """Mean cross-entropy of the two-layer net and gradients for all blocks.

    dropout_mask, when given, is the inverted-dropout multiplier applied to
    the hidden activations (already scaled by 1/keep).
    """
    n = len(X)
    pre1 = X @ W1 + b1
    h = _relu(pre1)
    hd = h if dropout_mask is None else h * dropout_mask
    P = _softmax(hd @ W2 + b2)
    loss = -np.sum(y_onehot * np.log(P + 1e-300)) / n
    dlogits = (P - y_onehot) / n
    dW2 = hd.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhd = dlogits @ W2.T
    dh = dhd if dropout_mask is None else dhd * dropout_mask
    dpre1 = dh * (pre1 > 0)
    return loss, X.T @ dpre1, dpre1.sum(axis=0), dW2, db2


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            mhat = m / (1 - c.beta1**self.t)
            vhat = v / (1 - c.beta2**self.t)
            p -= c.learning_rate * mhat / (np.sqrt(vhat) + c.eps_adam)


def _adam_loop(params, batch_grads, train_accuracy, n, cfg: TrainConfig, rng,
               early_stop: bool = True, epochs: int | None = None):
    """Shared minibatch Adam loop with accuracy-plateau early stopping.

    batch_grads(idx) -> (loss, grads aligned with params). Stops once the
    epoch training accuracy has improved by less than min_accuracy_delta for
    patience_epochs consecutive epochs.
    """
    opt = _Adam(params, cfg)
    best_acc = -np.inf
    stale = 0
    total_epochs = cfg.max_epochs if epochs is None else epochs
    for _ in range(total_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = batch_grads(idx)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss {loss!r}")
            opt.step(params, grads)
        if not early_stop:
            continue
        acc = train_accuracy()
        if acc - best_acc < cfg.min_accuracy_delta:
            stale += 1
            if stale >= cfg.patience_epochs:
                break
        else:
            stale = 0
        best_acc = max(best_acc, acc)


def fit_softmax_head(X, labels, n_classes, cfg: TrainConfig,
                     init: tuple | None = None,
                     early_stop: bool = True, epochs: int | None = None):
    """Train a softmax layer on fixed features; returns (W, b)."""
    rng = np.random.default_rng(cfg.seed)
    n, f = X.shape
    if init is None:
        W = _glorot(rng, f, n_classes)
        b = np.zeros(n_classes)
    else:
        W, b = init[0].copy(), init[1].copy()
    Y = _onehot(labels, n_classes)
    params = [W, b]

    def batch_grads(idx):
        loss, dW, db = logistic_loss_grads(W, b, X[idx], Y[idx])
        return loss, (dW, db)

    def train_accuracy():
        return float(np.mean(np.argmax(X @ W + b, axis=1) == labels))

    _adam_loop(params, batch_grads, train_accuracy, n, cfg, rng,
               early_stop=early_stop, epochs=epochs)
    return W, b


def train_logistic(data: Dataset, cfg: TrainConfig) -> LogisticModel:
    """Fit multinomial logistic regression with Adam until accuracy plateaus."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    W, b = fit_softmax_head(data.features, data.labels, data.n_classes, cfg)
    return LogisticModel(W, b)


def train_mlp(data: Dataset, hidden_size: int, cfg: TrainConfig,
              dropout_rate: float = 0.5) -> MlpModel:
    """Fit a two-layer rectifier MLP with inverted dropout on the hidden layer."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if hidden_size <= 0:
        raise ValueError("hidden_size must be positive")
    rng = np.random.default_rng(cfg.seed)
    X, labels = data.features, data.labels
    n, f = X.shape
    c = data.n_classes
    W1 = _glorot(rng, f, hidden_size)
    b1 = np.zeros(hidden_size)
    W2 = _glorot(rng, hidden_size, c)
    b2 = np.zeros(c)
    Y = _onehot(labels, c)
    params = [W1, b1, W2, b2]
    keep = 1.0 - dropout_rate

    def batch_grads(idx):
        mask = None
        if dropout_rate > 0:
            mask = (rng.random((len(idx), hidden_size)) < keep) / keep
        loss, *grads = mlp_loss_grads(W1, b1, W2, b2, X[idx], Y[idx], mask)
        return loss, grads

    def train_accuracy():
        logits = _relu(X @ W1 + b1) @ W2 + b2
        return float(np.mean(np.argmax(logits, axis=1) == labels))

    _adam_loop(params, batch_grads, train_accuracy, n, cfg, rng)
    return MlpModel(W1, b1, W2, b2, dropout_rate=dropout_rate)


def accuracy(model, data: Dataset) -> float:
    """Fraction of argmax predictions matching labels (ties -> lowest class)."""
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(model.predict(data.features) == data.labels))


def accuracy_gate(model, data: Dataset, threshold: float) -> int:
    """+1 if the model's accuracy on data meets the threshold, else -1."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return 1 if accuracy(model, data) >= threshold else -1


def hidden_activations(model: MlpModel, data: Dataset) -> np.ndarray:
    """Post-rectifier hidden outputs in dataset order, dropout-free."""
    return model.hidden(data.features)


def neuron_gate(w, inputs: np.ndarray, targets: np.ndarray, tol: float) -> int:
    """+1 if a candidate neuron reproduces the target activations closely enough.

    The candidate vector carries the bias as its last entry. Closeness is the
    root-mean-square deviation between relu(inputs . w) and the targets,
    compared against tol.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if len(inputs) == 0:
        raise ValueError("neuron gate needs at least one sample")
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets disagree on sample count")
    out = _relu(inputs @ w[:-1] + w[-1])
    rms = float(np.sqrt(np.mean((out - targets) ** 2)))
    return 1 if rms <= tol else -1
