"""Comparison models (naive average, ensemble) and public-sample fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .models import (LogisticModel, MlpModel, TrainConfig, _Adam, _onehot,
                     accuracy, fit_softmax_head, mlp_loss_grads,
                     train_logistic, train_mlp)


@dataclass(frozen=True)
class PublicSample:
    """A small labeled sample the coordinator may use for post-hoc tuning."""

    data: Dataset
    size: int
    seed: int


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 5
    scope: str = "whole"  # "whole" or "last-layer"
    sample_size: int = 1000
    learning_rate: float | None = None  # None: reuse the training rate

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.scope not in ("whole", "last-layer"):
            raise ValueError(f"unknown scope {self.scope!r}")


def draw_public_sample(nodes: list, size: int, seed: int) -> PublicSample:
    """Uniform seeded sample (without replacement) from all node validation splits."""
    pools = [node.validation for node in nodes]
    features = np.concatenate([p.features for p in pools])
    labels = np.concatenate([p.labels for p in pools])
    if size > len(labels):
        raise ValueError(f"requested {size} samples from a pool of {len(labels)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(labels), size=size, replace=False)
    data = Dataset(features[idx], labels[idx], pools[0].n_classes)
    return PublicSample(data, size, seed)


def naive_average(models: list):
    """Elementwise mean of same-shape models' parameters."""
    if not models:
        raise ValueError("need at least one model")
    vectors = [m.to_weight_vector() for m in models]
    blocks = vectors[0].blocks
    if any(v.blocks != blocks for v in vectors):
        raise ValueError("models disagree on parameter shapes")
    mean = np.mean([v.values for v in vectors], axis=0)
    wv = type(vectors[0])(mean, blocks)
    if isinstance(models[0], MlpModel):
        return MlpModel.from_weight_vector(wv, dropout_rate=models[0].dropout_rate)
    return LogisticModel.from_weight_vector(wv)


def ensemble_predict(models: list, x: np.ndarray, rng) -> int:
    """Majority vote over model argmax predictions, ties broken uniformly."""
    if not models:
        raise ValueError("need at least one model")
    votes = np.array([m.predict(np.asarray(x)[None, :])[0] for m in models])
    counts = np.bincount(votes)
    top = np.flatnonzero(counts == counts.max())
    if len(top) == 1:
        return int(top[0])
    return int(rng.choice(top))


def ensemble_accuracy(models: list, data: Dataset, rng) -> float:
    """Dataset accuracy of the majority-vote ensemble."""
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    all_votes = np.stack([m.predict(data.features) for m in models])
    correct = 0
    for i in range(len(data)):
        counts = np.bincount(all_votes[:, i])
        top = np.flatnonzero(counts == counts.max())
        label = top[0] if len(top) == 1 else rng.choice(top)
        correct += int(label == data.labels[i])
    return correct / len(data)


def _finetune_logistic(model: LogisticModel, data: Dataset, epochs: int,
                       cfg: TrainConfig) -> LogisticModel:
    W, b = fit_softmax_head(data.features, data.labels, model.n_classes, cfg,
                            init=(model.W, model.b), early_stop=False,
                            epochs=epochs)
    return LogisticModel(W, b)


def _finetune_mlp_whole(model: MlpModel, data: Dataset, epochs: int,
                        cfg: TrainConfig) -> MlpModel:
    rng = np.random.default_rng(cfg.seed)
    X, labels = data.features, data.labels
    Y = _onehot(labels, model.n_classes)
    params = [model.W1.copy(), model.b1.copy(), model.W2.copy(), model.b2.copy()]
    opt = _Adam(params, cfg)
    for _ in range(epochs):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _, *grads = mlp_loss_grads(*params, X[idx], Y[idx])
            opt.step(params, grads)
    return MlpModel(*params, dropout_rate=model.dropout_rate)


def _finetune_mlp_head(model: MlpModel, data: Dataset, epochs: int,
                       cfg: TrainConfig) -> MlpModel:
    acts = np.maximum(data.features @ model.W1 + model.b1, 0.0)
    W2, b2 = fit_softmax_head(acts, data.labels, model.n_classes, cfg,
                              init=(model.W2, model.b2), early_stop=False,
                              epochs=epochs)
    return MlpModel(model.W1, model.b1, W2, b2, dropout_rate=model.dropout_rate)


def fine_tune(model, sample: PublicSample, cfg: FineTuneConfig,
              train_cfg: TrainConfig):
    """Brief Adam tuning of a model on the public sample.

    scope "last-layer" freezes the hidden weights of an MLP bit-for-bit;
    logistic models are always tuned whole.
    """
    if len(sample.data) == 0:
        raise ValueError("public sample is empty")
    if cfg.learning_rate is not None:
        train_cfg = replace(train_cfg, learning_rate=cfg.learning_rate)
    if isinstance(model, LogisticModel):
        return _finetune_logistic(model, sample.data, cfg.epochs, train_cfg)
    if cfg.scope == "last-layer":
        return _finetune_mlp_head(model, sample.data, cfg.epochs, train_cfg)
    return _finetune_mlp_whole(model, sample.data, cfg.epochs, train_cfg)


def _fresh_model(family: str, hidden_size: int, data: Dataset,
                 train_cfg: TrainConfig):
    if family == "logistic":
        return train_logistic(data, train_cfg)
    return train_mlp(data, hidden_size, train_cfg)


def tuning_sweep(family: str, nodes: list, test: Dataset, aggregate_model,
                 local_models: list, sizes: list, comparators: list,
                 finetune_cfg: FineTuneConfig, train_cfg: TrainConfig,
                 hidden_size: int = 50, trials: int = 5,
                 base_seed: int = 0) -> list:
    """Accuracy of each comparator as the public-sample size grows.

    comparators may include "raw" (a fresh model trained only on the sample),
    "tuned-local" (mean over per-node tuned locals), "tuned-average", and
    "tuned-aggregate". Returns rows of (size, method, mean, std).
    """
    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    for size in sizes:
        per_method = {m: [] for m in comparators}
        for t in range(trials):
            seed = base_seed + t
            tcfg = replace(train_cfg, seed=seed)
            sample = draw_public_sample(nodes, size, seed)
            for method in comparators:
                if method == "raw":
                    acc = accuracy(_fresh_model(family, hidden_size,
                                                sample.data, tcfg), test)
                elif method == "tuned-local":
                    acc = float(np.mean([
                        accuracy(fine_tune(m, sample, finetune_cfg, tcfg), test)
                        for m in local_models
                    ]))
                elif method == "tuned-average":
                    acc = accuracy(
                        fine_tune(naive_average(local_models), sample,
                                  finetune_cfg, tcfg), test)
                elif method == "tuned-aggregate":
                    acc = accuracy(
                        fine_tune(aggregate_model, sample, finetune_cfg, tcfg),
                        test)
                else:
                    raise ValueError(f"unknown comparator {method!r}")
                per_method[method].append(acc)
        for method in comparators:
            vals = np.array(per_method[method])
            rows.append({"size": size, "method": method,
                         "mean": float(vals.mean()),
                         "std": float(vals.std(ddof=0))})
    return rows
