"""Fitting ``convnet_small`` classifiers with softmax cross-entropy and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ValidationError
from .model import ConvNetSmall, random_convnet_small, softmax

PARAMS = ("conv_weights", "conv_bias", "dense_weights", "dense_bias")


@dataclass
class FitHistory:
    loss: list = field(default_factory=list)  # mean training loss per epoch
    accuracy: list = field(default_factory=list)  # training accuracy per epoch


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    p = softmax(logits)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300))))


def _with_params(model: ConvNetSmall, params: dict) -> ConvNetSmall:
    return ConvNetSmall(params["conv_weights"], params["conv_bias"], params["dense_weights"],
                        params["dense_bias"], model.input_shape, model.class_names)


def fit_convnet_small(images, labels, num_classes: int | None = None, channels: int = 4,
                      epochs: int = 30, batch_size: int = 32, learning_rate: float = 0.01,
                      weight_decay: float = 1e-4, seed: int = 0,
                      class_names: Sequence[str] = ()) -> tuple[ConvNetSmall, FitHistory]:
    """Train from a seeded random initialisation; returns the model and per-epoch stats.

    ``weight_decay`` is an L2 penalty on the weights (not the biases).
    Batches are drawn by a seeded shuffle each epoch.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 3 or len(images) != len(labels) or len(images) == 0:
        raise ValidationError("need a non-empty (n, h, w) image stack with one label each")
    num_classes = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError("labels must lie in [0, num_classes)")
    if epochs < 1 or batch_size < 1 or not learning_rate > 0:
        raise ParameterError("epochs, batch_size and learning_rate must be positive")
    rng = np.random.default_rng(seed)
    model = random_convnet_small(images.shape[1:], channels, num_classes, seed=seed)
    params = {name: np.array(getattr(model, name)) for name in PARAMS}
    first = {name: np.zeros_like(v) for name, v in params.items()}
    second = {name: np.zeros_like(v) for name, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    history = FitHistory()
    step = 0
    onehot = np.eye(num_classes)[labels]
    for _ in range(epochs):
        order = rng.permutation(len(images))
        losses, correct = [], 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            model = _with_params(model, params)
            logits = model.evaluate_batch(images[idx])
            losses.append(cross_entropy(logits, labels[idx]) * len(idx))
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
            cot = (softmax(logits) - onehot[idx]) / len(idx)
            _, grads = model.backward(images[idx], cot)
            step += 1
            for name in PARAMS:
                g = grads[name].reshape(params[name].shape)
                if name.endswith("weights"):
                    g = g + weight_decay * params[name]
                first[name] = beta1 * first[name] + (1 - beta1) * g
                second[name] = beta2 * second[name] + (1 - beta2) * g * g
                m_hat = first[name] / (1 - beta1**step)
                v_hat = second[name] / (1 - beta2**step)
                params[name] = params[name] - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        history.loss.append(float(np.sum(losses) / len(images)))
        history.accuracy.append(correct / len(images))
    model = _with_params(model, params)
    model.class_names = tuple(class_names)
    return model, history


def accuracy(model, images, labels) -> float:
    logits = model.evaluate_batch(np.asarray(images, dtype=np.float64))
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
