"""Differentiable models with exact input gradients.

Every model maps an input of ``input_shape`` to a vector of ``num_outputs``
real scores.  Gradients are exact (hand-written backprop); central finite
differences are only used as an oracle by :func:`check_gradient`.

Models are immutable once built, so concurrent ``evaluate``/``gradient``
calls are safe.  The batched entry points take a leading batch axis.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ModelFormatError, ParameterError, ValidationError

FORMAT_VERSION = 1
ARCHITECTURES = ("linear", "mlp_tanh", "convnet_small", "analytic")
ANALYTIC_KINDS = ("sum_of_squares", "gaussian_bump_detector", "single_pixel")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class DifferentiableModel:
    """Base class.  Subclasses implement ``evaluate_batch`` and ``vjp_batch``.

    ``vjp_batch(inputs, cotangents)`` returns, for each batch element ``b``,
    ``sum_k cotangents[b, k] * dF_k/dinput``; a one-hot cotangent gives the
    gradient of a single output.
    """

    input_shape: tuple
    num_outputs: int
    class_names: tuple = ()
    arch: str = "custom"

    def evaluate_batch(self, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp_batch(self, inputs: np.ndarray, cotangents: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _as_batch(self, inputs) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[1:] != tuple(self.input_shape):
            raise ValidationError(
                f"expected inputs of shape (batch,) + {tuple(self.input_shape)}, got {inputs.shape}")
        return inputs

    def _check_output(self, output_index: int) -> int:
        k = int(output_index)
        if not 0 <= k < self.num_outputs:
            raise ValidationError(f"output index {k} out of range for {self.num_outputs} outputs")
        return k

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.evaluate_batch(x[None])[0]

    def gradient_batch(self, inputs, output_index: int) -> np.ndarray:
        inputs = self._as_batch(inputs)
        k = self._check_output(output_index)
        cot = np.zeros((inputs.shape[0], self.num_outputs))
        cot[:, k] = 1.0
        return self.vjp_batch(inputs, cot)

    def gradient(self, x, output_index: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.gradient_batch(x[None], output_index)[0]

    def dummy_mask(self, output_index: int) -> np.ndarray:
        """Inputs that output ``output_index`` provably ignores (all-False if unknown)."""
        return np.zeros(self.input_shape, dtype=bool)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def _layers(self) -> list:
        raise ValidationError(f"{type(self).__name__} cannot be serialized")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "class_names": list(self.class_names) or [f"class_{k}" for k in range(self.num_outputs)],
            "layers": self._layers(),
        }


def _layer(kind: str, shape, weights=(), bias=()) -> dict:
    return {"kind": kind, "shape": [int(s) for s in shape],
            "weights": np.asarray(weights, dtype=float).ravel().tolist(),
            "bias": np.asarray(bias, dtype=float).ravel().tolist()}


class LinearModel(DifferentiableModel):
    """``F(z) = W vec(z) + b``."""

    arch = "linear"

    def __init__(self, weights, bias, input_shape, class_names: Sequence[str] = ()):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.weights = _frozen(weights).reshape(-1, self.input_size)
        self.bias = _frozen(bias).reshape(-1)
        self.num_outputs = self.weights.shape[0]
        if self.bias.shape != (self.num_outputs,):
            raise ValidationError("bias length must equal the number of outputs")
        self.class_names = tuple(class_names)

    def evaluate_batch(self, inputs):
        inputs = self._as_batch(inputs)
        return inputs.reshape(len(inputs), -1) @ self.weights.T + self.bias

    def vjp_batch(self, inputs, cotangents):
        inputs = self._as_batch(inputs)
        return (np.asarray(cotangents) @ self.weights).reshape(inputs.shape)

    def dummy_mask(self, output_index):
        k = self._check_output(output_index)
        return (self.weights[k] == 0).reshape(self.input_shape)

    def _layers(self):
        return [_layer("dense", self.weights.shape, self.weights, self.bias)]


class MLPTanh(DifferentiableModel):
    """Dense layers with tanh between them; the last layer is linear."""

    arch = "mlp_tanh"

    def __init__(self, weights: Sequence, biases: Sequence, input_shape,
                 class_names: Sequence[str] = ()):
        self.input_shape = tuple(int(s) for s in input_shape)
        if len(weights) < 1 or len(weights) != len(biases):
            raise ValidationError("an MLP needs matching, non-empty weight and bias lists")
        self.weights = tuple(_frozen(w) for w in weights)
        self.biases = tuple(_frozen(b).reshape(-1) for b in biases)
        fan_in = self.input_size
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ValidationError(f"layers[{i}]: inconsistent dense shapes {w.shape}, {b.shape}")
            fan_in = w.shape[0]
        self.num_outputs = fan_in
        self.class_names = tuple(class_names)

    def _forward(self, inputs):
        h = inputs.reshape(len(inputs), -1)
        activations = [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w.T + b)
            activations.append(h)
        return h @ self.weights[-1].T + self.biases[-1], activations

    def evaluate_batch(self, inputs):
        return self._forward(self._as_batch(inputs))[0]

    def vjp_batch(self, inputs, cotangents):
        inputs = self._as_batch(inputs)
        _, activations = self._forward(inputs)
        delta = np.asarray(cotangents, dtype=np.float64) @ self.weights[-1]
        for w, h in zip(self.weights[-2::-1], activations[:0:-1]):
            delta = (delta * (1.0 - h * h)) @ w
        return delta.reshape(inputs.shape)

    def dummy_mask(self, output_index):
        self._check_output(output_index)
        return np.all(self.weights[0] == 0, axis=0).reshape(self.input_shape)

    def _layers(self):
        return [_layer("dense", w.shape, w, b) for w, b in zip(self.weights, self.biases)]


class ConvNetSmall(DifferentiableModel):
    """3x3 'same' convolution (zero padded) -> tanh -> 2x2 mean pool -> dense logits."""

    arch = "convnet_small"

    def __init__(self, conv_weights, conv_bias, dense_weights, dense_bias, input_shape,
                 class_names: Sequence[str] = ()):
        self.input_shape = tuple(int(s) for s in input_shape)
        if len(self.input_shape) != 2 or self.input_shape[0] % 2 or self.input_shape[1] % 2:
            raise ValidationError(f"convnet_small needs an even-sided 2-D input, got {input_shape}")
        self.conv_weights = _frozen(conv_weights).reshape(-1, 3, 3)
        self.conv_bias = _frozen(conv_bias).reshape(-1)
        self.channels = self.conv_weights.shape[0]
        if self.conv_bias.shape != (self.channels,):
            raise ValidationError("conv bias length must equal the channel count")
        h, w = self.input_shape
        self.pooled_shape = (self.channels, h // 2, w // 2)
        self.dense_weights = _frozen(dense_weights).reshape(-1, int(np.prod(self.pooled_shape)))
        self.dense_bias = _frozen(dense_bias).reshape(-1)
        self.num_outputs = self.dense_weights.shape[0]
        if self.dense_bias.shape != (self.num_outputs,):
            raise ValidationError("dense bias length must equal the number of outputs")
        self.class_names = tuple(class_names)

    def _forward(self, inputs):
        padded = np.pad(inputs, ((0, 0), (1, 1), (1, 1)))
        patches = sliding_window_view(padded, (3, 3), axis=(1, 2))  # b, i, j, 3, 3
        pre = np.einsum("bijkl,ckl->bcij", patches, self.conv_weights)
        hidden = np.tanh(pre + self.conv_bias[None, :, None, None])
        b, c, h, w = hidden.shape
        pooled = hidden.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        logits = pooled.reshape(b, -1) @ self.dense_weights.T + self.dense_bias
        return logits, padded, hidden, pooled

    def evaluate_batch(self, inputs):
        return self._forward(self._as_batch(inputs))[0]

    def backward(self, inputs, cotangents):
        """Input and parameter gradients of ``sum(cotangents * logits)``."""
        inputs = self._as_batch(inputs)
        cot = np.asarray(cotangents, dtype=np.float64)
        _, padded, hidden, pooled = self._forward(inputs)
        b, c, h, w = hidden.shape
        d_pooled = (cot @ self.dense_weights).reshape(b, c, h // 2, w // 2)
        d_hidden = np.repeat(np.repeat(d_pooled, 2, axis=2), 2, axis=3) / 4.0
        d_pre = d_hidden * (1.0 - hidden * hidden)
        d_padded = np.zeros_like(padded)
        for di in range(3):
            for dj in range(3):
                d_padded[:, di:di + h, dj:dj + w] += np.einsum(
                    "bcij,c->bij", d_pre, self.conv_weights[:, di, dj])
        patches = sliding_window_view(padded, (3, 3), axis=(1, 2))
        grads = {
            "dense_weights": cot.T @ pooled.reshape(b, -1),
            "dense_bias": cot.sum(axis=0),
            "conv_weights": np.einsum("bcij,bijkl->ckl", d_pre, patches),
            "conv_bias": d_pre.sum(axis=(0, 2, 3)),
        }
        return d_padded[:, 1:-1, 1:-1], grads

    def vjp_batch(self, inputs, cotangents):
        return self.backward(inputs, cotangents)[0]

    def _layers(self):
        return [_layer("conv3x3", self.conv_weights.shape, self.conv_weights, self.conv_bias),
                _layer("dense", self.dense_weights.shape, self.dense_weights, self.dense_bias)]


class SumOfSquares(DifferentiableModel):
    """``F(z) = sum(z**2)``."""

    arch = "analytic"
    kind = "sum_of_squares"

    def __init__(self, input_shape):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_outputs = 1
        self.class_names = (self.kind,)

    def evaluate_batch(self, inputs):
        inputs = self._as_batch(inputs)
        return np.sum(inputs.reshape(len(inputs), -1) ** 2, axis=1)[:, None]

    def vjp_batch(self, inputs, cotangents):
        inputs = self._as_batch(inputs)
        scale = np.asarray(cotangents)[:, 0].reshape((-1,) + (1,) * len(self.input_shape))
        return 2.0 * inputs * scale

    def _layers(self):
        return [_layer(self.kind, self.input_shape)]


class GaussianBumpDetector(DifferentiableModel):
    """``F(z) = sum(template * z)``: correlation with a fixed template at zero shift."""

    arch = "analytic"
    kind = "gaussian_bump_detector"

    def __init__(self, template):
        self.template = _frozen(template)
        self.input_shape = self.template.shape
        self.num_outputs = 1
        self.class_names = (self.kind,)

    def evaluate_batch(self, inputs):
        inputs = self._as_batch(inputs)
        return (inputs.reshape(len(inputs), -1) @ self.template.ravel())[:, None]

    def vjp_batch(self, inputs, cotangents):
        inputs = self._as_batch(inputs)
        scale = np.asarray(cotangents)[:, 0].reshape((-1,) + (1,) * len(self.input_shape))
        return scale * self.template[None]

    def dummy_mask(self, output_index):
        self._check_output(output_index)
        return self.template == 0

    def _layers(self):
        return [_layer(self.kind, self.input_shape, self.template)]


class SinglePixel(DifferentiableModel):
    """``F(z) = z[0, 0]`` (or ``z[0]`` for signals)."""

    arch = "analytic"
    kind = "single_pixel"

    def __init__(self, input_shape):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_outputs = 1
        self.class_names = (self.kind,)
        self.index = (0,) * len(self.input_shape)

    def evaluate_batch(self, inputs):
        inputs = self._as_batch(inputs)
        return inputs[(slice(None),) + self.index][:, None].copy()

    def vjp_batch(self, inputs, cotangents):
        inputs = self._as_batch(inputs)
        out = np.zeros_like(inputs)
        out[(slice(None),) + self.index] = np.asarray(cotangents)[:, 0]
        return out

    def dummy_mask(self, output_index):
        self._check_output(output_index)
        mask = np.ones(self.input_shape, dtype=bool)
        mask[self.index] = False
        return mask

    def _layers(self):
        return [_layer(self.kind, self.input_shape)]


class LinearCombination(DifferentiableModel):
    """``sum_i coefficients[i] * models[i]`` (used by the linearity axiom)."""

    def __init__(self, models: Sequence[DifferentiableModel], coefficients: Sequence[float]):
        if len(models) != len(coefficients) or not models:
            raise ValidationError("need one coefficient per model")
        shapes = {tuple(m.input_shape) for m in models}
        outputs = {m.num_outputs for m in models}
        if len(shapes) != 1 or len(outputs) != 1:
            raise ValidationError("combined models must share input shape and output count")
        self.models = tuple(models)
        self.coefficients = tuple(float(c) for c in coefficients)
        self.input_shape = models[0].input_shape
        self.num_outputs = models[0].num_outputs

    def evaluate_batch(self, inputs):
        return sum(c * m.evaluate_batch(inputs) for c, m in zip(self.coefficients, self.models))

    def vjp_batch(self, inputs, cotangents):
        return sum(c * m.vjp_batch(inputs, cotangents)
                   for c, m in zip(self.coefficients, self.models))

    def dummy_mask(self, output_index):
        mask = np.ones(self.input_shape, dtype=bool)
        for c, m in zip(self.coefficients, self.models):
            if c != 0:
                mask &= m.dummy_mask(output_index)
        return mask


class SoftmaxHead(DifferentiableModel):
    """Class probabilities ``softmax(base(z))``."""

    def __init__(self, base: DifferentiableModel):
        self.base = base
        self.input_shape = base.input_shape
        self.num_outputs = base.num_outputs
        self.class_names = base.class_names

    def evaluate_batch(self, inputs):
        return softmax(self.base.evaluate_batch(inputs))

    def vjp_batch(self, inputs, cotangents):
        p = self.evaluate_batch(inputs)
        cot = np.asarray(cotangents, dtype=np.float64)
        # J^T v for the softmax Jacobian diag(p) - p p^T
        logit_cot = p * (cot - np.sum(cot * p, axis=1, keepdims=True))
        return self.base.vjp_batch(inputs, logit_cot)

    def dummy_mask(self, output_index):
        mask = np.ones(self.input_shape, dtype=bool)
        for k in range(self.num_outputs):
            mask &= self.base.dummy_mask(k)
        return mask


class AffineFeatureTransform(DifferentiableModel):
    """``base`` composed with ``z[pixel] -> (z[pixel] - offset) / scale``.

    If ``base`` reads features ``z``, this model reads ``scale * z + offset``
    at ``pixel`` and produces the same scores.
    """

    def __init__(self, base: DifferentiableModel, pixel, scale: float, offset: float):
        if scale == 0:
            raise ParameterError("the affine scale must be non-zero")
        self.base = base
        self.pixel = tuple(int(p) for p in np.atleast_1d(pixel))
        self.scale = float(scale)
        self.offset = float(offset)
        self.input_shape = base.input_shape
        self.num_outputs = base.num_outputs
        self.class_names = base.class_names

    def _untransform(self, inputs):
        inputs = np.array(self._as_batch(inputs), dtype=np.float64)
        index = (slice(None),) + self.pixel
        inputs[index] = (inputs[index] - self.offset) / self.scale
        return inputs

    def evaluate_batch(self, inputs):
        return self.base.evaluate_batch(self._untransform(inputs))

    def vjp_batch(self, inputs, cotangents):
        grads = self.base.vjp_batch(self._untransform(inputs), cotangents)
        grads[(slice(None),) + self.pixel] /= self.scale
        return grads

    def dummy_mask(self, output_index):
        return self.base.dummy_mask(output_index)


def gaussian_template(shape, center=None, sigma: float | None = None) -> np.ndarray:
    """Unit-sum Gaussian bump, centred by default, with width ``min(shape) / 6``."""
    shape = tuple(int(s) for s in shape)
    if center is None:
        center = tuple((s - 1) / 2.0 for s in shape)
    if sigma is None:
        sigma = min(shape) / 6.0
    grids = np.meshgrid(*[np.arange(s, dtype=float) for s in shape], indexing="ij")
    r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    t = np.exp(-r2 / (2.0 * sigma**2))
    return t / t.sum()


def analytic_model(kind: str, input_shape=(16, 16), template=None) -> DifferentiableModel:
    """Closed-form fixtures: ``sum_of_squares``, ``gaussian_bump_detector``, ``single_pixel``."""
    if kind == "sum_of_squares":
        return SumOfSquares(input_shape)
    if kind == "gaussian_bump_detector":
        return GaussianBumpDetector(gaussian_template(input_shape) if template is None else template)
    if kind == "single_pixel":
        return SinglePixel(input_shape)
    raise ParameterError(f"unknown analytic model {kind!r}; expected one of {ANALYTIC_KINDS}")


def random_linear(input_shape=(16, 16), num_outputs: int = 3, seed: int = 0) -> LinearModel:
    rng = np.random.default_rng(seed)
    n = int(np.prod(input_shape))
    return LinearModel(rng.normal(0, 1 / math.sqrt(n), (num_outputs, n)),
                       rng.normal(0, 0.1, num_outputs), input_shape)


def random_mlp_tanh(input_shape=(16, 16), hidden: Sequence[int] = (16,), num_outputs: int = 3,
                    seed: int = 0) -> MLPTanh:
    rng = np.random.default_rng(seed)
    sizes = [int(np.prod(input_shape)), *hidden, num_outputs]
    weights = [rng.normal(0, 1 / math.sqrt(a), (b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0, 0.1, b) for b in sizes[1:]]
    return MLPTanh(weights, biases, input_shape)


def random_convnet_small(input_shape=(16, 16), channels: int = 4, num_outputs: int = 3,
                         seed: int = 0) -> ConvNetSmall:
    rng = np.random.default_rng(seed)
    h, w = input_shape
    features = channels * (h // 2) * (w // 2)
    return ConvNetSmall(rng.normal(0, 1 / 3, (channels, 3, 3)), rng.normal(0, 0.1, channels),
                        rng.normal(0, 1 / math.sqrt(features), (num_outputs, features)),
                        rng.normal(0, 0.1, num_outputs), input_shape)


def builtin_models(input_shape=(16, 16), seed: int = 0) -> dict:
    """Every built-in model at a common input shape, with seeded random weights."""
    return {
        "linear": random_linear(input_shape, seed=seed),
        "mlp_tanh": random_mlp_tanh(input_shape, seed=seed),
        "convnet_small": random_convnet_small(input_shape, seed=seed),
        "sum_of_squares": analytic_model("sum_of_squares", input_shape),
        "gaussian_bump_detector": analytic_model("gaussian_bump_detector", input_shape),
        "single_pixel": analytic_model("single_pixel", input_shape),
    }


def check_gradient(model: DifferentiableModel, x, output_index: int, step: float = 1e-4,
                   chunk: int = 512) -> float:
    """Max abs difference between ``model.gradient`` and central differences."""
    if not 0 < step <= 1e-2:
        raise ParameterError(f"step must lie in (0, 1e-2], got {step}")
    x = np.asarray(x, dtype=np.float64)
    analytic = model.gradient(x, output_index)
    n = x.size
    numeric = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        bump = np.zeros((len(idx), n))
        bump[np.arange(len(idx)), idx] = step
        plus = (x.ravel() + bump).reshape((-1,) + x.shape)
        minus = (x.ravel() - bump).reshape((-1,) + x.shape)
        numeric[idx] = (model.evaluate_batch(plus)[:, output_index]
                        - model.evaluate_batch(minus)[:, output_index]) / (2 * step)
    return float(np.max(np.abs(numeric.reshape(x.shape) - analytic)))


# -- serialization -----------------------------------------------------------

def _field(doc, key, where, kind=None):
    if key not in doc:
        raise ValidationError(f"{where}: missing field {key!r}")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise ValidationError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _layer_arrays(layer, i, expected_kind=None):
    where = f"layers[{i}]"
    if not isinstance(layer, dict):
        raise ValidationError(f"{where}: expected an object")
    kind = _field(layer, "kind", where, str)
    if expected_kind is not None and kind != expected_kind:
        raise ValidationError(f"{where}.kind: expected {expected_kind!r}, got {kind!r}")
    shape = tuple(int(s) for s in _field(layer, "shape", where, list))
    weights = np.asarray(layer.get("weights", []), dtype=np.float64)
    bias = np.asarray(layer.get("bias", []), dtype=np.float64)
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise ValidationError(f"{where}: non-finite weights")
    return kind, shape, weights, bias


def _sized(arr, shape, where):
    if arr.size != int(np.prod(shape)):
        raise ValidationError(f"{where}: shape {list(shape)} needs {int(np.prod(shape))} values, "
                              f"got {arr.size}")
    return arr.reshape(shape)


def model_from_dict(doc: dict) -> DifferentiableModel:
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"format_version: expected {FORMAT_VERSION}, got {version!r}")
    arch = _field(doc, "arch", "model", str)
    if arch not in ARCHITECTURES:
        raise ValidationError(f"arch: expected one of {ARCHITECTURES}, got {arch!r}")
    input_shape = tuple(int(s) for s in _field(doc, "input_shape", "model", list))
    layers = _field(doc, "layers", "model", list)
    names = tuple(doc.get("class_names", ()))
    n_in = int(np.prod(input_shape))

    if arch == "analytic":
        if len(layers) != 1:
            raise ValidationError("layers: analytic models have exactly one layer")
        kind, shape, weights, _ = _layer_arrays(layers[0], 0)
        if kind not in ANALYTIC_KINDS:
            raise ValidationError(f"layers[0].kind: expected one of {ANALYTIC_KINDS}, got {kind!r}")
        if shape != input_shape:
            raise ValidationError(f"layers[0].shape: {list(shape)} != input_shape {list(input_shape)}")
        template = _sized(weights, shape, "layers[0].weights") if kind == "gaussian_bump_detector" else None
        return analytic_model(kind, input_shape, template)

    if arch == "convnet_small":
        if len(layers) != 2:
            raise ValidationError("layers: convnet_small has a conv3x3 and a dense layer")
        _, cshape, cw, cb = _layer_arrays(layers[0], 0, "conv3x3")
        if len(cshape) != 3 or cshape[1:] != (3, 3):
            raise ValidationError(f"layers[0].shape: expected [channels, 3, 3], got {list(cshape)}")
        _, dshape, dw, db = _layer_arrays(layers[1], 1, "dense")
        features = cshape[0] * (input_shape[0] // 2) * (input_shape[1] // 2)
        if len(dshape) != 2 or dshape[1] != features:
            raise ValidationError(f"layers[1].shape: expected [outputs, {features}], got {list(dshape)}")
        return ConvNetSmall(_sized(cw, cshape, "layers[0].weights"),
                            _sized(cb, cshape[:1], "layers[0].bias"),
                            _sized(dw, dshape, "layers[1].weights"),
                            _sized(db, dshape[:1], "layers[1].bias"), input_shape, names)

    weights, biases = [], []
    fan_in = n_in
    for i, layer in enumerate(layers):
        _, shape, w, b = _layer_arrays(layer, i, "dense")
        if len(shape) != 2 or shape[1] != fan_in:
            raise ValidationError(f"layers[{i}].shape: expected [outputs, {fan_in}], got {list(shape)}")
        weights.append(_sized(w, shape, f"layers[{i}].weights"))
        biases.append(_sized(b, shape[:1], f"layers[{i}].bias"))
        fan_in = shape[0]
    if arch == "linear":
        if len(layers) != 1:
            raise ValidationError("layers: a linear model has exactly one dense layer")
        return LinearModel(weights[0], biases[0], input_shape, names)
    if not layers:
        raise ValidationError("layers: an MLP needs at least one dense layer")
    return MLPTanh(weights, biases, input_shape, names)


def load_model(path) -> DifferentiableModel:
    """Read a model weights file (UTF-8 JSON, ``format_version: 1``)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"{path}: cannot read model file: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(doc)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


PACKAGED_MODELS = ("shapes3", "disc_texture")


def load_packaged_model(name: str) -> DifferentiableModel:
    """A ``convnet_small`` fitted to generated shapes and shipped with the package.

    ``shapes3`` classifies square / disc / texture; ``disc_texture`` separates
    discs from textures on mean-centred images.  Both were produced by
    ``blurig fit`` with default settings (``--kinds disc,texture --center``
    for the second).
    """
    if name not in PACKAGED_MODELS:
        raise ParameterError(f"unknown packaged model {name!r}; expected one of {PACKAGED_MODELS}")
    return load_model(Path(__file__).with_name("data") / f"{name}.json")


def save_model(model: DifferentiableModel, path) -> None:
    # repr-precision floats keep the round trip bit-exact
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n", encoding="utf-8")
