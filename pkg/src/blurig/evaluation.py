"""Saliency evaluation against annotation masks, and a synthetic shape dataset.

Scores are ``|attribution|`` scaled by the largest magnitude; AUC is the
rank (Mann-Whitney) form of the ROC area, F1 is the best over all score
thresholds and MAE compares the scaled scores with the 0/1 mask.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import io
from .attribution import (AttributionMap, InsufficientBlurWarning, PathSpec, TrendCurve,
                          blur_integrated_gradients, integrated_gradients, prediction_trend)
from .errors import InputFormatError, ParameterError, ValidationError
from .model import DifferentiableModel

SHAPE_KINDS = ("square", "disc", "texture")
METHODS = ("blur-ig", "ig-black", "ig-random", "ig-grayscale", "random", "oracle")
BACKGROUND = 0.5
SHAPE_CONTRAST = (0.25, 0.4)
TEXTURE_AMPLITUDE = 0.3


class EmptySaliencyWarning(UserWarning):
    """The saliency map is identically zero, so metrics fall back to chance values."""


@dataclass(frozen=True)
class EvalReport:
    auc: float
    f1: float
    mae: float
    threshold_used: float
    n_pixels: int
    signed_inside: float = 0.0
    signed_outside: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ValidationError(f"mask shape {mask.shape} does not match saliency {tuple(shape)}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("mask values must be 0 or 1")
    mask = mask.astype(bool)
    if mask.all() or not mask.any():
        raise ValidationError("mask needs at least one positive and one negative pixel")
    return mask


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve, ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    pos, neg = int(labels.sum()), int((~labels).sum())
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def best_f1(scores, labels) -> tuple[float, float]:
    """``(f1, threshold)`` maximising F1 of the rule ``score >= threshold``.

    Ties in F1 go to the highest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every run of equal scores: predicting all up to it positive
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    f1 = 2.0 * tp / (predicted + y.sum())
    best = int(np.argmax(f1))
    return float(f1[best]), float(s[ends[best]])


def evaluate_saliency(attribution, mask) -> EvalReport:
    """AUC, best-threshold F1 and MAE of ``|attribution|`` against ``mask``."""
    values = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(
        attribution, dtype=np.float64)
    mask = _check_mask(mask, values.shape)
    if not np.all(np.isfinite(values)):
        raise ValidationError("attribution contains non-finite values")
    magnitude = np.abs(values)
    top = magnitude.max()
    inside, outside = float(values[mask].sum()), float(values[~mask].sum())
    if top == 0:
        warnings.warn("all-zero saliency map; AUC set to 0.5 and F1 taken at threshold 0",
                      EmptySaliencyWarning, stacklevel=2)
        f1 = 2.0 * mask.sum() / (mask.size + mask.sum())
        return EvalReport(0.5, float(f1), float(mask.mean()), 0.0, mask.size, inside, outside)
    scores = magnitude / top
    f1, threshold = best_f1(scores, mask)
    mae = float(np.mean(np.abs(scores - mask)))
    return EvalReport(roc_auc(scores, mask), f1, mae, threshold, mask.size, inside, outside)


# -- synthetic dataset -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    field: np.ndarray
    mask: np.ndarray
    label: int
    kind: str


def _extent(kind: str, size: int) -> tuple:
    """Side range (square, texture) or radius range (disc) for a square image of ``size``."""
    if kind == "disc":
        return size / 8.0, size / 3.0
    return max(2, round(size / 5.0)), max(3, round(size * 3.0 / 8.0))


def _disc_mask(radius: float, cy: int, cx: int, shape) -> np.ndarray:
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def shape_area_range(kind: str, size) -> tuple[int, int]:
    """Smallest and largest mask pixel count ``generate_shape_dataset`` can produce."""
    m = min(size)
    lo, hi = _extent(kind, m)
    if kind == "disc":
        span = int(np.ceil(hi)) * 2 + 1
        c = span // 2
        return (int(_disc_mask(lo, c, c, (span, span)).sum()),
                int(_disc_mask(hi, c, c, (span, span)).sum()))
    if kind in ("square", "texture"):
        return lo * lo, hi * hi
    raise ParameterError(f"unknown shape kind {kind!r}")


def generate_shape_dataset(n: int, size=(32, 32), kinds: Sequence[str] = SHAPE_KINDS,
                           noise: float = 0.05, seed: int = 0, center: bool = False) -> list:
    """``n`` images, each holding one shape on a noisy mid-grey background.

    Squares and discs are brighter than the background; a texture patch is a
    zero-mean checkerboard with period two pixels, so it vanishes under even
    slight blur.  The class label is the position of the kind in ``kinds``
    and kinds are drawn uniformly.

    With ``center`` every image is shifted to mean ``BACKGROUND``, so overall
    brightness says nothing about the class and a fully blurred image is
    uninformative.
    """
    size = tuple(int(s) for s in size)
    if len(size) != 2 or min(size) < 8:
        raise ParameterError(f"size must be at least 8x8, got {size}")
    if n < 0:
        raise ParameterError("n must be >= 0")
    kinds = tuple(kinds)
    for kind in kinds:
        if kind not in SHAPE_KINDS:
            raise ParameterError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    rng = np.random.default_rng(seed)
    m = min(size)
    samples = []
    for _ in range(n):
        label = int(rng.integers(len(kinds)))
        kind = kinds[label]
        lo, hi = _extent(kind, m)
        mask = np.zeros(size, dtype=bool)
        if kind == "disc":
            radius = float(rng.uniform(lo, hi))
            reach = int(np.floor(radius))
            cy = int(rng.integers(reach, size[0] - reach))
            cx = int(rng.integers(reach, size[1] - reach))
            mask = _disc_mask(radius, cy, cx, size)
        else:
            side = int(rng.integers(lo, hi + 1))
            top = int(rng.integers(0, size[0] - side + 1))
            left = int(rng.integers(0, size[1] - side + 1))
            mask[top:top + side, left:left + side] = True
        image = BACKGROUND + noise * rng.standard_normal(size)
        if kind == "texture":
            yy, xx = np.mgrid[:size[0], :size[1]]
            checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
            image += np.where(mask, TEXTURE_AMPLITUDE * checker, 0.0)
        else:
            image += np.where(mask, rng.uniform(*SHAPE_CONTRAST), 0.0)
        if center:
            image += BACKGROUND - image.mean()
        samples.append(Sample(np.clip(image, 0.0, 1.0), mask.astype(np.uint8), label, kind))
    return samples


# -- scale localization -----------------------------------------------------

def scale_mass_split(curve: TrendCurve) -> tuple[float, float]:
    """Fractions of the accrued attribution gained above and below ``sigma_max / 2``.

    The blur path starts at ``sigma_max``; the upper fraction is the mass
    accrued by the first grid point at or below half that scale.
    """
    sigmas = np.asarray(curve.sigmas)
    if np.all(np.isnan(sigmas)):
        raise ParameterError("scale_mass_split needs a blur-path trend")
    total = curve.cumulative_mass[-1]
    if total == 0:
        return float("nan"), float("nan")
    k = int(np.argmax(sigmas <= sigmas[0] / 2.0))
    upper = float(curve.cumulative_mass[k] / total)
    return upper, 1.0 - upper


def scale_localization(model: DifferentiableModel, dataset: Sequence[Sample], steps: int = 200,
                       sigma_max: float | None = None, scores: str = "softmax") -> dict:
    """Per-kind lists of ``(upper_fraction, total_mass)`` for each sample's true class."""
    out = {}
    path = PathSpec.blur(sigma_max, steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientBlurWarning)
        for sample in dataset:
            curve = prediction_trend(model, sample.field, [sample.label], path, scores)
            upper, _ = scale_mass_split(curve)
            out.setdefault(sample.kind, []).append((upper, float(curve.cumulative_mass[-1])))
    return out


def summarize_scale_localization(split: dict) -> dict:
    """Median per-sample upper fraction and the pooled fraction of each kind."""
    out = {}
    for kind, rows in split.items():
        rows = np.array([r for r in rows if np.isfinite(r[0])])
        pooled = float(np.sum(rows[:, 0] * rows[:, 1]) / np.sum(rows[:, 1]))
        out[kind] = {"median_upper": float(np.median(rows[:, 0])), "pooled_upper": pooled,
                     "n": len(rows)}
    return out


def save_dataset(directory, samples: Sequence[Sample]) -> Path:
    """Write ``dataset.csv`` (image, mask, class, kind) with CSV images and PNG masks."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        image, mask = f"image_{i:04d}.csv", f"mask_{i:04d}.png"
        io.write_grid_csv(directory / image, s.field)
        io.write_image(directory / mask, s.mask.astype(np.float64))
        rows.append([image, mask, s.label, s.kind])
    io.write_text(directory / "dataset.csv", io.csv_text(["image", "mask", "class", "kind"], rows))
    return directory / "dataset.csv"


def load_dataset(directory) -> list:
    """Read a directory written by :func:`save_dataset` (``kind`` is optional)."""
    directory = Path(directory)
    index = directory / "dataset.csv"
    try:
        with open(index, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise InputFormatError(f"{index}: cannot read ({exc})") from exc
    samples = []
    for lineno, row in enumerate(rows, 2):
        try:
            image = io.read_input(directory / row["image"])
            mask = io.read_input(directory / row["mask"]) > 0.5
            label = int(row["class"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputFormatError(f"{index}:{lineno}: bad row ({exc})") from exc
        if image.shape != mask.shape:
            raise ValidationError(f"{index}:{lineno}: image and mask shapes differ")
        samples.append(Sample(image, mask.astype(np.uint8), label, row.get("kind") or ""))
    return samples


# -- method comparison -------------------------------------------------------

@dataclass
class Comparison:
    """Per-sample reports for each method plus their means."""

    methods: tuple
    per_sample: dict = field(default_factory=dict)  # method -> list of EvalReport

    def mean(self, method: str) -> dict:
        reports = self.per_sample[method]
        return {"auc": float(np.mean([r.auc for r in reports])),
                "f1": float(np.mean([r.f1 for r in reports])),
                "mae": float(np.mean([r.mae for r in reports])),
                "n": len(reports)}

    def summary(self) -> dict:
        return {m: self.mean(m) for m in self.methods}

    def rows(self) -> list:
        out = []
        for m in self.methods:
            for i, r in enumerate(self.per_sample[m]):
                out.append([m, i, r.auc, r.f1, r.mae, r.threshold_used])
        return out


def saliency(method: str, model: DifferentiableModel, sample: Sample, output_index: int,
             steps: int = 200, sigma_max: float | None = None, seed: int = 0) -> np.ndarray:
    """Attribution map of one named method for one sample."""
    x = sample.field
    if method == "blur-ig":
        return blur_integrated_gradients(model, x, output_index,
                                         PathSpec.blur(sigma_max, steps)).values
    if method.startswith("ig-"):
        baseline = method[3:]
        return integrated_gradients(model, x, output_index,
                                    PathSpec.intensity(baseline, steps, seed)).values
    if method == "random":
        return np.random.default_rng(seed).uniform(size=x.shape)
    if method == "oracle":
        return sample.mask.astype(np.float64)
    raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")


def compare_methods(model: DifferentiableModel, dataset: Sequence[Sample],
                    methods: Sequence[str] = ("blur-ig", "random"), steps: int = 200,
                    sigma_max: float | None = None, seed: int = 0,
                    target: str = "label") -> Comparison:
    """Evaluate each method on every sample, attributing the true class.

    ``target="predicted"`` attributes the model's argmax instead.  Random
    saliency and random baselines use seed ``seed + sample index``.
    """
    if not dataset:
        raise ParameterError("dataset must be non-empty")
    if target not in ("label", "predicted"):
        raise ParameterError("target must be 'label' or 'predicted'")
    for m in methods:
        if m not in METHODS:
            raise ParameterError(f"unknown method {m!r}; expected one of {METHODS}")
    result = Comparison(tuple(methods), {m: [] for m in methods})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientBlurWarning)
        for i, sample in enumerate(dataset):
            k = sample.label if target == "label" else int(np.argmax(model.evaluate(sample.field)))
            for m in methods:
                values = saliency(m, model, sample, k, steps, sigma_max, seed + i)
                result.per_sample[m].append(evaluate_saliency(values, sample.mask))
    return result


def write_comparison(result: Comparison, prefix, comments: Sequence[str] = (),
                     metadata: dict | None = None) -> tuple[Path, Path]:
    """``<prefix>.eval.csv`` (one row per sample and method) and ``<prefix>.eval.json``."""
    csv_path, json_path = Path(f"{prefix}.eval.csv"), Path(f"{prefix}.eval.json")
    io.write_text(csv_path, io.csv_text(["method", "sample", "auc", "f1", "mae", "threshold"],
                                        result.rows(), comments))
    doc = dict(metadata or {})
    doc["methods"] = result.summary()
    io.write_text(json_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
