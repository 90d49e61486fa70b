"""Path-method attributions: Integrated Gradients, Blur IG and arbitrary paths.

All three methods share one discretisation.  A path is a sequence of inputs
``p[0], ..., p[s]`` running from an informationless start to the explicand,
and the attribution is ``sum_i grad F(m_i) * (p[i+1] - p[i])`` with ``m_i``
the midpoint of segment ``i``.  For the straight-line path this is the
midpoint Riemann rule; along the blur path it is the midpoint rule in input
space, and it makes completeness exact for models that are quadratic in the
input.

The blur path samples ``alpha = 2 sigma**2`` uniformly from 0 to
``alpha_max`` and is traversed from maximal blur down to the unblurred input,
so positive attribution means that restoring that detail raised the score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import scale_space as ss
from .errors import ParameterError, ValidationError
from .model import DifferentiableModel, SoftmaxHead

BASELINES = ("black", "random", "grayscale")
GRADIENT_CHUNK = 256
INFORMATIONLESS_TOLERANCE = 1e-3


class InsufficientBlurWarning(UserWarning):
    """The maximally blurred input still scores differently from a flat image."""


@dataclass(frozen=True, eq=False)
class PathSpec:
    """How to build an attribution path.

    ``kind="intensity"`` interpolates from ``baseline`` (``"black"``,
    ``"random"`` with ``seed``, ``"grayscale"``, or an explicit array).
    ``kind="blur"`` walks the Gaussian scale family from ``sigma_max``
    (default: half the smallest side) down to zero.
    """

    kind: str
    steps: int = 200
    baseline: object = "black"
    seed: int | None = None
    sigma_max: float | None = None
    boundary: str = "reflect"
    truncation_multiple: float = ss.DEFAULT_TRUNCATION
    discretization: str = ss.DEFAULT_DISCRETIZATION

    def __post_init__(self):
        if self.kind not in ("intensity", "blur"):
            raise ParameterError(f"path kind must be 'intensity' or 'blur', got {self.kind!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ParameterError(f"steps must be a positive integer, got {self.steps}")
        if self.kind == "blur":
            if self.sigma_max is not None and not float(self.sigma_max) > 0:
                raise ParameterError(f"sigma_max must be positive, got {self.sigma_max}")
            ss._check_boundary(self.boundary)
        else:
            if self.baseline is None:
                raise ParameterError("an intensity path needs a baseline")
            if isinstance(self.baseline, str) and self.baseline not in BASELINES:
                raise ParameterError(f"baseline must be one of {BASELINES} or an array")
            if isinstance(self.baseline, str) and self.baseline == "random" and self.seed is None:
                object.__setattr__(self, "seed", 0)

    @classmethod
    def intensity(cls, baseline="black", steps: int = 200, seed: int | None = None) -> "PathSpec":
        return cls("intensity", steps=steps, baseline=baseline, seed=seed)

    @classmethod
    def blur(cls, sigma_max: float | None = None, steps: int = 200, boundary: str = "reflect",
             **kwargs) -> "PathSpec":
        return cls("blur", steps=steps, baseline=None, sigma_max=sigma_max, boundary=boundary,
                   **kwargs)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "steps": int(self.steps)}
        if self.kind == "blur":
            out.update(sigma_max=None if self.sigma_max is None else float(self.sigma_max),
                       boundary=self.boundary, truncation_multiple=self.truncation_multiple,
                       discretization=self.discretization)
        else:
            out["baseline"] = self.baseline if isinstance(self.baseline, str) else "custom"
            if self.seed is not None:
                out["seed"] = int(self.seed)
        return out


@dataclass(eq=False)
class AttributionMap:
    """Per-pixel attributions for one output, plus path bookkeeping.

    ``positions`` holds the path coordinate of every path point: sigma for
    blur paths (descending), the interpolation fraction for straight lines.
    ``per_step_partials[i]`` is the contribution of segment ``i``.
    """

    values: np.ndarray
    output_index: int
    f_start: float
    f_end: float
    path: PathSpec | None = None
    positions: np.ndarray | None = None
    per_step_partials: np.ndarray | None = None
    completeness_residual: float = field(init=False)

    def __post_init__(self):
        self.completeness_residual = float(abs(self.values.sum() - (self.f_end - self.f_start)))

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def relative_residual(self) -> float:
        delta = abs(self.f_end - self.f_start)
        if delta > 0:
            return self.completeness_residual / delta
        return 0.0 if self.completeness_residual == 0 else float("inf")

    def cumulative_mass(self) -> np.ndarray:
        """Total attribution accrued after each path point (``steps + 1`` values)."""
        if self.per_step_partials is None:
            raise ValidationError("per-step partials were not retained; pass keep_partials=True")
        sums = self.per_step_partials.reshape(len(self.per_step_partials), -1).sum(axis=1)
        return np.concatenate([[0.0], np.cumsum(sums)])


@dataclass(eq=False)
class TrendCurve:
    """Scores of tracked classes and accrued attribution along a path.

    Rows run from the informationless end of the path to the input.
    ``sigmas`` is NaN for straight-line paths, where ``alphas`` holds the
    interpolation fraction instead of the blur scale.
    """

    sigmas: np.ndarray
    alphas: np.ndarray
    tracked_classes: tuple
    scores: np.ndarray  # (steps + 1, len(tracked_classes))
    cumulative_mass: np.ndarray  # attribution to tracked_classes[0]
    score_kind: str


@dataclass(frozen=True)
class LabelPathResult:
    argmax_per_step: tuple
    true_class: int
    second_last_label: int | None

    @property
    def no_transition(self) -> bool:
        return self.second_last_label is None


@dataclass(frozen=True)
class BandAggregate:
    bands: tuple
    band_sums: tuple
    top_sum: float
    bottom_sum: float

    @property
    def ratio(self) -> tuple | None:
        """``(top, bottom)`` scaled so the smaller magnitude is 1, e.g. ``(19, -1)``."""
        m = min(abs(self.top_sum), abs(self.bottom_sum))
        if m == 0:
            return None
        return (self.top_sum / m, self.bottom_sum / m)


# -- path construction -------------------------------------------------------

def _as_input(model: DifferentiableModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tuple(model.input_shape):
        raise ValidationError(f"input shape {x.shape} does not match model input {model.input_shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def make_baseline(x: np.ndarray, path: PathSpec) -> np.ndarray:
    baseline = path.baseline
    if isinstance(baseline, str):
        if baseline == "black":
            return np.zeros_like(x)
        if baseline == "grayscale":
            # single-channel inputs: the channel-collapsed image is the flat mean
            return np.full_like(x, x.mean())
        rng = np.random.default_rng(path.seed)
        return rng.uniform(x.min(), x.max(), size=x.shape)
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x.shape:
        raise ValidationError(f"baseline shape {baseline.shape} does not match input {x.shape}")
    return baseline


def resolve_sigma_max(x: np.ndarray, path: PathSpec) -> float:
    return float(path.sigma_max) if path.sigma_max is not None else ss.default_sigma_max(x.shape)


def path_points(x, path: PathSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(points, positions)`` from the informationless end to ``x`` inclusive."""
    x = np.asarray(x, dtype=np.float64)
    s = int(path.steps)
    if path.kind == "intensity":
        baseline = make_baseline(x, path)
        t = np.arange(s + 1) / s
        points = baseline + t.reshape((-1,) + (1,) * x.ndim) * (x - baseline)
        points[0], points[-1] = baseline, x
        return points, t
    sigmas = ss.sigma_grid(resolve_sigma_max(x, path), s)[::-1].copy()
    points = ss.family_array(x, sigmas, path.boundary, path.truncation_multiple, path.discretization)
    return points, sigmas


def _gradients(model: DifferentiableModel, points: np.ndarray, k: int) -> np.ndarray:
    out = np.empty_like(points)
    for start in range(0, len(points), GRADIENT_CHUNK):
        out[start:start + GRADIENT_CHUNK] = model.gradient_batch(points[start:start + GRADIENT_CHUNK], k)
    return out


def _accumulate(model, midpoints, deltas, k, keep_partials):
    values = np.zeros(deltas.shape[1:])
    partials = np.empty_like(deltas) if keep_partials else None
    for start in range(0, len(deltas), GRADIENT_CHUNK):
        stop = start + GRADIENT_CHUNK
        part = model.gradient_batch(midpoints[start:stop], k) * deltas[start:stop]
        # fixed chunk order keeps the reduction bit-reproducible
        values += part.sum(axis=0)
        if keep_partials:
            partials[start:stop] = part
    return values, partials


# -- attribution methods -----------------------------------------------------

def path_integrated_gradients(model: DifferentiableModel, x, output_index: int, points,
                              keep_partials: bool = False, path: PathSpec | None = None,
                              positions=None) -> AttributionMap:
    """Integrate gradients along an explicit discretised path ending at ``x``."""
    x = _as_input(model, x)
    k = model._check_output(output_index)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != x.ndim + 1 or len(points) < 2:
        raise ParameterError("a path needs at least two points")
    if points.shape[1:] != x.shape:
        raise ValidationError(f"path points of shape {points.shape[1:]} do not match input {x.shape}")
    if not np.array_equal(points[-1], x):
        raise ValidationError("the last path point must equal the input")
    midpoints = 0.5 * (points[:-1] + points[1:])
    deltas = points[1:] - points[:-1]
    values, partials = _accumulate(model, midpoints, deltas, k, keep_partials)
    f = model.evaluate_batch(points[[0, -1]])[:, k]
    return AttributionMap(values, k, float(f[0]), float(f[1]), path=path,
                          positions=None if positions is None else np.asarray(positions),
                          per_step_partials=partials)


def integrated_gradients(model: DifferentiableModel, x, output_index: int,
                         path: PathSpec | None = None, keep_partials: bool = False) -> AttributionMap:
    """Straight-line path from a baseline: ``(x - baseline) * mean_i grad F(gamma(t_i))``.

    ``t_i = (i + 1/2) / steps`` (midpoint rule).
    """
    path = PathSpec.intensity() if path is None else path
    if path.kind != "intensity":
        raise ParameterError("integrated_gradients needs an intensity path")
    x = _as_input(model, x)
    k = model._check_output(output_index)
    baseline = make_baseline(x, path)
    s = int(path.steps)
    diff = x - baseline
    t = (np.arange(s) + 0.5) / s
    midpoints = baseline + t.reshape((-1,) + (1,) * x.ndim) * diff
    grads = _gradients(model, midpoints, k)
    partials = grads * (diff / s)
    values = diff * grads.mean(axis=0)
    f = model.evaluate_batch(np.stack([baseline, x]))[:, k]
    return AttributionMap(values, k, float(f[0]), float(f[1]), path=path,
                          positions=np.arange(s + 1) / s,
                          per_step_partials=partials if keep_partials else None)


def _warn_if_informative(model, x, top, k):
    flat = np.full_like(x, x.mean())
    scores = model.evaluate_batch(np.stack([top, flat]))[:, k]
    gap = abs(scores[0] - scores[1])
    if gap > INFORMATIONLESS_TOLERANCE:
        warnings.warn(f"maximally blurred input scores {gap:.3g} away from a flat image; "
                      "sigma_max may be too small", InsufficientBlurWarning, stacklevel=3)


def blur_integrated_gradients(model: DifferentiableModel, x, output_index: int,
                              path: PathSpec | None = None, keep_partials: bool = False,
                              backend: str = "difference") -> AttributionMap:
    """Blur IG: integrate gradients along the Gaussian scale family, coarse to fine.

    ``backend="difference"`` takes each step as the difference of consecutive
    blurred images.  ``backend="laplacian"`` replaces it with the diffusion
    form ``-laplacian(L(alpha_mid)) / 4 * dalpha`` evaluated by
    :func:`~blurig.scale_space.log_filter` in the path's discretization; it exists to cross-check the first and is not exactly complete.
    """
    path = PathSpec.blur() if path is None else path
    if path.kind != "blur":
        raise ParameterError("blur_integrated_gradients needs a blur path")
    x = _as_input(model, x)
    k = model._check_output(output_index)
    if backend == "difference":
        points, sigmas = path_points(x, path)
        _warn_if_informative(model, x, points[0], k)
        return path_integrated_gradients(model, x, k, points, keep_partials, path, sigmas)
    if backend != "laplacian":
        raise ParameterError(f"backend must be 'difference' or 'laplacian', got {backend!r}")

    s = int(path.steps)
    sigma_max = resolve_sigma_max(x, path)
    alpha_max = ss.sigma_to_alpha(sigma_max)
    alpha_mid = (np.arange(s, 0, -1) - 0.5) * (alpha_max / s)
    sigma_mid = ss.alpha_to_sigma(alpha_mid)
    opts = (path.boundary, path.truncation_multiple)
    midpoints = ss.family_array(x, sigma_mid, *opts, path.discretization)
    deltas = np.stack([-0.25 * (alpha_max / s) * ss.log_filter(x, sg, *opts, path.discretization) for sg in sigma_mid])
    values, partials = _accumulate(model, midpoints, deltas, k, keep_partials)
    top = ss.family_array(x, [sigma_max], *opts, path.discretization)[0]
    _warn_if_informative(model, x, top, k)
    f = model.evaluate_batch(np.stack([top, x]))[:, k]
    return AttributionMap(values, k, float(f[0]), float(f[1]), path=path,
                          positions=ss.sigma_grid(sigma_max, s)[::-1].copy(),
                          per_step_partials=partials)


def attribute(model: DifferentiableModel, x, output_index: int, path: PathSpec,
              keep_partials: bool = False) -> AttributionMap:
    """Dispatch on ``path.kind``."""
    if path.kind == "blur":
        return blur_integrated_gradients(model, x, output_index, path, keep_partials)
    return integrated_gradients(model, x, output_index, path, keep_partials)


def average_random_baselines(model: DifferentiableModel, x, output_index: int, runs: int,
                             seed: int = 0, steps: int = 200) -> AttributionMap:
    """Mean of ``runs`` random-baseline IG maps with seeds ``seed .. seed + runs - 1``."""
    if runs < 1:
        raise ParameterError("runs must be >= 1")
    maps = [integrated_gradients(model, x, output_index,
                                 PathSpec.intensity("random", steps, seed + r)) for r in range(runs)]
    return AttributionMap(np.mean([m.values for m in maps], axis=0), maps[0].output_index,
                          float(np.mean([m.f_start for m in maps])), maps[0].f_end,
                          path=PathSpec.intensity("random", steps, seed))


# -- diagnostics -------------------------------------------------------------

def prediction_trend(model: DifferentiableModel, x, tracked_classes: Sequence[int],
                     path: PathSpec, scores: str = "auto") -> TrendCurve:
    """Scores of ``tracked_classes`` at every path point and accrued attribution.

    ``scores="auto"`` uses softmax probabilities for multi-output models and
    raw outputs otherwise.  The accrued attribution is for
    ``tracked_classes[0]``, computed on the same score function.
    """
    x = _as_input(model, x)
    tracked = tuple(int(c) for c in tracked_classes)
    if not tracked:
        raise ValidationError("tracked_classes must be non-empty")
    for c in tracked:
        model._check_output(c)
    if scores == "auto":
        scores = "softmax" if model.num_outputs >= 2 else "raw"
    if scores not in ("softmax", "raw"):
        raise ParameterError(f"scores must be 'auto', 'softmax' or 'raw', got {scores!r}")
    scored = SoftmaxHead(model) if scores == "softmax" else model
    points, positions = path_points(x, path)
    table = np.concatenate([scored.evaluate_batch(points[i:i + GRADIENT_CHUNK])
                            for i in range(0, len(points), GRADIENT_CHUNK)])
    attr = path_integrated_gradients(scored, x, tracked[0], points, keep_partials=True, path=path)
    if path.kind == "blur":
        sigmas, alphas = positions, ss.sigma_to_alpha(positions)
    else:
        sigmas, alphas = np.full(len(positions), np.nan), positions
    return TrendCurve(sigmas, alphas, tracked, table[:, list(tracked)], attr.cumulative_mass(), scores)


def second_last_label(model: DifferentiableModel, x, true_class: int,
                      path: PathSpec) -> LabelPathResult:
    """Last argmax class other than ``true_class`` met walking towards the input."""
    if model.num_outputs < 2:
        raise ParameterError("second_last_label needs a model with at least two outputs")
    x = _as_input(model, x)
    true_class = model._check_output(true_class)
    points, _ = path_points(x, path)
    argmax = np.concatenate([np.argmax(model.evaluate_batch(points[i:i + GRADIENT_CHUNK]), axis=1)
                             for i in range(0, len(points), GRADIENT_CHUNK)])
    others = np.flatnonzero(argmax != true_class)
    label = int(argmax[others[-1]]) if len(others) else None
    return LabelPathResult(tuple(int(a) for a in argmax), true_class, label)


def frequency_band_aggregate(attribution, bands: Sequence[tuple[int, int]]) -> BandAggregate:
    """Signed attribution sums over row bands, plus top-half vs bottom-half totals.

    ``bands`` are half-open ``(start, stop)`` row ranges that must tile the rows.
    """
    values = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    rows = values.shape[0]
    ordered = sorted((int(a), int(b)) for a, b in bands)
    cursor = 0
    for start, stop in ordered:
        if start != cursor or stop <= start:
            raise ValidationError(f"bands must tile rows 0..{rows} without gaps or overlaps")
        cursor = stop
    if cursor != rows:
        raise ValidationError(f"bands must tile rows 0..{rows} without gaps or overlaps")
    sums = tuple(float(values[a:b].sum()) for a, b in bands)
    half = rows // 2
    return BandAggregate(tuple((int(a), int(b)) for a, b in bands), sums,
                         float(values[:half].sum()), float(values[half:].sum()))
