"""Executable checks for scale-space causality and the path-method axioms.

Every checker returns a small report object with a ``passed`` flag and a
``to_dict`` method, so results can be asserted in tests or dumped as JSON.
Attribution methods are described by a :class:`~blurig.attribution.PathSpec`;
checks that compare step counts replace only its ``steps``.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import scale_space as ss
from .attribution import (AttributionMap, InsufficientBlurWarning, PathSpec, attribute,
                          blur_integrated_gradients, integrated_gradients, make_baseline,
                          path_integrated_gradients, path_points)
from .errors import ParameterError, ValidationError
from .model import AffineFeatureTransform, DifferentiableModel, LinearCombination, builtin_models

EXACT_TOLERANCE = 1e-10
COMPLETENESS_TOLERANCE = 0.01
VIOLATION_KINDS = ("enhanced_max", "enhanced_min", "new_extremum")

AttributionMethod = Callable[[DifferentiableModel, np.ndarray, int], AttributionMap]


def make_method(path: PathSpec) -> AttributionMethod:
    """Attribution method ``(model, x, k) -> AttributionMap`` along ``path``."""
    def method(model, x, k):
        return attribute(model, x, k, path)
    method.path = path
    return method


def broken_method(path: PathSpec, epsilon: float = 1e-6) -> AttributionMethod:
    """A deliberately wrong method that adds ``epsilon`` to every pixel (negative control)."""
    def method(model, x, k):
        a = attribute(model, x, k, path)
        return AttributionMap(a.values + epsilon, a.output_index, a.f_start, a.f_end, path=path)
    method.path = path
    return method


def _random_inputs(model: DifferentiableModel, trials: int, seed: int) -> np.ndarray:
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(trials,) + tuple(model.input_shape))


def _values(result) -> np.ndarray:
    return result.values if isinstance(result, AttributionMap) else np.asarray(result)


# -- causality ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int
    scale_step: int
    kind: str
    magnitude: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CausalityReport:
    """Violations found walking a 1-D family from the signal towards the path start.

    ``scale_step`` ``i`` refers to the transition from family member ``i`` to
    ``i + 1``.  ``positions`` are sigmas for the blur family and the
    interpolation fraction ``t`` (1 at the signal) for the intensity family.
    """

    path_kind: str
    tolerance: float
    positions: np.ndarray
    extremum_counts: np.ndarray
    minimum_values: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(v.magnitude > self.tolerance for v in self.violations)

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    @property
    def counts_non_increasing(self) -> bool:
        return bool(np.all(np.diff(self.extremum_counts) <= 0))

    def to_dict(self) -> dict:
        return {"path_kind": self.path_kind, "tolerance": self.tolerance, "passed": self.passed,
                "counts_non_increasing": self.counts_non_increasing,
                "steps": len(self.positions) - 1,
                "violation_counts": {k: sum(v.kind == k for v in self.violations)
                                     for k in VIOLATION_KINDS},
                "violations": [v.to_dict() for v in self.violations[:50]]}


def strict_extrema(signal) -> tuple[np.ndarray, np.ndarray]:
    """Interior indices strictly above (maxima) or below (minima) both neighbours.

    Plateaus and the two end samples never count as extrema.
    """
    v = ss.as_signal(signal)
    mid, left, right = v[1:-1], v[:-2], v[2:]
    maxima = np.flatnonzero((mid > left) & (mid > right)) + 1
    minima = np.flatnonzero((mid < left) & (mid < right)) + 1
    return maxima, minima


def causality_family(signal, path: PathSpec) -> tuple[np.ndarray, np.ndarray]:
    """The 1-D family ordered by increasing perturbation, starting at ``signal``."""
    signal = ss.as_signal(signal)
    points, positions = path_points(signal, path)
    return points[::-1].copy(), positions[::-1].copy()


def _predecessors(index: int, candidates: np.ndarray) -> np.ndarray:
    """Candidates within one sample of ``index``."""
    return candidates[np.abs(candidates - index) <= 1]


def _prominence(v: np.ndarray, i: int) -> float:
    return float(min(abs(v[i] - v[i - 1]), abs(v[i] - v[i + 1])))


def check_causality_1d(signal, path: PathSpec, tolerance: float = 1e-9) -> CausalityReport:
    """Check that stepping along the family neither enhances nor creates extrema.

    Each strict extremum of the next member is traced back to strict extrema
    of the same type within one sample.  If it has none, it is a new extremum
    with its prominence as magnitude; otherwise it is an enhancement when a
    maximum rises above (a minimum falls below) the strongest predecessor.
    Extrema that vanish, for instance by annihilating in pairs, are allowed.
    """
    if not tolerance >= 0:
        raise ParameterError(f"tolerance must be >= 0, got {tolerance}")
    family, positions = causality_family(signal, path)
    extrema = [strict_extrema(member) for member in family]
    violations = []
    for step in range(len(family) - 1):
        before, after = family[step], family[step + 1]
        for which, sign, kind in ((0, 1.0, "enhanced_max"), (1, -1.0, "enhanced_min")):
            old = extrema[step][which]
            for j in extrema[step + 1][which]:
                preds = _predecessors(int(j), old)
                if preds.size == 0:
                    size = _prominence(after, int(j))
                    if size > tolerance:
                        violations.append(Violation(int(j), step, "new_extremum", size))
                    continue
                gain = sign * after[j] - np.max(sign * before[preds])
                if gain > tolerance:
                    violations.append(Violation(int(j), step, kind, float(gain)))
    counts = np.array([len(a) + len(b) for a, b in extrema])
    minima = np.array([member.min() for member in family])
    return CausalityReport(path.kind, float(tolerance), positions, counts, minima, violations)


def check_causality_rows(field_values, path: PathSpec, tolerance: float = 1e-9,
                         axis: int = 1) -> list:
    """The 1-D check applied to each row (``axis=1``) or column (``axis=0``) of a field."""
    values = ss.as_field(field_values)
    lines = values if axis == 1 else values.T
    return [check_causality_1d(line, path, tolerance) for line in lines]


def parabola_signal(samples: int = 61) -> np.ndarray:
    """``x**2 + 1`` sampled on ``[-3, 3]``."""
    x = np.linspace(-3.0, 3.0, samples)
    return x * x + 1.0


def smoothed_noise_corpus(n: int = 200, length: int = 128, smoothing: float = 2.0,
                          seed: int = 0) -> np.ndarray:
    """``n`` white-noise signals blurred at ``smoothing``, one row each."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, length))
    blur = ss.blur_matrix(length, smoothing)
    return noise @ blur.T


@dataclass
class ParabolaStudy:
    """Causality of three families built from ``x**2 + 1``."""

    blur: CausalityReport
    intensity_black: CausalityReport
    intensity_random: CausalityReport

    @property
    def matches_expectations(self) -> bool:
        black = self.intensity_black.kinds()
        return (self.blur.passed
                and bool(np.all(np.diff(self.blur.minimum_values) >= -self.blur.tolerance))
                and not self.intensity_black.passed
                and black <= {"enhanced_max", "enhanced_min"}
                and "new_extremum" in self.intensity_random.kinds())

    def to_dict(self) -> dict:
        return {"matches_expectations": self.matches_expectations,
                "blur": self.blur.to_dict(),
                "intensity_black": self.intensity_black.to_dict(),
                "intensity_random": self.intensity_random.to_dict()}


def parabola_study(samples: int = 61, steps: int = 200, seed: int = 0,
                   tolerance: float = 1e-9) -> ParabolaStudy:
    """Blur keeps the parabola's minimum rising; intensity scaling towards black
    deepens it; interpolating from random noise creates new extrema."""
    signal = parabola_signal(samples)
    return ParabolaStudy(
        check_causality_1d(signal, PathSpec.blur(steps=steps), tolerance),
        check_causality_1d(signal, PathSpec.intensity("black", steps), tolerance),
        check_causality_1d(signal, PathSpec.intensity("random", steps, seed), tolerance))


# -- path-method axioms ------------------------------------------------------

@dataclass
class DummyReport:
    passed: bool
    trials: int
    dummy_pixels: int
    max_abs_at_dummy: float
    witness: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def check_dummy(model: DifferentiableModel, method: AttributionMethod, trials: int = 5,
                seed: int = 0, output_index: int = 0) -> DummyReport:
    """Attribution must be exactly zero wherever the model ignores its input."""
    mask = np.asarray(model.dummy_mask(output_index), dtype=bool)
    worst, witness = 0.0, None
    for trial, x in enumerate(_random_inputs(model, trials, seed)):
        at_dummy = np.abs(_values(method(model, x, output_index)))[mask]
        if at_dummy.size and at_dummy.max() > worst:
            worst = float(at_dummy.max())
            if witness is None:
                pixel = np.argwhere(mask)[int(np.argmax(at_dummy))]
                witness = {"trial": trial, "pixel": [int(p) for p in pixel], "value": worst}
    return DummyReport(worst == 0.0, trials, int(mask.sum()), worst, witness)


@dataclass
class DeviationReport:
    """Largest elementwise deviation of an identity, with the trial that produced it."""

    check: str
    max_deviation: float
    tolerance: float
    trials: int
    worst_trial: int
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["passed"] = self.passed
        return out


def check_linearity(models: Sequence[DifferentiableModel], a: float, b: float,
                    method: AttributionMethod, trials: int = 3, seed: int = 0,
                    output_index: int = 0, tolerance: float = EXACT_TOLERANCE) -> DeviationReport:
    """``attr(a f1 + b f2) == a attr(f1) + b attr(f2)`` on identical step grids."""
    if len(models) != 2:
        raise ValidationError("check_linearity needs exactly two models")
    f1, f2 = models
    combined = LinearCombination([f1, f2], [a, b])
    worst, worst_trial = 0.0, 0
    for trial, x in enumerate(_random_inputs(combined, trials, seed)):
        lhs = _values(method(combined, x, output_index))
        rhs = a * _values(method(f1, x, output_index)) + b * _values(method(f2, x, output_index))
        dev = float(np.max(np.abs(lhs - rhs)))
        if dev > worst:
            worst, worst_trial = dev, trial
    return DeviationReport("linearity", worst, tolerance, trials, worst_trial,
                           {"a": float(a), "b": float(b)})


@dataclass
class CompletenessReport:
    steps: tuple
    residuals: tuple
    relative_residuals: tuple
    delta_f: float
    tolerance: float = COMPLETENESS_TOLERANCE

    @property
    def floor(self) -> float:
        """Residuals below this are roundoff and are not expected to shrink."""
        return 1e-12 * max(1.0, abs(self.delta_f))

    @property
    def non_increasing(self) -> bool:
        r = np.asarray(self.residuals)
        return bool(np.all(r[1:] <= np.maximum(r[:-1] * (1 + 1e-6), self.floor)))

    @property
    def passed(self) -> bool:
        top = self.residuals[-1]
        return self.non_increasing and (top <= self.floor or self.relative_residuals[-1] <= self.tolerance)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.update(non_increasing=self.non_increasing, passed=self.passed)
        return out


def check_completeness(model: DifferentiableModel, x, path: PathSpec,
                       steps_ladder: Sequence[int] = (50, 100, 200, 400, 800),
                       output_index: int = 0) -> CompletenessReport:
    """Completeness residual for each step count, with ``path`` otherwise fixed."""
    ladder = [int(s) for s in steps_ladder]
    if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ParameterError("steps_ladder must be non-empty and strictly increasing")
    maps = [attribute(model, x, output_index, dataclasses.replace(path, steps=s)) for s in ladder]
    return CompletenessReport(tuple(ladder), tuple(m.completeness_residual for m in maps),
                              tuple(m.relative_residual for m in maps),
                              maps[-1].f_end - maps[-1].f_start)


def _affine_pixel(x: np.ndarray, pixel: tuple, c: float, d: float) -> np.ndarray:
    out = np.array(x, dtype=np.float64)
    out[pixel] = c * out[pixel] + d
    return out


def check_asi(model: DifferentiableModel, pixel, c: float, d: float, trials: int = 3,
              seed: int = 0, steps: int = 200, baseline: str = "random", output_index: int = 0,
              tolerance: float = EXACT_TOLERANCE) -> DeviationReport:
    """Intensity IG is unchanged when pixel ``j`` of input and baseline maps to
    ``c z_j + d`` and the model is composed with the inverse map."""
    if c == 0:
        raise ParameterError("the affine scale c must be non-zero")
    pixel = tuple(int(p) for p in np.atleast_1d(pixel))
    transformed = AffineFeatureTransform(model, pixel, c, d)
    worst, worst_trial = 0.0, 0
    for trial, x in enumerate(_random_inputs(model, trials, seed)):
        z0 = make_baseline(x, PathSpec.intensity(baseline, steps, seed + trial))
        plain = integrated_gradients(model, x, output_index, PathSpec.intensity(z0, steps))
        moved = integrated_gradients(transformed, _affine_pixel(x, pixel, c, d), output_index,
                                     PathSpec.intensity(_affine_pixel(z0, pixel, c, d), steps))
        dev = float(np.max(np.abs(plain.values - moved.values)))
        if dev > worst:
            worst, worst_trial = dev, trial
    return DeviationReport("asi", worst, tolerance, trials, worst_trial,
                           {"pixel": list(pixel), "c": float(c), "d": float(d),
                            "baseline": baseline})


def blur_asi_deviation(model: DifferentiableModel, pixel, c: float, d: float, trials: int = 3,
                       seed: int = 0, path: PathSpec | None = None,
                       output_index: int = 0) -> DeviationReport:
    """The same comparison for Blur IG.  Blurring mixes the rescaled pixel into
    its neighbours, so no invariance is expected; the deviation is for logging."""
    if c == 0:
        raise ParameterError("the affine scale c must be non-zero")
    path = PathSpec.blur() if path is None else path
    pixel = tuple(int(p) for p in np.atleast_1d(pixel))
    transformed = AffineFeatureTransform(model, pixel, c, d)
    worst, worst_trial = 0.0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientBlurWarning)
        for trial, x in enumerate(_random_inputs(model, trials, seed)):
            plain = blur_integrated_gradients(model, x, output_index, path)
            moved = blur_integrated_gradients(transformed, _affine_pixel(x, pixel, c, d),
                                              output_index, path)
            dev = float(np.max(np.abs(plain.values - moved.values)))
            if dev > worst:
                worst, worst_trial = dev, trial
    return DeviationReport("blur_asi", worst, float("inf"), trials, worst_trial,
                           {"pixel": list(pixel), "c": float(c), "d": float(d)})


def check_path_special_case(model: DifferentiableModel, path: PathSpec, trials: int = 2,
                            seed: int = 0, output_index: int = 0,
                            tolerance: float = EXACT_TOLERANCE) -> DeviationReport:
    """IG and Blur IG equal the generic path integral over their own discretised path."""
    worst, worst_trial = 0.0, 0
    for trial, x in enumerate(_random_inputs(model, trials, seed)):
        points, _ = path_points(x, path)
        direct = attribute(model, x, output_index, path)
        generic = path_integrated_gradients(model, x, output_index, points)
        dev = float(np.max(np.abs(direct.values - generic.values)))
        if dev > worst:
            worst, worst_trial = dev, trial
    return DeviationReport("path_special_case", worst, tolerance, trials, worst_trial,
                           {"path": path.to_dict()})


# -- suites ------------------------------------------------------------------

SUITES = ("causality", "dummy", "linearity", "completeness", "asi", "all")


@dataclass
class SuiteEntry:
    name: str
    asserted: bool
    passed: bool
    report: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SuiteReport:
    suite: str
    seed: int
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if e.asserted)

    def failures(self) -> list:
        return [e.name for e in self.entries if e.asserted and not e.passed]

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "passed": self.passed,
                "failures": self.failures(), "entries": [e.to_dict() for e in self.entries]}


def _suite_paths(steps: int) -> dict:
    return {"ig": PathSpec.intensity("black", steps), "blur-ig": PathSpec.blur(steps=steps)}


def run_suite(suite: str = "all", seed: int = 0, broken: bool = False,
              input_shape=(12, 12), steps: int = 100, corpus_size: int = 200) -> SuiteReport:
    """Run the named checks on the built-in fixtures.

    ``broken=True`` swaps in :func:`broken_method` for the dummy check, which
    must then fail.
    """
    if suite not in SUITES:
        raise ParameterError(f"suite must be one of {SUITES}, got {suite!r}")
    selected = SUITES[:-1] if suite == "all" else (suite,)
    report = SuiteReport(suite, int(seed))
    add = report.entries.append
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientBlurWarning)
        models = builtin_models(input_shape, seed=seed)
        paths = _suite_paths(steps)
        if "causality" in selected:
            study = parabola_study(seed=seed)
            add(SuiteEntry("causality/parabola", True, study.matches_expectations, study.to_dict()))
            corpus_path = PathSpec.blur(sigma_max=16.0, steps=500)
            reports = [check_causality_1d(s, corpus_path, 1e-9)
                       for s in smoothed_noise_corpus(corpus_size, seed=seed)]
            failed = [i for i, r in enumerate(reports)
                      if not (r.passed and r.counts_non_increasing)]
            add(SuiteEntry("causality/smoothed_noise", True, not failed,
                           {"signals": len(reports), "failed": failed[:20]}))
        for name, model in models.items():
            for label, path in paths.items():
                if "dummy" in selected:
                    method = broken_method(path) if broken else make_method(path)
                    r = check_dummy(model, method, trials=2, seed=seed)
                    add(SuiteEntry(f"dummy/{name}/{label}", True, r.passed, r.to_dict()))
                    r = check_path_special_case(model, path, seed=seed)
                    add(SuiteEntry(f"path_special_case/{name}/{label}", True, r.passed,
                                   r.to_dict()))
                if "completeness" in selected:
                    x = _random_inputs(model, 1, seed)[0]
                    r = check_completeness(model, x, path, (100, 200, 400))
                    add(SuiteEntry(f"completeness/{name}/{label}", True, r.passed, r.to_dict()))
            if "asi" in selected:
                for c, d in ((1.0, 0.0), (2.0, 0.5), (-1.0, 0.0)):
                    r = check_asi(model, (1, 2), c, d, trials=2, seed=seed, steps=steps)
                    add(SuiteEntry(f"asi/{name}/c={c:g},d={d:g}", True, r.passed, r.to_dict()))
                r = blur_asi_deviation(model, (1, 2), 2.0, 0.5, trials=1, seed=seed,
                                       path=paths["blur-ig"])
                add(SuiteEntry(f"blur_asi/{name}", False, True, r.to_dict()))
        if "linearity" in selected:
            pairs = {"sum_of_squares+gaussian_bump_detector": ("sum_of_squares",
                                                               "gaussian_bump_detector"),
                     "mlp_tanh+convnet_small": ("mlp_tanh", "convnet_small"),
                     "linear+mlp_tanh": ("linear", "mlp_tanh")}
            for pair, (m1, m2) in pairs.items():
                for label, path in paths.items():
                    r = check_linearity((models[m1], models[m2]), 2.0, -3.0, make_method(path),
                                        trials=2, seed=seed)
                    add(SuiteEntry(f"linearity/{pair}/{label}", True, r.passed, r.to_dict()))
    return report
