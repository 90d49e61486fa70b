import collections
import warnings

import numpy as np
import pytest

from blurig import attribution as at
from blurig import model as md
from blurig import scale_space as ss
from blurig.errors import ParameterError, ValidationError
from blurig.evaluation import generate_shape_dataset

from conftest import smooth_bumps


@pytest.fixture(scope="module")
def models():
    return md.builtin_models((16, 16), seed=0)


def dense_riemann_ig(model, x, baseline, k, n=20000):
    """Oracle: a very fine left Riemann sum along the straight line."""
    t = np.arange(n) / n
    pts = baseline + t[:, None, None] * (x - baseline)
    grads = np.concatenate([model.gradient_batch(pts[i:i + 2000], k) for i in range(0, n, 2000)])
    return (x - baseline) * grads.mean(axis=0)


# -- path specification -----------------------------------------------------------

def test_pathspec_validation():
    with pytest.raises(ParameterError):
        at.PathSpec("spiral")
    with pytest.raises(ParameterError):
        at.PathSpec.blur(sigma_max=0.0)
    with pytest.raises(ParameterError):
        at.PathSpec.blur(sigma_max=-2.0)
    with pytest.raises(ParameterError):
        at.PathSpec.intensity(steps=0)
    with pytest.raises(ParameterError):
        at.PathSpec.intensity("white")
    with pytest.raises(ParameterError):
        at.PathSpec.blur(boundary="wrap")
    assert at.PathSpec.intensity("random").seed == 0
    assert at.PathSpec.blur(4.0, 10).to_dict()["sigma_max"] == 4.0


def test_baselines(rng):
    x = rng.random((6, 6))
    assert np.all(at.make_baseline(x, at.PathSpec.intensity("black")) == 0)
    gray = at.make_baseline(x, at.PathSpec.intensity("grayscale"))
    assert np.all(gray == x.mean())
    r1 = at.make_baseline(x, at.PathSpec.intensity("random", seed=4))
    r2 = at.make_baseline(x, at.PathSpec.intensity("random", seed=4))
    assert np.array_equal(r1, r2) and r1.min() >= x.min() and r1.max() <= x.max()
    with pytest.raises(ValidationError):
        at.make_baseline(x, at.PathSpec.intensity(np.zeros((3, 3))))


def test_blur_path_points_descend_in_sigma(rng):
    x = rng.random((8, 8))
    pts, sig = at.path_points(x, at.PathSpec.blur(3.0, 6))
    assert sig[0] == 3.0 and sig[-1] == 0.0 and np.all(np.diff(sig) < 0)
    assert np.array_equal(pts[-1], x)
    assert np.allclose(np.diff(ss.sigma_to_alpha(sig)), -18.0 / 6)


# -- integrated gradients -------------------------------------------------------

@pytest.mark.parametrize("steps", [1, 3, 50])
def test_ig_linear_model_is_exact(models, steps, rng):
    m = models["linear"]
    x = rng.random(m.input_shape)
    a = at.integrated_gradients(m, x, 1, at.PathSpec.intensity(steps=steps))
    assert np.allclose(a.values, m.weights[1].reshape(x.shape) * x, atol=1e-15)


def test_ig_input_equal_to_baseline_is_zero(models):
    m = models["mlp_tanh"]
    x = np.zeros(m.input_shape)
    a = at.integrated_gradients(m, x, 0)
    assert np.all(a.values == 0) and a.completeness_residual == 0


def test_ig_mlp_completeness_against_dense_riemann(models, rng):
    m = models["mlp_tanh"]
    x = rng.random(m.input_shape)
    oracle = dense_riemann_ig(m, x, np.zeros_like(x), 0)
    for s in (1000, 2000):
        a = at.integrated_gradients(m, x, 0, at.PathSpec.intensity(steps=s))
        assert a.relative_residual < 0.005
        assert np.max(np.abs(a.values - oracle)) < 1e-3 * np.max(np.abs(oracle))


def test_ig_shape_mismatch(models):
    with pytest.raises(ValidationError):
        at.integrated_gradients(models["linear"], np.zeros((4, 4)), 0)
    with pytest.raises(ValidationError):
        at.integrated_gradients(models["linear"], np.full((16, 16), np.nan), 0)
    with pytest.raises(ParameterError):
        at.integrated_gradients(models["linear"], np.zeros((16, 16)), 0, at.PathSpec.blur())


# -- blur integrated gradients --------------------------------------------------

def test_blur_ig_constant_input_is_zero(models):
    a = at.blur_integrated_gradients(models["convnet_small"], np.full((16, 16), 0.4), 2)
    assert np.all(a.values == 0)


def test_blur_ig_single_pixel_is_exact(models, rng):
    m = models["single_pixel"]
    x = rng.random(m.input_shape)
    path = at.PathSpec.blur(steps=37)
    a = at.blur_integrated_gradients(m, x, 0, path)
    top = ss.blur2d(x, 8.0)
    assert abs(a.total - (x[0, 0] - top[0, 0])) < 1e-14
    assert np.all(a.values[m.dummy_mask(0)] == 0)


def test_blur_ig_bump_detector_on_template(models):
    m = models["gaussian_bump_detector"]
    x = m.template / m.template.max()
    a = at.blur_integrated_gradients(m, x, 0, at.PathSpec.blur(steps=500))
    assert a.relative_residual < 0.01
    # linear model: every step is exact, so the residual is pure roundoff
    assert a.completeness_residual < 1e-12


def test_blur_ig_sum_of_squares_completeness_is_exact_under_midpoint_rule(models, rng):
    m = models["sum_of_squares"]
    x = rng.random(m.input_shape)
    a = at.blur_integrated_gradients(m, x, 0, at.PathSpec.blur(steps=7))
    assert a.relative_residual < 1e-12


def test_blur_ig_convergence_against_dense_path(models):
    m = models["mlp_tanh"]
    x = smooth_bumps((16, 16), seed=2)
    dense = at.blur_integrated_gradients(m, x, 0, at.PathSpec.blur(steps=4000))
    a = at.blur_integrated_gradients(m, x, 0, at.PathSpec.blur(steps=500))
    assert abs(a.total - dense.total) < 0.01 * abs(dense.f_end - dense.f_start)


def test_laplacian_backend_agrees_with_difference_backend(models):
    m = models["mlp_tanh"]
    x = smooth_bumps((16, 16), seed=5)
    path = at.PathSpec.blur(steps=500)
    diff = at.blur_integrated_gradients(m, x, 1, path)
    lap = at.blur_integrated_gradients(m, x, 1, path, backend="laplacian")
    assert abs(lap.total - diff.total) < 0.02 * abs(diff.total)
    assert lap.f_start == diff.f_start and lap.f_end == diff.f_end
    with pytest.raises(ParameterError):
        at.blur_integrated_gradients(m, x, 1, path, backend="spectral")


def test_insufficient_blur_warning(models, rng):
    x = rng.random((16, 16))
    with pytest.warns(at.InsufficientBlurWarning):
        at.blur_integrated_gradients(models["convnet_small"], x, 0, at.PathSpec.blur(0.5, 10))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        at.blur_integrated_gradients(models["single_pixel"], x, 0, at.PathSpec.blur(60.0, 10))


def test_per_step_partials_sum_to_values(models, rng):
    x = rng.random((16, 16))
    for path in (at.PathSpec.blur(steps=30), at.PathSpec.intensity(steps=30)):
        a = at.attribute(models["convnet_small"], x, 0, path, keep_partials=True)
        assert np.max(np.abs(a.per_step_partials.sum(axis=0) - a.values)) < 1e-10
        assert len(a.cumulative_mass()) == 31
    with pytest.raises(ValidationError):
        at.attribute(models["linear"], x, 0, at.PathSpec.blur(steps=5)).cumulative_mass()


# -- generic path method ----------------------------------------------------------

def test_path_special_cases(models, rng):
    m = models["mlp_tanh"]
    x = rng.random(m.input_shape)
    for path in (at.PathSpec.blur(steps=40), at.PathSpec.intensity("random", 40, seed=3)):
        pts, _ = at.path_points(x, path)
        generic = at.path_integrated_gradients(m, x, 2, pts)
        special = at.attribute(m, x, 2, path)
        assert np.max(np.abs(generic.values - special.values)) < 1e-10


def test_two_point_path_linear_model(models, rng):
    m = models["linear"]
    x, z0 = rng.random(m.input_shape), rng.random(m.input_shape)
    a = at.path_integrated_gradients(m, x, 0, np.stack([z0, x]))
    assert np.allclose(a.values, (x - z0) * m.weights[0].reshape(x.shape), atol=1e-15)


def test_concatenated_path_splits(models, rng):
    m = models["mlp_tanh"]
    a, b, c = (rng.random(m.input_shape) for _ in range(3))
    t = np.linspace(0, 1, 21)[:, None, None]
    ab, bc = a + t * (b - a), b + t * (c - b)
    whole = at.path_integrated_gradients(m, c, 0, np.concatenate([ab, bc[1:]]))
    first = at.path_integrated_gradients(m, b, 0, ab)
    second = at.path_integrated_gradients(m, c, 0, bc)
    assert np.max(np.abs(whole.values - first.values - second.values)) < 1e-12


def test_path_errors(models, rng):
    m = models["linear"]
    x = rng.random(m.input_shape)
    with pytest.raises(ParameterError):
        at.path_integrated_gradients(m, x, 0, x[None])
    with pytest.raises(ValidationError):
        at.path_integrated_gradients(m, x, 0, np.stack([x, x + 1]))


def test_average_random_baselines(models, rng):
    m = models["linear"]
    x = rng.random(m.input_shape)
    avg = at.average_random_baselines(m, x, 0, runs=3, seed=5, steps=10)
    maps = [at.integrated_gradients(m, x, 0, at.PathSpec.intensity("random", 10, 5 + r))
            for r in range(3)]
    assert np.allclose(avg.values, np.mean([a.values for a in maps], axis=0), atol=1e-15)
    with pytest.raises(ParameterError):
        at.average_random_baselines(m, x, 0, runs=0)


# -- prediction trend and second-last label --------------------------------------

def test_trend_constant_input_is_flat(models):
    x = np.full((16, 16), 0.3)
    curve = at.prediction_trend(models["convnet_small"], x, [0, 1, 2], at.PathSpec.blur(steps=20))
    assert np.all(curve.scores == curve.scores[0])
    assert np.all(curve.cumulative_mass == 0)
    assert curve.score_kind == "softmax" and len(curve.sigmas) == 21


def test_trend_linear_model_affine_in_alpha(models, rng):
    x = rng.random((16, 16))
    curve = at.prediction_trend(models["linear"], x, [0], at.PathSpec.intensity(steps=10),
                                scores="raw")
    fitted = np.polyval(np.polyfit(curve.alphas, curve.scores[:, 0], 1), curve.alphas)
    assert np.max(np.abs(fitted - curve.scores[:, 0])) < 1e-12
    assert np.all(np.isnan(curve.sigmas))


def test_trend_mass_matches_blur_ig(models, rng):
    m = models["gaussian_bump_detector"]
    x = rng.random((16, 16))
    path = at.PathSpec.blur(steps=50)
    curve = at.prediction_trend(m, x, [0], path)
    assert curve.score_kind == "raw"
    assert abs(curve.cumulative_mass[-1] - at.blur_integrated_gradients(m, x, 0, path).total) < 1e-10


def test_trend_errors(models):
    x = np.zeros((16, 16))
    with pytest.raises(ValidationError):
        at.prediction_trend(models["linear"], x, [], at.PathSpec.blur())
    with pytest.raises(ValidationError):
        at.prediction_trend(models["linear"], x, [5], at.PathSpec.blur())
    with pytest.raises(ParameterError):
        at.prediction_trend(models["linear"], x, [0], at.PathSpec.blur(), scores="logit")


def _two_class(flip_threshold):
    # logits (s, -s) with s = sum(x) - threshold: class 0 once the mass passes the threshold
    w = np.stack([np.ones(16), -np.ones(16)])
    return md.LinearModel(w, [-flip_threshold, flip_threshold], (4, 4))


def test_second_last_label_no_transition():
    m = _two_class(-1.0)  # class 0 everywhere on [0, 1] inputs
    r = at.second_last_label(m, np.full((4, 4), 0.5), 0, at.PathSpec.intensity(steps=10))
    assert r.no_transition and r.second_last_label is None


def test_second_last_label_single_flip():
    m = _two_class(4.0)
    r = at.second_last_label(m, np.full((4, 4), 0.5), 0, at.PathSpec.intensity(steps=10))
    assert r.second_last_label == 1 and not r.no_transition
    assert r.argmax_per_step[0] == 1 and r.argmax_per_step[-1] == 0
    with pytest.raises(ParameterError):
        at.second_last_label(md.analytic_model("sum_of_squares", (4, 4)), np.zeros((4, 4)), 0,
                             at.PathSpec.blur())


def test_second_last_label_histogram_is_frozen():
    # regression value: packaged 3-class shape classifier on the seed-0 shape set
    m = md.load_packaged_model("shapes3")
    data = generate_shape_dataset(100, (32, 32), seed=0)
    hist = collections.Counter(
        at.second_last_label(m, s.field, s.label, at.PathSpec.blur(steps=100)).second_last_label
        for s in data)
    assert dict(hist) == {None: 67, 0: 20, 1: 12, 2: 1}


# -- frequency bands --------------------------------------------------------------

def test_band_aggregate_trivial_cases():
    uniform = at.frequency_band_aggregate(np.ones((6, 3)), [(0, 3), (3, 6)])
    assert uniform.band_sums == (9.0, 9.0) and uniform.ratio == (1.0, 1.0)
    signed = np.vstack([np.ones((3, 3)), -np.ones((3, 3))])
    assert at.frequency_band_aggregate(signed, [(0, 3), (3, 6)]).ratio == (1.0, -1.0)
    assert at.frequency_band_aggregate(np.zeros((4, 2)), [(0, 4)]).ratio is None


@pytest.mark.parametrize("bands", [[(0, 3), (2, 6)], [(0, 3)], [(0, 3), (4, 6)], [(0, 0), (0, 6)]])
def test_band_aggregate_rejects_bad_partitions(bands):
    with pytest.raises(ValidationError):
        at.frequency_band_aggregate(np.ones((6, 2)), bands)


def test_band_aggregate_high_frequency_template():
    yy, xx = np.mgrid[:16, :16]
    template = np.zeros((16, 16))
    template[:8] = np.cos(np.pi * xx[:8]) * np.cos(np.pi * yy[:8])  # checkerboard in top rows
    m = md.GaussianBumpDetector(template)
    x = 0.5 + 0.5 * template + 0.3 * np.cos(np.pi * xx / 8)
    a = at.blur_integrated_gradients(m, x, 0, at.PathSpec.blur(steps=200))
    agg = at.frequency_band_aggregate(a, [(0, 8), (8, 16)])
    assert agg.top_sum > abs(agg.bottom_sum)
    assert agg.top_sum == pytest.approx(63.9998114008321, rel=1e-9)
    assert agg.bottom_sum == 0.0
