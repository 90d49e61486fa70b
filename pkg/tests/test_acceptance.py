"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` (the lines print either way).
"""

import json
import shutil
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from blurig import attribution as at
from blurig import axioms as ax
from blurig import evaluation as ev
from blurig import model as md
from blurig import scale_space as ss
from blurig.cli import main

from conftest import DATA, GOLDEN, smooth_bumps
from test_cli import GOLDEN_FILES, GOLDEN_RUNS, run_subprocess

# regression values, computed once with the packaged models and frozen
LOCALIZATION_BLUR_IG_AUC = 0.9252198312175
LOCALIZATION_RANDOM_AUC = 0.4944551944216
SCALE_DISC_UPPER = 0.6190334612294208
SCALE_TEXTURE_UPPER = -0.050958612328242725


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return report


def test_completeness(verdict):
    start = time.perf_counter()
    models = md.builtin_models((16, 16), seed=0)
    inputs = np.random.default_rng(0).random((20, 16, 16))
    worst, ratios, ok = 0.0, {}, True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", at.InsufficientBlurWarning)
        for name in ("sum_of_squares", "gaussian_bump_detector", "mlp_tanh", "convnet_small"):
            m = models[name]
            for kind, make in (("ig", lambda s: at.PathSpec.intensity("black", s)),
                               ("blur-ig", lambda s: at.PathSpec.blur(steps=s))):
                r500, r1000 = [], []
                for x in inputs:
                    a = at.attribute(m, x, 0, make(500))
                    b = at.attribute(m, x, 0, make(1000))
                    floor = 1e-12 * max(1.0, abs(a.f_end - a.f_start))
                    worst = max(worst, a.relative_residual if a.completeness_residual > floor else 0.0)
                    if a.completeness_residual > floor:
                        r500.append(a.completeness_residual)
                        r1000.append(b.completeness_residual)
                # exact-in-discretisation models sit at roundoff: nothing left to converge
                ratio = float(np.mean(r1000) / np.mean(r500)) if r500 else 0.0
                ratios[f"{name}/{kind}"] = round(ratio, 3)
                ok &= ratio <= 0.6
    elapsed = time.perf_counter() - start
    ok &= worst <= 0.01 and elapsed < 60
    verdict("completeness", ok, f"worst relative residual at s=500 {worst:.2e}, "
                                f"mean residual ratio s=1000/s=500 {ratios}, {elapsed:.1f}s")


def test_parabola_causality(verdict):
    start = time.perf_counter()
    study = ax.parabola_study()
    elapsed = time.perf_counter() - start
    ok = study.matches_expectations and elapsed < 1.0
    verdict("parabola causality", ok,
            f"blur passed={study.blur.passed}, black kinds={sorted(study.intensity_black.kinds())}, "
            f"random kinds={sorted(study.intensity_random.kinds())}, {elapsed:.2f}s")


def test_causality_corpus(verdict):
    path = at.PathSpec.blur(sigma_max=16.0, steps=500)
    reports = [ax.check_causality_1d(s, path, 1e-9) for s in ax.smoothed_noise_corpus(200)]
    passed = sum(r.passed for r in reports)
    monotone = sum(r.counts_non_increasing for r in reports)
    verdict("causality corpus", passed == 200 and monotone == 200,
            f"{passed}/200 pass at tolerance 1e-9, {monotone}/200 with non-increasing counts")


def test_semigroup(verdict):
    rng = np.random.default_rng(0)
    sigmas = (0.5, 1.0, 2.0, 4.0)
    worst = 0.0
    for _ in range(10):
        x = rng.random((64, 64))
        for s1 in sigmas:
            once = ss.blur2d(x, s1)
            for s2 in sigmas:
                err = np.max(np.abs(ss.blur2d(once, s2) - ss.blur2d(x, np.hypot(s1, s2))))
                worst = max(worst, float(err))
    verdict("semigroup", worst <= 1e-3, f"max composition error {worst:.2e}")


def test_log_diffusion_consistency(verdict):
    worst = 0.0
    path = at.PathSpec.blur(steps=500)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", at.InsufficientBlurWarning)
        for seed in range(10):
            shape = (16, 16) if seed < 5 else (32, 32)
            m = (md.random_mlp_tanh(shape, seed=seed) if seed % 2 == 0
                 else md.random_convnet_small(shape, seed=seed))
            x = smooth_bumps(shape, seed=seed)
            diff = at.blur_integrated_gradients(m, x, 0, path)
            lap = at.blur_integrated_gradients(m, x, 0, path, backend="laplacian")
            worst = max(worst, abs(lap.total - diff.total) / abs(diff.total))
    verdict("LoG/diffusion consistency", worst <= 0.02,
            f"max relative difference of Blur IG totals {worst:.2e}")


def test_axiom_suite(verdict, tmp_path):
    code = main(["axioms", "--suite", "all", "--report", str(tmp_path / "r.json")])
    doc = json.loads((tmp_path / "r.json").read_text())
    by_check = {}
    for e in doc["entries"]:
        if not e["asserted"]:
            continue
        check = e["name"].split("/")[0]
        r = e["report"]
        value = r.get("max_abs_at_dummy", r.get("max_deviation"))
        if value is not None:
            by_check[check] = max(by_check.get(check, 0.0), value)
    ok = (code == 0 and by_check["dummy"] == 0.0 and by_check["linearity"] <= 1e-10
          and by_check["asi"] <= 1e-10 and by_check["path_special_case"] <= 1e-10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(by_check.items()))
    verdict("axiom suite", ok, f"exit {code}, max deviations: {detail}")


def test_gradient_oracle(verdict):
    worst = {}
    for name, m in md.builtin_models((16, 16), seed=0).items():
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.random(m.input_shape)
            for k in range(m.num_outputs):
                worst[name] = max(worst.get(name, 0.0), md.check_gradient(m, x, k, step=1e-4))
    ok = max(worst.values()) <= 1e-5
    verdict("gradient oracle", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_localization(verdict):
    start = time.perf_counter()
    data = ev.generate_shape_dataset(100, (32, 32), seed=0)
    res = ev.compare_methods(md.load_packaged_model("shapes3"), data, ["blur-ig", "random"],
                             steps=200)
    blur, rand = res.mean("blur-ig")["auc"], res.mean("random")["auc"]
    elapsed = time.perf_counter() - start
    ok = (blur >= 0.85 and blur > rand and abs(rand - 0.5) <= 0.03 and elapsed < 300
          and blur == pytest.approx(LOCALIZATION_BLUR_IG_AUC, abs=1e-9)
          and rand == pytest.approx(LOCALIZATION_RANDOM_AUC, abs=1e-9))
    verdict("desk-scale localization", ok,
            f"Blur IG mean AUC {blur:.4f}, random {rand:.4f}, {elapsed:.0f}s")


def test_scale_localization(verdict):
    data = ev.generate_shape_dataset(100, (32, 32), ("disc", "texture"), seed=0, center=True)
    split = ev.scale_localization(md.load_packaged_model("disc_texture"), data, steps=200)
    summary = ev.summarize_scale_localization(split)
    disc_upper = summary["disc"]["pooled_upper"]
    texture_lower = 1.0 - summary["texture"]["pooled_upper"]
    ok = (disc_upper >= 0.6 and texture_lower >= 0.6
          and disc_upper == pytest.approx(SCALE_DISC_UPPER, abs=1e-9)
          and summary["texture"]["pooled_upper"] == pytest.approx(SCALE_TEXTURE_UPPER, abs=1e-9))
    verdict("scale localization", ok,
            f"disc mass above sigma_max/2 {disc_upper:.3f} (n={summary['disc']['n']}), "
            f"texture mass below {texture_lower:.3f} (n={summary['texture']['n']})")


def test_cli_determinism(verdict, tmp_path):
    mismatches = []
    for run, threads in ((0, 1), (1, 1), (2, 4)):
        run_dir = tmp_path / f"run{run}"
        run_dir.mkdir()
        for f in ("convnet16.json", "shape16.png", "disc32.png"):
            shutil.copy(DATA / f, run_dir / f)
        for name, args in GOLDEN_RUNS.items():
            r = run_subprocess(args, run_dir, threads)
            if r.returncode != 0:
                mismatches.append(f"{name} exit {r.returncode}")
                continue
            for fname in GOLDEN_FILES[name]:
                if (run_dir / fname).read_bytes() != (GOLDEN / fname).read_bytes():
                    mismatches.append(f"{fname} (run {run}, {threads} threads)")
    verdict("CLI determinism", not mismatches,
            "golden files byte-identical over two runs and 1 vs 4 threads" if not mismatches
            else f"mismatches: {mismatches}")
