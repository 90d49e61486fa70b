"""Rendering attribution maps and prediction trends to image files.

Figures are built on the Agg canvas directly, so nothing here touches pyplot
state, and PNG metadata is stripped so that reruns produce identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .attribution import TrendCurve
from .errors import ParameterError

COLORMAPS = ("signed_green_red", "grayscale_abs")
_PNG_METADATA = {"Software": None}


@dataclass(frozen=True)
class RenderConfig:
    """``percentile_clip`` caps magnitudes at that percentile of ``|values|``."""

    colormap: str = "signed_green_red"
    percentile_clip: float = 99.0
    overlay: bool = False

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise ParameterError(f"colormap must be one of {COLORMAPS}, got {self.colormap!r}")
        if not 0 < self.percentile_clip <= 100:
            raise ParameterError(f"percentile_clip must lie in (0, 100], got {self.percentile_clip}")


def saliency_rgb(values, config: RenderConfig = RenderConfig(), image=None) -> np.ndarray:
    """RGB floats in ``[0, 1]``: green for positive, red for negative attribution.

    With ``grayscale_abs`` the magnitude is shown in grey.  ``overlay`` blends
    the result over ``image`` (values in ``[0, 1]``), keeping half its brightness.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    clip = float(np.percentile(np.abs(values), config.percentile_clip))
    scaled = np.clip(values / clip, -1.0, 1.0) if clip > 0 else np.zeros_like(values)
    rgb = np.zeros(values.shape + (3,))
    if config.colormap == "signed_green_red":
        rgb[..., 1] = np.maximum(scaled, 0.0)
        rgb[..., 0] = np.maximum(-scaled, 0.0)
    else:
        rgb[...] = np.abs(scaled)[..., None]
    if config.overlay:
        if image is None:
            raise ParameterError("overlay needs the input image")
        base = np.clip(np.asarray(image, dtype=np.float64).reshape(values.shape), 0.0, 1.0)
        rgb = np.clip(0.5 * base[..., None] + rgb, 0.0, 1.0)
    return rgb


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", metadata=_PNG_METADATA)


def render_saliency(values, path, config: RenderConfig = RenderConfig(), image=None,
                    title: str | None = None) -> None:
    """Write the saliency map as a PNG, one pixel block per attribution value."""
    rgb = saliency_rgb(values, config, image)
    h, w = rgb.shape[:2]
    scale = 4.0 / max(h, w)
    fig = Figure(figsize=(max(w * scale, 1.5), max(h * scale, 1.5) + (0.4 if title else 0)), dpi=100)
    ax = fig.add_axes((0, 0, 1, 1 if not title else 0.9))
    ax.imshow(rgb, interpolation="nearest", aspect="auto")
    ax.set_axis_off()
    if title:
        fig.suptitle(title, fontsize=9)
    _save(fig, path)


def render_trend(curve: TrendCurve, path, class_names=None) -> None:
    """Scores of each tracked class against the path coordinate, and accrued attribution."""
    blur = not np.all(np.isnan(curve.sigmas))
    x = curve.sigmas if blur else curve.alphas
    fig = Figure(figsize=(6.0, 5.0), dpi=100)
    top, bottom = fig.subplots(2, 1, sharex=True)
    for j, c in enumerate(curve.tracked_classes):
        label = class_names[c] if class_names and c < len(class_names) else f"class {c}"
        top.plot(x, curve.scores[:, j], label=label)
    top.set_ylabel("softmax score" if curve.score_kind == "softmax" else "score")
    top.legend(loc="best", fontsize=8)
    bottom.plot(x, curve.cumulative_mass, color="black")
    bottom.set_ylabel(f"accrued attribution\n(class {curve.tracked_classes[0]})")
    bottom.set_xlabel("sigma" if blur else "interpolation fraction")
    if blur:
        # the path runs from large sigma to the input; read it left to right
        bottom.invert_xaxis()
    fig.tight_layout()
    _save(fig, path)
