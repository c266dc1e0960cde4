"""Shared fixtures: smooth synthetic images and analytically built classifiers."""
from __future__ import annotations

import numpy as np
import pytest

from manifool.classifier import Architecture, ClassifierModel
from manifool.image import Image

SIZE = 28


def centered_grid(width: int = SIZE, height: int = SIZE):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs - (width - 1) / 2.0, ys - (height - 1) / 2.0


def gaussian_blob(cx: float = 0.0, cy: float = 0.0, sigma: float = 3.0,
                  width: int = SIZE, height: int = SIZE, amplitude: float = 1.0) -> Image:
    xs, ys = centered_grid(width, height)
    return Image(amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2)))


def bilinear_patch(width: int = SIZE, height: int = SIZE) -> Image:
    """a + bx + cy + dxy: reproduced exactly by bilinear interpolation."""
    xs, ys = centered_grid(width, height)
    return Image(0.5 + 0.02 * xs - 0.015 * ys + 0.001 * xs * ys)


def linear_model(rows, biases=None, width: int = SIZE, height: int = SIZE) -> ClassifierModel:
    """LinearSoftmax model whose class-k weight image is ``rows[k]``."""
    w = np.stack([np.asarray(r, dtype=np.float64).reshape(-1) for r in rows])
    b = np.zeros(len(rows)) if biases is None else np.asarray(biases, dtype=np.float64)
    return ClassifierModel(Architecture.LINEAR_SOFTMAX, len(rows), width, height,
                           np.concatenate([w.ravel(), b]))


def centroid_x_model(boundary: float = 0.0) -> ClassifierModel:
    """Two classes split by the intensity centroid: class 1 iff mean x > boundary."""
    xs, _ = centered_grid()
    return linear_model([np.zeros_like(xs), xs - boundary])


def three_class_model(bx: float = 2.0, cy: float = 4.0) -> ClassifierModel:
    """Class 0 near the origin; class 1 once the centroid passes x = bx, class 2
    once it passes y = cy."""
    xs, ys = centered_grid()
    return linear_model([np.zeros_like(xs), xs - bx, ys - cy])


@pytest.fixture
def blob() -> Image:
    return gaussian_blob()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, keyed by criterion number, printed after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[key])
