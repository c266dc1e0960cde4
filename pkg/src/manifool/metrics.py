"""Invariance scores, misclassification curves and the exhaustive
translation oracle."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .attack import AttackParams, FoolResult, manifool_multiclass
from .classifier import ClassifierModel, LabeledDataset, predict, predict_batch
from .errors import AllFailed, BracketFailure, EmptyDataset, LogUndefined, SegmentOverflow, ZeroImage
from .geodesic import (
    GeodesicParams,
    RaySampler,
    normalized_score,
    path_lower_bound,
    random_direction,
)
from .image import Image, l2_norm, warp
from .parallel import parallel_map
from .transforms import Transform, TransformGroup

__all__ = [
    "ImageRecord",
    "EvalReport",
    "RobustnessCurve",
    "attack_dataset",
    "report_from_results",
    "invariance_score",
    "misclassification_curve",
    "r_hat",
    "oracle_min_translation",
    "grid_step_score",
    "EVAL_HEADER",
    "CURVE_HEADER",
]

EVAL_HEADER = ["image", "label", "success", "score", "new_label", "iterations", "tau"]
CURVE_HEADER = ["r", "rate", "flips", "valid", "bracket_failures", "r_hat"]


def _num(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class ImageRecord:
    index: int
    label: int
    success: bool
    score: Optional[float]
    new_label: int
    iterations: int
    tau: Optional[Transform] = None

    def row(self) -> list:
        return [self.index, self.label, int(self.success), _num(self.score), self.new_label,
                self.iterations, self.tau.to_line() if self.tau is not None else ""]


@dataclass
class EvalReport:
    rho_hat: float
    per_image: list
    failure_count: int
    group: TransformGroup
    params: dict = field(default_factory=dict)

    def successes(self) -> list:
        return [r for r in self.per_image if r.success]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for rec in self.per_image:
            w.writerow(rec.row())
        return buf.getvalue()


@dataclass
class RobustnessCurve:
    r_grid: np.ndarray
    flips: np.ndarray
    valid: np.ndarray
    bracket_failures: np.ndarray
    samples_per_point: int

    @property
    def misclassification_rate(self) -> np.ndarray:
        valid = np.maximum(self.valid, 1)
        return np.where(self.valid > 0, self.flips / valid, np.nan)

    @property
    def r_hat(self) -> Optional[float]:
        return r_hat(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        rh = self.r_hat
        for r, rate, f, v, b in zip(self.r_grid, self.misclassification_rate, self.flips,
                                    self.valid, self.bracket_failures):
            w.writerow([_num(r), "" if math.isnan(rate) else _num(rate), int(f), int(v), int(b),
                        "undefined" if rh is None else _num(rh)])
        return buf.getvalue()


def _attack_one(item, model, group, attack_params, geo_params) -> FoolResult:
    img, label = item
    return manifool_multiclass(img, model, group, attack_params, geo_params, true_label=label)


def attack_dataset(data: LabeledDataset, model: ClassifierModel, group: TransformGroup,
                   attack_params: AttackParams = AttackParams(),
                   geo_params: GeodesicParams = GeodesicParams(), jobs: int = 1) -> list:
    """ManiFool on every image (already-misclassified ones return the identity)."""
    work = partial(_attack_one, model=model, group=group, attack_params=attack_params,
                   geo_params=geo_params)
    return parallel_map(work, list(zip(data.images, data.labels)), jobs)


def report_from_results(data: LabeledDataset, results: Sequence[FoolResult],
                        group: TransformGroup, params: dict | None = None) -> EvalReport:
    records = []
    for i, (label, res) in enumerate(zip(data.labels, results)):
        records.append(ImageRecord(i, label, res.success,
                                   res.geodesic_score if res.success else None,
                                   res.new_label, res.iterations,
                                   res.tau_hat if res.success else None))
    scores = [r.score for r in records if r.success]
    if not scores:
        raise AllFailed("no image produced a fooling transformation")
    return EvalReport(float(np.mean(scores)), records, len(records) - len(scores), group,
                      dict(params or {}))


def invariance_score(data: LabeledDataset, model: ClassifierModel, group: TransformGroup,
                     attack_params: AttackParams = AttackParams(),
                     geo_params: GeodesicParams = GeodesicParams(), jobs: int = 1) -> EvalReport:
    """Mean normalized score of the ManiFool transform over the dataset.

    Images the model already misclassifies count with score 0; failed
    attacks are left out of the mean and counted in ``failure_count``.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    results = attack_dataset(data, model, group, attack_params, geo_params, jobs)
    params = {"group": group.value, **attack_params.__dict__,
              "geodesic_step": geo_params.step, "max_segments": geo_params.max_segments}
    return report_from_results(data, results, group, params)


def replicate_seed(seed: int, image_index: int, replicate: int) -> tuple:
    """Entropy for the random direction of one (image, replicate) pair."""
    return (seed, image_index, replicate)


def _curve_one(item, model, group, r_grid, reps, seed, geo_params):
    index, img = item
    base = predict(model, img)
    flips = np.zeros(len(r_grid), dtype=np.int64)
    valid = np.zeros(len(r_grid), dtype=np.int64)
    failed = np.zeros(len(r_grid), dtype=np.int64)
    for rep in range(reps):
        sampler = RaySampler(img, group, random_direction(group, replicate_seed(seed, index, rep)),
                             geo_params)
        for k, r in enumerate(r_grid):
            try:
                t = sampler.solve(float(r))
            except (BracketFailure, LogUndefined, SegmentOverflow):
                failed[k] += 1
                continue
            valid[k] += 1
            flips[k] += predict(model, warp(img, t)) != base
    return flips, valid, failed


def misclassification_curve(data: LabeledDataset, model: ClassifierModel, group: TransformGroup,
                            r_grid, reps_per_image: int = 10, seed: int = 0,
                            geo_params: GeodesicParams = GeodesicParams(),
                            jobs: int = 1) -> RobustnessCurve:
    """Label-change rate of random transforms at each normalized score in ``r_grid``.

    Each (image, replicate) pair draws one direction on the unit sphere from
    ``replicate_seed(seed, image, replicate)`` and reuses it for every grid
    point, so the curve is computed with common random directions.
    """
    r_grid = np.asarray(r_grid, dtype=np.float64)
    if r_grid.ndim != 1 or r_grid.size == 0 or np.any(r_grid <= 0) or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be a non-empty, strictly increasing, positive sequence")
    work = partial(_curve_one, model=model, group=group, r_grid=r_grid, reps=reps_per_image,
                   seed=seed, geo_params=geo_params)
    parts = parallel_map(work, [(i, img) for i, img in enumerate(data.images)
                                if l2_norm(img) > 0], jobs)
    flips = np.zeros(len(r_grid), dtype=np.int64)
    valid = np.zeros(len(r_grid), dtype=np.int64)
    failed = np.zeros(len(r_grid), dtype=np.int64)
    for f, v, b in parts:
        flips += f
        valid += v
        failed += b
    return RobustnessCurve(r_grid, flips, valid, failed, reps_per_image)


def r_hat(curve: RobustnessCurve, threshold: float = 0.5) -> Optional[float]:
    """Smallest score where the rate reaches ``threshold``, linearly
    interpolated between grid points; ``None`` if it never does."""
    rates = curve.misclassification_rate
    grid = curve.r_grid
    prev = None
    for k, rate in enumerate(rates):
        if math.isnan(rate):
            continue
        if rate >= threshold:
            if prev is None:
                return float(grid[k])
            r0, q0 = prev
            return float(r0 + (threshold - q0) * (grid[k] - r0) / (rate - q0))
        prev = (grid[k], rate)
    return None


def grid_step_score(img: Image, grid_step: float = 1.0,
                    geo_params: GeodesicParams = GeodesicParams()) -> float:
    """Score of a single oracle grid step (the larger of the x and y steps)."""
    return max(normalized_score(img, Transform.translation(grid_step, 0.0), geo_params,
                                TransformGroup.TRANSLATION),
               normalized_score(img, Transform.translation(0.0, grid_step), geo_params,
                                TransformGroup.TRANSLATION))


def oracle_min_translation(img: Image, model: ClassifierModel, search_radius: float = 12,
                           grid_step: float = 1, geo_params: GeodesicParams = GeodesicParams(),
                           label: Optional[int] = None):
    """Exhaustive search over translations on a square grid.

    Returns ``(transform, score)`` for the label-changing translation with
    the smallest normalized score, or ``None`` if no grid point changes the
    label.  Candidates are visited by increasing chord distance, which
    lower-bounds the path length, so the scan can stop early without
    losing the exact grid minimum.
    """
    source = predict(model, img)
    if label is not None and source != label:
        return Transform.identity(), 0.0
    ref = source if label is None else label
    steps = int(math.floor(search_radius / grid_step + 1e-9))
    offsets = [(i * grid_step, j * grid_step)
               for j in range(-steps, steps + 1) for i in range(-steps, steps + 1)
               if (i, j) != (0, 0)]
    warped = np.stack([warp(img, Transform.translation(a, b)).pixels for a, b in offsets])
    labels = predict_batch(model, warped)
    norm = l2_norm(img)
    if norm == 0.0:
        raise ZeroImage("oracle needs a nonzero image")
    chords = np.linalg.norm((warped - img.pixels).reshape(len(offsets), -1), axis=1) / norm
    best, best_t = math.inf, None
    for k in np.argsort(chords, kind="stable"):
        if labels[k] == ref:
            continue
        if chords[k] >= best:
            break
        t = Transform.translation(*offsets[k])
        if path_lower_bound(img, t, geo_params, TransformGroup.TRANSLATION) / norm >= best:
            continue
        s = normalized_score(img, t, geo_params, TransformGroup.TRANSLATION)
        if s < best:
            best, best_t = s, t
    return None if best_t is None else (best_t, best)
