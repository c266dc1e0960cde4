"""Geodesic scores on the image appearance manifold.

The distance between an image and its transformed version is estimated
along the direct path ``s -> warp(img, exp(s * v))`` with
``v = log(t)``: the path is cut into steps of length ``eta`` in
coefficient space and the L2 lengths of the chords are summed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BracketFailure, LogUndefined, SegmentOverflow, ZeroImage
from .image import Image, l2_norm, warp
from .transforms import TangentVector, Transform, TransformGroup, exp_map, log_map

__all__ = [
    "GeodesicParams",
    "infer_group",
    "geodesic_distance",
    "normalized_score",
    "path_lower_bound",
    "RaySampler",
    "random_direction",
    "sample_random_transform",
]

_GROUP_CHAIN = (
    TransformGroup.TRANSLATION,
    TransformGroup.ROTATION_TRANSLATION,
    TransformGroup.SCALE_TRANSLATION,
    TransformGroup.SIMILARITY,
    TransformGroup.AFFINE,
    TransformGroup.PROJECTIVE,
)


@dataclass(frozen=True)
class GeodesicParams:
    step: float = 0.05
    max_segments: int = 10000

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("geodesic step must be positive")
        if self.max_segments < 0:
            raise ValueError("max_segments must be non-negative")


def infer_group(t: Transform) -> TransformGroup:
    """Smallest built-in group whose algebra contains ``log(t)``."""
    for group in _GROUP_CHAIN:
        try:
            log_map(t, group)
            return group
        except LogUndefined:
            continue
    raise LogUndefined("transform has no principal logarithm in any supported group")


def _path_length(img: Image, v1: np.ndarray, group: TransformGroup, end: Image,
                 params: GeodesicParams, stride: int = 1) -> float:
    # stride > 1 visits every stride-th node only: an inscribed polygon, so a lower bound
    norm = float(np.linalg.norm(v1))
    if norm == 0.0:
        return l2_norm(Image(end.pixels - img.pixels))
    n = math.floor(norm / params.step)
    if n > params.max_segments:
        raise SegmentOverflow(f"direct path needs {n} segments (limit {params.max_segments})")
    vhat = params.step * v1 / norm
    total = 0.0
    prev = img.flat
    for i in range(stride, n + 1, stride):
        cur = warp(img, exp_map(TangentVector(i * vhat, group))).flat
        total += float(np.linalg.norm(cur - prev))
        prev = cur
    return total + float(np.linalg.norm(end.flat - prev))


def geodesic_distance(img: Image, t: Transform, params: GeodesicParams = GeodesicParams(),
                      group: Optional[TransformGroup] = None) -> float:
    """Direct-path length between ``img`` and ``warp(img, t)`` in pixel units.

    ``group`` fixes the generator basis used for the logarithm (and hence the
    segment count); by default the smallest group containing ``t`` is used.
    """
    if group is None:
        group = infer_group(t)
    v1 = log_map(t, group).coeffs
    return _path_length(img, v1, group, warp(img, t), params)


def path_lower_bound(img: Image, t: Transform, params: GeodesicParams = GeodesicParams(),
                     group: Optional[TransformGroup] = None, stride: int = 10) -> float:
    """Cheap lower bound on :func:`geodesic_distance` from every ``stride``-th node."""
    if group is None:
        group = infer_group(t)
    v1 = log_map(t, group).coeffs
    return _path_length(img, v1, group, warp(img, t), params, stride)


def normalized_score(img: Image, t: Transform, params: GeodesicParams = GeodesicParams(),
                     group: Optional[TransformGroup] = None) -> float:
    norm = l2_norm(img)
    if norm == 0.0:
        raise ZeroImage("cannot normalise by the norm of an all-zero image")
    return geodesic_distance(img, t, params, group) / norm


class RaySampler:
    """Transforms ``exp(alpha * v)`` at prescribed normalized scores along a
    fixed unit direction ``v``.

    Chord lengths of the direct path are cached as the ray is extended, so
    solving for many target scores costs one warp per bisection step.
    """

    ALPHA0 = 0.05
    MAX_DOUBLINGS = 40

    def __init__(self, img: Image, group: TransformGroup, direction,
                 params: GeodesicParams = GeodesicParams()):
        direction = np.asarray(direction, dtype=np.float64)
        norm = float(np.linalg.norm(direction))
        if direction.shape != (group.dim,) or norm == 0.0:
            raise ValueError("direction must be a nonzero coefficient vector of the group")
        self.img = img
        self.group = group
        self.direction = direction / norm
        self.params = params
        self.img_norm = l2_norm(img)
        if self.img_norm == 0.0:
            raise ZeroImage("cannot sample scores for an all-zero image")
        self._nodes = [img.flat]  # node k sits at alpha = k * step
        self._cumulative = [0.0]

    def transform(self, alpha: float) -> Transform:
        return exp_map(TangentVector(alpha * self.direction, self.group))

    def _extend(self, n: int) -> None:
        if n > self.params.max_segments:
            raise SegmentOverflow(f"ray needs {n} segments (limit {self.params.max_segments})")
        step = self.params.step
        while len(self._nodes) <= n:
            k = len(self._nodes)
            cur = warp(self.img, self.transform(k * step)).flat
            self._cumulative.append(self._cumulative[-1] + float(np.linalg.norm(cur - self._nodes[-1])))
            self._nodes.append(cur)

    def score(self, alpha: float) -> float:
        """Normalized direct-path score of ``exp(alpha * v)``."""
        n = math.floor(alpha / self.params.step)
        self._extend(n)
        end = warp(self.img, self.transform(alpha)).flat
        tail = float(np.linalg.norm(end - self._nodes[n]))
        return (self._cumulative[n] + tail) / self.img_norm

    def solve(self, r: float, rel_tol: float = 1e-3) -> Transform:
        """Doubling then bisection for ``|score(alpha) - r| <= rel_tol * r``."""
        if not r > 0:
            raise ValueError("target score must be positive")
        target_tol = 0.5 * rel_tol * r
        lo, lo_score = 0.0, 0.0
        alpha = self.ALPHA0
        for _ in range(self.MAX_DOUBLINGS + 1):
            try:
                s = self.score(alpha)
            except SegmentOverflow as exc:
                raise BracketFailure(f"score {r} not reached before segment limit") from exc
            if s < lo_score:
                raise BracketFailure("score is not monotone along the sampled ray")
            if s >= r:
                break
            if not np.any(warp(self.img, self.transform(alpha)).pixels):
                raise BracketFailure(f"image left the frame with score {s:.4g} < {r}")
            lo, lo_score = alpha, s
            alpha *= 2.0
        else:
            raise BracketFailure(f"score {r} not reached for alpha <= {alpha / 2:.3g}")
        hi = alpha
        if abs(s - r) > target_tol:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                s = self.score(mid)
                if abs(s - r) <= target_tol:
                    alpha = mid
                    break
                if s < r:
                    lo = mid
                else:
                    hi = mid
            else:
                raise BracketFailure("bisection did not reach the requested tolerance")
        t = self.transform(alpha)
        achieved = normalized_score(self.img, t, self.params, self.group)
        if abs(achieved - r) > rel_tol * r:
            raise BracketFailure(f"sampled transform scores {achieved:.6g}, wanted {r}")
        return t


def random_direction(group: TransformGroup, seed) -> np.ndarray:
    """Uniform draw from the unit sphere of the group's coefficient space."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(group.dim)
    return v / np.linalg.norm(v)


def sample_random_transform(img: Image, group: TransformGroup, target_score: float, seed,
                            params: GeodesicParams = GeodesicParams()) -> Transform:
    """Random transform of ``group`` whose normalized score is ``target_score``
    to within 0.1%.  Raises :class:`BracketFailure` when the sampled ray
    cannot reach that score."""
    return RaySampler(img, group, random_direction(group, seed), params).solve(target_score)
