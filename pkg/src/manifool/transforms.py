"""Matrix Lie groups of planar transformations.

Transforms are 3x3 homogeneous matrices acting on column vectors
``(x, y, 1)``.  Coordinates are in pixels with the origin at the image
center, so rotation and scaling act about the center of the frame.

Each group is described by a fixed basis of generators (3x3 matrices
spanning its Lie algebra).  A coefficient vector over that basis is a
:class:`TangentVector`; :func:`exp_map` sends it to the group and
:func:`log_map` comes back.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import HorizonPoint, LogUndefined

__all__ = [
    "TransformGroup",
    "Transform",
    "TangentVector",
    "generators",
    "exp_map",
    "log_map",
    "compose",
    "apply_to_point",
    "expm",
    "logm",
]


def _unit(i: int, j: int) -> np.ndarray:
    m = np.zeros((3, 3))
    m[i, j] = 1.0
    return m


_TX = _unit(0, 2)
_TY = _unit(1, 2)
_ROT = _unit(1, 0) - _unit(0, 1)
_SCALE = _unit(0, 0) + _unit(1, 1)

_BASES = {
    "translation": (_TX, _TY),
    "rotation_translation": (_TX, _TY, _ROT),
    "scale_translation": (_TX, _TY, _SCALE),
    "similarity": (_TX, _TY, _ROT, _SCALE),
    "affine": (_TX, _TY, _unit(0, 0), _unit(0, 1), _unit(1, 0), _unit(1, 1)),
    "projective": (
        _TX, _TY, _unit(0, 0), _unit(0, 1), _unit(1, 0), _unit(1, 1),
        _unit(2, 0), _unit(2, 1),
    ),
}

_ALIASES = {
    "t": "translation",
    "rt": "rotation_translation",
    "r+t": "rotation_translation",
    "st": "scale_translation",
    "s+t": "scale_translation",
    "trs": "similarity",
    "t+r+s": "similarity",
    "sim": "similarity",
}


class TransformGroup(enum.Enum):
    TRANSLATION = "translation"
    ROTATION_TRANSLATION = "rotation_translation"
    SCALE_TRANSLATION = "scale_translation"
    SIMILARITY = "similarity"
    AFFINE = "affine"
    PROJECTIVE = "projective"

    @property
    def dim(self) -> int:
        return len(_BASES[self.value])

    @property
    def generators(self) -> list[np.ndarray]:
        return generators(self)

    @property
    def is_projective(self) -> bool:
        return self is TransformGroup.PROJECTIVE

    @classmethod
    def parse(cls, name: str) -> "TransformGroup":
        """Accept enum values plus the short labels ``T``, ``R+T``, ``S+T``, ``T+R+S``."""
        key = name.strip().lower().replace("-", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown transformation group {name!r}") from None


def generators(group: TransformGroup) -> list[np.ndarray]:
    """Canonical generator basis of ``group`` (fresh copies, safe to mutate)."""
    return [g.copy() for g in _BASES[group.value]]


@lru_cache(maxsize=None)
def _basis_matrix(group: TransformGroup) -> np.ndarray:
    # 9 x d, column j = flattened generator j
    basis = np.stack([g.ravel() for g in _BASES[group.value]], axis=1)
    basis.setflags(write=False)
    return basis


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (3, 3):
            raise ValueError(f"transform matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform matrix has non-finite entries")
        if np.linalg.det(m) == 0.0:
            raise ValueError("transform matrix is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Transform":
        m = np.eye(3)
        m[0, 2], m[1, 2] = tx, ty
        return cls(m)

    @classmethod
    def rotation(cls, theta: float) -> "Transform":
        c, s = math.cos(theta), math.sin(theta)
        return cls([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @property
    def is_affine(self) -> bool:
        return bool(np.array_equal(self.matrix[2], [0.0, 0.0, 1.0]))

    def inverse(self) -> "Transform":
        if self.is_affine:
            # closed form keeps integer translations exact
            a = self.matrix[:2, :2]
            ainv = np.linalg.inv(a)
            m = np.eye(3)
            m[:2, :2] = ainv
            m[:2, 2] = -ainv @ self.matrix[:2, 2]
            return Transform(m)
        return Transform(np.linalg.inv(self.matrix))

    def to_line(self) -> str:
        """Nine row-major entries, whitespace separated, round-trip exact."""
        return " ".join(repr(float(v)) for v in self.matrix.ravel())

    @classmethod
    def from_line(cls, line: str) -> "Transform":
        parts = line.split()
        if len(parts) != 9:
            raise ValueError(f"expected 9 numbers, got {len(parts)}")
        return cls(np.array([float(p) for p in parts]).reshape(3, 3))

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        return f"Transform({self.matrix.tolist()!r})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    coeffs: np.ndarray
    group: TransformGroup = field(default=TransformGroup.TRANSLATION)

    def __post_init__(self):
        c = _frozen(self.coeffs).reshape(-1)
        if c.shape[0] != self.group.dim:
            raise ValueError(
                f"{self.group.value} needs {self.group.dim} coefficients, got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("tangent coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, group: TransformGroup) -> "TangentVector":
        return cls(np.zeros(group.dim), group)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def algebra_element(self) -> np.ndarray:
        """The 3x3 matrix sum_j u_j G_j."""
        return (_basis_matrix(self.group) @ self.coeffs).reshape(3, 3)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        if other.group is not self.group:
            raise ValueError("cannot add tangent vectors of different groups")
        return TangentVector(self.coeffs + other.coeffs, self.group)

    def __mul__(self, k: float) -> "TangentVector":
        return TangentVector(self.coeffs * k, self.group)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return TangentVector(-self.coeffs, self.group)

    def __eq__(self, other):
        if not isinstance(other, TangentVector):
            return NotImplemented
        return other.group is self.group and bool(np.array_equal(self.coeffs, other.coeffs))

    def __repr__(self):
        return f"TangentVector({self.coeffs.tolist()!r}, {self.group.name})"


_EXP_ORDER = 18
_EXP_THETA = 0.5


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    norm = np.abs(a).sum(axis=0).max()
    s = 0
    if norm > _EXP_THETA:
        s = int(math.ceil(math.log2(norm / _EXP_THETA)))
        a = a / (2.0 ** s)
    # Horner: I + A(I + A/2(I + A/3(...)))
    eye = np.eye(n)
    result = eye
    for k in range(_EXP_ORDER, 0, -1):
        result = eye + (a @ result) / k
    for _ in range(s):
        result = result @ result
    return result


def _sqrtm_db(m: np.ndarray) -> np.ndarray:
    y, z = m.copy(), np.eye(m.shape[0])
    for _ in range(100):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z = 0.5 * (z + np.linalg.inv(y))
        delta = np.abs(y_next - y).max()
        y = y_next
        if delta <= 1e-15 * max(1.0, np.abs(y).max()):
            return y
    raise LogUndefined("Denman-Beavers square root did not converge")


_LOG_RADIUS = 0.3


def logm(m: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm by inverse scaling and squaring.

    Repeated principal square roots bring ``m`` within 0.3 of the identity,
    then the Mercator series is summed and the result rescaled.
    """
    m = np.asarray(m, dtype=np.float64)
    eig = np.linalg.eigvals(m)
    scale = max(1.0, np.abs(eig).max())
    bad = (np.abs(eig.imag) <= 1e-12 * scale) & (eig.real <= 0.0)
    if np.any(bad):
        raise LogUndefined("matrix has a non-positive real eigenvalue")
    eye = np.eye(m.shape[0])
    k = 0
    while np.abs(m - eye).sum(axis=0).max() > _LOG_RADIUS:
        if k >= 64:
            raise LogUndefined("square-root reduction did not approach the identity")
        m = _sqrtm_db(m)
        k += 1
    x = m - eye
    total = np.zeros_like(x)
    power = eye
    for j in range(1, 200):
        power = power @ x
        term = power / j
        total = total + term if j % 2 else total - term
        if np.abs(term).max() < 1e-20:
            break
    return total * (2.0 ** k)


def exp_map(u: TangentVector) -> Transform:
    return Transform(expm(u.algebra_element()))


def log_map(t: Transform, group: TransformGroup, tol: float = 1e-6) -> TangentVector:
    """Coefficients of the principal logarithm of ``t`` in ``group``'s generators."""
    log = logm(t.matrix)
    basis = _basis_matrix(group)
    coeffs, *_ = np.linalg.lstsq(basis, log.ravel(), rcond=None)
    residual = np.abs(basis @ coeffs - log.ravel()).max()
    if residual > tol * max(1.0, np.abs(log).max()):
        raise LogUndefined(
            f"logarithm leaves the {group.value} algebra (residual {residual:.3g})"
        )
    return TangentVector(coeffs, group)


def compose(t1: Transform, t2: Transform) -> Transform:
    """Transform equivalent to warping by ``t2`` first, then by ``t1``."""
    return Transform(t1.matrix @ t2.matrix)


def apply_to_points(t: Transform, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = t.matrix
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise HorizonPoint("point mapped onto the line at infinity")
    xo = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    yo = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    if t.is_affine:
        return xo, yo
    return xo / w, yo / w


def apply_to_point(t: Transform, p) -> tuple[float, float]:
    x, y = apply_to_points(t, np.asarray(float(p[0])), np.asarray(float(p[1])))
    return float(x), float(y)
