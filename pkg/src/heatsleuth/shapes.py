"""Star-shaped source domains on the unit disc and their priors.

Four parameterizations are supported: an offset circle, an offset kite,
an offset four-leaf rose, and an origin-centred star whose radius is a
truncated Fourier series.  The first three use a 3-vector
``xi = (center_radius, center_angle, size)``; the Fourier star uses a
``(2M+1)``-vector of series coefficients.

Sampling happens in an unconstrained space ``z``; :func:`to_physical`
maps ``z`` into the physical boxes via arctan transforms (identity for
the Fourier star, whose validity is enforced by rejection instead).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

#: validation grid size for the Fourier-star radius function
VALIDITY_GRID = 720


class ShapeKind(str, enum.Enum):
    CIRCLE = "circle"
    KITE = "kite"
    FOUR_LEAF = "four_leaf"
    FOURIER_STAR = "fourier_star"


class ShapeError(ValueError):
    """Raised for malformed shape parameters."""


@dataclass(frozen=True)
class ShapeParams:
    """A parameterized source domain.

    ``xi`` has length 3 for circle/kite/four-leaf and ``2*fourier_order+1``
    for the Fourier star.  The center angle is reduced modulo 2*pi at
    construction.
    """

    kind: ShapeKind
    xi: np.ndarray
    fourier_order: int = 0

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).copy()
        if self.kind is ShapeKind.FOURIER_STAR:
            if self.fourier_order < 0:
                raise ShapeError("fourier_order must be >= 0")
            want = 2 * self.fourier_order + 1
            if xi.size != want:
                raise ShapeError(
                    f"fourier_star needs {want} coefficients, got {xi.size}"
                )
        else:
            if xi.size != 3:
                raise ShapeError(f"{self.kind.value} needs 3 parameters, got {xi.size}")
            xi[1] = xi[1] % TWO_PI
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def center(self) -> np.ndarray:
        if self.kind is ShapeKind.FOURIER_STAR:
            return np.zeros(2)
        rho, phi = self.xi[0], self.xi[1]
        return np.array([rho * math.cos(phi), rho * math.sin(phi)])

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "xi": [float(v) for v in self.xi],
                "fourier_order": int(self.fourier_order),
            }
        )

    @staticmethod
    def from_json(text: str) -> "ShapeParams":
        obj = json.loads(text)
        return ShapeParams(
            ShapeKind(obj["kind"]),
            np.asarray(obj["xi"], dtype=float),
            int(obj.get("fourier_order", 0)),
        )


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean Gaussian prior with diagonal covariance."""

    covariance: np.ndarray  # diagonal entries

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if np.any(cov <= 0):
            raise ShapeError("prior covariance diagonal must be positive")
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.covariance.size


def to_physical(z, kind: ShapeKind, fourier_order: int = 0) -> ShapeParams:
    """Map unconstrained parameters to a physical shape.

    Circle/kite/four-leaf use componentwise arctan maps onto
    (0,1) x (0,2*pi) x (0,1); the Fourier star is the identity (its
    validity is enforced by rejection in the sampler).
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ShapeError("unconstrained parameters must be finite")
    if kind is ShapeKind.FOURIER_STAR:
        return ShapeParams(kind, z, fourier_order)
    if z.size != 3:
        raise ShapeError(f"{kind.value} needs 3 unconstrained parameters, got {z.size}")
    xi = np.array(
        [
            math.atan(z[0]) / math.pi + 0.5,
            2.0 * math.atan(z[1]) + math.pi,
            math.atan(z[2]) / math.pi + 0.5,
        ]
    )
    return ShapeParams(kind, xi)


def to_unconstrained(shape: ShapeParams) -> np.ndarray:
    """Inverse of :func:`to_physical` (used to seed chains at a shape)."""
    if shape.kind is ShapeKind.FOURIER_STAR:
        return np.array(shape.xi, dtype=float)
    xi = shape.xi
    return np.array(
        [
            math.tan((xi[0] - 0.5) * math.pi),
            math.tan((xi[1] - math.pi) / 2.0),
            math.tan((xi[2] - 0.5) * math.pi),
        ]
    )


def radial_function(shape: ShapeParams, theta):
    """Radius q(theta) of a Fourier-star boundary; 2*pi-periodic."""
    if shape.kind is not ShapeKind.FOURIER_STAR:
        raise ShapeError("radial_function is defined for fourier_star shapes only")
    theta = np.asarray(theta, dtype=float)
    xi = shape.xi
    q = 0.5 * xi[0] * np.ones_like(theta)
    for i in range(1, shape.fourier_order + 1):
        q = q + xi[2 * i - 1] * np.cos(i * theta) + xi[2 * i] * np.sin(i * theta)
    return q if q.ndim else float(q)


def boundary_point(shape: ShapeParams, theta):
    """Boundary point(s) of the shape at parameter angle(s) ``theta``.

    Returns an array of shape (2,) for scalar input, (n, 2) otherwise.
    """
    theta = np.asarray(theta, dtype=float)
    scalar = theta.ndim == 0
    th = np.atleast_1d(theta)
    if shape.kind is ShapeKind.FOURIER_STAR:
        q = np.atleast_1d(radial_function(shape, th))
        pts = np.stack([q * np.cos(th), q * np.sin(th)], axis=-1)
    else:
        cx, cy = shape.center
        s = shape.xi[2]
        if shape.kind is ShapeKind.CIRCLE:
            x = cx + s * np.cos(th)
            y = cy + s * np.sin(th)
        elif shape.kind is ShapeKind.KITE:
            x = cx + s * (np.cos(th) + 0.65 * np.cos(2 * th) - 0.65)
            y = cy + 1.5 * s * np.sin(th)
        else:  # four-leaf
            r = s * (1.0 + 0.2 * np.cos(4 * th))
            x = cx + r * np.cos(th)
            y = cy + r * np.sin(th)
        pts = np.stack([x, y], axis=-1)
    return pts[0] if scalar else pts


def _kite_inside(shape: ShapeParams, pts: np.ndarray) -> np.ndarray:
    """Exact kite membership: the kite is horizontally convex (y along
    the boundary is monotone on each half), so each horizontal section
    is the interval between the two boundary crossings at cos(t) and
    -cos(t) for t = asin(v / (1.5 s))."""
    s = shape.xi[2]
    rel = pts - shape.center
    v = rel[:, 1] / (1.5 * s)
    c = np.sqrt(np.clip(1.0 - v * v, 0.0, None))
    bulge = s * (0.65 * (2.0 * c * c - 1.0) - 0.65)
    return ((np.abs(v) < 1.0)
            & (rel[:, 0] > bulge - s * c)
            & (rel[:, 0] < bulge + s * c))


def contains(shape: ShapeParams, points) -> np.ndarray:
    """Membership test: True where a point lies inside the source domain.

    Accepts a single (x, y) point or an (n, 2) array.  Points outside
    the unit disc simply test False when they fall outside the domain;
    no clipping is applied here.
    """
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if shape.kind is ShapeKind.CIRCLE:
        d2 = np.sum((pts - shape.center) ** 2, axis=1)
        inside = d2 < shape.xi[2] ** 2
    elif shape.kind is ShapeKind.KITE:
        inside = _kite_inside(shape, pts)
    elif shape.kind is ShapeKind.FOUR_LEAF:
        rel = pts - shape.center
        rp = np.hypot(rel[:, 0], rel[:, 1])
        thp = np.arctan2(rel[:, 1], rel[:, 0])
        inside = rp < shape.xi[2] * (1.0 + 0.2 * np.cos(4 * thp))
    else:  # fourier star, star-shaped about the origin
        rp = np.hypot(pts[:, 0], pts[:, 1])
        thp = np.arctan2(pts[:, 1], pts[:, 0])
        inside = rp < radial_function(shape, thp)
    return bool(inside[0]) if scalar else inside


def max_boundary_radius(shape: ShapeParams, n_grid: int = VALIDITY_GRID) -> float:
    th = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    pts = boundary_point(shape, th)
    return float(np.hypot(pts[:, 0], pts[:, 1]).max())


def is_valid(shape: ShapeParams, n_grid: int = VALIDITY_GRID) -> bool:
    """Check the shape invariants.

    Fourier star: q(theta) in (0,1) on a grid of ``n_grid`` angles.
    Other kinds: parameters inside their boxes and the boundary strictly
    inside the unit disc.
    """
    if shape.kind is ShapeKind.FOURIER_STAR:
        th = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
        q = radial_function(shape, th)
        return bool(np.all(q > 0.0) and np.all(q < 1.0))
    xi = shape.xi
    if not (0.0 < xi[0] < 1.0 and 0.0 < xi[2] < 1.0):
        return False
    return max_boundary_radius(shape, n_grid) < 1.0


def prior_covariance(kind: ShapeKind, fourier_order: int = 0) -> PriorSpec:
    """Prior covariance diagonal: identity for the 3-parameter kinds,
    the 1/i^2 smoothing decay for the Fourier star."""
    if kind is not ShapeKind.FOURIER_STAR:
        return PriorSpec(np.ones(3))
    if fourier_order < 1:
        raise ShapeError("fourier_star prior needs fourier_order >= 1")
    diag = np.ones(2 * fourier_order + 1)
    for i in range(1, fourier_order + 1):
        diag[2 * i - 1] = diag[2 * i] = 1.0 / i**2
    return PriorSpec(diag)
