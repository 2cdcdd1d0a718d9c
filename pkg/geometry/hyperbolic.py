"""
Hyperbolic plane H^2, upper half-plane model
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from utils.errors import CorruptionError, DomainError, RangeError

DET_TOLERANCE = 1e-9
MAX_FLOW_TIME = 100.0
RENORMALIZE_EVERY = 64


@dataclass(frozen=True)
class HPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f'non-finite point ({self.x}, {self.y})')
        if self.y <= 0:
            raise DomainError(f'point ({self.x}, {self.y}) is not in the upper half-plane')

    @property
    def z(self):
        return complex(self.x, self.y)

    @classmethod
    def from_complex(cls, z):
        return cls(float(z.real), float(z.imag))


BASE_POINT = HPoint(0.0, 1.0)


def _check_unimodular(entries, tol):
    if not all(math.isfinite(e) for e in entries):
        raise DomainError(f'non-finite matrix entries {entries}')
    a, b, c, d = entries
    det = a * d - b * c
    if abs(det - 1.0) > tol:
        raise DomainError(f'determinant {det!r} differs from 1 by more than {tol}')


@dataclass(frozen=True)
class Mobius:
    """Orientation preserving isometry z -> (az+b)/(cz+d), an element of PSL(2,R)"""
    a: float
    b: float
    c: float
    d: float
    tol: float = field(default=DET_TOLERANCE, compare=False, repr=False)

    def __post_init__(self):
        _check_unimodular((self.a, self.b, self.c, self.d), self.tol)

    @property
    def m(self):
        return np.array([[self.a, self.b], [self.c, self.d]])

    @classmethod
    def from_matrix(cls, m, tol=DET_TOLERANCE):
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]), tol=tol)

    def __matmul__(self, other):
        return compose(self, other)


@dataclass(frozen=True)
class Frame:
    """Unit tangent vector of H^2 stored as a matrix of PSL(2,R).

    The frame maps the upward unit vector at i to the vector it represents, so
    basepoint(f) = f(i) and the geodesic flow is right multiplication by diag(e^{t/2}, e^{-t/2}).
    """
    a: float
    b: float
    c: float
    d: float
    tol: float = field(default=DET_TOLERANCE, compare=False, repr=False)

    def __post_init__(self):
        _check_unimodular((self.a, self.b, self.c, self.d), self.tol)

    @property
    def m(self):
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    def as_array(self):
        return np.array([self.a, self.b, self.c, self.d])

    @classmethod
    def from_array(cls, row, tol=DET_TOLERANCE):
        a, b, c, d = (float(v) for v in row)
        return cls(a, b, c, d, tol=tol)


IDENTITY = Mobius(1.0, 0.0, 0.0, 1.0)


def compose(g, h):
    """Matrix product g*h of two Mobius maps (apply h first)"""
    return Mobius(g.a * h.a + g.b * h.c, g.a * h.b + g.b * h.d,
                  g.c * h.a + g.d * h.c, g.c * h.b + g.d * h.d)


def inverse(g):
    return Mobius(g.d, -g.b, -g.c, g.a)


# batch kernels, frames are stored row-wise as (a, b, c, d) in arrays of shape (M, 4)

def dist_cosh(x1, y1, x2, y2):
    """cosh of the hyperbolic distance, vectorized"""
    return 1.0 + ((x1 - x2) ** 2 + (y1 - y2) ** 2) / (2.0 * y1 * y2)


def dist_arrays(x1, y1, x2, y2):
    """Hyperbolic distance, vectorized.

    Uses d = 2 asinh(|p - q| / (2 sqrt(y1 y2))) which equals arccosh(dist_cosh) but keeps
    full relative precision for nearby points.
    """
    chord = np.hypot(x1 - x2, y1 - y2)
    return 2.0 * np.arcsinh(chord / (2.0 * np.sqrt(y1 * y2)))


def apply_arrays(a, b, c, d, x, y):
    """Fractional linear action on points given by coordinate arrays"""
    cx_d = c * x + d
    cy = c * y
    denom = cx_d ** 2 + cy ** 2
    x_new = ((a * x + b) * cx_d + a * c * y ** 2) / denom
    y_new = (a * d - b * c) * y / denom
    return x_new, y_new


def basepoints(frames):
    """Images of i under a batch of frames, returns (x, y)"""
    a, b, c, d = frames[:, 0], frames[:, 1], frames[:, 2], frames[:, 3]
    norm = c ** 2 + d ** 2
    return (a * c + b * d) / norm, (a * d - b * c) / norm


def directions(frames):
    """Euclidean angle of the tangent vector in [0, 2*pi)"""
    theta = 0.5 * np.pi - 2.0 * np.arctan2(frames[:, 2], frames[:, 3])
    return np.mod(theta, 2.0 * np.pi)


def frames_from(x, y, theta):
    """Batch version of frame_from"""
    x, y, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                      np.asarray(theta, dtype=float))
    sqrt_y = np.sqrt(y)
    alpha = 0.5 * (theta - 0.5 * np.pi)
    cos_a, sin_a = np.cos(alpha), np.sin(alpha)
    # [[sqrt(y), x/sqrt(y)], [0, 1/sqrt(y)]] @ [[cos a, sin a], [-sin a, cos a]]
    a = sqrt_y * cos_a - x / sqrt_y * sin_a
    b = sqrt_y * sin_a + x / sqrt_y * cos_a
    c = -sin_a / sqrt_y
    d = cos_a / sqrt_y
    return np.stack([a, b, c, d], axis=-1)


def flow_frames(frames, t):
    """Geodesic flow for time t (scalar or per-row array) on a batch of frames"""
    half = np.exp(0.5 * np.asarray(t, dtype=float))
    out = np.empty_like(frames)
    out[:, 0] = frames[:, 0] * half
    out[:, 1] = frames[:, 1] / half
    out[:, 2] = frames[:, 2] * half
    out[:, 3] = frames[:, 3] / half
    return out


def left_multiply(frames, ga, gb, gc, gd):
    """Left multiplication of every frame by [[ga, gb], [gc, gd]] (scalars or per-row arrays)"""
    a, b, c, d = frames[:, 0], frames[:, 1], frames[:, 2], frames[:, 3]
    return np.stack([ga * a + gb * c, ga * b + gb * d, gc * a + gd * c, gc * b + gd * d], axis=1)


def renormalize_frames(frames):
    det = frames[:, 0] * frames[:, 3] - frames[:, 1] * frames[:, 2]
    if np.any(~(det > 0)):
        raise CorruptionError(f'{int(np.sum(~(det > 0)))} frames with non-positive determinant')
    return frames / np.sqrt(det)[:, None]


# scalar operations

def dist(p, q):
    """Hyperbolic distance between two HPoints"""
    return float(dist_arrays(p.x, p.y, q.x, q.y))


def apply(g, p):
    """Image of the point p under the isometry g"""
    x, y = apply_arrays(g.a, g.b, g.c, g.d, p.x, p.y)
    if not (y > 0):
        raise DomainError(f'image of {p} under {g} left the upper half-plane')
    return HPoint(float(x), float(y))


def frame_from(p, theta):
    """Frame based at p whose tangent vector has Euclidean angle theta"""
    return Frame.from_array(frames_from(p.x, p.y, theta))


def basepoint(f):
    x, y = basepoints(f.as_array()[None, :])
    return HPoint(float(x[0]), float(y[0]))


def direction(f):
    return float(directions(f.as_array()[None, :])[0])


def geodesic_step(f, t, max_time=MAX_FLOW_TIME):
    """Flow the frame f for time t along its geodesic"""
    if not math.isfinite(t):
        raise DomainError(f'flow time {t} is not finite')
    if abs(t) > max_time:
        raise RangeError(f'flow time {t} exceeds the cap {max_time}')
    return Frame.from_array(flow_frames(f.as_array()[None, :], t)[0], tol=f.tol)


def renormalize(f):
    """Rescale f so that its determinant is 1 to machine precision"""
    return Frame.from_array(renormalize_frames(f.as_array()[None, :])[0])


def ball_area(r):
    """Hyperbolic area 2*pi*(cosh r - 1) of a disk of radius r, accepts scalars or arrays"""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError('negative radius')
    # 4 pi sinh^2(r/2) == 2 pi (cosh r - 1) without the cancellation at small r
    area = 4.0 * np.pi * np.sinh(0.5 * r) ** 2
    return float(area) if area.ndim == 0 else area


def ball_volume(n, r):
    """Volume of a ball of radius r in H^n"""
    if n < 2:
        raise DomainError(f'dimension {n} < 2')
    if r < 0:
        raise DomainError('negative radius')
    if n == 2:
        return ball_area(r)
    sphere = 2.0 * math.pi ** (n / 2) / special.gamma(n / 2)
    radial, _ = integrate.quad(lambda rho: math.sinh(rho) ** (n - 1), 0.0, r)
    return sphere * radial


def volume_bound(n, t, c3=math.pi):
    """Upper bound c3 * e^{(n-1) t} for the measure of the ball D_t"""
    if n < 2:
        raise DomainError(f'dimension {n} < 2')
    if t < 0:
        raise DomainError('negative radius')
    return c3 * math.exp((n - 1) * t)
