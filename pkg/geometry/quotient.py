"""
Geodesic flow on the quotient surfaces PSL(2,Z)\\H^2 and Gamma(2)\\H^2
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from geometry.hyperbolic import (BASE_POINT, Frame, HPoint, apply_arrays, basepoints, dist_arrays, dist_cosh,
                                 flow_frames, frames_from, left_multiply, renormalize_frames)
from lattice import GAMMA2, LatticeElement, translate_set
from utils.errors import CorruptionError, DependencyError, DomainError, RangeError

MAX_MOVES = 1_000_000
DESCENT_TOL = 1e-12
REGION_TOL = 1e-9
TRANSLATE_DELTA = 6.0
MAX_STEP = 10.0
DIST_CHUNK = 4096
DEFAULT_P0 = BASE_POINT
# ideal vertices of the Gamma(2) quadrilateral, None for oo
CUSPS = (None, 0.0, -1.0, 1.0)


def coset_representatives():
    """Representatives of PSL(2,Z)/Gamma(2), one per element of SL(2, F_2)"""
    s, t = LatticeElement(0, -1, 1, 0), LatticeElement(1, 1, 0, 1)
    return [LatticeElement(1, 0, 0, 1), t, s, t @ s, s @ t, t @ s @ t]


@dataclass(frozen=True)
class QuotientState:
    frame: Frame
    group: object
    word_length: int = 0

    @property
    def point(self):
        x, y = basepoints(self.frame.as_array()[None, :])
        return HPoint(float(x[0]), float(y[0]))


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    group: object = GAMMA2


def in_reduction_region(x, y, group, tol=REGION_TOL):
    """Membership of points in the reduction region of the group, vectorized"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if group.kind == 'psl2z':
        return (np.abs(x) <= 0.5 + tol) & (x * x + y * y >= 1.0 - tol)
    # ideal quadrilateral -1, 0, 1, oo: the Dirichlet domain of Gamma(2) centred at i
    return ((np.abs(x) <= 1.0 + tol) & ((x - 0.5) ** 2 + y * y >= 0.25 - tol)
            & ((x + 0.5) ** 2 + y * y >= 0.25 - tol))


def _reduce_modular(frames, max_moves):
    frames = frames.copy()
    moves = np.zeros(len(frames), dtype=np.int64)
    for _ in range(max_moves):
        x, y = basepoints(frames)
        n = np.round(x)
        frames = left_multiply(frames, 1.0, -n, 0.0, 1.0)
        moves += np.abs(n).astype(np.int64)
        x, y = basepoints(frames)
        invert = x * x + y * y < 1.0 - DESCENT_TOL
        if not invert.any():
            return frames, moves
        one, zero = np.ones_like(x), np.zeros_like(x)
        frames = left_multiply(frames, np.where(invert, zero, one), np.where(invert, -one, zero),
                                np.where(invert, one, zero), np.where(invert, zero, one))
        moves += invert
    raise CorruptionError(f'modular reduction did not terminate within {max_moves} moves')


def _cusp_power(x, y, cusp):
    """Optimal power of the Gamma(2) parabolic fixing an ideal vertex of the quadrilateral.

    The vertex c in {-1, 0, 1} is sent to oo by w = -1/(z - c), where the parabolic is w -> w + s
    with s even. Returns cosh d(., i) after the power and the power s.
    """
    if cusp is None:
        s = -2.0 * np.round(0.5 * x)
        return dist_cosh(x + s, y, 0.0, 1.0), s
    u = x - cusp
    r2 = u * u + y * y
    wx, wy = -u / r2, y / r2
    s = -2.0 * np.round(0.5 * wx)
    wx = wx + s
    rho = wx * wx + wy * wy
    # back through z = c - 1/w
    return dist_cosh(cusp - wx / rho, wy / rho, 0.0, 1.0), s


def _cusp_matrix(cusp, s):
    """(a, b, c, d) of the parabolic acting as w -> w + s in the chart w = -1/(z - c)"""
    one = np.ones_like(s)
    if cusp is None:
        return one, s, 0.0 * s, one
    # C^{-1} [[1, s], [0, 1]] C with C = [[0, -1], [1, -c]]
    return 1.0 - cusp * s, cusp * cusp * s, -s, 1.0 + cusp * s


def _descend_gamma2(frames, moves, max_moves):
    """Greedy descent of cosh d(z, i) with optimal powers of the parabolics fixing oo, 0, -1 and 1"""
    for _ in range(max_moves):
        x, y = basepoints(frames)
        here = dist_cosh(x, y, 0.0, 1.0)
        after, powers = zip(*(_cusp_power(x, y, cusp) for cusp in CUSPS))
        powers = np.stack(powers)
        after = np.where(powers == 0, np.inf, np.stack(after))
        best = np.argmin(after, axis=0)
        rows = np.arange(len(x))
        improve = here - after[best, rows] > DESCENT_TOL
        if not improve.any():
            return frames, moves
        g = np.tile(np.array([1.0, 0.0, 0.0, 1.0]), (len(x), 1))
        for k, cusp in enumerate(CUSPS):
            use = improve & (best == k)
            if use.any():
                g[use] = np.stack(_cusp_matrix(cusp, powers[k][use]), axis=1)
        frames = left_multiply(frames, g[:, 0], g[:, 1], g[:, 2], g[:, 3])
        moves += np.where(improve, np.abs(powers[best, rows]) / 2, 0).astype(np.int64)
    raise CorruptionError(f'Gamma(2) descent did not terminate within {max_moves} moves')


@lru_cache(maxsize=None)
def _orbit_table(kind, x0, y0, delta):
    """Distinct points g(p0) for g in the translate set, with the matrices reaching them"""
    try:
        a, b, c, d = translate_set(kind, delta)
    except RangeError as e:
        raise DependencyError(f'translate set of radius {delta} is unavailable: {e}') from e
    xs, ys = apply_arrays(a, b, c, d, x0, y0)
    _, first = np.unique(np.stack([np.round(xs, 12), np.round(ys, 12)], axis=1), axis=0, return_index=True)
    first = np.sort(first)
    return xs[first], ys[first], np.stack([a[first], b[first], c[first], d[first]], axis=1)


def _verify_gamma2(frames, moves):
    """Moves points that some translate brings closer to i; returns the mask of moved rows"""
    xs, ys, mats = _orbit_table('gamma2', 0.0, 1.0, TRANSLATE_DELTA)
    x, y = basepoints(frames)
    here = dist_cosh(x, y, 0.0, 1.0)
    closest = dist_cosh(x[:, None], y[:, None], xs[None, :], ys[None, :])
    j = np.argmin(closest, axis=1)
    moved = here - closest[np.arange(len(x)), j] > DESCENT_TOL
    if moved.any():
        # d(z, g i) < d(z, i) means g^{-1} z is closer to i
        g = mats[j]
        inv = np.where(moved[:, None], np.stack([g[:, 3], -g[:, 1], -g[:, 2], g[:, 0]], axis=1),
                       np.array([1.0, 0.0, 0.0, 1.0]))
        frames[:] = left_multiply(frames, inv[:, 0], inv[:, 1], inv[:, 2], inv[:, 3])
        moves += moved
    return moved


def reduce_frames(frames, group, max_moves=MAX_MOVES):
    """Reduces a batch of frames into the reduction region of the group.

    Args:
        frames (ndarray): (M, 4) rows (a, b, c, d)
        group (GroupSpec): PSL2Z or GAMMA2
        max_moves (int): non-termination guard
    Returns:
        frames (ndarray): reduced frames
        moves (ndarray): generator letters (|n| per parabolic power) applied to every row
    """
    frames = np.asarray(frames, dtype=float)
    if not np.all(np.isfinite(frames)):
        raise CorruptionError('non-finite frame entries')
    if group.kind == 'psl2z':
        return _reduce_modular(frames, max_moves)
    frames = frames.copy()
    moves = np.zeros(len(frames), dtype=np.int64)
    for _ in range(max_moves):
        frames, moves = _descend_gamma2(frames, moves, max_moves)
        if not _verify_gamma2(frames, moves).any():
            return frames, moves
    raise CorruptionError(f'Gamma(2) reduction did not terminate within {max_moves} moves')


def step_frames(frames, h, group, renormalize=False):
    """One step of the h-step flow on the quotient for a batch of reduced frames"""
    frames = flow_frames(frames, h)
    if renormalize:
        frames = renormalize_frames(frames)
    return reduce_frames(frames, group)


def reduce(f, group):
    frames, moves = reduce_frames(f.as_array()[None, :], group)
    return QuotientState(Frame.from_array(frames[0], tol=f.tol), group, int(moves[0]))


def step(q, h):
    """Flows the state for time h and reduces it again"""
    if not 0 <= h <= MAX_STEP:
        raise DomainError(f'step length {h} must lie in [0, {MAX_STEP}]')
    if h == 0:
        return q
    frames, moves = step_frames(q.frame.as_array()[None, :], h, q.group)
    return QuotientState(Frame.from_array(frames[0], tol=q.frame.tol), q.group, q.word_length + int(moves[0]))


def _check_center(p0, group):
    if not bool(in_reduction_region(p0.x, p0.y, group)):
        raise DomainError(f'target centre {p0} is outside the reduction region of {group}')


def quotient_dist_batch(x, y, p0, group, delta=TRANSLATE_DELTA):
    """Distances in the quotient from the points (x, y) to the projection of p0"""
    _check_center(p0, group)
    xs, ys, _ = _orbit_table(group.kind, p0.x, p0.y, delta)
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    out = np.empty(x.shape)
    for lo in range(0, len(x), DIST_CHUNK):
        cx, cy = x[lo:lo + DIST_CHUNK, None], y[lo:lo + DIST_CHUNK, None]
        j = np.argmin(dist_cosh(cx, cy, xs[None, :], ys[None, :]), axis=1)
        out[lo:lo + DIST_CHUNK] = dist_arrays(cx[:, 0], cy[:, 0], xs[j], ys[j])
    return out


def quotient_dist(q, p0, group, delta=TRANSLATE_DELTA):
    """Distance from the basepoint of q to p0 in the quotient, exact whenever it is <= delta / 2"""
    x, y = basepoints(q.frame.as_array()[None, :])
    return float(quotient_dist_batch(x, y, p0, group, delta)[0])


def injectivity_radius(p0, group, delta=TRANSLATE_DELTA):
    """Half the shortest displacement of p0 by a nontrivial group element.

    Returns:
        radius (float): 0 when p0 is fixed by a nontrivial element
        orbifold (bool): True when p0 is such a cone point
    """
    _check_center(p0, group)
    try:
        a, b, c, d = translate_set(group.kind, delta)
    except RangeError as e:
        raise DependencyError(f'translate set of radius {delta} is unavailable: {e}') from e
    nontrivial = ~((a == 1) & (b == 0) & (c == 0) & (d == 1))
    xs, ys = apply_arrays(a[nontrivial], b[nontrivial], c[nontrivial], d[nontrivial], p0.x, p0.y)
    shortest = float(np.min(dist_arrays(xs, ys, p0.x, p0.y)))
    if shortest < 1e-9:
        return 0.0, True
    return 0.5 * shortest, False


def radius_R(p0, h, group):
    """Largest admissible target radius min(i_V / 4, 1, h)"""
    i_v, _ = injectivity_radius(p0, group)
    return min(i_v / 4, 1.0, h)


def _modular_sample(rng):
    phi = rng.uniform(-math.pi / 6, math.pi / 6)
    x = math.sin(phi)
    # density y^-2 on [sqrt(1 - x^2), oo)
    y = math.sqrt(1.0 - x * x) / (1.0 - rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return x, y, theta


def sample_frames(rngs, group):
    """One Liouville-distributed reduced frame per random stream"""
    rows, cosets = [], []
    reps = coset_representatives()
    for rng in rngs:
        rows.append(_modular_sample(rng))
        cosets.append(reps[int(rng.integers(6))] if group.kind == 'gamma2' else reps[0])
    x, y, theta = (np.array(col) for col in zip(*rows))
    frames = frames_from(x, y, theta)
    g = np.array([k.as_tuple() for k in cosets], dtype=float)
    frames = left_multiply(frames, g[:, 0], g[:, 1], g[:, 2], g[:, 3])
    return reduce_frames(frames, group)[0]


def sample_liouville(cfg, rng_stream=None):
    """A single state drawn from the Liouville measure of the quotient"""
    rng = np.random.default_rng(cfg.seed) if rng_stream is None else rng_stream
    frame = sample_frames([rng], cfg.group)[0]
    return QuotientState(Frame.from_array(frame), cfg.group, 0)
