"""
Exact enumeration and counting of PSL(2,Z) and Gamma(2) elements by their displacement of i
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from tqdm import tqdm

from geometry.hyperbolic import Mobius, ball_area
from utils.errors import DomainError, InputError, RangeError

ENUMERATION_CAP = 16.0
GRID_SPACING = 0.05
FIT_GRID = 0.25
REGIME_BAND = 1.25           # allowed deviation of a grid cell count from its main term
STRIPE_WIDTH = 64            # c-values per stripe
CHUNK_ELEMENTS = 1 << 21     # candidate elements expanded at once inside a stripe
NORM_GUARD = 1e-12
INT64_LIMIT = 2 ** 62


@dataclass(frozen=True)
class LatticeElement:
    """Integer unimodular matrix identified with its negative.

    The sign is fixed on construction so that the first nonzero entry of (a, b, c, d) is positive.
    """
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        entries = [int(v) for v in (self.a, self.b, self.c, self.d)]
        if entries[0] * entries[3] - entries[1] * entries[2] != 1:
            raise DomainError(f'{entries} does not have determinant 1')
        first = next(v for v in entries if v != 0)
        if first < 0:
            entries = [-v for v in entries]
        for name, value in zip('abcd', entries):
            object.__setattr__(self, name, value)

    @property
    def norm(self):
        return self.a ** 2 + self.b ** 2 + self.c ** 2 + self.d ** 2

    def __matmul__(self, other):
        return LatticeElement(self.a * other.a + self.b * other.c, self.a * other.b + self.b * other.d,
                              self.c * other.a + self.d * other.c, self.c * other.b + self.d * other.d)

    def inverse(self):
        return LatticeElement(self.d, -self.b, -self.c, self.a)

    def to_mobius(self):
        return Mobius(float(self.a), float(self.b), float(self.c), float(self.d))

    def as_tuple(self):
        return self.a, self.b, self.c, self.d


IDENTITY = LatticeElement(1, 0, 0, 1)
S = LatticeElement(0, -1, 1, 0)
T = LatticeElement(1, 1, 0, 1)


def congruence_mask(kind, a, b, c, d):
    """Membership test for the group kind on integer arrays (or scalars)"""
    if kind == 'psl2z':
        return np.ones(np.shape(a), dtype=bool)
    # +-1 mod 2 congruence: b, c even and a, d odd
    return (np.mod(b, 2) == 0) & (np.mod(c, 2) == 0) & (np.mod(a, 2) == 1) & (np.mod(d, 2) == 1)


@dataclass(frozen=True)
class GroupSpec:
    kind: str
    generators: tuple = field(compare=False)

    def __post_init__(self):
        if self.kind not in ('psl2z', 'gamma2'):
            raise DomainError(f'unknown group kind {self.kind!r}')
        for g in self.generators:
            assert bool(congruence_mask(self.kind, g.a, g.b, g.c, g.d)), f'{g} is not in {self.kind}'

    def contains(self, g):
        return bool(congruence_mask(self.kind, g.a, g.b, g.c, g.d))

    def __str__(self):
        return self.kind


PSL2Z = GroupSpec('psl2z', (S, T))
GAMMA2 = GroupSpec('gamma2', (LatticeElement(1, 2, 0, 1), LatticeElement(1, 0, 2, 1)))
GROUPS = {'psl2z': PSL2Z, 'gamma2': GAMMA2}


def get_group(name):
    key = name.lower().replace('(', '').replace(')', '').replace('_', '')
    if key not in GROUPS:
        raise InputError(f'unknown group {name!r}, choose from {sorted(GROUPS)}')
    return GROUPS[key]


def covolume(group):
    """Hyperbolic area of the quotient surface"""
    return math.pi / 3 if group.kind == 'psl2z' else 2 * math.pi


def norm_bound(t):
    """Largest integer norm a^2+b^2+c^2+d^2 whose displacement is <= t; 0 for t < 0"""
    t = np.asarray(t, dtype=float)
    bound = np.floor(2.0 * np.cosh(np.maximum(t, 0.0)) * (1.0 + NORM_GUARD)).astype(np.int64)
    bound = np.where(t < 0, 0, bound)
    return int(bound) if bound.ndim == 0 else bound


def strict_norm_bound(t):
    """Largest integer norm whose displacement is < t; 0 for t <= 0"""
    t = np.asarray(t, dtype=float)
    bound = np.ceil(2.0 * np.cosh(np.maximum(t, 0.0)) * (1.0 - NORM_GUARD)).astype(np.int64) - 1
    bound = np.where(t <= 0, 0, bound)
    return int(bound) if bound.ndim == 0 else bound


def displacement(g):
    """Hyperbolic distance between i and g(i), from the exact integer norm"""
    norm = g.norm
    if norm >= INT64_LIMIT:
        raise RangeError(f'norm of {g} overflows 64-bit arithmetic')
    return float(np.arccosh(norm / 2.0))


def _isqrt(x):
    r = np.floor(np.sqrt(x.astype(float))).astype(np.int64)
    r = np.where(r * r > x, r - 1, r)
    return np.where((r + 1) * (r + 1) <= x, r + 1, r)


def _bezout(c, d):
    """Integer arrays a0, b0 with a0*d - b0*c = 1 for coprime (c, d)"""
    old_r, r = d.copy(), c.copy()
    old_s, s = np.ones_like(d), np.zeros_like(d)
    old_t, t = np.zeros_like(d), np.ones_like(d)
    while np.any(r != 0):
        active = r != 0
        q = np.where(active, old_r // np.where(active, r, 1), 0)
        old_r, r = np.where(active, r, old_r), np.where(active, old_r - q * r, r)
        old_s, s = np.where(active, s, old_s), np.where(active, old_s - q * s, s)
        old_t, t = np.where(active, t, old_t), np.where(active, old_t - q * t, t)
    # old_s*d + old_t*c = old_r = +-1
    return old_s * old_r, -old_t * old_r


def _stripe_pairs(c_lo, c_hi, bound, kind):
    """Coprime bottom rows (c, d) with c > 0, or (0, 1), and c^2 + d^2 <= bound"""
    c = np.arange(c_lo, c_hi, dtype=np.int64)
    c = c[c * c <= bound]
    if c.size == 0:
        return c, c
    d_max = _isqrt(bound - c * c)
    width = 2 * d_max + 1
    rep = np.repeat(np.arange(c.size), width)
    start = np.cumsum(width) - width
    d = -d_max[rep] + (np.arange(rep.size) - start[rep])
    c = c[rep]
    keep = (np.gcd(c, d) == 1) & ((c > 0) | (d == 1))
    if kind == 'gamma2':
        keep &= (np.mod(c, 2) == 0) & (np.mod(d, 2) == 1)
    return c[keep], d[keep]


def _iter_stripe(c_lo, c_hi, bound, kind):
    """Yields (a, b, c, d, norm) arrays of canonical elements with c in [c_lo, c_hi), chunk by chunk"""
    c, d = _stripe_pairs(c_lo, c_hi, bound, kind)
    if c.size == 0:
        return
    a0, b0 = _bezout(c, d)
    # norm(k) of (a0 + k c, b0 + k d) is s k^2 + 2 p k + q, its discriminant is s*bound - s^2 - 1
    s = c * c + d * d
    p = a0 * c + b0 * d
    q = a0 * a0 + b0 * b0 + s
    disc = p * p - s * (q - bound)
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0).astype(float))
    k_lo = np.floor((-p - root) / s).astype(np.int64) - 1
    k_hi = np.ceil((-p + root) / s).astype(np.int64) + 1
    counts = np.where(ok, k_hi - k_lo + 1, 0)

    chunk_of = (np.cumsum(counts) - counts) // CHUNK_ELEMENTS
    for chunk in np.unique(chunk_of):
        sel = np.flatnonzero(chunk_of == chunk)
        cnt = counts[sel]
        rep = np.repeat(sel, cnt)
        start = np.repeat(np.cumsum(cnt) - cnt, cnt)
        k = k_lo[rep] + (np.arange(rep.size) - start)
        a = a0[rep] + k * c[rep]
        b = b0[rep] + k * d[rep]
        norm = a * a + b * b + s[rep]
        keep = norm <= bound
        if kind == 'gamma2':
            keep &= np.mod(b, 2) == 0
        a, b, cc, dd, norm = a[keep], b[keep], c[rep][keep], d[rep][keep], norm[keep]
        flip = np.where((a < 0) | ((a == 0) & (b < 0)), -1, 1)
        yield a * flip, b * flip, cc * flip, dd * flip, norm


def _stripe_elements(c_lo, c_hi, bound, kind):
    parts = list(_iter_stripe(c_lo, c_hi, bound, kind))
    if not parts:
        return np.zeros((0, 5), dtype=np.int64)
    return np.concatenate([np.stack(part, axis=1) for part in parts])


def _stripe_histogram(c_lo, c_hi, bound, kind):
    norms, counts = [], []
    for *_, norm in _iter_stripe(c_lo, c_hi, bound, kind):
        u, n = np.unique(norm, return_counts=True)
        norms.append(u)
        counts.append(n.astype(np.int64))
    if not norms:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return _merge_histograms(norms, counts)


def _merge_histograms(norms, counts):
    norms = np.concatenate(norms)
    counts = np.concatenate(counts)
    unique, inverse = np.unique(norms, return_inverse=True)
    total = np.zeros(unique.size, dtype=np.int64)
    np.add.at(total, inverse, counts)
    return unique, total


def _stripes(bound):
    c_top = int(_isqrt(np.array([bound]))[0]) + 1
    return [(lo, min(lo + STRIPE_WIDTH, c_top)) for lo in range(0, c_top, STRIPE_WIDTH)]


def _check_range(t_max, cap):
    if not math.isfinite(t_max) or t_max < 0:
        raise DomainError(f'enumeration radius {t_max} must be finite and non-negative')
    if t_max > cap:
        raise RangeError(f'enumeration radius {t_max} exceeds the cap {cap}, raise it explicitly')
    if 2.0 * math.cosh(t_max) >= INT64_LIMIT:
        raise RangeError(f'norms at radius {t_max} overflow 64-bit arithmetic')


def enumerate_arrays(t_max, group, cap=ENUMERATION_CAP, threads=1, progress=False):
    """Canonical elements of the group with displacement <= t_max.

    Args:
        t_max (float): ball radius
        group (GroupSpec): PSL2Z or GAMMA2
        cap (float): largest admissible radius
        threads (int): joblib workers, does not influence the result
        progress (bool): show a tqdm bar over stripes
    Returns:
        elements (ndarray): int64 array with columns a, b, c, d, norm, sorted by (norm, a, b, c, d)
    """
    _check_range(t_max, cap)
    bound = norm_bound(t_max)
    stripes = _stripes(bound)
    parts = Parallel(n_jobs=threads)(
        delayed(_stripe_elements)(lo, hi, bound, group.kind)
        for lo, hi in tqdm(stripes, desc=f'enumerate {group}', disable=not progress))
    elements = np.concatenate(parts) if parts else np.zeros((0, 5), dtype=np.int64)
    order = np.lexsort((elements[:, 3], elements[:, 2], elements[:, 1], elements[:, 0], elements[:, 4]))
    return elements[order]


def enumerate_ball(t_max, group, cap=ENUMERATION_CAP, threads=1):
    """Group elements in the ball D_t as LatticeElement values"""
    return [LatticeElement(*(int(v) for v in row[:4]))
            for row in enumerate_arrays(t_max, group, cap=cap, threads=threads)]


def _counts_from_table(norms, cum, bound):
    idx = np.searchsorted(norms, bound, side='right')
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0)


@dataclass
class CountCurve:
    """Cumulative counts N(t) of group elements with displacement <= t.

    `t` and `N` hold the grid table. When the curve comes from an enumeration it also carries the
    exact cumulative norm table (`norms`, `cum`) so counts at any radius are exact, and optionally
    the raw elements of small displacement.
    """
    group: GroupSpec
    t: np.ndarray
    N: np.ndarray
    t_max: float
    spacing: float = GRID_SPACING
    norms: np.ndarray = None
    cum: np.ndarray = None
    elements: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.N = np.asarray(self.N, dtype=np.int64)
        assert self.t.shape == self.N.shape, 'grid and counts differ in length'
        if np.any(np.diff(self.t) <= 0):
            raise InputError('count curve grid must be strictly increasing')
        if np.any(np.diff(self.N) < 0):
            raise InputError('count curve must be nondecreasing')

    def count_norms_le(self, bound):
        """Number of elements with norm <= bound (exact table only)"""
        return _counts_from_table(self.norms, self.cum, bound)

    def count_at(self, t):
        t = np.asarray(t, dtype=float)
        if self.norms is not None:
            counts = self.count_norms_le(norm_bound(t))
        else:
            idx = np.searchsorted(self.t, t + 1e-9, side='right') - 1
            counts = np.where(idx >= 0, self.N[np.maximum(idx, 0)], 0)
        return int(counts) if np.ndim(counts) == 0 else counts

    def to_frame(self):
        return pd.DataFrame({'t': self.t, 'N': self.N})


def grid(t_max, spacing=GRID_SPACING):
    n = int(math.floor(t_max / spacing + 1e-9))
    return np.round(np.arange(n + 1) * spacing, 10)


def build_count_curve(t_max, group, spacing=GRID_SPACING, cap=ENUMERATION_CAP, threads=1,
                      keep_elements_below=8.0, progress=False):
    """Counts elements by streaming every stripe through a norm histogram.

    Args:
        t_max (float): largest radius of the curve
        group (GroupSpec): group to count
        spacing (float): grid spacing of the (t, N) table
        cap (float): largest admissible radius
        threads (int): joblib workers, does not influence the result
        keep_elements_below (float): also store the raw elements with displacement <= this radius
        progress (bool): show a tqdm bar over stripes
    Returns:
        curve (CountCurve)
    """
    _check_range(t_max, cap)
    bound = norm_bound(t_max)
    stripes = _stripes(bound)
    hists = Parallel(n_jobs=threads)(
        delayed(_stripe_histogram)(lo, hi, bound, group.kind)
        for lo, hi in tqdm(stripes, desc=f'count {group}', disable=not progress))
    norms, totals = _merge_histograms([h[0] for h in hists], [h[1] for h in hists])
    cum = np.cumsum(totals)
    t = grid(t_max, spacing)
    curve = CountCurve(group, t, _counts_from_table(norms, cum, norm_bound(t)), t_max, spacing,
                       norms=norms, cum=cum)
    if keep_elements_below is not None:
        curve.elements = enumerate_arrays(min(keep_elements_below, t_max), group, cap=cap, threads=threads)
    return curve


def count_in_ball(t, group, cache):
    """N(t) read from a count curve"""
    if cache.group.kind != group.kind:
        raise InputError(f'count curve is for {cache.group}, not {group}')
    if t > cache.t_max + 1e-12:
        raise RangeError(f'radius {t} is beyond the enumerated range {cache.t_max}, extend the cache')
    return cache.count_at(t)


def count_below(t, curve):
    """Number of elements with displacement strictly less than t"""
    if t > curve.t_max + 1e-12:
        raise RangeError(f'radius {t} is beyond the enumerated range {curve.t_max}')
    if curve.norms is None:
        raise InputError('strict counts need the exact norm table of an enumerated curve')
    return int(curve.count_norms_le(strict_norm_bound(t)))


@dataclass
class ShellCensus:
    h: float
    i: int
    r: float
    count: int
    elements: np.ndarray = None

    def __post_init__(self):
        assert self.count >= 0, 'negative shell count'


def _shell_curve(curve, group, t_top):
    if curve is None:
        return build_count_curve(t_top, group, keep_elements_below=None)
    if curve.group.kind != group.kind:
        raise InputError(f'count curve is for {curve.group}, not {group}')
    return curve


def shell_census(h, i, r, group, curve=None, with_elements=False):
    """Elements whose displacement lies in the half-open shell (hi - r, hi + r]"""
    if not h > 0:
        raise DomainError(f'step length {h} must be positive')
    if not 0 < r < 1:
        raise DomainError(f'shell half-width {r} must lie in (0, 1)')
    if i < 0:
        raise DomainError(f'shell index {i} must be non-negative')
    hi = h * i
    curve = _shell_curve(curve, group, hi + r)
    count = count_in_ball(hi + r, group, curve) - (count_in_ball(hi - r, group, curve) if hi - r >= 0 else 0)
    elements = None
    if with_elements:
        ball = enumerate_arrays(hi + r, group)
        elements = ball[ball[:, 4] > norm_bound(hi - r)]
    return ShellCensus(h, i, r, int(count), elements)


def gamma_i_census(h, i, group, curve=None):
    """Elements with displacement in [hi - h/2, hi + h/2); these shells partition the group"""
    if not h > 0:
        raise DomainError(f'step length {h} must be positive')
    curve = _shell_curve(curve, group, h * i + h / 2)
    count = count_below(h * i + h / 2, curve) - count_below(h * i - h / 2, curve)
    return ShellCensus(h, i, h / 2, int(count))


_FITTED = {}
KAPPA_FIT_T_MAX = 12.0


def main_term(t, group, kappa=None):
    """Expected count kappa * ball_area(t) with the fitted kappa of the group"""
    if t < 0:
        raise DomainError('negative radius')
    if kappa is None:
        kappa = fitted_kappa(group)
    return kappa * ball_area(t)


def fitted_kappa(group, threads=1):
    """kappa of the group, fitted once per process from an enumeration to KAPPA_FIT_T_MAX"""
    if group.kind not in _FITTED:
        curve = build_count_curve(KAPPA_FIT_T_MAX, group, threads=threads, keep_elements_below=None)
        fit_error_exponent(curve, store=True)
    return _FITTED[group.kind][0]


def fit_error_exponent(curve, t_lo=None, t_hi=None, store=False):
    """Fits N(t) ~ kappa * ball_area(t) + O(ball_area(t)^q).

    kappa is the mean of N / ball_area over the top quarter of [t_lo, t_hi]. q is the least squares
    slope of ln|N - kappa * ball_area| against ln ball_area on the FIT_GRID points of the lower three
    quarters, where the plateau mean has not absorbed the residual.

    Args:
        curve (CountCurve): counts to fit
        t_lo (float): start of the fitting range, defaults to max(first grid point, 2)
        t_hi (float): end of the fitting range, defaults to the end of the curve
        store (bool): remember kappa and q of the group for main_term, only fitted_kappa sets it
    Returns:
        kappa (float), q (float)
    """
    t_lo = max(float(curve.t[0]), 2.0) if t_lo is None else t_lo
    t_hi = float(curve.t[-1]) if t_hi is None else t_hi
    if t_hi - t_lo < 4:
        raise InputError(f'fitting range [{t_lo}, {t_hi}] spans less than 4')
    t_split = t_hi - (t_hi - t_lo) / 4

    top = curve.t[(curve.t >= t_split - 1e-9) & (curve.t <= t_hi + 1e-9)]
    kappa = float(np.mean(curve.count_at(top) / ball_area(top)))

    ts = t_lo + FIT_GRID * np.arange(int(math.floor((t_split - t_lo) / FIT_GRID + 1e-9)) + 1)
    ts = ts[ts > 0]
    area = ball_area(ts)
    residual = np.abs(curve.count_at(ts) - kappa * area)
    keep = residual > 0
    if keep.sum() < 3:
        raise InputError('fewer than 3 nonzero residuals in the fitting range')
    q = float(stats.linregress(np.log(area[keep]), np.log(residual[keep])).slope)
    if store and curve.norms is not None:
        _FITTED[curve.group.kind] = (kappa, q)
    return kappa, q


def c4_from_q(q, n=2):
    """Shell regime constant 1 / ((1 - q)(n - 1))"""
    if not 0 < q < 1:
        raise DomainError(f'error exponent {q} must lie in (0, 1)')
    return 1.0 / ((1.0 - q) * (n - 1))


def fit_t0(curve, kappa=None, band=REGIME_BAND):
    """Start of the counting regime.

    The smallest grid radius from which on every grid cell count N(t + spacing) - N(t) stays within
    a factor `band` of its main term kappa * (ball_area(t + spacing) - ball_area(t)). Below it the
    integer norms are too sparse for thin shells to follow the main term.
    """
    if not band > 1:
        raise DomainError(f'band {band} must exceed 1')
    if kappa is None:
        kappa, _ = fit_error_exponent(curve)
    cells = np.diff(curve.N).astype(float)
    main = kappa * np.diff(ball_area(curve.t))
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = cells / main
    bad = ~((ratio <= band) & (ratio >= 1.0 / band))
    if not bad.any():
        return float(curve.t[0])
    return float(curve.t[np.flatnonzero(bad)[-1] + 1])


@dataclass
class ShellBoundReport:
    table: pd.DataFrame
    max_ratio: float
    spread: float
    flagged: pd.DataFrame
    c4: float
    t0: float = 0.0


def verify_shell_bound(h, i_range, r_grid, group, c4, t0=None, factor=2.0, curve=None):
    """Table of census(h, i, r) / (r e^{hi}) over a grid, with the regime hi >= max(-c4 ln r, r + t0).

    Rows outside the regime are kept and marked, never flagged. An in-regime row is flagged when
    its ratio exceeds `factor` times the running max of the earlier rows with the same r. Without
    an explicit t0 the regime start is fitted from the count curve with fit_t0.
    """
    i_values = list(i_range)
    curve = _shell_curve(curve, group, h * max(i_values) + max(r_grid))
    t0 = fit_t0(curve) if t0 is None else t0
    rows = []
    for r in r_grid:
        running = None
        for i in i_values:
            census = shell_census(h, i, r, group, curve=curve)
            ratio = census.count / (r * math.exp(h * i))
            in_regime = h * i >= max(-c4 * math.log(r), r + t0)
            flagged = bool(in_regime and running is not None and ratio > factor * running)
            if in_regime:
                running = ratio if running is None else max(running, ratio)
            rows.append({'h': h, 'i': i, 'r': r, 'count': census.count, 'ratio': ratio,
                         'in_regime': in_regime, 'flagged': flagged})
    table = pd.DataFrame(rows)
    valid = table[table['in_regime']]
    max_ratio = float(valid['ratio'].max()) if len(valid) else float('nan')
    spread = float(valid['ratio'].max() / valid['ratio'].min()) if len(valid) else float('nan')
    return ShellBoundReport(table, max_ratio, spread, table[table['flagged']], c4, t0)


def well_roundedness_check(t, eps, group=None):
    """(m(D_{t+eps}) - m(D_{t-eps})) / (eps m(D_{t-eps})); kappa cancels so the group is not needed"""
    if not 0 < eps < 1:
        raise DomainError(f'eps {eps} must lie in (0, 1)')
    if not t > eps:
        raise DomainError(f'radius {t} must exceed eps {eps}')
    return (ball_area(t + eps) - ball_area(t - eps)) / (eps * ball_area(t - eps))


def well_roundedness_sweep(eps, t_grid=None, c2=10.0):
    t_grid = np.arange(2.0, 16.0 + 1e-9, 0.5) if t_grid is None else t_grid
    table = pd.DataFrame({'t': t_grid, 'ratio': [well_roundedness_check(t, eps) for t in t_grid]})
    table['flagged'] = table['ratio'] > c2
    return table


@lru_cache(maxsize=None)
def translate_set(kind, delta=6.0):
    """Float arrays (a, b, c, d) of all group elements with displacement <= delta"""
    elements = enumerate_arrays(delta, GROUPS[kind])
    return tuple(np.ascontiguousarray(elements[:, j].astype(float)) for j in range(4))
