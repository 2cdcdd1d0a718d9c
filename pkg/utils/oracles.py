"""
Brute-force oracles and the self-test suite shared by the tests and `run.py reduce-selftest`
"""

import itertools
import math

import numpy as np
import pandas as pd
from scipy import stats

from geometry.hyperbolic import BASE_POINT, apply_arrays, ball_area, basepoints, directions, dist_arrays
from geometry.quotient import quotient_dist_batch, reduce_frames, sample_frames, step_frames
from lattice import GAMMA2, PSL2Z, congruence_mask, covolume, enumerate_arrays, norm_bound
from targets import trial_seed


def brute_force_ball(t, kind):
    """Canonical elements with norm <= 2 cosh t by a quadruple loop over bounded entries"""
    bound = norm_bound(t)
    m = math.isqrt(bound) + 1
    found = set()
    for a, b, c, d in itertools.product(range(-m, m + 1), repeat=4):
        if a * d - b * c != 1 or a * a + b * b + c * c + d * d > bound:
            continue
        if not congruence_mask(kind, a, b, c, d):
            continue
        if next(v for v in (a, b, c, d) if v != 0) < 0:
            a, b, c, d = -a, -b, -c, -d
        found.add((a, b, c, d))
    return found


def enumeration_mismatches(t, group):
    """Size of the symmetric difference between the enumeration and the brute-force set"""
    fast = {tuple(int(v) for v in row[:4]) for row in enumerate_arrays(t, group)}
    return len(fast ^ brute_force_ball(t, group.kind))


def brute_force_quotient_dist(x, y, p0, group, t=8.0):
    """Minimum distance from (x, y) to g(p0) over every g in the ball of radius t, no deduplication.

    Exact for points within t/2 of p0.
    """
    elements = enumerate_arrays(t, group).astype(float)
    xs, ys = apply_arrays(elements[:, 0], elements[:, 1], elements[:, 2], elements[:, 3], p0.x, p0.y)
    out = np.empty(len(x))
    for lo in range(0, len(x), 512):
        out[lo:lo + 512] = dist_arrays(x[lo:lo + 512, None], y[lo:lo + 512, None], xs[None, :], ys[None, :]).min(axis=1)
    return out


def liouville_frames(samples, group, seed):
    rngs = [np.random.default_rng(trial_seed(seed, j)) for j in range(samples)]
    return sample_frames(rngs, group)


def reduction_word_error(frames, group):
    """Largest deviation of reduced = w * original from an integer matrix w of the group"""
    reduced, _ = reduce_frames(frames, group)
    a, b, c, d = frames[:, 0], frames[:, 1], frames[:, 2], frames[:, 3]
    # w = reduced * original^{-1}
    w = np.stack([reduced[:, 0] * d - reduced[:, 1] * c, -reduced[:, 0] * b + reduced[:, 1] * a,
                  reduced[:, 2] * d - reduced[:, 3] * c, -reduced[:, 2] * b + reduced[:, 3] * a], axis=1)
    rounded = np.round(w)
    in_group = congruence_mask(group.kind, *(rounded[:, j].astype(np.int64) for j in range(4)))
    x, y = basepoints(frames)
    moved = apply_arrays(rounded[:, 0], rounded[:, 1], rounded[:, 2], rounded[:, 3], x, y)
    rx, ry = basepoints(reduced)
    return float(np.max(np.abs(w - rounded))), bool(np.all(in_group)), float(np.max(dist_arrays(*moved, rx, ry)))


def measure_preservation_zscore(samples=10_000, steps=100, h=1.0, r=0.5, seed=0, group=GAMMA2):
    """z-score of the mass of B(i, r) after `steps` flow steps against its area fraction"""
    frames = liouville_frames(samples, group, seed)
    for k in range(1, steps + 1):
        frames, _ = step_frames(frames, h, group, renormalize=k % 64 == 0)
    x, y = basepoints(frames)
    inside = quotient_dist_batch(x, y, BASE_POINT, group) <= r
    p = ball_area(r) / covolume(group)
    return (inside.mean() - p) / math.sqrt(p * (1 - p) / samples)


def inverse_height_zscore(samples=100_000, seed=0):
    """z-score of the sample mean of 1/y on the modular surface against 3 ln 3 / (2 pi)"""
    y = basepoints(liouville_frames(samples, PSL2Z, seed))[1]
    expected = 3 * math.log(3) / (2 * math.pi)
    return (np.mean(1 / y) - expected) / (np.std(1 / y, ddof=1) / math.sqrt(samples))


def direction_chisquare_pvalue(samples=100_000, seed=0, bins=36):
    theta = directions(liouville_frames(samples, PSL2Z, seed))
    counts, _ = np.histogram(theta, bins=bins, range=(0, 2 * math.pi))
    return float(stats.chisquare(counts).pvalue)


def run_selftest(samples=10_000, seed=0, quick=False):
    """Oracle suite: check, value, threshold and whether the gate passed"""
    if quick:
        samples = min(samples, 500)
    rows = []

    def gate(check, value, threshold, passed):
        rows.append({'check': check, 'value': float(value), 'threshold': float(threshold), 'passed': bool(passed)})

    for group in (PSL2Z, GAMMA2):
        mismatches = enumeration_mismatches(3.0 if quick else 4.0, group)
        gate(f'enumeration_oracle_{group}', mismatches, 0, mismatches == 0)

    frames = liouville_frames(samples, GAMMA2, seed)
    x, y = basepoints(frames)
    near = dist_arrays(x, y, BASE_POINT.x, BASE_POINT.y) <= 3.5
    x, y = x[near], y[near]
    diff = np.max(np.abs(quotient_dist_batch(x, y, BASE_POINT, GAMMA2) - brute_force_quotient_dist(x, y, BASE_POINT, GAMMA2)))
    gate('quotient_dist_oracle', diff, 1e-9, diff < 1e-9)

    rng = np.random.default_rng(seed)
    raw = np.stack([rng.normal(size=samples) for _ in range(4)], axis=1)
    det = raw[:, 0] * raw[:, 3] - raw[:, 1] * raw[:, 2]
    raw[det < 0, :2] *= -1
    keep = np.abs(det) > 0.01
    raw = raw[keep] / np.sqrt(np.abs(det[keep]))[:, None]
    for group in (PSL2Z, GAMMA2):
        integrality, in_group, moved = reduction_word_error(raw, group)
        gate(f'reduction_word_{group}', moved, 1e-8, integrality < 1e-6 and in_group and moved < 1e-8)

    z = measure_preservation_zscore(samples=samples, steps=20 if quick else 100, seed=seed)
    gate('measure_preservation', abs(z), 4.0, abs(z) <= 4.0)
    z = inverse_height_zscore(samples=10 * samples, seed=seed)
    gate('liouville_inverse_height', abs(z), 3.0, abs(z) <= 3.0)
    p = direction_chisquare_pvalue(samples=10 * samples, seed=seed)
    gate('liouville_direction_chisquare', p, 0.01, p >= 0.01)
    return pd.DataFrame(rows, columns=['check', 'value', 'threshold', 'passed'])
