"""
Numeric evaluators for the radius sequence conditions and the second moment bound
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from geometry.hyperbolic import ball_area, ball_volume
from lattice import GAMMA2, covolume
from targets import radius
from utils.errors import DomainError, InputError

HOLDS = 'holds-empirically'
FAILS = 'fails-empirically'
INCONCLUSIVE = 'inconclusive'
STABILITY_RTOL = 1e-9
WITNESS_PER_DECADE = 200


@dataclass
class ConditionReport:
    condition: str
    verdict: str
    witness: pd.DataFrame
    sup_ratio: float
    params: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    first_violation: int = None

    def __post_init__(self):
        assert self.verdict in (HOLDS, FAILS, INCONCLUSIVE), f'unknown verdict {self.verdict}'
        assert len(self.witness) > 0, 'empty witness'

    def summary_line(self):
        params = ' '.join(f'{k}={v:.6g}' if isinstance(v, float) else f'{k}={v}' for k, v in self.params.items())
        line = f'# {self.condition}: {self.verdict}, sup ratio {self.sup_ratio:.17g}'
        if self.first_violation is not None:
            line += f', first violation at s={self.first_violation}'
        return f'{line} [{params}]' + ''.join(f'; {note}' for note in self.notes)


def _s_values(seq, s_range):
    s_lo, s_hi = s_range
    s_lo = max(int(s_lo), seq.cutoff)
    if s_hi < s_lo:
        raise InputError(f'empty range [{s_lo}, {s_hi}]')
    return np.arange(s_lo, int(s_hi) + 1)


def _witness(s, ratio):
    """Log-spaced sample of (s, ratio) that always contains the argmax"""
    if len(s) <= 2 * WITNESS_PER_DECADE:
        keep = np.arange(len(s))
    else:
        decades = math.log10(s[-1] / s[0])
        grid = np.unique(np.round(np.geomspace(s[0], s[-1], int(decades * WITNESS_PER_DECADE) + 2)).astype(np.int64))
        keep = np.union1d(np.searchsorted(s, grid).clip(0, len(s) - 1), [int(np.nanargmax(ratio))])
    return pd.DataFrame({'s': s[keep], 'ratio': ratio[keep]})


def _stabilization(s, ratio, bounded_above=True):
    """Compares the last decade of the range with the part before it.

    Upper bounds hold when the max over the last decade does not exceed the max before it,
    lower bounds when the min over the last decade does not fall below the min before it.
    """
    if s[-1] < 10 * s[0]:
        return INCONCLUSIVE
    last = s > s[-1] / 10
    before, tail = ratio[~last], ratio[last]
    if bounded_above:
        ok = np.max(tail) <= np.max(before) * (1 + STABILITY_RTOL)
    else:
        ok = np.min(tail) >= np.min(before) * (1 - STABILITY_RTOL)
    return HOLDS if ok else FAILS


def partial_sums(seq, exponent, T):
    """Prefix sums of r_t^exponent for t = cutoff..T"""
    if T < 1:
        raise DomainError(f'T={T} must be at least 1')
    if T < seq.cutoff:
        return np.zeros(0)
    return np.cumsum(seq.radii(np.arange(seq.cutoff, T + 1)) ** exponent)


def check_condition3(seq, s_range, C0=None):
    """(-ln r_s / r_s) / s over the range; holds when its running sup stabilizes (or stays below C0)"""
    s = _s_values(seq, s_range)
    r = seq.radii(s)
    notes = []
    valid = r < 1
    if not valid.all():
        notes.append(f'{int((~valid).sum())} indices with r_s >= 1 excluded')
    s, r = s[valid], r[valid]
    if s.size == 0:
        raise InputError('no index with r_s < 1 in the range')
    with np.errstate(over='ignore', divide='ignore'):
        ratio = (-np.log(r) / r) / s
    sup = float(np.max(ratio))
    verdict = _stabilization(s, ratio)
    if C0 is not None and verdict != INCONCLUSIVE:
        verdict = HOLDS if np.max(ratio[s > s[-1] / 10]) <= C0 else FAILS
    return ConditionReport('condition3', verdict, _witness(s, ratio), sup,
                           {'C0': sup if C0 is None else float(C0), 'n': seq.n, 's0': int(s[0])}, notes)


def _window_ratio(seq, s, C1, C2):
    """rho(s) = sum_{t=L(s)}^{s} r_t^{n-1} / sum_{t<=s} r_t^n with L(s) = floor(s + C1 ln r_s - C2)"""
    cut = seq.cutoff
    t = np.arange(cut, s[-1] + 1)
    r = seq.radii(t)
    prefix = np.cumsum(r ** seq.n)
    window_prefix = np.concatenate([[0.0], np.cumsum(r ** (seq.n - 1))])
    rs = r[s - cut]
    with np.errstate(divide='ignore'):
        lower = np.floor(s + C1 * np.log(rs) - C2)
    clamped = lower < cut
    lower = np.where(clamped, cut, lower).astype(np.int64)
    window = np.where(lower <= s, window_prefix[s - cut + 1] - window_prefix[np.minimum(lower, s) - cut], 0.0)
    window = np.where(lower == s, rs ** (seq.n - 1), window)
    return window / prefix[s - cut], int(clamped.sum())


def check_condition5(seq, C1, C2, s_range):
    """Window sum of r_t^{n-1} against the prefix sum of r_t^n"""
    s = _s_values(seq, s_range)
    rho, clamped = _window_ratio(seq, s, C1, C2)
    notes = [f'lower index clamped to {seq.cutoff} for {clamped} values of s'] if clamped else []
    return ConditionReport('condition5', _stabilization(s, rho), _witness(s, rho), float(np.max(rho)),
                           {'C1': float(C1), 'C2': float(C2), 'n': seq.n}, notes)


def measure_of_ball(r, n=2, group=GAMMA2):
    """mu(B) of a ball of radius r in the normalized Liouville measure"""
    if n == 2:
        return ball_area(r) / covolume(group)
    return np.array([ball_volume(n, float(v)) for v in np.atleast_1d(r)]) / covolume(group)


def check_condition4(seq, n=None, group=GAMMA2, s_range=(2, 10 ** 6)):
    """mu(B_s) s / ln s; fails when it decays toward 0"""
    n = seq.n if n is None else n
    s = _s_values(seq, (max(2, s_range[0]), s_range[1]))
    ratio = measure_of_ball(seq.radii(s), n, group) * s / np.log(s)
    verdict = _stabilization(s, ratio, bounded_above=False)
    return ConditionReport('condition4', verdict, _witness(s, ratio), float(np.max(ratio)),
                           {'n': n, 'group': group.kind, 'inf_ratio': float(np.min(ratio))})


def _first_index(s, mask):
    hit = np.flatnonzero(mask)
    return int(s[hit[0]]) if hit.size else None


def lemma41_check(seq, C1, C2, s_range):
    """Checks rho(s) <= C3 = 2 C1 C0 + 1 beyond the explicit threshold T = max(s0, s1, s2).

    s1 is the last index before -ln r_s >= C2 / C1 and s2 the last index before r_s < 1 / (4 C1^2 C0^2),
    with C0 the sup of the condition (3) ratio over the range.
    """
    if C1 <= 0 or C2 < 0:
        raise DomainError(f'need C1 > 0 and C2 >= 0, got {C1}, {C2}')
    cond3 = check_condition3(seq, s_range)
    params = {'C1': float(C1), 'C2': float(C2), 'n': seq.n}
    if cond3.verdict != HOLDS:
        return ConditionReport('window_lemma', INCONCLUSIVE, cond3.witness, cond3.sup_ratio, params,
                               [f'condition (3) is {cond3.verdict}, precondition rejected'])
    C0 = cond3.sup_ratio
    s = _s_values(seq, s_range)
    r = seq.radii(s)
    s0 = int(s[0])
    s1 = _first_index(s, -np.log(r) >= C2 / C1)
    s2 = _first_index(s, r < 1.0 / (4.0 * C1 ** 2 * C0 ** 2))
    C3 = 2.0 * C1 * C0 + 1.0
    params.update(C0=C0, C3=C3)
    if s1 is None or s2 is None:
        return ConditionReport('window_lemma', INCONCLUSIVE, cond3.witness, cond3.sup_ratio, params,
                               ['threshold lies beyond the tested range'])
    T = max(s0, s1 - 1, s2 - 1)
    params.update(s0=s0, s1=s1 - 1, s2=s2 - 1, T=T)
    tail = s[s > T]
    if tail.size == 0:
        return ConditionReport('window_lemma', INCONCLUSIVE, cond3.witness, cond3.sup_ratio, params,
                               [f'threshold T={T} lies beyond the tested range'])
    rho, _ = _window_ratio(seq, tail, C1, C2)
    violation = _first_index(tail, rho > C3)
    verdict = HOLDS if violation is None else FAILS
    return ConditionReport('window_lemma', verdict, _witness(tail, rho), float(np.max(rho)), params,
                           first_violation=violation)


@dataclass
class BoundParts:
    first: float
    second: float
    third: float
    normalizer: float

    @property
    def total_ratio(self):
        return (self.first + self.second + self.third) / self.normalizer


def c_R(R, h):
    return (6.0 * R + 2.0) / h


def v_s(seq, s, c4, t0, h, R):
    """V_s = max(-c4 ln r_s / h, (1 + t0) / h) + c_R"""
    return max(-c4 * math.log(radius(seq, s)) / h, (1.0 + t0) / h) + c_R(R, h)


def bound_rhs(seq, n, h, R, c4, T):
    """The three sums of the second moment bound, without their constants, and (sum r_t^n)^2.

    first = sum r_t^n, second = sum_s r_s^n sum_{t=L(s)}^{s} r_t^{n-1} with
    L(s) = floor(s + (c4/h) ln r_s - 6R/h - 2), third = sum_s r_s^n sum_{t<=s} r_t^n.
    """
    if min(h, R, c4) <= 0:
        raise DomainError('h, R and c4 must be positive')
    if T < seq.cutoff:
        return BoundParts(0.0, 0.0, 0.0, 0.0)
    s = np.arange(seq.cutoff, T + 1)
    r = seq.radii(s)
    # sums start at the first index with r_t <= R, like the experiments
    inside = np.flatnonzero(r <= R)
    if inside.size == 0 or np.any(r[inside[0]:] > R):
        raise DomainError(f'radii exceed R = {R}')
    s, r = s[inside[0]:], r[inside[0]:]
    cut = int(s[0])
    rn = r ** n
    prefix = np.cumsum(rn)
    window_prefix = np.concatenate([[0.0], np.cumsum(r ** (n - 1))])
    with np.errstate(divide='ignore'):
        lower = np.floor(s + (c4 / h) * np.log(r) - 6.0 * R / h - 2.0)
    lower = np.clip(np.where(np.isfinite(lower), lower, cut), cut, None).astype(np.int64)
    window = np.where(lower <= s, window_prefix[s - cut + 1] - window_prefix[np.minimum(lower, s) - cut], 0.0)
    first = math.fsum(rn)
    return BoundParts(first, math.fsum(rn * window), math.fsum(rn * prefix), first ** 2)


def l2_diagnostic(report_rows, seq, n, h, R, c4):
    """Empirical second moment of S_T / I_T next to the bound sums at every horizon"""
    rows = []
    for row in report_rows:
        parts = bound_rhs(seq, n, h, R, c4, int(row['T']))
        rows.append({'T': int(row['T']), 'second_moment': row['second_moment'],
                     'first': parts.first / parts.normalizer, 'second': parts.second / parts.normalizer,
                     'third': parts.third / parts.normalizer, 'bound_ratio': parts.total_ratio})
    return pd.DataFrame(rows)
