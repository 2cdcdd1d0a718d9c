"""
Shrinking target experiments: radius sequences, hit statistics S_T / I_T and the two-ball measure
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from geometry.hyperbolic import (BASE_POINT, RENORMALIZE_EVERY, apply_arrays, ball_area, basepoints, dist, dist_arrays,
                                 flow_frames, frame_from, frames_from, left_multiply)
from geometry.quotient import (in_reduction_region, injectivity_radius, quotient_dist_batch,
                               radius_R, sample_frames, step_frames)
from lattice import GAMMA2, covolume
from utils.errors import DomainError, InputError

TRIAL_CHUNK = 50
SAMPLE_CHUNK = 100_000
FAMILIES = ('powerlaw', 'powerlog', 'constant', 'table')


@dataclass(frozen=True)
class RadiusSequence:
    """Target radii r_t for t >= cutoff.

    params: powerlaw (C, alpha) gives C / t^alpha, powerlog (C, beta) gives C / (t^{1/n} (ln t)^beta),
    constant (r,) and table (r_1, r_2, ...).
    """
    family: str
    params: tuple
    n: int = 2
    cutoff: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f'unknown radius family {self.family!r}, choose from {FAMILIES}')
        if self.n < 2:
            raise DomainError(f'dimension exponent {self.n} < 2')
        if self.family == 'powerlog' and self.cutoff < 2:
            object.__setattr__(self, 'cutoff', 2)
        if self.family == 'table':
            values = np.asarray(self.params, dtype=float)
            if values.size == 0 or np.any(values <= 0) or np.any(np.diff(values) > 0):
                raise InputError('table radii must be positive and nonincreasing')
        elif self.family == 'constant':
            if self.params[0] < 0:
                raise DomainError('negative constant radius')
        elif self.params[0] <= 0 or self.params[1] < 0:
            raise DomainError(f'{self.family} needs C > 0 and a non-negative exponent, got {self.params}')

    @classmethod
    def power_law(cls, C, alpha, n=2):
        return cls('powerlaw', (float(C), float(alpha)), n)

    @classmethod
    def power_log(cls, C, beta, n=2):
        return cls('powerlog', (float(C), float(beta)), n, 2)

    @classmethod
    def constant(cls, r, n=2):
        return cls('constant', (float(r),), n)

    @classmethod
    def table(cls, values, n=2):
        return cls('table', tuple(float(v) for v in values), n)

    def radii(self, t):
        """Vectorized r_t"""
        t = np.asarray(t)
        if np.any(t < self.cutoff):
            raise DomainError(f'index below the cutoff {self.cutoff}')
        if self.family == 'powerlaw':
            C, alpha = self.params
            return C / t.astype(float) ** alpha
        if self.family == 'powerlog':
            C, beta = self.params
            t = t.astype(float)
            return C / (t ** (1.0 / self.n) * np.log(t) ** beta)
        if self.family == 'constant':
            return np.full(t.shape, self.params[0])
        if np.any(t > len(self.params)):
            raise DomainError(f'table holds only {len(self.params)} radii')
        return np.asarray(self.params)[t.astype(np.int64) - 1]

    def __str__(self):
        return f'{self.family}:{",".join(f"{p:g}" for p in self.params)}'


def radius(seq, t):
    return float(seq.radii(t))


def parse_radius(text, n=2):
    """Parses 'powerlaw:C,alpha', 'powerlog:C,beta', 'constant:r', 'table:FILE' or 'table:v1;v2;...'"""
    family, _, body = text.partition(':')
    family = family.strip().lower()
    try:
        if family == 'table':
            if ';' in body or not os.path.isfile(body):
                values = [float(v) for v in body.replace(',', ';').split(';') if v.strip()]
            else:
                with open(body) as f:
                    values = [float(line) for line in f if line.strip() and not line.startswith('#')]
            return RadiusSequence.table(values, n)
        values = [float(v) for v in body.split(',')]
    except ValueError as e:
        raise InputError(f'cannot parse radius {text!r}: {e}') from e
    expected = {'powerlaw': 2, 'powerlog': 2, 'constant': 1}
    if family not in expected or len(values) != expected[family]:
        raise InputError(f'cannot parse radius {text!r}')
    if family == 'constant':
        return RadiusSequence.constant(values[0], n)
    return RadiusSequence(family, tuple(values), n, 2 if family == 'powerlog' else 1)


def _embedding_check(seq, ts, group, p0):
    i_v, orbifold = injectivity_radius(p0, group)
    r = seq.radii(ts)
    if orbifold or np.any(r > i_v):
        raise DomainError(f'target balls of radius up to {r.max():.4g} do not embed at {p0} (i_V = {i_v:.4g})')
    return r


def expected_sum_I(seq, T, group=GAMMA2, p0=BASE_POINT, start=None):
    """I_T = sum of mu(B_t) = ball_area(r_t) / area(V) over t = start..T"""
    start = seq.cutoff if start is None else start
    if T < start:
        return 0.0
    r = _embedding_check(seq, np.arange(start, T + 1), group, p0)
    return math.fsum(ball_area(r) / covolume(group))


def tail_mass(seq, T1, T2, group=GAMMA2, p0=BASE_POINT):
    """Expected number of hits with t in [T1, T2]"""
    return expected_sum_I(seq, T2, group, p0, start=max(T1, seq.cutoff))


@dataclass
class ExperimentConfig:
    radius: RadiusSequence
    group: object = GAMMA2
    p0: object = BASE_POINT
    h: float = 1.0
    T: int = 10_000
    trials: int = 500
    seed: int = 0
    threads: int = 1
    progress: bool = False

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError(f'step length {self.h} must be positive')
        if self.T < 1:
            raise DomainError(f'horizon {self.T} must be positive')
        if not bool(in_reduction_region(self.p0.x, self.p0.y, self.group)):
            raise DomainError(f'target centre {self.p0} is outside the reduction region of {self.group}')

    @property
    def R(self):
        return radius_R(self.p0, self.h, self.group)

    def start(self):
        """First index used: the cutoff, or later while r_t exceeds R"""
        ts = np.arange(self.radius.cutoff, self.T + 1)
        small = np.flatnonzero(self.radius.radii(ts) <= self.R)
        return int(ts[small[0]]) if small.size else self.T + 1


@dataclass
class TrialRecord:
    trial: int
    seed: int
    T: int
    hit_times: tuple
    windowed: list = field(default_factory=list)

    def __post_init__(self):
        times = np.asarray(self.hit_times)
        assert np.all(np.diff(times) > 0), 'hit times must be strictly increasing'
        assert times.size == 0 or times[-1] <= self.T, 'hit after the horizon'

    @property
    def S_T(self):
        return len(self.hit_times)

    @property
    def first_hit(self):
        return self.hit_times[0] if self.hit_times else 0

    @property
    def last_hit(self):
        return self.hit_times[-1] if self.hit_times else 0

    def to_row(self):
        return {'trial': self.trial, 'seed': self.seed, 'S_T': self.S_T,
                'first_hit': self.first_hit, 'last_hit': self.last_hit}


@dataclass
class ExperimentReport:
    T: int
    I_T: float
    mean_S: float
    mean_ratio: float
    second_moment: float
    frac_late_hit: float
    se_mean: float
    se_m2: float
    se_ratio: float
    records: list = field(default=None, repr=False)

    def __post_init__(self):
        if math.isfinite(self.second_moment):
            assert self.second_moment >= self.mean_ratio ** 2 - 1e-12, 'second moment below squared mean'
        assert 0.0 <= self.frac_late_hit <= 1.0

    def to_row(self):
        return {'T': self.T, 'I_T': self.I_T, 'mean_S': self.mean_S, 'mean_ratio': self.mean_ratio,
                'second_moment': self.second_moment, 'frac_late_hit': self.frac_late_hit,
                'se_mean': self.se_mean, 'se_m2': self.se_m2}


def trial_seed(seed, j):
    return int(seed) ^ int(j)


def _simulate_chunk(cfg, trials, start):
    """Hit matrix of shape (T, len(trials)) for a chunk of trials, one random stream per trial"""
    rngs = [np.random.default_rng(trial_seed(cfg.seed, j)) for j in trials]
    frames = sample_frames(rngs, cfg.group)
    hits = np.zeros((cfg.T, len(trials)), dtype=bool)
    radii = np.zeros(cfg.T + 1)
    if start <= cfg.T:
        radii[start:] = cfg.radius.radii(np.arange(start, cfg.T + 1))
    steps = range(1, cfg.T + 1)
    for t in tqdm(steps, desc='flow', disable=not cfg.progress, leave=False):
        frames, _ = step_frames(frames, cfg.h, cfg.group, renormalize=t % RENORMALIZE_EVERY == 0)
        if t < start or radii[t] <= 0:
            continue
        x, y = basepoints(frames)
        hits[t - 1] = quotient_dist_batch(x, y, cfg.p0, cfg.group) <= radii[t]
    return hits


def _records_from_hits(cfg, trials, hits):
    window = max(1, cfg.T // 10)
    records = []
    for col, j in enumerate(trials):
        times = np.flatnonzero(hits[:, col]) + 1
        windowed = np.bincount((times - 1) // window, minlength=math.ceil(cfg.T / window)).tolist()
        records.append(TrialRecord(j, trial_seed(cfg.seed, j), cfg.T, tuple(int(t) for t in times), windowed))
    return records


def run_trial(cfg, trial_index):
    """One orbit: Liouville start, T steps of the h-step flow, hit iff quotient distance <= r_t"""
    trials = [trial_index]
    return _records_from_hits(cfg, trials, _simulate_chunk(cfg, trials, cfg.start()))[0]


def run_experiment(cfg):
    """Runs cfg.trials independent trials in fixed chunks and summarizes them at the horizon T"""
    if cfg.trials < 2:
        raise DomainError('an experiment needs at least 2 trials')
    start = cfg.start()
    chunks = [list(range(lo, min(lo + TRIAL_CHUNK, cfg.trials))) for lo in range(0, cfg.trials, TRIAL_CHUNK)]
    hit_blocks = Parallel(n_jobs=cfg.threads)(delayed(_simulate_chunk)(cfg, trials, start) for trials in chunks)
    records = []
    for trials, hits in zip(chunks, hit_blocks):
        records += _records_from_hits(cfg, trials, hits)
    return summarize(records, cfg, cfg.T)


def _mean_and_se(values):
    values = np.asarray(values, dtype=float)
    mean = math.fsum(values) / len(values)
    var = math.fsum((values - mean) ** 2) / (len(values) - 1)
    return mean, math.sqrt(var / len(values))


def summarize(records, cfg, T):
    """Report at horizon T <= cfg.T from the hits of the given trials"""
    if T > cfg.T:
        raise DomainError(f'checkpoint {T} is beyond the simulated horizon {cfg.T}')
    start = cfg.start()
    I_T = expected_sum_I(cfg.radius, T, cfg.group, cfg.p0, start=start) if start <= T else 0.0
    late = math.ceil(T / 2)
    S = np.array([sum(1 for t in r.hit_times if t <= T) for r in records], dtype=float)
    late_hit = np.array([any(late <= t <= T for t in r.hit_times) for r in records], dtype=float)
    mean_S, se_mean = _mean_and_se(S)
    if I_T > 0:
        mean_ratio, se_ratio = _mean_and_se(S / I_T)
        second_moment, se_m2 = _mean_and_se((S / I_T) ** 2)
    else:
        mean_ratio = se_ratio = second_moment = se_m2 = float('nan')
    return ExperimentReport(T, I_T, mean_S, mean_ratio, second_moment, math.fsum(late_hit) / len(records),
                            se_mean, se_m2, se_ratio, records)


def trials_frame(report):
    return pd.DataFrame([r.to_row() for r in report.records],
                        columns=['trial', 'seed', 'S_T', 'first_hit', 'last_hit'])


@dataclass
class TwoBallReport:
    d: float
    r1: float
    r2: float
    h: float
    gate: bool
    estimate: float
    se: float
    bound_ratio: float
    hits: int
    samples: int
    continuous: bool = False

    def to_row(self):
        return {'d': self.d, 'r1': self.r1, 'r2': self.r2, 'h': self.h, 'gate': self.gate,
                'estimate': self.estimate, 'se': self.se, 'bound_ratio': self.bound_ratio}


def _sample_ball_frames(o1, r1, size, rng):
    """Frames with basepoint uniform (hyperbolic area) in B(o1, r1) and uniform direction"""
    rho = np.arccosh(1.0 + rng.uniform(size=size) * (math.cosh(r1) - 1.0))
    psi = rng.uniform(0.0, 2.0 * math.pi, size=size)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=size)
    radial = flow_frames(frames_from(0.0, 1.0, psi), rho)
    centre = frame_from(o1, 0.5 * math.pi)
    x, y = basepoints(left_multiply(radial, centre.a, centre.b, centre.c, centre.d))
    return frames_from(x, y, theta)


def _line_distance(frames, o2):
    """Distance from o2 to the full geodesic line of every frame"""
    a, b, c, d = frames[:, 0], frames[:, 1], frames[:, 2], frames[:, 3]
    # the line of f is f(imaginary axis), so measure f^{-1}(o2) against the imaginary axis
    wx, wy = apply_arrays(d, -b, -c, a, o2.x, o2.y)
    return np.arcsinh(np.abs(wx) / wy)


def two_ball_experiment(o1, r1, o2, r2, h, samples, seed, continuous=False, n=2):
    """Monte Carlo measure of the h-step geodesics through B(o1, r1) that meet B(o2, r2).

    Args:
        o1, o2 (HPoint): ball centres, at distance d > 2
        r1, r2 (float): radii in (0, 1)
        h (float): step length, h > 2 min(r1, r2)
        samples (int): Monte Carlo samples
        seed (int): seed of the sample stream
        continuous (bool): test the full geodesic line instead of the integer steps
        n (int): dimension exponent of the bound
    Returns:
        report (TwoBallReport)
    """
    d = dist(o1, o2)
    if not (0 < r1 < 1 and 0 < r2 < 1):
        raise DomainError(f'radii {r1}, {r2} must lie in (0, 1)')
    if not d > 2:
        raise DomainError(f'ball centres are only {d:.4g} apart, need more than 2')
    if not continuous and not h > 2 * min(r1, r2):
        raise DomainError(f'step length {h} must exceed 2 min(r1, r2)')
    rng = np.random.default_rng(seed)
    steps = np.arange(-(int(d // h) + 2), int(d // h) + 3)
    hits = 0
    for lo in range(0, samples, SAMPLE_CHUNK):
        frames = _sample_ball_frames(o1, r1, min(SAMPLE_CHUNK, samples - lo), rng)
        if continuous:
            hit = _line_distance(frames, o2) <= r2
        else:
            hit = np.zeros(len(frames), dtype=bool)
            for k in steps:
                x, y = basepoints(flow_frames(frames, k * h))
                hit |= dist_arrays(x, y, o2.x, o2.y) <= r2
        hits += int(hit.sum())
    frac = hits / samples
    scale = 2.0 * math.pi * ball_area(r1)
    estimate = frac * scale
    se = math.sqrt(frac * (1.0 - frac) / samples) * scale
    gate = abs(d - h * round(d / h)) <= 2 * max(r1, r2)
    bound = (r1 * r2) ** (n - 1) * math.exp(-(n - 1) * d)
    if not continuous:
        bound *= min(r1, r2)
    return TwoBallReport(d, r1, r2, h, bool(gate), estimate, se, estimate / bound, hits, samples, continuous)
