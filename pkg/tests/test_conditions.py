import math

import numpy as np
import pandas as pd
import pytest

from conditions import (FAILS, HOLDS, INCONCLUSIVE, bound_rhs, c_R, check_condition3, check_condition4,
                        check_condition5, l2_diagnostic, lemma41_check, measure_of_ball, partial_sums, v_s)
from geometry.hyperbolic import ball_area, ball_volume
from lattice import GAMMA2
from targets import RadiusSequence
from utils.errors import DomainError, InputError

CRITICAL = RadiusSequence.power_law(0.5, 0.5)


def test_partial_sums():
    sums = partial_sums(RadiusSequence.constant(0.1), 2, 5)
    assert np.allclose(sums, 0.01 * np.arange(1, 6))
    assert partial_sums(RadiusSequence.power_log(0.5, 1.0), 2, 1).size == 0
    with pytest.raises(DomainError):
        partial_sums(CRITICAL, 2, 0)


def test_condition3_holds_for_the_critical_power_law():
    report = check_condition3(CRITICAL, (1, 100_000))
    assert report.verdict == HOLDS
    assert report.sup_ratio == pytest.approx(math.log(2 * math.sqrt(2)) * 2 * math.sqrt(2) / 2)
    assert list(report.witness.columns) == ['s', 'ratio']


def test_condition3_holds_for_power_log():
    assert check_condition3(RadiusSequence.power_log(0.5, 1.0), (2, 100_000)).verdict == HOLDS


def test_condition3_with_explicit_bound_and_short_range():
    assert check_condition3(CRITICAL, (1, 100_000), C0=0.05).verdict == FAILS
    assert check_condition3(CRITICAL, (1, 5)).verdict == INCONCLUSIVE


def test_condition3_excludes_large_radii():
    report = check_condition3(RadiusSequence.power_law(2.0, 0.5), (1, 1000))
    assert report.params['s0'] == 5
    assert 'excluded' in report.notes[0]
    with pytest.raises(InputError):
        check_condition3(RadiusSequence.constant(1.5), (1, 100))


def test_condition4_fails_for_the_critical_power_law():
    report = check_condition4(CRITICAL, s_range=(2, 100_000))
    assert report.verdict == FAILS
    assert report.params['inf_ratio'] < report.sup_ratio


def test_condition4_holds_for_slower_decay():
    assert check_condition4(RadiusSequence.power_law(0.5, 0.25), s_range=(2, 100_000)).verdict == HOLDS


def test_measure_of_ball():
    assert measure_of_ball(0.3) == pytest.approx(ball_area(0.3) / (2 * math.pi))
    assert measure_of_ball(np.array([0.3]), n=3)[0] == pytest.approx(ball_volume(3, 0.3) / (2 * math.pi))


def test_condition5_on_exponential_radii():
    seq = RadiusSequence.table(np.exp(-np.arange(1, 301, dtype=float)))
    report = check_condition5(seq, 1.0, 0.0, (1, 300))
    assert report.verdict == HOLDS
    assert report.sup_ratio == pytest.approx(math.e + 1, rel=1e-9)
    assert 'clamped' in report.notes[0]


def test_condition5_single_term_window():
    seq = RadiusSequence.constant(0.1)
    report = check_condition5(seq, 0.0, 0.0, (1, 50))
    # window is {s}: r / (s r^2)
    expected = 0.1 / (np.arange(1, 51) * 0.01)
    assert np.allclose(report.witness['ratio'].to_numpy(), expected)


def test_window_lemma_on_the_critical_power_law():
    report = lemma41_check(CRITICAL, 1.0, 2.0, (1, 100_000))
    assert report.verdict == HOLDS
    assert report.first_violation is None
    assert report.params['C0'] == pytest.approx(1.47, abs=0.01)
    assert report.params['T'] == 18
    assert report.sup_ratio <= report.params['C3']


def test_window_lemma_on_power_log():
    assert lemma41_check(RadiusSequence.power_log(0.5, 1.0), 1.0, 2.0, (2, 100_000)).verdict == HOLDS


def test_window_lemma_argument_checks():
    with pytest.raises(DomainError):
        lemma41_check(CRITICAL, 0.0, 2.0, (1, 100))
    report = lemma41_check(CRITICAL, 1.0, 2.0, (1, 5))
    assert report.verdict == INCONCLUSIVE


def test_bound_rhs_for_constant_radius():
    parts = bound_rhs(RadiusSequence.constant(0.1), n=2, h=1.0, R=0.2, c4=2.0, T=50)
    assert parts.first == pytest.approx(50 * 0.01)
    assert parts.third == pytest.approx(1e-4 * 50 * 51 / 2)
    # L(s) = s - 8, so the window holds min(s, 9) terms
    window = sum(min(s, 9) for s in range(1, 51))
    assert parts.second == pytest.approx(1e-3 * window)
    assert parts.normalizer == pytest.approx(0.25)
    assert parts.total_ratio == pytest.approx((parts.first + parts.second + parts.third) / 0.25)


def test_bound_rhs_rejects_radii_above_R():
    with pytest.raises(DomainError):
        bound_rhs(RadiusSequence.constant(0.3), 2, 1.0, 0.2, 2.0, 10)
    with pytest.raises(DomainError):
        bound_rhs(RadiusSequence.constant(0.1), 2, 1.0, 0.2, 0.0, 10)


def test_v_s_bookkeeping():
    assert c_R(0.2, 1.0) == pytest.approx(3.2)
    seq = RadiusSequence.constant(math.exp(-3))
    assert v_s(seq, 5, c4=2.0, t0=1.0, h=1.0, R=0.2) == pytest.approx(6.0 + 3.2)
    assert v_s(seq, 5, c4=0.1, t0=1.0, h=1.0, R=0.2) == pytest.approx(2.0 + 3.2)


def test_l2_diagnostic_columns():
    rows = [{'T': 10, 'second_moment': 1.2}, {'T': 20, 'second_moment': 1.1}]
    table = l2_diagnostic(rows, RadiusSequence.constant(0.1), 2, 1.0, 0.2, 2.0)
    assert isinstance(table, pd.DataFrame)
    assert list(table['T']) == [10, 20]
    assert (table['bound_ratio'] > 0).all()


def test_summary_line_mentions_the_verdict():
    line = check_condition3(CRITICAL, (1, 1000)).summary_line()
    assert line.startswith('# condition3: holds-empirically')
    assert isinstance(measure_of_ball(0.2, group=GAMMA2), float)


def test_bound_rhs_starts_below_R():
    parts = bound_rhs(CRITICAL, n=2, h=1.0, R=0.2203, c4=2.0, T=100)
    assert parts.first == pytest.approx(math.fsum(0.25 / t for t in range(6, 101)))


def test_window_lemma_tail_starts_after_the_threshold():
    report = lemma41_check(CRITICAL, 1.0, 2.0, (1, 300))
    assert report.params['T'] == 18
    assert report.witness['s'].min() == 19


def test_bound_rhs_grows_with_the_horizon():
    parts = [bound_rhs(CRITICAL, 2, 1.0, 0.2203, 2.0, T) for T in (20, 50, 100, 1000)]
    for key in ('first', 'second', 'third', 'normalizer'):
        values = [getattr(p, key) for p in parts]
        assert values == sorted(values)
        assert values[0] < values[-1]


@pytest.mark.slow
def test_conditions_up_to_a_million():
    top = 10 ** 6
    assert check_condition3(CRITICAL, (1, top)).verdict == HOLDS
    assert check_condition4(CRITICAL, s_range=(2, top)).verdict == FAILS
    assert check_condition4(RadiusSequence.power_law(0.5, 0.25), s_range=(2, top)).verdict == HOLDS
    assert check_condition5(CRITICAL, 1.0, 2.0, (1, top)).verdict == HOLDS
    lemma = lemma41_check(CRITICAL, 1.0, 2.0, (1, top))
    assert lemma.verdict == HOLDS
    assert lemma.params['T'] == 18
