import math

import numpy as np
import pytest

import lattice
from geometry.hyperbolic import ball_area
from lattice import (GAMMA2, IDENTITY, PSL2Z, S, T, CountCurve, LatticeElement, build_count_curve, c4_from_q,
                     congruence_mask, count_below, count_in_ball, displacement, enumerate_arrays, enumerate_ball,
                     fit_error_exponent, fit_t0, fitted_kappa, gamma_i_census, get_group, grid, main_term,
                     norm_bound, shell_census, strict_norm_bound, verify_shell_bound, well_roundedness_check,
                     well_roundedness_sweep)
from utils.errors import CorruptionError, DomainError, InputError, RangeError
from utils.lattice_utils import cache_name, load_count_curve, load_or_build, save_count_curve
from utils.oracles import enumeration_mismatches


def test_lattice_element_sign_is_canonical():
    assert LatticeElement(-1, 0, 0, -1) == IDENTITY
    assert LatticeElement(0, 1, -1, 0) == S
    assert (S @ S) == IDENTITY
    assert (T @ T.inverse()) == IDENTITY
    with pytest.raises(DomainError):
        LatticeElement(1, 1, 1, 1)


def test_displacement_from_norm():
    assert displacement(IDENTITY) == 0.0
    assert displacement(T) == pytest.approx(math.acosh(1.5))
    g = LatticeElement(1, 2, 0, 1)
    assert displacement(g) == pytest.approx(math.acosh(3.0))


def test_norm_bounds():
    assert norm_bound(0.0) == 2
    assert norm_bound(-1.0) == 0
    assert norm_bound(math.acosh(3.0)) == 6
    assert strict_norm_bound(math.acosh(3.0)) == 5
    assert strict_norm_bound(0.0) == 0


def test_ball_of_radius_zero():
    assert set(enumerate_ball(0.0, PSL2Z)) == {IDENTITY, S}
    assert enumerate_ball(0.0, GAMMA2) == [IDENTITY]


@pytest.mark.parametrize('group', [PSL2Z, GAMMA2], ids=str)
def test_enumeration_matches_brute_force(group):
    assert enumeration_mismatches(3.0, group) == 0


def test_enumeration_is_sorted_and_unique():
    elements = enumerate_arrays(5.0, PSL2Z)
    assert np.all(np.diff(elements[:, 4]) >= 0)
    assert len({tuple(row[:4]) for row in elements}) == len(elements)
    a, b, c, d = elements[:, 0], elements[:, 1], elements[:, 2], elements[:, 3]
    assert np.all(a * d - b * c == 1)
    assert np.all(a * a + b * b + c * c + d * d == elements[:, 4])


def test_gamma2_elements_are_congruent():
    elements = enumerate_ball(5.0, GAMMA2)
    assert all(GAMMA2.contains(g) for g in elements)
    assert not GAMMA2.contains(T)


def test_enumeration_does_not_depend_on_threads():
    assert np.array_equal(enumerate_arrays(6.0, GAMMA2, threads=1), enumerate_arrays(6.0, GAMMA2, threads=2))


def test_enumeration_range_guards():
    with pytest.raises(RangeError):
        enumerate_arrays(17.0, PSL2Z)
    with pytest.raises(DomainError):
        enumerate_arrays(-1.0, PSL2Z)


def test_get_group():
    assert get_group('PSL2Z') is PSL2Z
    assert get_group('Gamma(2)') is GAMMA2
    with pytest.raises(InputError):
        get_group('gamma3')


def test_count_curve_agrees_with_enumeration():
    curve = build_count_curve(6.0, PSL2Z, keep_elements_below=4.0)
    for t in (0.0, 1.3, 4.0, 6.0):
        assert count_in_ball(t, PSL2Z, curve) == len(enumerate_arrays(t, PSL2Z))
    assert np.array_equal(curve.t, grid(6.0))
    assert curve.N[-1] == len(enumerate_arrays(6.0, PSL2Z))
    assert len(curve.elements) == len(enumerate_arrays(4.0, PSL2Z))


def test_count_in_ball_guards():
    curve = build_count_curve(3.0, PSL2Z, keep_elements_below=None)
    with pytest.raises(RangeError):
        count_in_ball(4.0, PSL2Z, curve)
    with pytest.raises(InputError):
        count_in_ball(2.0, GAMMA2, curve)


def test_count_curve_validation():
    with pytest.raises(InputError):
        CountCurve(PSL2Z, [0.0, 1.0, 2.0], [5, 3, 7], 2.0)
    with pytest.raises(InputError):
        CountCurve(PSL2Z, [0.0, 1.0, 1.0], [1, 2, 3], 2.0)


def test_gamma2_has_index_six():
    curve_psl = build_count_curve(9.0, PSL2Z, keep_elements_below=None)
    curve_g2 = build_count_curve(9.0, GAMMA2, keep_elements_below=None)
    ratio = count_in_ball(9.0, PSL2Z, curve_psl) / count_in_ball(9.0, GAMMA2, curve_g2)
    assert ratio == pytest.approx(6.0, rel=0.15)


def test_shell_census_counts_the_half_open_shell():
    curve = build_count_curve(6.0, PSL2Z, keep_elements_below=None)
    census = shell_census(1.0, 5, 0.3, PSL2Z, curve=curve, with_elements=True)
    norms = enumerate_arrays(5.3, PSL2Z)[:, 4]
    expected = int(np.sum(norms > norm_bound(4.7)))
    assert census.count == expected == len(census.elements)


def test_shell_census_argument_checks():
    with pytest.raises(DomainError):
        shell_census(1.0, 3, 1.5, PSL2Z)
    with pytest.raises(DomainError):
        shell_census(0.0, 3, 0.5, PSL2Z)


def test_gamma_i_shells_partition_the_group():
    h, top = 0.7, 7
    curve = build_count_curve(h * top + h, GAMMA2, keep_elements_below=None)
    total = sum(gamma_i_census(h, i, GAMMA2, curve).count for i in range(top + 1))
    norms = enumerate_arrays(h * top + h, GAMMA2)[:, 4]
    assert total == count_below(h * top + h / 2, curve) == int(np.sum(norms <= strict_norm_bound(h * top + h / 2)))


def test_main_term_with_explicit_kappa():
    assert main_term(5.0, PSL2Z, kappa=1.0) == pytest.approx(ball_area(5.0))
    with pytest.raises(DomainError):
        main_term(-1.0, PSL2Z, kappa=1.0)


def _synthetic_curve(counts):
    t = np.round(np.arange(0, 601) * 0.05, 10)
    return CountCurve(PSL2Z, t, counts(t), 30.0)


def test_fit_recovers_a_square_root_error_term():
    curve = _synthetic_curve(lambda t: np.round(3 * np.exp(t) + np.exp(t / 2)).astype(np.int64))
    kappa, q = fit_error_exponent(curve, 6.0, 30.0)
    assert kappa == pytest.approx(3 / math.pi, rel=1e-3)
    assert 0.45 <= q <= 0.55


def test_fit_without_error_term_gives_small_exponent():
    curve = _synthetic_curve(lambda t: np.round(3 * np.exp(t)).astype(np.int64))
    _, q = fit_error_exponent(curve, 6.0, 30.0)
    assert q <= 0.1


def test_fit_needs_a_long_enough_range():
    curve = _synthetic_curve(lambda t: np.round(3 * np.exp(t)).astype(np.int64))
    with pytest.raises(InputError):
        fit_error_exponent(curve, 6.0, 9.0)


def test_c4_from_q():
    assert c4_from_q(0.5) == pytest.approx(2.0)
    assert c4_from_q(0.5, n=3) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        c4_from_q(1.2)


def test_shell_bound_regime_marking():
    report = verify_shell_bound(1.0, range(3, 8), [0.1, 0.5], PSL2Z, c4=2.0, t0=0.0)
    rows = report.table[report.table['r'] == 0.1]
    assert list(rows['in_regime']) == [i >= 5 for i in range(3, 8)]
    assert not report.table.loc[~report.table['in_regime'], 'flagged'].any()
    assert set(report.table.columns) >= {'h', 'i', 'r', 'count', 'ratio'}


def test_well_roundedness():
    assert well_roundedness_check(10.0, 0.1) == pytest.approx((math.exp(0.2) - 1) / 0.1, rel=1e-3)
    with pytest.raises(DomainError):
        well_roundedness_check(0.05, 0.1)
    assert not well_roundedness_sweep(0.1)['flagged'].any()


def test_adjacent_shells_partition_the_ball():
    curve = build_count_curve(7.5, PSL2Z, keep_elements_below=None)
    total = sum(shell_census(1.0, i, 0.5, PSL2Z, curve=curve).count for i in range(8))
    assert total == count_in_ball(7.5, PSL2Z, curve)


def test_gamma2_is_the_congruence_subset_of_the_modular_group():
    psl = {tuple(int(v) for v in row[:4]) for row in enumerate_arrays(6.0, PSL2Z)}
    g2 = {tuple(int(v) for v in row[:4]) for row in enumerate_arrays(6.0, GAMMA2)}
    assert g2 < psl
    assert g2 == {g for g in psl if congruence_mask('gamma2', *g)}


def test_counts_grow_by_a_factor_e_per_unit_radius():
    curve = build_count_curve(11.0, PSL2Z, keep_elements_below=None)
    for t in (9.0, 10.0):
        assert count_in_ball(t + 1, PSL2Z, curve) / count_in_ball(t, PSL2Z, curve) == pytest.approx(math.e, rel=0.05)


def test_fits_leave_the_process_kappa_alone(monkeypatch):
    monkeypatch.setattr(lattice, '_FITTED', {'psl2z': (0.95, 0.5)})
    fit_error_exponent(build_count_curve(7.0, GAMMA2, keep_elements_below=None))
    fit_error_exponent(build_count_curve(7.0, PSL2Z, keep_elements_below=None), 2.0, 6.5)
    assert lattice._FITTED == {'psl2z': (0.95, 0.5)}
    assert fitted_kappa(PSL2Z) == 0.95


def _cosh_counts(bump_at=None):
    def counts(t):
        n = np.round(6 * (np.cosh(t) - 1)).astype(np.int64)
        return n if bump_at is None else n + np.where(t >= bump_at, 5000, 0)
    return counts


def test_t0_is_where_cells_settle_on_the_main_term():
    assert fit_t0(_synthetic_curve(_cosh_counts()), kappa=3 / math.pi) <= 5.0
    assert fit_t0(_synthetic_curve(_cosh_counts(bump_at=10.0)), kappa=3 / math.pi) == pytest.approx(10.0)
    with pytest.raises(DomainError):
        fit_t0(_synthetic_curve(_cosh_counts()), kappa=3 / math.pi, band=0.9)


def test_shell_bound_fits_t0_by_default():
    curve = build_count_curve(8.0, PSL2Z, keep_elements_below=None)
    report = verify_shell_bound(1.0, range(3, 8), [0.1, 0.5], PSL2Z, c4=2.0, curve=curve)
    assert report.t0 == fit_t0(curve)
    expected = [i >= max(-2.0 * math.log(0.1), 0.1 + report.t0) for i in range(3, 8)]
    assert list(report.table.loc[report.table['r'] == 0.1, 'in_regime']) == expected


def test_cache_roundtrip_and_reuse(cache_env):
    curve, path = load_or_build(4.0, GAMMA2)
    assert path.endswith(cache_name('gamma2', 4.0))
    again, same = load_or_build(3.0, GAMMA2)
    assert same == path
    assert np.array_equal(again.N, curve.N)
    assert count_in_ball(3.5, GAMMA2, again) == count_in_ball(3.5, GAMMA2, curve)


def test_corrupt_cache_is_reported(tmp_path):
    path = tmp_path / 'broken.npz'
    path.write_bytes(b'not an archive')
    with pytest.raises(CorruptionError):
        load_count_curve(str(path))
    curve = build_count_curve(2.0, PSL2Z, keep_elements_below=None)
    good = save_count_curve(curve, str(tmp_path / 'good.npz'))
    assert load_count_curve(good).t_max == 2.0


@pytest.mark.slow
def test_count_asymptotics_on_the_modular_group():
    curve = build_count_curve(12.0, PSL2Z, threads=2, keep_elements_below=None)
    ts = curve.t[curve.t >= 10.0 - 1e-9]
    ratio = curve.count_at(ts) / ball_area(ts)
    assert ratio.max() / ratio.min() - 1 < 0.02
    assert np.mean(ratio) == pytest.approx(3 / math.pi, rel=0.05)
    _, q = fit_error_exponent(curve)
    assert q < 0.95


@pytest.mark.slow
def test_shell_bound_ratios_stay_within_a_factor_two():
    curve = build_count_curve(12.5, PSL2Z, threads=2, keep_elements_below=None)
    _, q = fit_error_exponent(curve)
    report = verify_shell_bound(1.0, range(6, 13), [0.01, 0.05, 0.1, 0.5], PSL2Z, c4_from_q(q), curve=curve)
    # thin shells at i = 6, 7 are dominated by the sparse integer norms
    assert report.t0 >= 7.0
    assert not report.table.loc[(report.table['i'] <= 7) & (report.table['r'] == 0.05), 'in_regime'].any()
    assert report.table['in_regime'].sum() >= 4
    assert report.spread < 2.0


@pytest.mark.slow
def test_fitted_kappa_of_gamma2_is_a_sixth():
    kappa = fitted_kappa(PSL2Z)
    assert kappa == pytest.approx(3 / math.pi, rel=0.01)
    assert fitted_kappa(GAMMA2) == pytest.approx(kappa / 6, rel=0.03)
    assert main_term(10.0, GAMMA2) / main_term(10.0, PSL2Z) == pytest.approx(1 / 6, rel=0.03)
    fit_error_exponent(build_count_curve(8.0, PSL2Z, keep_elements_below=None))
    assert fitted_kappa(PSL2Z) == kappa
