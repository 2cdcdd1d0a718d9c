import os
import sys
import math
import argparse

import pandas as pd

from utils.base import (Stopwatch, log_outputs, parse_floats, read_config, set_random_seed, str2bool,
                        tracking_run, write_csv, write_manifest, write_text)
from utils.errors import DomainError, InputError, ShrinkingTargetError
from utils.lattice_utils import load_or_build
from utils.oracles import run_selftest

from geometry.hyperbolic import BASE_POINT, HPoint
from geometry.quotient import radius_R
from lattice import (GRID_SPACING, KAPPA_FIT_T_MAX, c4_from_q, fit_error_exponent, get_group, verify_shell_bound,
                     well_roundedness_sweep)
from targets import (ExperimentConfig, parse_radius, run_experiment, summarize, trials_frame,
                     two_ball_experiment)
from conditions import (bound_rhs, check_condition3, check_condition4, check_condition5, l2_diagnostic,
                        lemma41_check, partial_sums)

REPORT_COLUMNS = ['T', 'I_T', 'mean_S', 'mean_ratio', 'second_moment', 'frac_late_hit', 'se_mean', 'se_m2']
TWOBALL_COLUMNS = ['d', 'r1', 'r2', 'h', 'gate', 'estimate', 'se', 'bound_ratio']
EXIT_INVALID = 2
EXIT_GATE_FAILED = 3


def _int(text):
    return int(float(text))


# args shared by every command
common = argparse.ArgumentParser(add_help=False)
common.add_argument('--config', type=str, default=None,
                    help='flat key=value file (a run manifest works too), command line flags win')
common.add_argument('--out', type=str, default=None, help='output file, defaults to <command>.csv')
common.add_argument('--seed', type=int, default=0, help='Global seed')
common.add_argument('--threads', type=int, default=os.cpu_count(),
                    help='joblib workers, never changes any output value')
common.add_argument('--progress', type=str2bool, default=False, help='Show progress bars')

common.add_argument('--track', type=str2bool, default=True, help='Log the run to mlflow')
common.add_argument('--tracking_uri', type=str, default='file:./mlruns', help='URI of the mlflow tracking store')
common.add_argument('--experiment_name', type=str, default='shrinking targets',
                    help='Specify the experiment you are running, e.g. divergent power law')
common.add_argument('--run_name', type=str, default=None, help='Specify the name of your run')

parser = argparse.ArgumentParser(description='shrinking targets for discrete geodesic flows on hyperbolic surfaces')
subparsers = parser.add_subparsers(dest='command')

count_parser = subparsers.add_parser('count', parents=[common], help='lattice point counts N(t)')
count_parser.add_argument('--group', type=str, default='gamma2', choices=['psl2z', 'gamma2'])
count_parser.add_argument('--tmax', type=float, default=12.0, help='largest radius of the count curve')
count_parser.add_argument('--spacing', type=float, default=GRID_SPACING, help='grid spacing of the (t, N) table')

shells_parser = subparsers.add_parser('shells', parents=[common], help='shell census sweep and shell bound report')
shells_parser.add_argument('--group', type=str, default='psl2z', choices=['psl2z', 'gamma2'])
shells_parser.add_argument('--h', type=float, default=1.0, help='step length')
shells_parser.add_argument('--imin', type=int, default=6)
shells_parser.add_argument('--imax', type=int, default=12)
shells_parser.add_argument('--r', type=str, default='0.01,0.05,0.1,0.5', help='comma separated shell half-widths')
shells_parser.add_argument('--c4', type=float, default=None, help='regime constant, fitted from the counts if unset')
shells_parser.add_argument('--t0', type=float, default=None,
                           help='start of the counting regime, fitted from the counts if unset')
shells_parser.add_argument('--eps', type=float, default=0.1, help='half-width of the well-roundedness sweep')
shells_parser.add_argument('--factor', type=float, default=2.0, help='allowed growth of the ratio before flagging')

fit_parser = subparsers.add_parser('fit', parents=[common], help='fit kappa and the error exponent q')
fit_parser.add_argument('--group', type=str, default='psl2z', choices=['psl2z', 'gamma2'])
fit_parser.add_argument('--tmax', type=float, default=KAPPA_FIT_T_MAX)
fit_parser.add_argument('--t_lo', type=float, default=None)
fit_parser.add_argument('--t_hi', type=float, default=None)
fit_parser.add_argument('--n', type=int, default=2, help='dimension exponent used for c4')

target_parser = subparsers.add_parser('target', parents=[common], help='shrinking target experiment')
target_parser.add_argument('--radius', type=str, default='powerlaw:0.5,0.5',
                           help="powerlaw:C,alpha | powerlog:C,beta | constant:r | table:FILE | table:v1;v2")
target_parser.add_argument('--n', type=int, default=2, help='dimension exponent of the radius family')
target_parser.add_argument('--group', type=str, default='gamma2', choices=['psl2z', 'gamma2'])
target_parser.add_argument('--p0', type=str, default='0,1', help='target centre x,y')
target_parser.add_argument('--h', type=float, default=1.0, help='step length')
target_parser.add_argument('--T', type=_int, default=10_000, help='horizon')
target_parser.add_argument('--trials', type=_int, default=500)
target_parser.add_argument('--checkpoints', type=str, default='',
                           help='extra horizons below T reported from the same trials, e.g. 1000')
target_parser.add_argument('--c4', type=float, default=2.0, help='regime constant of the second moment bound sums')

twoball_parser = subparsers.add_parser('twoball', parents=[common], help='two-ball measure sweep over d')
twoball_parser.add_argument('--d', type=str, default='4,6,8', help='comma separated distances between the centres')
twoball_parser.add_argument('--r1', type=float, default=0.5)
twoball_parser.add_argument('--r2', type=float, default=0.5)
twoball_parser.add_argument('--h', type=float, default=2.0, help='step length')
twoball_parser.add_argument('--samples', type=_int, default=1_000_000)
twoball_parser.add_argument('--continuous', type=str2bool, default=False,
                            help='test the whole geodesic line instead of the integer steps')
twoball_parser.add_argument('--n', type=int, default=2)

conditions_parser = subparsers.add_parser('conditions', parents=[common],
                                          help='conditions (2) to (5), the window lemma and the bound sums')
conditions_parser.add_argument('--radius', type=str, default='powerlog:0.5,1')
conditions_parser.add_argument('--n', type=int, default=2)
conditions_parser.add_argument('--group', type=str, default='gamma2', choices=['psl2z', 'gamma2'])
conditions_parser.add_argument('--C0', type=float, default=None, help='fixed bound for condition (3)')
conditions_parser.add_argument('--C1', type=float, default=1.0)
conditions_parser.add_argument('--C2', type=float, default=2.0)
conditions_parser.add_argument('--smin', type=_int, default=1)
conditions_parser.add_argument('--smax', type=_int, default=1_000_000)
conditions_parser.add_argument('--bound_T', type=_int, default=None, help='also evaluate the bound sums up to T')
conditions_parser.add_argument('--h', type=float, default=1.0, help='step length of the bound sums')
conditions_parser.add_argument('--c4', type=float, default=2.0, help='regime constant of the bound sums')

selftest_parser = subparsers.add_parser('reduce-selftest', parents=[common], help='oracle property suites')
selftest_parser.add_argument('--samples', type=_int, default=10_000)
selftest_parser.add_argument('--quick', type=str2bool, default=False)

SUBPARSERS = {'count': count_parser, 'shells': shells_parser, 'fit': fit_parser, 'target': target_parser,
              'twoball': twoball_parser, 'conditions': conditions_parser, 'reduce-selftest': selftest_parser}


def parse_args(argv):
    """Parses argv; values of --config become defaults of the sub-parser, so flags win"""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config', type=str, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    config = read_config(known.config)
    if not argv or argv[0] not in SUBPARSERS:
        if config.get('command') not in SUBPARSERS:
            raise InputError(f'{known.config} names no command')
        argv = [config['command']] + list(argv)
    sub = SUBPARSERS[argv[0]]
    actions = {a.dest: a for a in sub._actions if a.dest not in ('help', 'config')}
    defaults = {}
    for key, value in config.items():
        if key in actions:
            convert = actions[key].type or str
            defaults[key] = convert(value)
    previous = {key: sub.get_default(key) for key in defaults}
    sub.set_defaults(**defaults)
    try:
        return parser.parse_args(argv)
    finally:
        sub.set_defaults(**previous)


def _point(text):
    values = parse_floats(text)
    if len(values) != 2:
        raise InputError(f'cannot parse point {text!r}, expected x,y')
    return HPoint(*values)


def _stem(path):
    return os.path.splitext(path)[0]


def _finish(args, argv, outputs, watch, run, cache_ids=(), metrics=None):
    manifests = [write_manifest(path, argv, vars(args), args.seed, watch.elapsed, cache_ids) for path in outputs]
    log_outputs(run, list(outputs) + manifests, metrics)
    print('wrote ' + ', '.join(outputs))


def run_count(args, argv):
    group = get_group(args.group)
    with Stopwatch() as watch, tracking_run(args) as run:
        curve, cache_path = load_or_build(args.tmax, group, args.spacing, args.threads, args.progress)
        table = curve.to_frame()
        table = table[table['t'] <= args.tmax + 1e-9]
        out = args.out or 'count.csv'
        write_csv(table, out)
        _finish(args, argv, [out], watch, run, [os.path.basename(cache_path)],
                {'N_tmax': float(table['N'].iloc[-1])})
    return 0


def run_shells(args, argv):
    group = get_group(args.group)
    r_grid = parse_floats(args.r)
    with Stopwatch() as watch, tracking_run(args) as run:
        top = args.h * args.imax + max(r_grid)
        # the fits of c4 and t0 need the curve out to KAPPA_FIT_T_MAX
        fitted = args.c4 is None or args.t0 is None
        t_max = max(top, KAPPA_FIT_T_MAX) if fitted else top
        curve, cache_path = load_or_build(t_max, group, threads=args.threads,
                                          progress=args.progress)
        c4 = args.c4
        if c4 is None:
            _, q = fit_error_exponent(curve)
            c4 = c4_from_q(q)
        report = verify_shell_bound(args.h, range(args.imin, args.imax + 1), r_grid, group, c4,
                                    t0=args.t0, factor=args.factor, curve=curve)
        rounded = well_roundedness_sweep(args.eps)
        out = args.out or 'shells.csv'
        rounded_out = f'{_stem(out)}_well_roundedness.csv'
        summary = [f'# c4={c4:.17g} t0={report.t0:.17g} max_ratio={report.max_ratio:.17g} '
                   f'spread={report.spread:.17g} flagged={len(report.flagged)}']
        write_csv(report.table[['h', 'i', 'r', 'count', 'ratio', 'in_regime']], out, summary)
        write_csv(rounded, rounded_out, [f'# eps={args.eps:.17g} flagged={int(rounded["flagged"].sum())}'])
        print(summary[0])
        _finish(args, argv, [out, rounded_out], watch, run, [os.path.basename(cache_path)],
                {'max_ratio': report.max_ratio, 'spread': report.spread, 'flagged': len(report.flagged),
                 't0': report.t0})
    return 0


def run_fit(args, argv):
    group = get_group(args.group)
    with Stopwatch() as watch, tracking_run(args) as run:
        curve, cache_path = load_or_build(args.tmax, group, threads=args.threads, progress=args.progress)
        t_lo = max(float(curve.t[0]), 2.0) if args.t_lo is None else args.t_lo
        t_hi = args.tmax if args.t_hi is None else args.t_hi
        kappa, q = fit_error_exponent(curve, t_lo, t_hi)
        c4 = c4_from_q(q, args.n) if 0 < q < 1 else float('nan')
        out = args.out or 'fit.csv'
        write_csv(pd.DataFrame([{'group': group.kind, 't_lo': t_lo, 't_hi': t_hi, 'kappa': kappa, 'q': q, 'c4': c4}]),
                  out)
        print(f'{group}: kappa={kappa:.6g} q={q:.4f} c4={c4:.4f}')
        _finish(args, argv, [out], watch, run, [os.path.basename(cache_path)], {'kappa': kappa, 'q': q})
    return 0


def run_target(args, argv):
    cfg = ExperimentConfig(parse_radius(args.radius, args.n), get_group(args.group), _point(args.p0), args.h,
                           args.T, args.trials, args.seed, args.threads, args.progress)
    with Stopwatch() as watch, tracking_run(args) as run:
        report = run_experiment(cfg)
        checkpoints = sorted({int(c) for c in parse_floats(args.checkpoints) if 1 <= c < cfg.T})
        rows = [summarize(report.records, cfg, T).to_row() for T in checkpoints] + [report.to_row()]
        out = args.out or 'target.csv'
        trials_out = f'{_stem(out)}_trials.csv'
        write_csv(pd.DataFrame(rows, columns=REPORT_COLUMNS), out)
        write_csv(trials_frame(report), trials_out)
        outputs = [out, trials_out]
        print(f'T={report.T} I_T={report.I_T:.6g} mean S_T/I_T={report.mean_ratio:.4f} '
              f'second moment={report.second_moment:.4f} late hits={report.frac_late_hit:.3f}')
        bounded = [row for row in rows if row['T'] >= cfg.start()]
        try:
            l2 = l2_diagnostic(bounded, cfg.radius, args.n, cfg.h, cfg.R, args.c4) if bounded else None
        except DomainError as e:
            l2 = None
            print(f'second moment bound skipped: {e}')
        if l2 is not None:
            l2_out = f'{_stem(out)}_l2.csv'
            write_csv(l2, l2_out, [f'# R={cfg.R:.17g} c4={args.c4:.17g} h={cfg.h:.17g}'])
            outputs.append(l2_out)
        _finish(args, argv, outputs, watch, run,
                metrics={'I_T': report.I_T, 'mean_ratio': report.mean_ratio,
                         'second_moment': report.second_moment, 'frac_late_hit': report.frac_late_hit})
    return 0


def run_twoball(args, argv):
    with Stopwatch() as watch, tracking_run(args) as run:
        rows = []
        for d in parse_floats(args.d):
            report = two_ball_experiment(BASE_POINT, args.r1, HPoint(0.0, math.exp(d)), args.r2, args.h,
                                         args.samples, args.seed, args.continuous, args.n)
            rows.append(report.to_row())
            print(f'd={d:g} gate={report.gate} estimate={report.estimate:.6g} +- {report.se:.2g}')
        out = args.out or 'twoball.csv'
        write_csv(pd.DataFrame(rows, columns=TWOBALL_COLUMNS), out)
        _finish(args, argv, [out], watch, run)
    return 0


def run_conditions(args, argv):
    seq = parse_radius(args.radius, args.n)
    s_range = (args.smin, args.smax)
    with Stopwatch() as watch, tracking_run(args) as run:
        reports = [check_condition3(seq, s_range, args.C0),
                   check_condition4(seq, args.n, get_group(args.group), s_range),
                   check_condition5(seq, args.C1, args.C2, s_range),
                   lemma41_check(seq, args.C1, args.C2, s_range)]
        out = args.out or 'conditions.txt'
        outputs = []
        for report in reports:
            path = f'{_stem(out)}_{report.condition}.csv'
            write_csv(report.witness, path, [report.summary_line()])
            outputs.append(path)
        sums = partial_sums(seq, args.n, args.smax)
        lines = [f'# radius {seq} n={args.n} s in [{args.smin}, {args.smax}]',
                 f'# condition2: sum of r_t^n up to {args.smax} is {sums[-1]:.17g}'
                 f', up to {args.smax // 10} is {sums[max(args.smax // 10 - seq.cutoff, 0)]:.17g}']
        lines += [report.summary_line() for report in reports]
        if args.bound_T is not None:
            R = radius_R(BASE_POINT, args.h, get_group(args.group))
            parts = bound_rhs(seq, args.n, args.h, R, args.c4, args.bound_T)
            lines.append(f'# bound_rhs: T={args.bound_T} R={R:.17g} first={parts.first:.17g} '
                         f'second={parts.second:.17g} third={parts.third:.17g} ratio={parts.total_ratio:.17g}')
        write_text(out, lines)
        print('\n'.join(lines))
        _finish(args, argv, [out] + outputs, watch, run,
                metrics={r.condition: float(r.verdict == 'holds-empirically') for r in reports})
    return 0


def run_reduce_selftest(args, argv):
    with Stopwatch() as watch, tracking_run(args) as run:
        table = run_selftest(args.samples, args.seed, args.quick)
        out = args.out or 'selftest.csv'
        write_csv(table, out)
        print(table.to_string(index=False))
        _finish(args, argv, [out], watch, run, metrics={'failed': float((~table['passed']).sum())})
    return 0 if table['passed'].all() else EXIT_GATE_FAILED


COMMANDS = {'count': run_count, 'shells': run_shells, 'fit': run_fit, 'target': run_target,
            'twoball': run_twoball, 'conditions': run_conditions, 'reduce-selftest': run_reduce_selftest}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else EXIT_INVALID
    except ShrinkingTargetError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INVALID
    if args.command is None:
        parser.print_usage()
        return EXIT_INVALID
    set_random_seed(args.seed)
    try:
        return COMMANDS[args.command](args, argv)
    except ShrinkingTargetError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INVALID


if __name__ == '__main__':
    sys.exit(main())
