"""
Utilities for other scripts
"""

import contextlib
import os
import random
import shlex
import time

import mlflow
import numpy as np

VERSION = '1.0.0'
SCHEMA_VERSION = 1
FLOAT_FORMAT = '%.17g'


def str2bool(string):
    return string == 'True'


def set_random_seed(seed):
    np.random.seed(seed % 2 ** 32)  # legacy global stream
    random.seed(seed)  # Python


def parse_floats(text):
    return [float(v) for v in str(text).replace(';', ',').split(',') if v.strip()]


def read_config(path):
    """Reads a flat key=value file, blank lines and # comments are ignored

    Args:
        path (str): config or manifest file
    Returns:
        config (dict): raw string values by key
    """
    config = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            key, sep, value = line.partition('=')
            assert sep, f'malformed config line {line!r} in {path}'
            config[key.strip()] = value.strip()
    return config


def _atomic_write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f'{path}.tmp'
    with open(tmp, 'w') as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def write_csv(df, path, summary_lines=()):
    """Writes a DataFrame with 17 significant digits, optionally followed by '#' summary lines"""
    text = df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    for line in summary_lines:
        text += line.rstrip('\n') + '\n'
    return _atomic_write(path, text)


def write_text(path, lines):
    return _atomic_write(path, ''.join(line.rstrip('\n') + '\n' for line in lines))


def manifest_path(output):
    return f'{output}.manifest.txt'


def write_manifest(output, argv, config, seed, wall_clock, cache_ids=()):
    """Run manifest next to an output file; it is itself a valid --config file for replay.

    The output path is left out, so a replay without --out never overwrites the recorded run.
    """
    lines = [f'# python run.py {" ".join(shlex.quote(a) for a in argv)}',
             f'version={VERSION}', f'schema_version={SCHEMA_VERSION}', f'seed={seed}',
             f'wall_clock={wall_clock:.3f}']
    lines += [f'cache_{i}={cache_id}' for i, cache_id in enumerate(cache_ids)]
    lines += [f'{key}={value}' for key, value in sorted(config.items())
              if value is not None and key not in ('config', 'seed', 'out')]
    return write_text(manifest_path(output), lines)


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        return False

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


@contextlib.contextmanager
def tracking_run(args):
    """mlflow run for the command, or nothing when tracking is disabled"""
    if not args.track:
        yield None
        return
    mlflow.set_tracking_uri(args.tracking_uri)
    mlflow.set_experiment(args.experiment_name)
    with mlflow.start_run(run_name=args.run_name or args.command) as run:
        mlflow.log_params({k: str(v)[:250] for k, v in vars(args).items() if v is not None})
        yield run
        display_mlflow_run_info(run)


def log_outputs(run, paths, metrics=None):
    if run is None:
        return
    if metrics:
        mlflow.log_metrics({k: float(v) for k, v in metrics.items() if v is not None and np.isfinite(v)})
    for path in paths:
        mlflow.log_artifact(path)


def display_mlflow_run_info(run):
    uri = mlflow.get_tracking_uri()
    experiment_id = run.info.experiment_id
    experiment_name = mlflow.get_experiment(experiment_id).name
    run_id = run.info.run_id
    run_name = run.data.tags.get('mlflow.runName', '')
    print(f"view results at {uri}/#/experiments/{experiment_id}/runs/{run_id}"
          f" (experiment '{experiment_name}', run '{run_name}')")
