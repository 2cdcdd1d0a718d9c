"""
Count curve cache, stored as compressed numpy archives under $SHRINKING_TARGETS_CACHE
"""

import glob
import os

import numpy as np

from lattice import GRID_SPACING, GROUPS, CountCurve, build_count_curve
from utils.errors import CorruptionError

CACHE_VERSION = 1
CACHE_ENV = 'SHRINKING_TARGETS_CACHE'


def cache_dir():
    path = os.environ.get(CACHE_ENV, os.path.join('.', 'cache'))
    os.makedirs(path, exist_ok=True)
    return path


def cache_name(kind, t_max, spacing=GRID_SPACING):
    return f'counts_{kind}_t{t_max:g}_grid{spacing:g}_v{CACHE_VERSION}.npz'


def save_count_curve(curve, path):
    """Writes the curve atomically (temporary file + rename)"""
    tmp = f'{path}.tmp.npz'
    payload = dict(version=np.int64(CACHE_VERSION), kind=np.array(curve.group.kind),
                   t_max=np.float64(curve.t_max), spacing=np.float64(curve.spacing),
                   t=curve.t, N=curve.N)
    if curve.norms is not None:
        payload.update(norms=curve.norms, cum=curve.cum)
    if curve.elements is not None:
        payload.update(elements=curve.elements)
    np.savez_compressed(tmp, **payload)
    os.replace(tmp, path)
    return path


def load_count_curve(path):
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as e:
        raise CorruptionError(f'cannot read count cache {path}: {e}') from e
    if int(data.get('version', -1)) != CACHE_VERSION:
        raise CorruptionError(f'count cache {path} has version {data.get("version")}, expected {CACHE_VERSION}')
    return CountCurve(GROUPS[str(data['kind'])], data['t'], data['N'], float(data['t_max']),
                      float(data['spacing']), norms=data.get('norms'), cum=data.get('cum'),
                      elements=data.get('elements'))


def cached_curves(kind, spacing=GRID_SPACING):
    """(t_max, path) of every cached curve of a group, largest first"""
    found = []
    for path in glob.glob(os.path.join(cache_dir(), f'counts_{kind}_t*_grid{spacing:g}_v{CACHE_VERSION}.npz')):
        t_max = float(os.path.basename(path).split('_t')[1].split('_grid')[0])
        found.append((t_max, path))
    return sorted(found, reverse=True)


def load_or_build(t_max, group, spacing=GRID_SPACING, threads=1, progress=False, **kwargs):
    """Returns a cached curve reaching t_max, or builds, caches and returns a new one.

    Returns:
        curve (CountCurve), path (str): the curve and the cache file it lives in
    """
    for cached_t, path in cached_curves(group.kind, spacing):
        if cached_t >= t_max:
            if progress:
                print(f'loading cached counts from {path} ...')
            return load_count_curve(path), path
    if progress:
        print(f'enumerating {group} up to t={t_max} ...')
    curve = build_count_curve(t_max, group, spacing=spacing, threads=threads, progress=progress, **kwargs)
    path = os.path.join(cache_dir(), cache_name(group.kind, t_max, spacing))
    return curve, save_count_curve(curve, path)
