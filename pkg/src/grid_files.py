import csv
import json
import math
import os

import numpy as np


def _ensure_parent(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _format(value):
    return 'nan' if not np.isfinite(value) else repr(float(value))


def write_structured_grid(path, values, origin, spacing, tag, h_trunc=None, axis_names=None):
    """ASCII grid: header lines, then one value per line in row-major order.

    Exterior nodes are written as nan.
    """
    values = np.asarray(values, dtype=float)
    _ensure_parent(path)
    with open(path, 'w') as handle:
        handle.write(f'n {values.ndim}\n')
        handle.write('extents ' + ' '.join(str(s) for s in values.shape) + '\n')
        handle.write('spacing ' + ' '.join(_format(h) for h in spacing) + '\n')
        handle.write('origin ' + ' '.join(_format(o) for o in origin) + '\n')
        handle.write(f'h_trunc {"none" if h_trunc is None else _format(h_trunc)}\n')
        if axis_names:
            handle.write('axes ' + ' '.join(axis_names) + '\n')
        handle.write(f'quantity {tag}\n')
        for value in values.ravel():
            handle.write(_format(value) + '\n')
    return path


def read_structured_grid(path):
    """Inverse of write_structured_grid: (values, header dict)"""
    header = {}
    with open(path) as handle:
        lines = handle.read().splitlines()
    i = 0
    while i < len(lines) and not _is_number(lines[i]):
        key, _, rest = lines[i].partition(' ')
        header[key] = rest
        i += 1
    shape = tuple(int(s) for s in header['extents'].split())
    values = np.array([float(line) for line in lines[i:]]).reshape(shape)
    return values, header


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def write_field(path, field):
    """ScalarField on its masked grid"""
    grid = field.grid
    return write_structured_grid(path, field.full(), grid.origin, grid.spacing, field.tag, grid.h_trunc)


def write_strip(path, strip, tag='f0'):
    """StripField with Y axes first and T last"""
    spacing = [2.0 * strip.theta / axis.size for axis in strip.y] + [strip.dT]
    origin = [-strip.theta] * len(strip.y) + [0.0]
    names = [f'Y{i + 1}' for i in range(len(strip.y))] + ['T']
    return write_structured_grid(path, strip.values, origin, spacing, tag, axis_names=names)


def write_csv(path, header, rows):
    _ensure_parent(path)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def write_convergence_table(path, rows):
    """rows: dicts with resolution, h_grid, h_trunc, error, order"""
    return write_csv(path, ['resolution', 'h_grid', 'h_trunc', 'error', 'observed_order'],
                     [[r['resolution'], r['h_grid'], r['h_trunc'], r['error'], r.get('order', float('nan'))]
                      for r in rows])


def write_radial_csv(path, profile):
    return write_csv(path, ['r', 'u', 'v', 'w'], profile.rows())


def write_json(path, data):
    _ensure_parent(path)
    with open(path, 'w') as handle:
        json.dump(finite_json(data), handle, sort_keys=True, indent=2, allow_nan=False, default=to_jsonable)
        handle.write('\n')
    return path


def to_jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def finite_json(value):
    """Numpy values unwrapped and NaN/inf replaced by None, for strict JSON"""
    if isinstance(value, dict):
        return {key: finite_json(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [finite_json(item) for item in value]
    if isinstance(value, np.ndarray):
        return finite_json(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
