"""
Result files.

CSV dialect: comma separated, header line first, columns in a fixed order,
floats with 17 significant digits, booleans as true/false, LF line endings,
no quoting. JSON: one object {"metadata": {...}, "data": {column: [...]}}
with sorted keys and two-space indentation. Neither format carries a
timestamp, so identical inputs give byte-identical files.
"""
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from pyvaet import OutputError, ParameterError, __version__

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json')


@dataclass(frozen=True, eq=False)
class ResultTable:
    """named, equally long columns plus the metadata that produced them"""
    columns: Sequence[str]
    data: Dict[str, np.ndarray]
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [name for name in self.columns if name not in self.data]
        if missing:
            raise ParameterError(f'result has no data for columns {missing}')
        lengths = {len(self.data[name]) for name in self.columns}
        if len(lengths) > 1:
            raise ParameterError(f'result columns differ in length: {sorted(lengths)}')

    def __len__(self):
        return len(self.data[self.columns[0]]) if self.columns else 0

    def rows(self):
        for k in range(len(self)):
            yield [self.data[name][k] for name in self.columns]


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise OutputError('result', f'non-finite value {value!r}')
        return format(float(value), '.17g')
    return str(value)


def _json_value(value):
    if isinstance(value, dict):
        return {str(k): _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_json_value(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def format_csv(table):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n', quoting=csv.QUOTE_MINIMAL)
    writer.writerow(table.columns)
    for row in table.rows():
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def format_json(table):
    document = {
        'metadata': _json_value(dict(table.metadata, version=__version__)),
        'data': {name: _json_value(table.data[name]) for name in table.columns},
        'columns': list(table.columns),
    }
    try:
        return json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + '\n'
    except ValueError as e:
        raise OutputError('result', str(e)) from e


def write_results(result, format, path):
    """write result as csv or json to path; single-threaded, whole file at once"""
    if format not in FORMATS:
        raise ParameterError(f'format must be one of {", ".join(FORMATS)}, got {format!r}')
    text = format_csv(result) if format == 'csv' else format_json(result)
    try:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    logger.info('wrote %d rows to %s (%s)', len(result), path, format)
