#!/usr/bin/env python3

import json

import numpy as np
import pytest

from pyvaet import OutputError, ParameterError, __version__
from output import ResultTable, format_csv, format_json, write_results


def test_header_only_csv():
    table = ResultTable(['t_ms', 'p_acc'], {'t_ms': np.zeros(0), 'p_acc': np.zeros(0)})
    assert len(table) == 0
    assert format_csv(table) == 't_ms,p_acc\n'


def test_csv_cells():
    table = ResultTable(['t', 'p', 'ok', 'k'], {'t': [0.5], 'p': [0.1], 'ok': [np.bool_(True)], 'k': [np.int64(3)]})
    assert format_csv(table) == 't,p,ok,k\n0.5,0.10000000000000001,true,3\n'


def test_non_finite_values_are_refused():
    table = ResultTable(['p'], {'p': [np.nan]})
    with pytest.raises(OutputError):
        format_csv(table)
    with pytest.raises(OutputError):
        format_json(table)


def test_columns_must_match():
    with pytest.raises(ParameterError):
        ResultTable(['a', 'b'], {'a': [1.0]})
    with pytest.raises(ParameterError):
        ResultTable(['a', 'b'], {'a': [1.0], 'b': [1.0, 2.0]})


def test_json_document():
    table = ResultTable(['nu_eff_khz', 'p_acc'], {'nu_eff_khz': np.array([-1.0, 1.0]), 'p_acc': np.array([0.2, 0.1])},
                        {'n_max': np.array([5, 6]), 'peaks': [{'k': None}]})
    document = json.loads(format_json(table))
    assert document['metadata'] == {'n_max': [5, 6], 'peaks': [{'k': None}], 'version': __version__}
    assert document['data']['p_acc'] == [0.2, 0.1]
    assert document['columns'] == ['nu_eff_khz', 'p_acc']


def test_write_results(tmp_path):
    table = ResultTable(['p'], {'p': [0.25]})
    path = tmp_path / 'out.csv'
    write_results(table, 'csv', path)
    assert path.read_bytes() == b'p\n0.25\n'
    with pytest.raises(ParameterError):
        write_results(table, 'xml', path)
    with pytest.raises(OutputError, match='cannot write'):
        write_results(table, 'csv', tmp_path)
