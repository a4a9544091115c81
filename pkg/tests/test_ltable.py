import json
import math
import os

import numpy as np
import pytest

import dftgamma.ltable as lt
from dftgamma.functionals import tf_c0, tf_d
from dftgamma.ltable import (
    DERIVATIVE_TOL,
    LRow,
    LTable,
    LTableCache,
    atomic_write_text,
    build_l_table,
    default_t_values,
    merge_tables,
    resolve_cache_dir,
)
from dftgamma.radial import RadialGrid
from dftgamma.single_nucleus import SolverError

FAMILIES = ["TF+C0", "TF+D", "vW+C0", "vW+D"]


@pytest.mark.parametrize("family", FAMILIES)
def test_default_tables_pass_audits(tables, family):
    table = tables[family]
    assert not table.failed_rows
    assert table.passes_audits()
    audit = table.audit()
    assert audit["value_at_zero"] == 0.0
    assert audit["max_derivative_mismatch"] <= DERIVATIVE_TOL


@pytest.mark.parametrize("family", FAMILIES)
def test_multipliers_are_nonnegative_and_nonincreasing(tables, family):
    th = tables[family].thetas
    assert np.all(th >= 0)
    positive = tables[family].t > 0
    assert np.all(np.diff(th[positive]) <= 1e-9 * (1 + th[positive][:-1]))


def test_ionizing_tables_have_the_free_row(tables):
    free = [r for r in tables["TF+D"].rows if r.free]
    assert len(free) == 1 and free[0].theta == 0.0
    assert free[0].t == pytest.approx(1.0, abs=1e-4)
    assert not any(r.free for r in tables["TF+C0"].rows)


def test_tf_d_table_has_flat_row_near_one(tables):
    near = [r for r in tables["TF+D"].good_rows if abs(r.t - 1.0) <= 0.02]
    assert near and min(r.theta for r in near) <= 1e-3


def _fake(values, t=None):
    t = np.arange(len(values), dtype=float) if t is None else t
    return LTable(tf_c0(), RadialGrid(), tuple(LRow(float(a), float(v), 0.0, float(a)) for a, v in zip(t, values)))


def test_convexity_audit_catches_a_kink():
    assert _fake([0.0, -1.0, -2.0, -2.5]).passes_audits()
    bad = _fake([0.0, -1.0, -1.2, -3.0])
    assert not bad.convexity_audit()["passed"]
    assert bad.monotone_audit()["passed"]


def test_monotone_audit_catches_an_increase():
    bad = _fake([0.0, -1.0, -0.5])
    assert not bad.monotone_audit()["passed"]


def test_table_round_trips_through_json(tables):
    table = tables["TF+D"]
    again = LTable.from_dict(json.loads(json.dumps(table.to_dict())))
    assert again.rows == table.rows
    assert again.csv_lines() == table.csv_lines()


def test_cache_hit_needs_no_solves(tables, cache, monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("cache miss")

    monkeypatch.setattr(lt, "solve_L", refuse)
    monkeypatch.setattr(lt, "solve_L_unconstrained", refuse)
    again = build_l_table(tf_d(), cache=cache)
    assert again.csv_lines() == tables["TF+D"].csv_lines()


def test_failed_rows_are_kept_and_retried(tmp_path, monkeypatch):
    real = lt.solve_L

    def flaky(model, t, *a, **k):
        if t == 0.5:
            raise SolverError("synthetic failure")
        return real(model, t, *a, **k)

    cache = LTableCache(tmp_path)
    monkeypatch.setattr(lt, "solve_L", flaky)
    t = np.array([0.0, 0.25, 0.5, 1.0])
    table = build_l_table(tf_c0(), t, cache=cache)
    assert [r.t for r in table.failed_rows] == [0.5]
    assert table.failed_rows[0].error == "synthetic failure"
    assert "nan" in table.csv_lines()[3]
    monkeypatch.setattr(lt, "solve_L", real)
    table = build_l_table(tf_c0(), t, cache=cache)
    assert not table.failed_rows and len(table.rows) == 4


def test_merge_keeps_good_rows_and_unifies_nearly_equal_t():
    good = _fake([0.0, -1.0, -2.0], t=np.array([0.0, 0.34, 1.0]))
    near = LTable(tf_c0(), RadialGrid(), (LRow(0.33999999999999997, -1.0, 0.0, 0.34),))
    failed = LTable(tf_c0(), RadialGrid(), (LRow(1.0, math.nan, math.nan, math.nan, False, error="x"),))
    merged = merge_tables(merge_tables(good, near), failed)
    assert len(merged.rows) == 3
    assert not merged.failed_rows


def test_parallel_build_matches_sequential(tmp_path):
    t = np.array([0.0, 0.1, 0.5, 2.0])
    seq = build_l_table(tf_c0(), t)
    par = build_l_table(tf_c0(), t, workers=2)
    assert seq.rows == par.rows


def test_stores_merge_rows(tmp_path):
    cache = LTableCache(tmp_path)
    build_l_table(tf_c0(), np.array([0.0, 0.5]), cache=cache)
    build_l_table(tf_c0(), np.array([1.0, 2.0]), cache=cache)
    loaded = cache.load(tf_c0(), RadialGrid())
    assert sorted(r.t for r in loaded.rows) == [0.0, 0.5, 1.0, 2.0]


def test_cache_key_depends_on_model_and_grid(tmp_path):
    cache = LTableCache(tmp_path)
    assert cache.path(tf_c0(), RadialGrid()) != cache.path(tf_d(), RadialGrid())
    assert cache.path(tf_c0(), RadialGrid()) != cache.path(tf_c0(), RadialGrid(n=2048))


def test_cache_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(lt.CACHE_ENV, str(tmp_path / "env"))
    assert resolve_cache_dir(tmp_path / "flag") == tmp_path / "flag"
    assert resolve_cache_dir() == tmp_path / "env"
    monkeypatch.delenv(lt.CACHE_ENV)
    assert resolve_cache_dir().name == "dftgamma"


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "sub" / "file.txt"
    atomic_write_text(target, "one")
    atomic_write_text(target, "two")
    assert target.read_text() == "two"
    assert os.listdir(target.parent) == ["file.txt"]


def test_default_t_values():
    t = default_t_values(tf_c0())
    assert t[0] == 0.0 and t[-1] == pytest.approx(4.0) and np.all(np.diff(t) > 0)
    assert default_t_values(tf_d()).size > t.size
    with pytest.raises(ValueError):
        default_t_values(tf_c0(), 1.0, 0.5)


def test_build_rejects_unsorted_masses():
    with pytest.raises(ValueError):
        build_l_table(tf_c0(), np.array([0.5, 0.1]))


def test_csv_has_seventeen_digit_values(tables):
    lines = tables["TF+C0"].csv_lines()
    assert lines[0] == "t,L,dL_fd,minus_theta,theta,t_achieved,converged,free"
    value = lines[5].split(",")[1]
    assert float(value) == tables["TF+C0"].rows[4].value
