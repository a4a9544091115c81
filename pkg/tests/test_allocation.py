import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dftgamma.allocation import (
    AllocationResult,
    NucleiConfig,
    allocate,
    closed_form_tfc0,
    ionization_threshold,
    kkt_certificate,
    relative_filling_order,
)
from dftgamma.functionals import tf_c0, tf_d, vw_c0, vw_d
from dftgamma.scaling import OutOfRangeError


def run(tables, model, Z, m):
    cfg = NucleiConfig(tuple(Z), m, model)
    evs = cfg.evaluators(tables[model.family])
    res = allocate(cfg, evs)
    assert kkt_certificate(res, evs)["passed"]
    return res


def test_closed_form_examples():
    assert closed_form_tfc0((1, 1), 2) == (1.0, 1.0)
    assert closed_form_tfc0((1, 2), 3) == (1 / 3, 8 / 3)
    assert closed_form_tfc0((1, 2, 3), 6) == (1 / 6, 4 / 3, 4.5)


def test_example_two_tf_c0(tables):
    res = run(tables, tf_c0(), (1, 2), 3.0)
    assert res.alphas == pytest.approx((1 / 3, 8 / 3), abs=1e-3)
    assert not res.ionized and res.lam > 0


def test_three_nuclei_tf_c0(tables):
    assert run(tables, tf_c0(), (1, 2, 3), 6.0).alphas == pytest.approx((1 / 6, 4 / 3, 4.5), abs=1e-3)


@given(
    Z=st.lists(st.floats(1.0, 3.0), min_size=1, max_size=5),
    m=st.floats(0.05, 3.0),
)
def test_tf_c0_matches_closed_form(tables, Z, m):
    res = run(tables, tf_c0(), Z, m)
    assert res.alphas == pytest.approx(closed_form_tfc0(Z, m), abs=1e-3)
    assert res.total_mass == pytest.approx(m, rel=1e-9)


def test_zero_mass(tables):
    res = run(tables, tf_d(), (1, 2), 0.0)
    assert res.alphas == (0.0, 0.0) and res.energy == 0.0 and not res.ionized


def test_tf_d_saturation(tables):
    res = run(tables, tf_d(), (1, 2), 5.0)
    assert res.ionized and res.lam == 0.0
    assert res.alphas == pytest.approx((1.0, 2.0), abs=1e-3)
    assert res.leftover == pytest.approx(2.0, abs=1e-3)


@given(Z=st.lists(st.floats(0.5, 3.0), min_size=1, max_size=4), extra=st.floats(0.0, 5.0))
def test_tf_d_saturates_above_total_charge(tables, Z, extra):
    res = run(tables, tf_d(), Z, sum(Z) + extra)
    assert res.alphas == pytest.approx(Z, abs=1e-3 * max(Z))
    assert res.ionized or extra < 1e-3


@pytest.mark.parametrize("Z,m", [((1, 2), 2.0), ((1, 3), 3.0), ((1, 1), 1.0), ((2, 3), 4.0)])
def test_relative_filling_order(tables, Z, m):
    cfg = NucleiConfig(Z, m, tf_d())
    res = allocate(cfg, tables["TF+D"])
    rep = relative_filling_order(res, cfg)
    assert rep["holds"], rep


def test_filling_order_needs_two_nuclei(tables):
    cfg = NucleiConfig((1, 2, 3), 1.0, tf_d())
    with pytest.raises(ValueError):
        relative_filling_order(allocate(cfg, tables["TF+D"]), cfg)


@pytest.mark.parametrize("family", ["TF+C0", "TF+D", "vW+C0", "vW+D"])
def test_energy_is_nonincreasing_and_convex_in_m(tables, family):
    model = {"TF+C0": tf_c0(), "TF+D": tf_d(), "vW+C0": vw_c0(2.0), "vW+D": vw_d(2.0)}[family]
    ms = np.linspace(0.0, 3.0, 31)
    E = np.array([run(tables, model, (1.0, 2.0), m).energy for m in ms])
    scale = 1e-9 * abs(E).max()
    assert np.all(np.diff(E) <= scale)
    assert np.all(np.diff(E, 2) >= -scale)


def test_equal_charges_get_equal_masses(tables):
    for family, model in (("TF+D", tf_d()), ("vW+D", vw_d(2.0)), ("TF+C0", tf_c0())):
        res = run(tables, model, (1.5, 1.5, 1.5), 2.0)
        assert max(res.alphas) - min(res.alphas) <= 1e-12


def test_vw_c0_small_nucleus_can_get_nothing(tables):
    # g'(0+) is finite for beta = 2, so a weak nucleus may stay empty
    res = run(tables, vw_c0(2.0), (1.0, 2.0), 1.0)
    assert res.alphas[0] == 0.0 and res.alphas[1] == pytest.approx(1.0)


def test_vw_d_threshold_saturation(tables):
    res = run(tables, vw_d(2.0), (1.0, 1.0), 4.0)
    t_star = ionization_threshold(vw_d(2.0), 1.0, 1.0).threshold
    assert res.ionized and res.alphas == pytest.approx((t_star, t_star), rel=1e-6)


def test_range_error_names_the_nucleus(tables):
    cfg = NucleiConfig((1.0, 0.5), 3.0, tf_c0())
    with pytest.raises(OutOfRangeError, match=r"nucleus 0: nucleus Z = 1 .*extend the table"):
        allocate(cfg, tables["TF+C0"])


def test_config_validation():
    with pytest.raises(ValueError, match="at least one"):
        NucleiConfig((), 1.0, tf_d())
    with pytest.raises(ValueError, match="distinct"):
        NucleiConfig((1, 2), 1.0, tf_d(), ((0, 0, 0), (0, 0, 0)))
    with pytest.raises(ValueError) as info:
        NucleiConfig((-1, 2), -1.0, tf_d(), ((0, 0),))
    assert "charges" in str(info.value) and "mass" in str(info.value)


def test_evaluator_count_must_match(tables):
    cfg = NucleiConfig((1, 2), 1.0, tf_d())
    with pytest.raises(ValueError):
        allocate(cfg, cfg.evaluators(tables["TF+D"])[:1])


def test_kkt_certificate_rejects_a_wrong_allocation(tables):
    cfg = NucleiConfig((1, 2), 3.0, tf_c0())
    evs = cfg.evaluators(tables["TF+C0"])
    good = allocate(cfg, evs)
    bad = AllocationResult((1.5, 1.5), good.lam, 3.0, good.energy, False)
    assert not kkt_certificate(bad, evs)["stationary"]
    over = AllocationResult((2.0, 2.0), good.lam, 3.0, good.energy, False)
    assert not kkt_certificate(over, evs)["feasible"]


def test_result_serializes(tables):
    res = run(tables, tf_d(), (1, 2), 0.0)
    doc = json.loads(json.dumps(res.to_dict()))
    assert doc["lambda"] == "inf" and doc["alphas"] == [0.0, 0.0]
    doc = json.loads(json.dumps(run(tables, tf_d(), (1, 2), 2.0).to_dict()))
    assert set(doc) >= {"alphas", "lambda", "total_mass", "energy", "ionized"}


def test_thresholds():
    assert ionization_threshold(tf_d(), 1.0, 2.0).threshold == 2.0
    assert ionization_threshold(tf_d(), 0.5, 2.0, measure=False).threshold == 4.0
    assert ionization_threshold(tf_c0(), 1.0, 3.0).threshold == math.inf
    assert ionization_threshold(tf_c0(), 1.0, 3.0).to_dict()["threshold"] == "infinite"
    rep = ionization_threshold(vw_d(2.0), 1.0, 1.0)
    assert 0 < rep.threshold < math.inf and rep.threshold == rep.measured_mass
    assert ionization_threshold(vw_d(2.0), 2.0, 3.0).threshold == pytest.approx(1.5 * rep.measured_mass, rel=1e-12)
