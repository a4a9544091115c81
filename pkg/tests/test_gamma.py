import json

import numpy as np
import pytest

from dftgamma.allocation import NucleiConfig, allocate
from dftgamma.functionals import tf_c0, tf_d, vw_d
from dftgamma.gamma import (
    Background,
    OverlapError,
    RecoverySequenceSpec,
    carriers,
    eps_model,
    outer_support,
    recovery_energy,
    single_nucleus_collapse,
)
from dftgamma.radial import RadialDensity, RadialGrid, mass
from dftgamma.scaling import GbEvaluator

LADDER = (1.0, 1e-1, 1e-2, 1e-3)
PAIR = ((0.0, 0.0, 0.0), (5.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def two_nuclei():
    cfg = NucleiConfig((1.0, 2.0), 3.0, tf_d(), PAIR)
    spec = RecoverySequenceSpec(cfg, (1.0, 2.0))
    sols = carriers(spec)
    return spec, sols, recovery_energy(spec, sols)


def test_eps_model_scales_the_coefficients():
    m = eps_model(tf_d().with_charges(0.5, 2.0), 0.1)
    assert m.c_kin == pytest.approx(0.01 * tf_d().c_kin)
    assert (m.b, m.Z) == pytest.approx((0.05, 0.2))


@pytest.mark.parametrize("model,t", [(tf_d(), 0.5), (tf_c0(), 0.7), (vw_d(2.0), 0.3)])
def test_single_nucleus_minimum_does_not_depend_on_eps(model, t):
    rep = single_nucleus_collapse(model, 1.0, 1.0, t, LADDER)
    assert rep.spread <= 1e-6
    assert rep.exactness <= 1e-8
    assert rep.passes()


def test_collapse_with_general_charges():
    rep = single_nucleus_collapse(tf_d(), 0.7, 1.8, 1.0, (1.0, 1e-2), direct=False)
    assert rep.spread <= 1e-6 and all(r.direct is None for r in rep.rows)


def test_minimizer_concentrates():
    rep = single_nucleus_collapse(tf_d(), 1.0, 1.0, 0.5, LADDER, direct=False)
    assert rep.concentrated
    doc = json.loads(json.dumps(rep.to_dict()))
    assert [r["epsilon"] for r in doc["rows"]] == list(LADDER)


def test_bad_ladder_is_rejected():
    with pytest.raises(ValueError):
        single_nucleus_collapse(tf_d(), 1.0, 1.0, 0.5, (1.0, -0.1))
    with pytest.raises(ValueError):
        single_nucleus_collapse(tf_d(), 1.0, 1.0, 0.5, ())


def test_recovery_gap_is_first_order(two_nuclei):
    _, _, rep = two_nuclei
    assert rep.slope == pytest.approx(1.0, abs=0.2)
    assert rep.monotone
    assert abs(rep.rows[-1].gap) < abs(rep.rows[0].gap)


def test_recovery_cross_terms_sit_inside_the_distance_bounds(two_nuclei):
    _, _, rep = two_nuclei
    for r in rep.rows:
        assert r.G_lower <= r.G + 1e-14 and r.G <= r.G_upper + 1e-14


def test_recovery_self_energy_equals_the_limit(two_nuclei):
    _, _, rep = two_nuclei
    for r in rep.rows:
        assert r.self_energy == pytest.approx(rep.limit, rel=1e-8)
        assert r.gap == pytest.approx(r.cross_attraction + r.cross_correlation, abs=1e-8 * abs(rep.limit))


def test_recovery_mass(two_nuclei):
    spec, sols, rep = two_nuclei
    # the t = 1 carrier is the unconstrained minimizer, whose mass is measured
    assert rep.mass_error <= 1e-4
    assert sum(s.t_achieved for s in sols) == pytest.approx(rep.rows[0].mass, rel=1e-10)


@pytest.mark.xfail(
    strict=True,
    reason="the exact cross terms of the recovery family are net attractive, so G_eps lies below the limit",
)
def test_recovery_stays_above_the_limit(two_nuclei):
    assert two_nuclei[2].lower_bound_holds()


def test_recovery_gap_value_is_the_point_charge_sum(two_nuclei):
    spec, sols, rep = two_nuclei
    q1, q2 = (s.t_achieved for s in sols)
    d = 5.0
    expected = -(2.0 * q1 + 1.0 * q2) / d + q1 * q2 / d
    for r in rep.rows:
        assert r.gap / r.eps == pytest.approx(expected, rel=1e-9)


def test_single_nucleus_recovery_has_no_gap():
    cfg = NucleiConfig((1.5,), 1.0, tf_d())
    rep = recovery_energy(RecoverySequenceSpec(cfg, (1.0,), ladder=(0.1, 0.01)))
    assert max(abs(r.gap) for r in rep.rows) <= 1e-12 * abs(rep.limit)


def test_recovery_with_table_values(tables):
    cfg = NucleiConfig((1.0, 2.0), 3.0, tf_d(), PAIR)
    res = allocate(cfg, tables["TF+D"])
    ev = GbEvaluator(tables["TF+D"])
    rep = recovery_energy(RecoverySequenceSpec(cfg, res.alphas, ladder=(0.05, 0.01, 0.002), evaluator=ev))
    assert rep.slope == pytest.approx(1.0, abs=0.2)


def test_overlap_is_reported():
    cfg = NucleiConfig((1.0, 2.0), 3.0, tf_d(), PAIR)
    with pytest.raises(OverlapError, match="overlap at eps = 0.1"):
        recovery_energy(RecoverySequenceSpec(cfg, (1.0, 2.0), ladder=(0.1, 0.01)))


def test_background_adds_its_mass_and_must_stay_clear():
    grid = RadialGrid()
    bump = RadialDensity.from_function(grid, lambda r: np.where(r < 1.0, 0.1 * (1.0 - r) ** 2, 0.0))
    assert outer_support(bump) < 1.0
    cfg = NucleiConfig((1.0, 2.0), 3.5, tf_c0(), PAIR)
    bg = Background(bump, (2.5, 4.0, 0.0))
    spec = RecoverySequenceSpec(cfg, (1.0, 2.0), ladder=(0.01, 0.005), background=bg)
    rep = recovery_energy(spec)
    assert rep.mass_error <= 1e-9
    assert rep.expected_mass == pytest.approx(3.0 + mass(bump))
    assert all(r.background_energy != 0.0 for r in rep.rows)
    with pytest.raises(OverlapError, match="background"):
        recovery_energy(RecoverySequenceSpec(cfg, (1.0, 2.0), ladder=(0.01,), background=Background(bump, (0.5, 0.0, 0.0))))


def test_spec_validation():
    cfg = NucleiConfig((1.0, 2.0), 3.0, tf_d(), PAIR)
    with pytest.raises(ValueError, match="one mass per nucleus"):
        RecoverySequenceSpec(cfg, (1.0,))
    with pytest.raises(ValueError, match="add up"):
        RecoverySequenceSpec(cfg, (2.0, 2.0))
    with pytest.raises(ValueError, match="positions"):
        RecoverySequenceSpec(NucleiConfig((1.0, 2.0), 3.0, tf_d()), (1.0, 2.0))
    assert RecoverySequenceSpec(cfg, (1.0, 2.0), ladder=(0.01, 0.05)).ladder == (0.05, 0.01)


def test_csv_and_json(two_nuclei):
    rep = two_nuclei[2]
    lines = rep.csv_lines()
    assert lines[0] == "epsilon,G_eps,cross_attraction,cross_correlation,gap"
    assert len(lines) == 1 + len(rep.rows)
    assert all(len(line.split(",")) == 5 for line in lines)
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["family"] == "TF+D" and len(doc["rows"]) == len(rep.rows)
