import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import master_point_violations, three_bus
from tcuc.convexsolve import Status, solve_convex
from tcuc.envelope import EnvelopeQuadratic
from tcuc.netmodel import network_from_dict
from tcuc.oracle import enumerate_solve
from tcuc.synth import random_instance
from tcuc.ucmaster import (UCValidationError, assemble_master, build_index_sets, objective_value, startup_cost,
                           uc_from_dict)

NET3 = {"buses": [{"id": 1}, {"id": 2}, {"id": 3}],
        "branches": [{"from": 1, "to": 2, "g": 1, "b": -10}, {"from": 2, "to": 3, "g": 1, "b": -10}]}
ZERO_F = EnvelopeQuadratic(0.0, 0.0, 0.0)


def make(gens, periods=1, loads=None, **kw):
    net = network_from_dict(NET3)
    loads = loads if loads is not None else [[0] * periods, [0] * periods, [10] * periods]
    return uc_from_dict({"periods": periods, "generators": gens, "loads": {"P": loads}, **kw}, net)


def test_min_off_initial_periods():
    inst = make([{"bus": 1, "p_max": 20, "min_off": 3, "init_t": 1, "init": 0}], periods=4,
                loads=[[0] * 4, [0] * 4, [0] * 4])
    assert {(0, 1), (0, 2)} <= set(build_index_sets(inst).minoff_init0)


def test_generous_ramp_excluded():
    inst = make([{"bus": 1, "p_max": 20, "p_min": 5, "ramp_up": 15, "init": 1, "init_p": 10}], periods=3,
                loads=[[0] * 3, [0] * 3, [10] * 3])
    s = build_index_sets(inst)
    assert s.ramp_ti == [] and s.ramp == []
    inst = make([{"bus": 1, "p_max": 20, "p_min": 5, "ramp_up": 14, "init": 1, "init_p": 10}], periods=3,
                loads=[[0] * 3, [0] * 3, [10] * 3])
    s = build_index_sets(inst)
    assert s.ramp_ti == [0] and s.ramp == [(2, 0), (3, 0)]


def test_min_on_from_off_start():
    inst = make([{"bus": 1, "p_max": 20, "min_on": 2, "init": 0}], periods=3,
                loads=[[0] * 3, [0] * 3, [10] * 3])
    assert build_index_sets(inst).minon_init0 == [(0, 2)]


def test_single_unit_single_period():
    inst = make([{"bus": 1, "p_max": 20}])
    m = assemble_master(inst, ZERO_F)
    tags = {r.tag: r for r in m.rows}
    assert tags["balance[0]"].coef == {m.p(0, 0): 1.0} and tags["balance[0]"].rhs == 10
    assert tags["pmax[0,0]"].coef == {m.p(0, 0): 1.0, m.u(0, 0): -20.0}
    out = solve_convex(m.relaxation(lb=[1.0 if nm == "u[0,0]" else lo for nm, lo in zip(m.names, m.lb)]))
    assert out.status == Status.OPTIMAL
    assert abs(out.x[m.p(0, 0)] - 10) < 1e-6


def test_inertia_row():
    gens = [{"bus": b, "p_max": 20, "inertia": f} for b, f in ((1, True), (2, True), (3, False))]
    inst = make(gens, periods=2, loads=[[0, 0], [0, 0], [10, 10]], min_units_on=2)
    m = assemble_master(inst, ZERO_F)
    for i in range(2):
        row = next(r for r in m.rows if r.tag == f"inertia[{i}]")
        assert row.coef == {m.u(0, i): 1.0, m.u(1, i): 1.0} and row.sense == ">" and row.rhs == 2


def test_variable_count_without_optional_sets():
    gens = [{"bus": 1, "p_max": 20}, {"bus": 2, "p_max": 20}]
    inst = make(gens, periods=3, loads=[[0] * 3, [0] * 3, [10] * 3])
    m = assemble_master(inst, ZERO_F)
    kinds = {}
    for nm in m.names:
        kinds[nm.split("[")[0]] = kinds.get(nm.split("[")[0], 0) + 1
    assert kinds == {"u": 6, "P": 6, "s": 6, "theta": 3, "R+": 3, "R-": 3}
    assert sum(m.binary) == 6


def test_objective_value_examples():
    inst = make([{"bus": 1, "p_max": 20, "c2": 0.1, "c1": 1, "c0": 5, "carr": 3}])
    m = assemble_master(inst, ZERO_F)
    assert objective_value(m, np.zeros(m.n)) == 0
    x = np.zeros(m.n)
    x[m.u(0, 0)], x[m.p(0, 0)], x[m.s(0, 0)] = 1, 10, 1
    assert objective_value(m, x) == pytest.approx(28.0, abs=1e-12)
    with pytest.raises(KeyError):
        objective_value(m, {"u[0,0]": 1})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000))
def test_objective_matches_term_by_term(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(seed)
    f = EnvelopeQuadratic(0.0, float(rng.uniform(0, 50)), float(rng.uniform(0, 1)))
    m = assemble_master(inst, f)
    x = rng.uniform(0, 5, m.n)
    direct = 0.0
    for k, g in enumerate(inst.generators):
        for i in range(inst.n_periods):
            P = x[m.p(k, i)]
            direct += g.c2 * P * P + g.c1 * P + g.c0 * x[m.u(k, i)] + g.carr * x[m.s(k, i)]
    for i in range(inst.n_periods):
        th = x[m.theta(i)]
        direct += f.c * th * th + f.b * th
    assert abs(objective_value(m, x) - direct) <= 1e-12 * max(1.0, abs(direct))


def test_bad_uc_inputs():
    with pytest.raises(UCValidationError):
        make([{"bus": 1, "p_max": 20, "p_min": 30}])
    with pytest.raises(UCValidationError):
        make([{"bus": 1, "p_max": 20}, {"bus": 1, "p_max": 10}])
    with pytest.raises(UCValidationError):
        make([{"bus": 7, "p_max": 20}])
    with pytest.raises(UCValidationError):
        make([{"bus": 1, "p_max": 20}], loads=[[10], [0]])


def test_startup_cost():
    inst = make([{"bus": 1, "p_max": 20, "carr": 3, "init": 0}], periods=4, loads=[[0] * 4, [0] * 4, [1] * 4])
    assert startup_cost(inst, np.array([[1, 0, 1, 1]])) == 6


def _integer_points(inst, m, limit=64):
    """Enumerate commitments, solve the master with u fixed, return the points.
    The rule screen only skips commitments whose fixed-u QP would be infeasible."""
    from tcuc.oracle import commitment_rules_ok
    G, T = inst.n_gen, inst.n_periods
    pts = []
    for bits in itertools.product((0, 1), repeat=G * T):
        u = np.array(bits).reshape(G, T)
        if not commitment_rules_ok(inst, u):
            continue
        lb, ub = np.array(m.lb, float), np.array(m.ub, float)
        for k in range(G):
            for i in range(T):
                lb[m.u(k, i)] = ub[m.u(k, i)] = u[k, i]
        out = solve_convex(m.relaxation(lb, ub))
        if out.status == Status.OPTIMAL:
            pts.append((u, out.x))
        if len(pts) >= limit:
            break
    return pts


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 5, 7])
def test_integer_master_points_satisfy_rules(seed):
    inst = random_instance(seed, ramp_prob=0.5)
    m = assemble_master(inst, ZERO_F)
    pts = _integer_points(inst, m)
    assert pts
    G, T = inst.n_gen, inst.n_periods
    for u, x in pts:
        P = np.array([[x[m.p(k, i)] for i in range(T)] for k in range(G)])
        s = np.array([[x[m.s(k, i)] for i in range(T)] for k in range(G)])
        Rp = np.array([x[m.rplus(i)] for i in range(T)])
        Rm = np.array([x[m.rminus(i)] for i in range(T)])
        assert master_point_violations(inst, u, P, Rp, Rm, s) == []
        # start-up variables are tight wherever they are charged
        for k, g in enumerate(inst.generators):
            if g.carr > 0:
                prev = g.init
                for i in range(T):
                    assert abs(s[k, i] - max(u[k, i] - prev, 0)) < 1e-6
                    prev = u[k, i]


@pytest.mark.parametrize("seed", [0, 3, 6])
def test_master_is_a_lower_bound(seed):
    from tcuc.orchestrator import Config, solve
    inst = random_instance(seed)
    orc = enumerate_solve(inst)
    # bare master optimum over all commitments
    m = assemble_master(inst, ZERO_F)
    best = math.inf
    for u, x in _integer_points(inst, m, limit=10_000):
        best = min(best, objective_value(m, x))
    assert best <= orc.value + 1e-6 * max(1.0, abs(orc.value))
    assert solve(inst, Config(gap=0.0)).master_lb <= orc.value * (1 + 1e-9)


def test_three_bus_loads_and_demand():
    inst = three_bus()
    np.testing.assert_allclose(inst.demand, [100, 120])
