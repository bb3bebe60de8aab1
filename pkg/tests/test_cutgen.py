import itertools
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import congested_pair, lossy_twins, primal_opf
from tcuc.cutgen import (CutKind, CutPool, RampRegistry, applicable_cuts, big_m, cut_row, make_no_good,
                         make_nrp_cut, make_nrp_partition_cut, make_pergen_nrp_cut, make_ramping_variants,
                         strengthen_no_good)
from tcuc.envelope import EnvelopeQuadratic
from tcuc.netmodel import network_from_dict
from tcuc.subproblem import period_signature, solve_period, unadjusted_restriction
from tcuc.ucmaster import assemble_master, uc_from_dict

SIG = (1.0, 2.0)
ALL3 = (0, 1, 2)
ZERO_F = EnvelopeQuadratic(0.0, 0.0, 0.0)


def columns(n):
    return [np.array(c) for c in itertools.product((0, 1), repeat=n)]


# --- no-good ---------------------------------------------------------------

def test_no_good_instantiation():
    # generators 1..3 of the example are 0..2 here; on = {1, 3}
    cut = make_no_good((0, 2), ALL3, 0, SIG)
    assert cut.u_coefficients() == {0: 1.0, 2: 1.0, 1: -1.0}
    incumbent = np.array([1, 0, 1])
    assert cut.indicator(incumbent) == 1 and cut.excludes(incumbent)
    for k in range(3):
        flipped = incumbent.copy()
        flipped[k] ^= 1
        assert cut.indicator(flipped) <= 0 and not cut.excludes(flipped)


def test_no_good_row_in_master():
    inst = congested_pair()
    m = assemble_master(inst, ZERO_F)
    coef, sense, rhs = cut_row(m, make_no_good((0,), (0, 1), 0, period_signature(inst, 0)), 1)
    # u_cheap - u_dear <= 0 at period 1, i.e. |on| - 1
    assert coef == {m.u(0, 1): 1.0, m.u(1, 1): -1.0} and sense == "<" and rhs == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.data())
def test_no_good_excludes_exactly_one_column(n, data):
    on = data.draw(st.sets(st.integers(0, n - 1)))
    cut = make_no_good(on, tuple(range(n)), 0, SIG)
    excluded = [c for c in columns(n) if cut.excludes(c)]
    assert len(excluded) == 1 and set(np.flatnonzero(excluded[0])) == set(on)


# --- strengthening ---------------------------------------------------------

P_MAX = {0: 50.0, 1: 9.0, 2: 5.0}


def test_strengthening_stops_at_feasible():
    cut = strengthen_no_good((0,), 0, lambda on: "feasible", ALL3, P_MAX, SIG)
    assert cut.on == (0,) and cut.off == (1, 2)


def test_strengthening_trace():
    # off units: 2 (p_max 5) then 1 (p_max 9); {0,2} infeasible, {0,1,2} feasible
    calls = []

    def probe(on):
        calls.append(on)
        return "feasible" if on == (0, 1, 2) else "infeasible"
    cut = strengthen_no_good((0,), 0, probe, ALL3, P_MAX, SIG, zero_ok=lambda k: True)
    assert calls == [(0, 2), (0, 1, 2)]
    assert cut.on == (0,) and cut.off == (1,)
    base = make_no_good((0,), ALL3, 0, SIG)
    strong = {tuple(c) for c in columns(3) if cut.excludes(c)}
    weak = {tuple(c) for c in columns(3) if base.excludes(c)}
    assert weak < strong


def test_strengthening_stops_on_inaccurate():
    cut = strengthen_no_good((0,), 0, lambda on: "inaccurate", ALL3, P_MAX, SIG)
    assert cut.off == (1, 2)


def test_strengthening_needs_zero_capable_units_for_more_than_one():
    cut = strengthen_no_good((0,), 0, lambda on: "infeasible", ALL3, P_MAX, SIG, zero_ok=lambda k: False)
    assert cut.on == (0,) and cut.off == (1,)   # only unit 2 added


def _congested_with_small_unit():
    inst = congested_pair()
    d = {"schema": 1, "periods": 2,
         "generators": [
             {"name": "cheap", "bus": 1, "p_max": 200, "c2": 0.001, "c1": 10, "c0": 10, "q_min": -100, "q_max": 100},
             {"name": "dear", "bus": 3, "p_max": 200, "c2": 0.002, "c1": 40, "c0": 50, "q_min": -100, "q_max": 100},
             {"name": "small", "bus": 2, "p_max": 5, "c2": 0.0, "c1": 20, "q_min": -5, "q_max": 5}],
         "loads": {"P": [[0, 0], [0, 0], [100, 90]], "Q": [[0, 0], [0, 0], [10, 10]]}}
    return uc_from_dict(d, inst.network)


def test_strengthened_cut_excludes_only_infeasible_columns():
    inst = _congested_with_small_unit()
    gens = (0, 1, 2)
    pmax = {k: inst.generators[k].p_max[0] for k in gens}

    def probe(on):
        return solve_period(inst, unadjusted_restriction(inst, 0, on)).status
    assert probe((0,)) == "infeasible"
    cut = strengthen_no_good((0,), 0, probe, gens, pmax, period_signature(inst, 0))
    assert cut.off == (1,)    # the small unit was absorbed
    for c in columns(3):
        if cut.excludes(c):
            status, _ = primal_opf(inst, unadjusted_restriction(inst, 0, tuple(np.flatnonzero(c))))
            assert status == "infeasible"


# --- NRP -------------------------------------------------------------------

def test_nrp_examples():
    cut = make_nrp_cut((0, 1), ALL3, 5.0, 0, SIG)
    assert 5 * cut.indicator(np.array([1, 1, 0])) == 5
    assert 5 * cut.indicator(np.array([1, 0, 0])) == 0
    zero = make_nrp_cut((0, 1), ALL3, 0.0, 0, SIG)
    assert all(zero.bound * zero.indicator(c) == 0 for c in columns(3))
    with pytest.raises(ValueError):
        make_nrp_cut((0, 1), ALL3, -1.0, 0, SIG)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.floats(0, 1e4), st.data())
def test_nrp_bound_only_at_its_commitment(n, bound, data):
    on = data.draw(st.sets(st.integers(0, n - 1)))
    cut = make_nrp_cut(on, tuple(range(n)), bound, 0, SIG)
    for c in columns(n):
        lhs = cut.bound * cut.indicator(c)
        if set(np.flatnonzero(c)) == set(on):
            assert lhs == bound
        else:
            assert lhs <= 0


def test_nrp_row_in_master():
    inst = congested_pair()
    m = assemble_master(inst, ZERO_F)
    cut = make_nrp_cut((0, 1), (0, 1), 7.0, 0, period_signature(inst, 0))
    coef, sense, rhs = cut_row(m, cut, 0)
    # 7 (1 - 2 + u0 + u1) <= theta  ->  7 u0 + 7 u1 - theta <= 7
    assert coef == {m.u(0, 0): 7.0, m.u(1, 0): 7.0, m.theta(0): -1.0} and sense == "<" and rhs == 7.0


def test_partition_cut_reduces_to_plain():
    plain = make_nrp_cut((0,), ALL3, 3.0, 0, SIG)
    part = make_nrp_partition_cut((0,), (1, 2), (), 3.0, 0, SIG)
    assert part.u_coefficients() == plain.u_coefficients()
    assert all(part.indicator(c) == plain.indicator(c) for c in columns(3))


def test_partition_cut_ignores_relaxed_units():
    cut = make_nrp_partition_cut((0,), (2,), (1,), 3.0, 0, SIG)
    assert cut.indicator(np.array([1, 0, 0])) == cut.indicator(np.array([1, 1, 0])) == 1
    with pytest.raises(ValueError):
        make_nrp_partition_cut((0,), (0,), (), 1.0, 0, SIG)


def test_partition_bound_not_above_exact():
    from tcuc.envelope import default_grid, fit_lower_envelope
    from tcuc.orchestrator import nrp_bound
    inst = lossy_twins()
    f = fit_lower_envelope([g.cost for g in inst.generators], default_grid(0, 200))
    on = (0, 1)
    exact = solve_period(inst, unadjusted_restriction(inst, 0, on))
    part = solve_period(inst, unadjusted_restriction(inst, 0, on, relaxed=(2,)))
    assert part.objective <= exact.objective
    t_exact = nrp_bound(inst, f, 0, exact.objective, on)
    t_part = nrp_bound(inst, f, 0, part.objective, on, (2,))
    assert t_exact > 0
    assert t_part <= t_exact


def test_pergen_cut():
    cut = make_pergen_nrp_cut((0, 1), ALL3, 1, 4.0, 0, SIG)
    assert cut.kind == CutKind.NRP_PERGEN and cut.generator == 1
    assert cut.bound * cut.indicator(np.array([1, 1, 0])) == 4
    with pytest.raises(ValueError):
        make_pergen_nrp_cut((0, 1), ALL3, 2, 4.0, 0, SIG)


# --- ramping variants ------------------------------------------------------

def _ramp_instance():
    net = network_from_dict({"buses": [{"id": 1}, {"id": 2}],
                             "branches": [{"from": 1, "to": 2, "g": 1, "b": -10}]})
    d = {"periods": 2,
         "generators": [{"bus": 1, "p_max": 100, "ramp_up": 20, "init": 1, "init_p": 30},
                        {"bus": 2, "p_max": 80}],
         "loads": {"P": [[0, 0], [50, 60]]}}
    return uc_from_dict(d, net)


def test_ramping_variant_disabled_by_default():
    with pytest.raises(RuntimeError):
        make_ramping_variants(make_no_good((0,), (0, 1), 1, SIG), {0: 10.0})


def _materialized(value=10.0):
    inst = _ramp_instance()
    m = assemble_master(inst, ZERO_F)
    reg = RampRegistry()
    cut = reg.resolve(make_ramping_variants(make_no_good((0,), (0, 1), 1, SIG), {0: value}, enabled=True))
    reg.materialize(m, inst, cut)
    return inst, m, reg, cut


def _lhs(coef, values):
    return sum(a * values.get(j, 0.0) for j, a in coef.items())


def test_ramping_cut_with_indicator_on_is_base_cut():
    inst, m, reg, cut = _materialized()
    coef, _, rhs = cut_row(m, cut, 1, reg)
    base_coef, _, base_rhs = cut_row(m, make_no_good((0,), (0, 1), 1, SIG), 1)
    v = m.index["v[0,1,0]"]
    for col in columns(2):
        vals = {m.u(0, 1): col[0], m.u(1, 1): col[1], v: 1.0}
        assert (_lhs(coef, vals) <= rhs) == (_lhs(base_coef, vals) <= base_rhs)


def test_ramping_cut_with_indicator_off_never_binds():
    inst, m, reg, cut = _materialized()
    coef, _, rhs = cut_row(m, cut, 1, reg)
    base_coef, _, base_rhs = cut_row(m, make_no_good((0,), (0, 1), 1, SIG), 1)
    v = m.index["v[0,1,0]"]
    for col in columns(2):
        vals = {m.u(0, 1): col[0], m.u(1, 1): col[1], v: 0.0}
        assert _lhs(coef, vals) <= rhs
        # the committed unit's indicator takes one unit off the expression
        assert _lhs(coef, vals) - rhs == _lhs(base_coef, vals) - base_rhs - 1


@pytest.mark.parametrize("value", [0.0, 10.0, 50.0, 80.0])
def test_big_m_rows_slack_when_indicator_off(value):
    inst, m, reg, cut = _materialized(value)
    g = inst.generators[0]
    assert big_m(g) == g.p_max.max() + g.ramp_up + 1
    p_prev = m.p(0, 0)
    for row in (r for r in m.rows if r.tag.startswith("vbigm")):
        # linear in P_prev, so the extremes over [0, p_max] sit at the endpoints
        worst = max(row.coef.get(p_prev, 0.0) * P for P in (0.0, g.p_max[0]))
        assert worst <= row.rhs + 1e-12
    # with the indicator on, only previous outputs within eps of the recorded value survive
    target = g.p_max[1] - g.ramp_up - value
    v = m.index["v[0,1,0]"]
    for P in (target - 1e-3, target, target + 1e-3):
        ok = all(row.coef.get(p_prev, 0.0) * P + row.coef[v] <= row.rhs + 1e-12
                 for row in m.rows if row.tag.startswith("vbigm"))
        assert ok == (P == target)


# --- pool ------------------------------------------------------------------

def test_pool_applicability():
    pool = CutPool()
    assert applicable_cuts(pool, 0, SIG) == []
    cut = make_no_good((0,), (0, 1), 0, (100.0, 90.0))
    pool.add(cut)
    assert applicable_cuts(pool, 3, (100.0, 90.0)) == [(cut, 3)]
    assert applicable_cuts(pool, 3, (100.0, 90.001)) == []


def test_pool_ignores_duplicates():
    pool = CutPool()
    cut = make_no_good((0,), (0, 1), 0, SIG)
    assert pool.add(cut)
    before = pool.dump()
    assert not pool.add(make_no_good((0,), (0, 1), 5, SIG))   # same cut from another matching period
    assert pool.dump() == before and len(pool) == 1
    assert pool.add(make_no_good((0,), (0, 1), 0, (1.0, 2.5)))


def test_pool_concurrent_adds():
    pool = CutPool()
    cuts = [make_no_good(on, range(6), 0, SIG) for r in range(7) for on in itertools.combinations(range(6), r)]

    def worker(chunk):
        for c in chunk:
            pool.add(c)
    threads = [threading.Thread(target=worker, args=(cuts[j::4] + cuts,)) for j in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(pool) == len(cuts) == 64


def test_dump_format():
    pool = CutPool()
    pool.add(make_nrp_cut((0,), (0, 1), 2.5, 1, SIG))
    line = pool.dump().strip()
    assert line.startswith("NRP period=1 on=[0] off=[1]") and "bound=2.5" in line and "sig=" in line
    assert pool.counts()["NRP"] == 1
    assert not math.isnan(pool.cuts[0].bound)
