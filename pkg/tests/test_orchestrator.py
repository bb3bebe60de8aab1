import math

import numpy as np
import pytest

from oracles import congested_pair, master_only_argmin, three_bus
from tcuc.convexsolve import SolveOutcome, Status
from tcuc.cutgen import CutKind
from tcuc.netmodel import network_from_dict
from tcuc.oracle import enumerate_solve
from tcuc.orchestrator import (INFEASIBLE_RUN, NODE_LIMIT, OPTIMAL, BnBNode, Config, _Solver, solve)
from tcuc.subproblem import INACCURATE, SubproblemResult
from tcuc.synth import random_instance
from tcuc.ucmaster import uc_from_dict


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def single_unit():
    net = network_from_dict({"buses": [{"id": 1}, {"id": 2}],
                             "branches": [{"from": 1, "to": 2, "g": 2, "b": -20}]})
    uc = {"periods": 3, "generators": [{"bus": 1, "p_max": 100, "c2": 0.01, "c1": 5, "c0": 2, "carr": 3,
                                        "q_min": -50, "q_max": 50}],
          "loads": {"P": [[0, 0, 0], [30, 50, 40]], "Q": [[0, 0, 0], [5, 5, 5]]}}
    return uc_from_dict(uc, net)


def fixed_point(s: _Solver, u):
    m = s.master
    fix = {m.u(k, i): int(u[k][i]) for k in range(s.inst.n_gen) for i in range(s.inst.n_periods)}
    out = s.relax(BnBNode(fix, -math.inf))
    assert out.status == Status.OPTIMAL
    return out.x


# --- end to end --------------------------------------------------------------

def test_single_unit_committed_throughout():
    inst = single_unit()
    rep = solve(inst, Config(gap=0.0))
    assert rep.termination == OPTIMAL and rep.certified
    assert rep.incumbent.u.tolist() == [[1, 1, 1]]
    assert rep.candidates_checked >= 1
    orc = enumerate_solve(inst)
    assert rel(rep.objective, orc.value) <= 1e-4


def test_three_bus_matches_oracle():
    inst = three_bus()
    rep = solve(inst, Config(gap=0.0))
    orc = enumerate_solve(inst)
    assert rep.termination == OPTIMAL and rep.certified
    assert rel(rep.objective, orc.value) <= 1e-4
    assert np.array_equal(rep.incumbent.u, orc.u)


def test_congested_case_needs_a_no_good():
    inst = congested_pair()
    _, naive = master_only_argmin(inst)
    rep = solve(inst, Config(gap=0.0))
    orc = enumerate_solve(inst)
    assert rep.cut_counts["NoGood"] >= 1
    assert not np.array_equal(rep.incumbent.u, naive)
    assert rel(rep.objective, orc.value) <= 1e-4


def test_infeasible_instance_proven():
    net = network_from_dict({"buses": [{"id": 1}, {"id": 2}], "branches": [{"from": 1, "to": 2, "g": 1, "b": -10}]})
    inst = uc_from_dict({"periods": 1, "generators": [{"bus": 1, "p_max": 10}], "loads": {"P": [[0], [50]]}}, net)
    rep = solve(inst, Config(gap=0.0))
    assert rep.termination == INFEASIBLE_RUN and rep.incumbent is None and rep.certified


def test_node_limit():
    rep = solve(random_instance(3), Config(gap=0.0, node_limit=1))
    assert rep.termination == NODE_LIMIT and rep.nodes == 1 and not rep.certified


def test_workers_do_not_change_the_answer():
    inst = random_instance(5)
    a = solve(inst, Config(gap=0.0, trace_clock="work"))
    b = solve(inst, Config(gap=0.0, trace_clock="work", workers=3))
    assert a.schedule() == b.schedule()


def test_config_validation():
    for bad in (dict(gap=1.5), dict(workers=0), dict(trace_clock="cpu"), dict(node_limit=0)):
        with pytest.raises(ValueError):
            solve(single_unit(), Config(**bad))


# --- node step -----------------------------------------------------------------

def test_bound_dominated_node_fathomed():
    s = _Solver(three_bus(), Config(gap=0.0))
    s.ub = -1e9   # pretend an absurdly good incumbent exists
    assert s.process(BnBNode({}, -math.inf)) == []
    assert s.candidates == 0


def test_fractional_unit_branches_both_ways():
    s = _Solver(three_bus(), Config(gap=0.0))
    m = s.master
    x = np.zeros(m.n)
    for k in range(2):
        for i in range(2):
            x[m.u(k, i)] = 1.0
    x[m.u(1, 0)] = 0.5
    j = s.branch_var(x, {})
    assert j == m.u(1, 0)
    kids = s._split(BnBNode({}, 7.0), j, 7.0)
    assert [k.fixings for k in kids] == [{j: 0}, {j: 1}]
    assert all(k.bound == 7.0 and k.depth == 1 for k in kids)


def test_relaxation_failure_requeued_then_unresolved(monkeypatch):
    s = _Solver(three_bus(), Config(gap=0.0))
    bad = SolveOutcome(Status.ITER_LIMIT, np.zeros(s.master.n), math.nan)
    monkeypatch.setattr(s, "relax", lambda node: bad)
    node = BnBNode({}, -math.inf)
    assert s.process(node) == [node] and node.retries == 1
    assert s.process(node) == [] and s.unresolved == 1


def test_inaccurate_periods_block_certification(monkeypatch):
    inst = three_bus()
    s = _Solver(inst, Config(gap=0.0))
    monkeypatch.setattr(s.evaluator, "evaluate",
                        lambda r: SubproblemResult(INACCURATE, math.nan, r))
    rep = s.run()
    assert rep.unresolved > 0 and not rep.certified
    assert rep.cut_counts["NoGood"] == 0 and rep.incumbent is None


# --- incumbent check -------------------------------------------------------------

def test_accepted_candidate_pools_one_nrp_cut_per_period():
    inst = three_bus()
    s = _Solver(inst, Config(gap=0.0, enable_strengthening=False))
    x = fixed_point(s, [[1, 1], [1, 1]])
    assert s.check_candidate(x)
    assert math.isfinite(s.ub) and s.incumbent is not None
    nrp = [c for c in s.pool.snapshot() if c.kind == CutKind.NRP]
    assert sorted(c.period for c in nrp) == [0, 1]
    assert all(c.on == (0, 1) for c in nrp)


def test_single_infeasible_period_gives_its_no_good():
    inst = congested_pair()
    s = _Solver(inst, Config(gap=0.0))
    x = fixed_point(s, [[1, 1], [1, 0]])   # period 1 leaves the cheap unit alone
    s.check_candidate(x)
    cuts = s.pool.snapshot()
    assert cuts and all(c.kind == CutKind.NOGOOD and c.period == 1 and c.on == (0,) for c in cuts)
    assert s.incumbent is None and s.ub == math.inf


def test_excluded_candidates_never_checked_again():
    """Replay: every candidate handed to the sub-problems is clean against the
    no-good cuts pooled before it."""
    inst = congested_pair()
    s = _Solver(inst, Config(gap=0.0))
    seen = []
    original = s.check_candidate

    def spy(x):
        u = s.commitment(x)
        for idx, cut in enumerate(s.pool.snapshot()):
            if cut.kind != CutKind.NOGOOD:
                continue
            for i in range(inst.n_periods):
                if s.pool.applies(idx, i, s.signatures[i]):
                    assert not cut.excludes(u[:, i]), (u, cut)
        seen.append(u)
        return original(x)
    s.check_candidate = spy
    rep = s.run()
    assert len(seen) >= 2 and rep.cut_counts["NoGood"] >= 1


# --- bounds ----------------------------------------------------------------------

def check_log(rep, oracle_value):
    recs = rep.log.records
    assert recs
    lbs = [r.master_lb for r in recs]
    subs = [r.subproblem_ub for r in recs]
    assert all(b >= a for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a for a, b in zip(subs, subs[1:]))
    tol = 1e-6 * max(1.0, abs(oracle_value))
    for r in recs:
        assert r.master_lb <= oracle_value + tol
        assert oracle_value <= r.subproblem_ub + tol


@pytest.mark.parametrize("seed", [0, 1, 4, 8])
def test_bounds_sandwich_random(seed):
    inst = random_instance(seed)
    orc = enumerate_solve(inst)
    rep = solve(inst, Config(gap=0.0))
    if not orc.feasible:
        assert rep.termination == INFEASIBLE_RUN
        return
    check_log(rep, orc.value)
    assert rel(rep.objective, orc.value) <= 1e-4


def test_bounds_sandwich_congested():
    inst = congested_pair()
    check_log(solve(inst, Config(gap=0.0)), enumerate_solve(inst).value)


def test_deterministic_with_work_clock():
    inst = random_instance(2)
    a = solve(inst, Config(gap=0.0, trace_clock="work"))
    b = solve(inst, Config(gap=0.0, trace_clock="work"))
    assert a.schedule() == b.schedule()
    assert a.log.csv() == b.log.csv()
    assert a.cut_log() == b.cut_log()
