"""Brute-force reference solver for tiny instances.

Every commitment matrix is enumerated, screened against the commitment
rules by direct evaluation (not through the master model's rows), and the
survivors are priced with the period sub-problems plus start-up costs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .convexsolve import ConvexProgram, Status, solve_convex
from .subproblem import FEASIBLE, INFEASIBLE, PeriodEvaluator, unadjusted_restriction
from .ucmaster import UCInstance, build_index_sets, startup_cost

GUARD = 20


class OracleRefused(RuntimeError):
    pass


@dataclass
class OracleResult:
    u: np.ndarray | None
    value: float
    table: dict = field(default_factory=dict)   # u bytes -> (status, value)
    screened: int = 0      # commitments passing the commitment rules
    inaccurate: int = 0    # commitments with an undecided period

    @property
    def feasible(self) -> bool:
        return self.u is not None

    def entries(self):
        """(u matrix, status, value) for every commitment tried."""
        for key, (status, val, shape) in self.table.items():
            yield np.frombuffer(key, dtype=np.int8).reshape(shape).astype(int), status, val


def _tol(x):
    return 1e-9 * max(1.0, abs(x))


def commitment_rules_ok(inst: UCInstance, u: np.ndarray, sets=None) -> bool:
    """Minimum up/down times, reserves, inertia and per-period dispatch range."""
    sets = sets or build_index_sets(inst)
    gens = inst.generators
    pos = inst.pos
    for k, s in sets.minoff_init0:
        if u[k, pos(s)] != 0:
            return False
    for k, s in sets.minoff_init1:
        if gens[k].init - u[k, 0] > 1 - u[k, pos(s)]:
            return False
    for k, t, s in sets.minoff:
        if u[k, pos(t) - 1] - u[k, pos(t)] > 1 - u[k, pos(s)]:
            return False
    for k, s in sets.minon_init1:
        if u[k, pos(s)] != 1:
            return False
    for k, s in sets.minon_init0:
        if u[k, 0] - gens[k].init > u[k, pos(s)]:
            return False
    for k, t, s in sets.minon:
        if u[k, pos(t)] - u[k, pos(t) - 1] > u[k, pos(s)]:
            return False
    for i in range(inst.n_periods):
        D = inst.demand[i]
        on = [k for k in range(inst.n_gen) if u[k, i]]
        if inst.min_units_on > 0 and sum(1 for k in on if gens[k].inertia) < inst.min_units_on:
            return False
        lo = sum(gens[k].p_min[i] for k in on)
        hi = sum(min(gens[k].p_max[i], inst.pmax_demand_frac * D) for k in on)
        if any(gens[k].p_min[i] > min(gens[k].p_max[i], inst.pmax_demand_frac * D) + _tol(D) for k in on):
            return False
        if lo > D + _tol(D) or hi < D - _tol(D):
            return False
        # reserves: total output equals demand, so both margins are fixed by u
        up = sum(gens[k].r_max[i] for k in on) - D
        down = D - sum(gens[k].r_min[i] for k in on)
        if up < max(inst.reserve_up[i], 0.0) - _tol(D) or down < max(inst.reserve_down[i], 0.0) - _tol(D):
            return False
    if sets.has_ramping and not _ramp_feasible(inst, u, sets):
        return False
    return True


def _ramp_feasible(inst: UCInstance, u, sets) -> bool:
    """LP feasibility of the power levels under the ramp limits."""
    G, T = inst.n_gen, inst.n_periods
    gens = inst.generators
    n = G * T
    idx = lambda k, i: i * G + k  # noqa: E731
    lb, ub = np.zeros(n), np.zeros(n)
    for k in range(G):
        for i in range(T):
            if u[k, i]:
                lb[idx(k, i)] = gens[k].p_min[i]
                ub[idx(k, i)] = min(gens[k].p_max[i], inst.pmax_demand_frac * inst.demand[i])
    rows, senses, rhs = [], "", []
    for i in range(T):
        r = np.zeros(n)
        r[[idx(k, i) for k in range(G)]] = 1.0
        rows.append(r)
        senses += "="
        rhs.append(inst.demand[i])
    for k in sets.ramp_ti:
        r = np.zeros(n)
        r[idx(k, 0)] = 1.0
        rows.append(r)
        senses += "<"
        rhs.append(gens[k].ramp_up + gens[k].init_p)
    for t, k in sets.ramp:
        i = inst.pos(t)
        r = np.zeros(n)
        r[idx(k, i)], r[idx(k, i - 1)] = 1.0, -1.0
        rows.append(r)
        senses += "<"
        rhs.append(gens[k].ramp_up)
    out = solve_convex(ConvexProgram(q=np.zeros(n), A=np.array(rows), senses=senses, rhs=np.array(rhs),
                                     lb=lb, ub=ub))
    return out.status == Status.OPTIMAL


def enumerate_solve(inst: UCInstance, limit: int = GUARD, override: bool = False,
                    evaluator: PeriodEvaluator | None = None) -> OracleResult:
    """Global optimum over all commitments by enumeration.

    Period values use the unadjusted limits (ramp coupling of the power
    levels only enters through the LP screen above)."""
    nbits = inst.n_gen * inst.n_periods
    if nbits > limit and not override:
        raise OracleRefused(f"{2 ** nbits} commitments exceed the enumeration guard "
                            f"(|G||T| = {nbits} > {limit}); pass override to proceed")
    ev = evaluator or PeriodEvaluator(inst)
    sets = build_index_sets(inst)
    best_u, best = None, math.inf
    res = OracleResult(None, math.inf)
    shape = (inst.n_gen, inst.n_periods)
    for bits in itertools.product((0, 1), repeat=nbits):
        u = np.array(bits, dtype=np.int8).reshape(shape)
        key = u.tobytes()
        if not commitment_rules_ok(inst, u, sets):
            res.table[key] = ("screened_out", math.inf, shape)
            continue
        res.screened += 1
        total, status = 0.0, FEASIBLE
        for i in range(inst.n_periods):
            on = tuple(int(k) for k in np.flatnonzero(u[:, i]))
            out = ev.evaluate(unadjusted_restriction(inst, i, on))
            if out.status != FEASIBLE:
                status = out.status
                if status == INFEASIBLE:
                    break
                continue
            total += out.objective
        if status != FEASIBLE:
            res.inaccurate += status != INFEASIBLE
            res.table[key] = (status, math.inf, shape)
            continue
        val = total + startup_cost(inst, u)
        res.table[key] = (FEASIBLE, val, shape)
        # ties resolved toward the first commitment in enumeration order
        if val < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            best, best_u = val, u.astype(int)
    res.u, res.value = best_u, best
    return res
