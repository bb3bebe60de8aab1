"""Branch-and-bound-and-cut driver for the decomposition.

The master is solved by best-bound branch-and-bound over its QP relaxation.
Pooled cuts enter the master lazily when violated. Integral relaxation
points are handed to the period sub-problems: infeasible periods produce
no-good cuts, fully feasible commitments update the decomposition bound and
produce non-revenue-power (NRP) cuts. Because the master only sees a lower
approximation of the sub-problem cost, an integral node whose bound is still
below the decomposition bound keeps branching until its commitments are
fully fixed; at a fixed leaf the sub-problem value is exact.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cutgen
from .convexsolve import Status, solve_convex
from .cutgen import CutKind, CutPool, RampRegistry
from .envelope import EnvelopeQuadratic, default_grid, fit_lower_envelope, nrp_contributions, nrp_lower_bound
from .subproblem import (FEASIBLE, INACCURATE, INFEASIBLE, PeriodEvaluator, build_restriction,
                         economic_dispatch, subproblem_bound, unadjusted_restriction)
from .ucmaster import MasterModel, UCInstance, assemble_master, build_index_sets, objective_value

log = logging.getLogger(__name__)

OPTIMAL = "OptimalWithinGap"
TIME_LIMIT = "TimeLimit"
NODE_LIMIT = "NodeLimit"
INFEASIBLE_RUN = "ProvenInfeasible"


@dataclass
class Config:
    gap: float = 1e-4
    time_limit_s: float | None = None
    node_limit: int | None = None
    workers: int = 1
    enable_ramping_cuts: bool = False
    enable_pergen_nrp: bool = False
    enable_strengthening: bool = True
    incumbent_stride: int = 1
    seed: int = 0            # recorded only; every choice is deterministic
    trace_clock: str = "wall"  # "wall" seconds or "work" (interior-point iterations)
    int_tol: float = 1e-6
    partition_size: int = 2
    envelope_points: int = 101
    sdp_gap_tol: float = 1e-7
    sdp_cert_tol: float = 1e-6

    def validate(self):
        if not 0 <= self.gap < 1:
            raise ValueError("gap must lie in [0, 1)")
        if self.workers < 1 or self.incumbent_stride < 1:
            raise ValueError("workers and incumbent_stride must be >= 1")
        if self.trace_clock not in ("wall", "work"):
            raise ValueError("trace_clock must be 'wall' or 'work'")
        if self.time_limit_s is not None and self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")
        if self.partition_size < 0:
            raise ValueError("partition_size must be >= 0")


@dataclass
class BnBNode:
    fixings: dict           # binary variable index -> 0/1
    bound: float            # parent bound (lower bound on this subtree)
    depth: int = 0
    node_id: int = 0
    retries: int = 0


@dataclass
class BoundRecord:
    clock: float
    master_lb: float
    master_ub: float
    subproblem_ub: float


@dataclass
class BoundsLog:
    clock_name: str = "wall"
    records: list = field(default_factory=list)

    def record(self, clock, lb, mub, sub):
        last = self.records[-1] if self.records else None
        if last and (last.master_lb, last.master_ub, last.subproblem_ub) == (lb, mub, sub):
            return
        self.records.append(BoundRecord(clock, lb, mub, sub))

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["wall_s" if self.clock_name == "wall" else "work", "master_lb", "master_ub", "subproblem_ub"])
        for r in self.records:
            w.writerow([_fmt(r.clock), _fmt(r.master_lb), _fmt(r.master_ub), _fmt(r.subproblem_ub)])
        return buf.getvalue()


@dataclass
class Incumbent:
    u: np.ndarray
    x: np.ndarray
    master_value: float
    value: float    # decomposition bound of this commitment


@dataclass
class Report:
    termination: str
    incumbent: Incumbent | None
    master_lb: float
    master_ub: float
    subproblem_ub: float
    log: BoundsLog
    cut_counts: dict
    cuts_in_master: int
    nodes: int
    unresolved: int
    sdp_solves: int
    work: int
    pool: CutPool
    master: MasterModel
    envelope: EnvelopeQuadratic
    candidates_checked: int = 0

    @property
    def certified(self) -> bool:
        return self.termination in (OPTIMAL, INFEASIBLE_RUN) and self.unresolved == 0

    @property
    def objective(self) -> float:
        return self.incumbent.value if self.incumbent else math.inf

    def schedule(self) -> dict:
        m, inc = self.master, self.incumbent
        inst = m.inst
        T, G = inst.n_periods, inst.n_gen
        out = {"schema": 1, "termination": self.termination, "periods": list(inst.periods),
               "generators": [g.name for g in inst.generators],
               "objective": _num(self.objective), "master_lb": _num(self.master_lb),
               "master_ub": _num(self.master_ub), "subproblem_ub": _num(self.subproblem_ub)}
        if inc is None:
            return out
        x = inc.x
        out.update({
            "u": [[int(round(x[m.u(k, i)])) for i in range(T)] for k in range(G)],
            "P": [[_num(x[m.p(k, i)]) for i in range(T)] for k in range(G)],
            "R+": [_num(x[m.rplus(i)]) for i in range(T)],
            "R-": [_num(x[m.rminus(i)]) for i in range(T)],
            "theta": [_num(x[m.theta(i)]) for i in range(T)],
        })
        return out

    def cut_log(self) -> str:
        return self.pool.dump()


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.12g}"


def _num(v):
    v = float(v)
    if not math.isfinite(v):
        return None
    return float(f"{v:.12g}")


# ---------------------------------------------------------------------------
# NRP bounds

def nrp_bound(inst: UCInstance, f: EnvelopeQuadratic, i: int, objective: float, on, relaxed=()) -> float:
    """Lower bound on non-revenue power for committed set ``on`` (and, for
    partition cuts, every superset drawn from ``relaxed``) given the period
    objective. The procedure's value is capped so that what the master charges
    for it never exceeds the gap between the sub-problem objective and the
    master's own cheapest dispatch of the same commitment; that cap keeps
    the master a relaxation."""
    if not math.isfinite(objective) or objective <= 0:
        return 0.0
    best = math.inf
    relaxed = list(relaxed)
    gens = inst.generators
    for mask in range(1 << len(relaxed)):
        S = sorted(list(on) + [relaxed[j] for j in range(len(relaxed)) if mask >> j & 1])
        disp = economic_dispatch(inst, i, S)
        if disp == math.inf:
            continue  # the master cannot commit S here: nothing to protect
        if not math.isfinite(disp):
            return 0.0
        room = f.inverse_variable_part(max(0.0, objective - disp))
        alg = nrp_lower_bound(objective, inst.demand[i], [gens[k].cost for k in S],
                              [gens[k].p_max[i] for k in S]) if S else 0.0
        best = min(best, room, alg)
    if not math.isfinite(best):
        return 0.0
    return max(0.0, best)


class _Solver:
    def __init__(self, inst: UCInstance, cfg: Config, evaluator: PeriodEvaluator | None = None):
        cfg.validate()
        self.inst, self.cfg = inst, cfg
        self.sets = build_index_sets(inst)
        curves = inst.curves()
        if curves:
            lo = min(float(np.min(g.p_min)) for g in inst.generators)
            hi = max(float(np.max(g.p_max)) for g in inst.generators)
            if hi <= lo:
                hi = lo + 1.0
            self.f = fit_lower_envelope(curves, default_grid(lo, hi, cfg.envelope_points))
        else:
            self.f = EnvelopeQuadratic(0.0, 0.0, 0.0)
        self.master = assemble_master(inst, self.f, self.sets)
        self.pool = CutPool()
        self.ramps = RampRegistry()
        self.evaluator = evaluator or PeriodEvaluator(inst, cfg.sdp_gap_tol, cfg.sdp_cert_tol)
        self.signatures = self.evaluator.signatures
        self.added: set = set()  # (pool index, period) rows already in the master
        self.log = BoundsLog(cfg.trace_clock)
        self.t0 = time.perf_counter()
        self.qp_work = 0
        self.ub = math.inf
        self.incumbent: Incumbent | None = None
        self.unresolved = 0
        self.candidates = 0
        self.nodes = 0
        self._prog_cache = None
        self.gens = list(range(inst.n_gen))
        # the NRP cap assumes the master's periods decouple in P, which ramp rows break
        self.nrp_ok = not self.sets.has_ramping or cfg.enable_ramping_cuts
        self.pool_lb = -math.inf
        self.gap_lb = math.inf
        self._nrp_memo: dict = {}

    # clocks ------------------------------------------------------------
    def clock(self) -> float:
        if self.cfg.trace_clock == "work":
            return float(self.evaluator.work + self.qp_work)
        return time.perf_counter() - self.t0

    def master_ub(self) -> float:
        return self.incumbent.master_value if self.incumbent else math.inf

    def record(self, lb):
        self.pool_lb = max(self.pool_lb, lb)
        self.log.record(self.clock(), self.pool_lb, self.master_ub(), self.ub)

    # master relaxation -------------------------------------------------
    def relax(self, node: BnBNode):
        m = self.master
        key = (m.n, len(m.rows))
        if self._prog_cache is None or self._prog_cache[0] != key:
            self._prog_cache = (key, m.relaxation())
        base = self._prog_cache[1]
        lb, ub = base.lb.copy(), base.ub.copy()
        for j, v in node.fixings.items():
            lb[j] = ub[j] = v
        prog = type(base)(q=base.q, Q=base.Q, A=base.A, senses=base.senses, rhs=base.rhs, lb=lb, ub=ub)
        out = solve_convex(prog)
        self.qp_work += out.iterations
        return out

    def add_violated_cuts(self, x) -> int:
        m = self.master
        new = 0
        cuts = self.pool.snapshot()
        for idx, cut in enumerate(cuts):
            for i in range(self.inst.n_periods):
                if (idx, i) in self.added or not self.pool.applies(idx, i, self.signatures[i]):
                    continue
                if cut.kind == CutKind.NRP_PERGEN:
                    self._pergen_vars(i)
                coef, sense, rhs = cutgen.cut_row(m, cut, i, self.ramps)
                lhs = sum(a * (x[j] if j < len(x) else 0.0) for j, a in coef.items())
                if lhs - rhs > 1e-6 * max(1.0, abs(rhs)):
                    m.add_row(coef, sense, rhs, f"cut{idx}@{i}")
                    self.added.add((idx, i))
                    new += 1
        return new

    def _pergen_vars(self, i):
        m = self.master
        if f"theta[0,{i}]" in m.index:
            return
        ids = [m.add_var(f"theta[{k},{i}]") for k in self.gens]
        row = {j: 1.0 for j in ids}
        row[m.theta(i)] = -1.0
        m.add_row(row, "<", 0.0, f"theta_split[{i}]")

    # candidate evaluation ----------------------------------------------
    def commitment(self, x) -> np.ndarray:
        m = self.master
        return np.array([[int(round(x[m.u(k, i)])) for i in range(self.inst.n_periods)] for k in self.gens],
                        dtype=int).reshape(self.inst.n_gen, self.inst.n_periods)

    def powers(self, x) -> np.ndarray:
        m = self.master
        return np.array([[x[m.p(k, i)] for i in range(self.inst.n_periods)] for k in self.gens]).reshape(
            self.inst.n_gen, self.inst.n_periods)

    def evaluate_all(self, restrictions):
        ev = self.evaluator
        todo, seen = [], set()
        for r in restrictions:
            key = ev.key(r)
            if ev.cached(r) is None and key not in seen:
                seen.add(key)
                todo.append(r)
        if len(todo) > 1 and self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                list(pool.map(ev.evaluate, todo))
        else:
            for r in todo:
                ev.evaluate(r)
        return [ev.evaluate(r) for r in restrictions]

    def probe(self, i):
        def run(on):
            return self.evaluator.evaluate(unadjusted_restriction(self.inst, i, on)).status
        return run

    def check_candidate(self, x) -> bool:
        """Run the period sub-problems on an integral master point; returns
        True when every period was decided (feasible or certified infeasible)."""
        inst, cfg = self.inst, self.cfg
        self.candidates += 1
        u, P = self.commitment(x), self.powers(x)
        rs = [build_restriction(inst, u, P, i, self.sets) for i in range(inst.n_periods)]
        results = self.evaluate_all(rs)
        decided = True
        for i, res in enumerate(results):
            r = res.restriction
            sig = self.signatures[i]
            if res.status == INFEASIBLE:
                base = cutgen.make_no_good(r.on_set, self.gens, i, sig)
                if r.ramp_active:
                    if cfg.enable_ramping_cuts:
                        self._add_ramping(base, P, i)
                    else:
                        decided = False  # infeasible only for this ramp state
                    continue
                self.pool.add(base)
                if cfg.enable_strengthening:
                    g = inst.generators
                    self.pool.add(cutgen.strengthen_no_good(
                        r.on_set, i, self.probe(i), self.gens, [gk.p_max[i] for gk in g], sig,
                        zero_ok=lambda k, i=i: cutgen.zero_capable(g[k], i)))
            elif res.status == INACCURATE:
                decided = False
        if not all(res.status == FEASIBLE for res in results):
            return decided
        value = subproblem_bound([res.objective for res in results], u, inst)
        mval = objective_value(self.master, x)
        if value < self.ub:
            self.ub = value
            m = self.master
            xc = np.clip(np.array(x, dtype=float), np.array(m.lb[:len(x)]), np.array(m.ub[:len(x)]))
            self.incumbent = Incumbent(u.copy(), xc, mval, value)
        if self.nrp_ok:
            for i, res in enumerate(results):
                self._add_nrp(res, i, u, P)
        return True

    def _add_ramping(self, base, P, i):
        cut = cutgen.make_ramping_variants(base, cutgen.ramp_values(self.inst, P, i), enabled=True)
        cut = self.ramps.resolve(cut)
        self.ramps.materialize(self.master, self.inst, cut)
        self.pool.add(cut)

    def _nrp_bound(self, i, objective, on, relaxed=()):
        key = (self.evaluator.sig_class[i], tuple(on), tuple(relaxed), objective)
        if key not in self._nrp_memo:
            self._nrp_memo[key] = nrp_bound(self.inst, self.f, i, objective, on, relaxed)
        return self._nrp_memo[key]

    def _add_nrp(self, res, i, u, P):
        inst, cfg = self.inst, self.cfg
        r = res.restriction
        sig = self.signatures[i]
        theta = self._nrp_bound(i, res.objective, r.on_set)
        if r.ramp_active:
            if cfg.enable_ramping_cuts and theta > 0:
                self._add_ramping(cutgen.make_nrp_cut(r.on_set, self.gens, theta, i, sig), P, i)
            return
        # pooled even at zero so every accepted period leaves a record in the cut log
        self.pool.add(cutgen.make_nrp_cut(r.on_set, self.gens, theta, i, sig))
        if theta > 0:
            if cfg.enable_pergen_nrp:
                g = inst.generators
                parts = nrp_contributions(res.objective, inst.demand[i], [g[k].cost for k in r.on_set],
                                          [g[k].p_max[i] for k in r.on_set])
                total = sum(parts)
                scale = min(1.0, theta / total) if total > 0 else 0.0
                for k, part in zip(r.on_set, parts):
                    if part * scale > 0:
                        self.pool.add(cutgen.make_pergen_nrp_cut(r.on_set, self.gens, k, part * scale, i, sig))
        if cfg.enable_strengthening and cfg.partition_size > 0:
            free = [k for k in self.gens if k not in r.on_set]
            free.sort(key=lambda k: (inst.generators[k].p_max[i], k))
            relaxed = tuple(free[:cfg.partition_size])
            if relaxed:
                rr = unadjusted_restriction(inst, i, r.on_set, relaxed)
                rel = self.evaluator.evaluate(rr)
                if rel.status == FEASIBLE:
                    pt = self._nrp_bound(i, rel.objective, r.on_set, relaxed)
                    if pt > 0:
                        off = [k for k in self.gens if k not in r.on_set and k not in relaxed]
                        self.pool.add(cutgen.make_nrp_partition_cut(r.on_set, off, relaxed, pt, i, sig))

    # main loop -----------------------------------------------------------
    def fathom_level(self) -> float:
        if not math.isfinite(self.ub):
            return math.inf
        return self.ub - self.cfg.gap * abs(self.ub) - 1e-6 * max(1.0, abs(self.ub))

    def fathomed(self, bound):
        """Remember bounds of subtrees dropped inside the gap tolerance."""
        if bound < self.ub:
            self.gap_lb = min(self.gap_lb, bound)

    def branch_var(self, x, fixings):
        m, tol = self.master, self.cfg.int_tol
        best, best_frac = None, tol
        for i in range(self.inst.n_periods):
            for k in self.gens:
                j = m.u(k, i)
                frac = abs(x[j] - round(x[j]))
                if frac > best_frac + 1e-12:
                    best, best_frac = j, frac
        if best is None:  # other binaries (ramp indicators)
            for j in m.binaries():
                if j < len(x) and abs(x[j] - round(x[j])) > best_frac + 1e-12:
                    best, best_frac = j, abs(x[j] - round(x[j]))
        return best

    def first_free(self, fixings):
        m = self.master
        for i in range(self.inst.n_periods):
            for k in self.gens:
                if m.u(k, i) not in fixings:
                    return m.u(k, i)
        for j in m.binaries():
            if j not in fixings:
                return j
        return None

    def run(self) -> Report:
        cfg = self.cfg
        heap: list = []
        counter = 0
        heapq.heappush(heap, (-math.inf, 0, BnBNode({}, -math.inf)))
        termination = None
        self.record(-math.inf)
        while heap:
            if cfg.time_limit_s is not None and time.perf_counter() - self.t0 > cfg.time_limit_s:
                termination = TIME_LIMIT
                break
            if cfg.node_limit is not None and self.nodes >= cfg.node_limit:
                termination = NODE_LIMIT
                break
            bound, _, node = heapq.heappop(heap)
            self.record(min(bound, self.ub, self.gap_lb))
            if bound >= self.fathom_level():
                self.fathomed(bound)
                continue
            self.nodes += 1
            children = self.process(node)
            for child in children:
                counter += 1
                child.node_id = counter
                heapq.heappush(heap, (child.bound, counter, child))
            lb_now = min([b for b, _, _ in heap], default=self.ub)
            self.record(min(lb_now, self.ub, self.gap_lb))
        if termination is None:
            termination = OPTIMAL if self.incumbent is not None else INFEASIBLE_RUN
            final_lb = min(self.ub, self.gap_lb)
            if self.unresolved:
                final_lb = self.pool_lb
        else:
            final_lb = min(min([b for b, _, _ in heap], default=self.ub), self.ub, self.gap_lb)
        self.record(final_lb)
        return Report(termination, self.incumbent, self.pool_lb, self.master_ub(), self.ub, self.log,
                      self.pool.counts(), len(self.added), self.nodes, self.unresolved,
                      self.evaluator.solves, self.evaluator.work + self.qp_work, self.pool, self.master, self.f,
                      self.candidates)

    def process(self, node: BnBNode) -> list[BnBNode]:
        cfg = self.cfg
        m = self.master
        while True:
            out = self.relax(node)
            if out.status == Status.INFEASIBLE:
                return []
            if out.status != Status.OPTIMAL:
                if node.retries == 0:
                    node.retries = 1
                    return [node]
                self.unresolved += 1
                return []
            x = out.x
            lb = max(node.bound, float(out.objective))
            if lb >= self.fathom_level():
                self.fathomed(lb)
                return []
            if self.add_violated_cuts(x):
                continue
            j = self.branch_var(x, node.fixings)
            if j is not None:
                return self._split(node, j, lb)
            # integral and clean against the pool
            leaf = self.first_free(node.fixings) is None
            stride_ok = (self.candidates % cfg.incumbent_stride == 0)
            n_pool = len(self.pool)
            if leaf or stride_ok:
                decided = self.check_candidate(x)
                if len(self.pool) > n_pool and self.add_violated_cuts(x):
                    continue
                if leaf:
                    if not decided:
                        self.unresolved += 1
                    return []
            else:
                self.candidates += 1
            if lb >= self.fathom_level():
                self.fathomed(lb)
                return []
            j = self.first_free(node.fixings)
            return self._split(node, j, lb)

    def _split(self, node, j, lb):
        kids = []
        for v in (0, 1):
            fx = dict(node.fixings)
            fx[j] = v
            kids.append(BnBNode(fx, lb, node.depth + 1))
        return kids


def solve(inst: UCInstance, cfg: Config | None = None, evaluator: PeriodEvaluator | None = None) -> Report:
    return _Solver(inst, cfg or Config(), evaluator).run()


def write_schedule(report: Report, path):
    with open(path, "w") as fh:
        json.dump(report.schedule(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_trace(report: Report, path):
    with open(path, "w") as fh:
        fh.write(report.log.csv())


def write_cut_log(report: Report, path):
    with open(path, "w") as fh:
        fh.write(report.cut_log())
