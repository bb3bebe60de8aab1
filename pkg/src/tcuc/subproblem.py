"""Per-period sub-problems: the dual SDP of the relaxed optimal power flow for
a fixed commitment, its objective O_t and the decomposition bound.

The relaxation is over W = x x^T (x = [Re V; Im V]) with bus injection,
voltage and line-flow limits and a quadratic-cost epigraph per committed
generator. Its Lagrangian dual is posed as

    maximize  O(y)   subject to  C - sum_i y_i A_i  psd  (block diagonal)

with the aggregated matrix A^t as block 0, one 2x2 block per committed
generator with quadratic cost, one 3x3 block per directed limited line and
1x1 blocks making the bound multipliers nonnegative. All network data is in
per-unit; costs are converted so that O_t comes out in the instance's cost
units.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .convexsolve import ConvexProgram, Status, solve_convex
from .netmodel import Branch, Bus, InjectionMatrices, PowerNetwork, build_injection_matrices
from .sdpsolve import SDPOutcome, SDPProblem, SDPStatus, solve_sdp
from .ucmaster import IndexSets, UCInstance, build_index_sets, startup_cost

FEASIBLE, INFEASIBLE, INACCURATE = "feasible", "infeasible", "inaccurate"


@dataclass(frozen=True)
class PeriodRestriction:
    period: int                  # position in the horizon
    on_set: tuple[int, ...]
    p_max: np.ndarray            # adjusted upper limit per generator (MW)
    p_min: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    load_p: np.ndarray           # per bus, MW
    load_q: np.ndarray
    relaxed: tuple[int, ...] = ()  # generators whose status is relaxed to [0, 1]
    ramp_active: bool = False    # some adjusted limit is tighter than the original

    def __post_init__(self):
        if set(self.on_set) & set(self.relaxed):
            raise ValueError("a generator cannot be both committed and relaxed")


def period_limits(inst: UCInstance, i: int):
    gens = inst.generators
    return (np.array([g.p_min[i] for g in gens]), np.array([g.p_max[i] for g in gens]),
            np.array([g.q_min[i] for g in gens]), np.array([g.q_max[i] for g in gens]))


def build_restriction(inst: UCInstance, u, P, i: int, sets: IndexSets | None = None,
                      relaxed=()) -> PeriodRestriction:
    """Restriction for period position i from commitment u (gen x period) and
    master powers P. Upper limits are tightened by the ramp rule only for
    the generators whose ramp constraint is part of the master."""
    sets = sets or build_index_sets(inst)
    u = np.asarray(u)
    p_min, p_max, q_min, q_max = period_limits(inst, i)
    adj = p_max.copy()
    label = inst.periods[i]
    for k, g in enumerate(inst.generators):
        if i == 0 and k in sets.ramp_ti:
            adj[k] = min(adj[k], g.init_p + g.ramp_up)
        elif i > 0 and (label, k) in set(sets.ramp):
            adj[k] = min(adj[k], float(P[k, i - 1]) + g.ramp_up)
    on = tuple(int(k) for k in np.flatnonzero(np.round(u[:, i]) == 1))
    active = bool(np.any(adj[list(on)] < p_max[list(on)] - 1e-9)) if on else False
    return PeriodRestriction(i, on, adj, p_min, q_min, q_max,
                             inst.load_p[:, i].copy(), inst.load_q[:, i].copy(),
                             tuple(sorted(relaxed)), active)


def unadjusted_restriction(inst: UCInstance, i: int, on_set, relaxed=()) -> PeriodRestriction:
    p_min, p_max, q_min, q_max = period_limits(inst, i)
    return PeriodRestriction(i, tuple(sorted(on_set)), p_max, p_min, q_min, q_max,
                             inst.load_p[:, i].copy(), inst.load_q[:, i].copy(),
                             tuple(sorted(relaxed)))


def period_signature(inst: UCInstance, i: int) -> np.ndarray:
    """Everything the period sub-problem depends on besides the commitment:
    per-bus loads and per-generator limits."""
    p_min, p_max, q_min, q_max = period_limits(inst, i)
    return np.concatenate([inst.load_p[:, i], inst.load_q[:, i], p_min, p_max, q_min, q_max])


def signatures_match(a, b, rtol: float = 1e-9) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    fin = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)) or np.any(a[~fin] != b[~fin]):
        return False
    return bool(np.all(np.abs(a[fin] - b[fin]) <= rtol * np.maximum(np.abs(a[fin]), np.abs(b[fin]))))


# ---------------------------------------------------------------------------
# sub-network

def retained_buses(inst: UCInstance, r: PeriodRestriction) -> tuple[int, ...]:
    """Buses of connected components that carry load or an active generator.

    Components where every generator is off and no load is present are
    dropped together with their lines; buses that only pass power through
    stay, since removing them would cut transfer paths."""
    net = inst.network
    parent = list(range(net.n_bus))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for br in net.branches:
        parent[find(br.from_bus)] = find(br.to_bus)
    live = set()
    active = set(r.on_set) | set(r.relaxed)
    for k in range(net.n_bus):
        if r.load_p[k] != 0 or r.load_q[k] != 0:
            live.add(find(k))
    for k in active:
        live.add(find(inst.generators[k].bus))
    return tuple(k for k in range(net.n_bus) if find(k) in live)


def sub_network(net: PowerNetwork, keep) -> PowerNetwork:
    keep = list(keep)
    pos = {k: j for j, k in enumerate(keep)}
    branches = [Branch(pos[b.from_bus], pos[b.to_bus], b.series_g, b.series_b, b.shunt_b,
                       b.tap_ratio, b.phase_shift, b.s_max, b.id if b.id is not None else j)
                for j, b in enumerate(net.branches) if b.from_bus in pos and b.to_bus in pos]
    return PowerNetwork([Bus(net.buses[k].id, net.buses[k].v_min, net.buses[k].v_max) for k in keep],
                        branches, net.base_mva)


# ---------------------------------------------------------------------------
# dual SDP

@dataclass
class DualLayout:
    """Where each named multiplier sits in y; -1 means absent (zero)."""
    buses: tuple[int, ...]
    lam_up: np.ndarray
    lam_lo: np.ndarray
    lam_free: np.ndarray
    gam_up: np.ndarray
    gam_lo: np.ndarray
    gam_free: np.ndarray
    mu_up: np.ndarray
    mu_lo: np.ndarray
    gen_r: dict = field(default_factory=dict)   # generator -> index of the off-diagonal entry
    gen_s: dict = field(default_factory=dict)   # generator -> index of the (2,2) entry
    line: list = field(default_factory=list)    # per directed line: 6 indices (upper triangle)
    line_smax: list = field(default_factory=list)


@dataclass
class DualSDP:
    problem: SDPProblem
    layout: DualLayout
    offset: float   # constant added to b'y (scaled units)
    scale: float    # cost scale: O_t = scale * (b'y + offset)
    trivially_infeasible: bool
    data: dict      # per-unit bus limits and costs used by objective_Ot


@dataclass
class DualSolution:
    lam_up: np.ndarray
    lam_lo: np.ndarray
    gam_up: np.ndarray
    gam_lo: np.ndarray
    mu_up: np.ndarray
    mu_lo: np.ndarray
    gen_blocks: dict        # generator -> 2x2 block [[1, r], [r, s]]
    line_blocks: list       # 3x3 blocks
    A: np.ndarray           # aggregated matrix
    scale: float = 1.0


_INJ_CACHE: dict = {}
_INJ_LOCK = threading.Lock()


def _injections(net: PowerNetwork, keep) -> tuple[PowerNetwork, InjectionMatrices]:
    key = (id(net), tuple(keep))
    with _INJ_LOCK:
        hit = _INJ_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1], hit[2]
    sub = sub_network(net, keep)
    mats = build_injection_matrices(sub)
    with _INJ_LOCK:
        _INJ_CACHE[key] = (net, sub, mats)
    return sub, mats


def _bus_data(inst: UCInstance, r: PeriodRestriction, keep):
    """Per-unit injection limits and cost data on the retained buses."""
    base = inst.network.base_mva
    n = len(keep)
    pd = r.load_p[list(keep)] / base
    qd = r.load_q[list(keep)] / base
    pmin, pmax = np.zeros(n), np.zeros(n)
    qmin, qmax = np.zeros(n), np.zeros(n)
    where = {k: j for j, k in enumerate(keep)}
    costs = {}  # generator -> (bus position, c2_pu, c1_pu, c0)
    for k in r.on_set + r.relaxed:
        g = inst.generators[k]
        j = where[g.bus]
        relaxed = k in r.relaxed
        pmin[j] = 0.0 if relaxed else r.p_min[k] / base
        pmax[j] = r.p_max[k] / base
        lo, hi = r.q_min[k] / base, r.q_max[k] / base
        qmin[j], qmax[j] = (min(lo, 0.0), max(hi, 0.0)) if relaxed else (lo, hi)
        costs[k] = (j, g.c2 * base * base, g.c1 * base, 0.0 if relaxed else g.c0)
    vmin = np.array([inst.network.buses[k].v_min for k in keep])
    vmax = np.array([inst.network.buses[k].v_max for k in keep])
    return dict(pd=pd, qd=qd, pmin=pmin, pmax=pmax, qmin=qmin, qmax=qmax,
                vmin=vmin, vmax=vmax, costs=costs)


def _cost_scale(costs) -> float:
    vals = [c2 + abs(c1) + abs(c0) for _, c2, c1, c0 in costs.values()]
    return max([1.0] + vals)


def build_dual_sdp(inst: UCInstance, r: PeriodRestriction, scale: float | None = None) -> DualSDP:
    keep = retained_buses(inst, r)
    n = len(keep)
    d = _bus_data(inst, r, keep)
    sc = _cost_scale(d["costs"]) if scale is None else float(scale)
    if n == 0:  # nothing to dispatch: O_t = 0
        prob = SDPProblem([1], [np.zeros((1, 1))], [np.zeros((0, 1, 1))], np.zeros(0))
        lay = DualLayout((), *(np.zeros(0, int) for _ in range(8)))
        return DualSDP(prob, lay, 0.0, sc, False, d)
    sub, mats = _injections(inst.network, keep)
    N2 = 2 * n
    cols0, cols_b, rhs = [], [], []   # block-0 matrices (coefficient in A^t), objective coefficients
    singles = []                      # indices of sign-constrained multipliers
    small = []                        # (index, kind, payload) for generator / line blocks
    trivially_infeasible = False

    def add(mat, obj, sign=True):
        cols0.append(mat)
        rhs.append(obj)
        if sign:
            singles.append(len(rhs) - 1)
        return len(rhs) - 1

    lay_arrays = {nm: -np.ones(n, dtype=int) for nm in
                  ("lam_up", "lam_lo", "lam_free", "gam_up", "gam_lo", "gam_free", "mu_up", "mu_lo")}
    for j in range(n):
        for mats_j, lo, hi, dem, up, lo_nm, free in (
                (mats.Yk[j], d["pmin"][j], d["pmax"][j], d["pd"][j], "lam_up", "lam_lo", "lam_free"),
                (mats.Ybar_k[j], d["qmin"][j], d["qmax"][j], d["qd"][j], "gam_up", "gam_lo", "gam_free")):
            lo_inj, hi_inj = lo - dem, hi - dem
            if not np.any(mats_j):
                # isolated bus: the injection is identically zero
                if lo_inj > 1e-12 or hi_inj < -1e-12:
                    trivially_infeasible = True
                continue
            if lo == hi:
                lay_arrays[free][j] = add(mats_j, -hi_inj, sign=False)
                continue
            if math.isfinite(hi):
                lay_arrays[up][j] = add(mats_j, -hi_inj)
            if math.isfinite(lo):
                lay_arrays[lo_nm][j] = add(-mats_j, lo_inj)
        if math.isfinite(d["vmax"][j]):
            lay_arrays["mu_up"][j] = add(mats.Mk[j], -d["vmax"][j] ** 2)
        lay_arrays["mu_lo"][j] = add(-mats.Mk[j], d["vmin"][j] ** 2)

    # constant part of A^t and O_t from the committed generators' linear costs
    C0 = np.zeros((N2, N2))
    offset = 0.0
    layout = DualLayout(tuple(keep), **lay_arrays)
    for k in sorted(d["costs"]):
        j, c2, c1, c0 = d["costs"][k]
        C0 += (c1 / sc) * mats.Yk[j]
        offset += (c1 * d["pd"][j] + c0) / sc
        if c2 > 0:
            root = math.sqrt(c2 / sc)
            layout.gen_r[k] = add(2 * root * mats.Yk[j], 2 * root * d["pd"][j], sign=False)
            layout.gen_s[k] = add(np.zeros((N2, N2)), -1.0, sign=False)
            small.append(("gen", k))
    for b in range(mats.Ylm.shape[0]):
        smax = sub.branches[mats.line_branch[b]].s_max
        ids = []
        for (p, q) in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)):
            if (p, q) == (0, 1):
                mat = 2 * mats.Ylm[b]
            elif (p, q) == (0, 2):
                mat = 2 * mats.Ybar_lm[b]
            else:
                mat = np.zeros((N2, N2))
            obj = -smax ** 2 if (p, q) == (0, 0) else (-1.0 if p == q else 0.0)
            ids.append(add(mat, obj, sign=False))
        layout.line.append(ids)
        layout.line_smax.append(smax)
        small.append(("line", b))

    m = len(rhs)
    # y_i enters A^t with coefficient cols0[i]; the solver form is C - sum y_i A_i, so A_i = -cols0[i]
    sizes, Cs, As = [N2], [C0], [-np.array(cols0).reshape(m, N2, N2)]
    for kind, key in small:
        if kind == "gen":
            A = np.zeros((m, 2, 2))
            A[layout.gen_r[key], 0, 1] = A[layout.gen_r[key], 1, 0] = -1.0
            A[layout.gen_s[key], 1, 1] = -1.0
            sizes.append(2)
            Cs.append(np.diag([1.0, 0.0]))
            As.append(A)
        else:
            A = np.zeros((m, 3, 3))
            for idx, (p, q) in zip(layout.line[key], ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))):
                A[idx, p, q] = A[idx, q, p] = -1.0
            sizes.append(3)
            Cs.append(np.zeros((3, 3)))
            As.append(A)
    for idx in singles:
        A = np.zeros((m, 1, 1))
        A[idx] = -1.0
        sizes.append(1)
        Cs.append(np.zeros((1, 1)))
        As.append(A)
    b = np.array(rhs, dtype=float)
    prob = SDPProblem(sizes, Cs, As, b)
    return DualSDP(prob, layout, offset, sc, trivially_infeasible, d)


def dual_solution(ds: DualSDP, y: np.ndarray) -> DualSolution:
    """Named multipliers in cost units from a solver vector y."""
    lay, sc = ds.layout, ds.scale
    y = np.asarray(y, dtype=float) * sc

    def pick(idx):
        return np.array([y[i] if i >= 0 else 0.0 for i in idx])

    lam_free, gam_free = pick(lay.lam_free), pick(lay.gam_free)
    gens = {}
    for k, ir in lay.gen_r.items():
        # the generator block is [[1, r], [r, s]] in scaled units; unscale r by sqrt, s linearly
        gens[k] = np.array([[1.0, y[ir] / sc], [y[ir] / sc, y[lay.gen_s[k]] / sc]])
    lines = []
    for ids in lay.line:
        v = [y[i] for i in ids]
        lines.append(np.array([[v[0], v[1], v[2]], [v[1], v[3], v[4]], [v[2], v[4], v[5]]]))
    Z = ds.problem.dual_slack(y / sc)
    return DualSolution(
        lam_up=pick(lay.lam_up) + np.maximum(lam_free, 0), lam_lo=pick(lay.lam_lo) + np.maximum(-lam_free, 0),
        gam_up=pick(lay.gam_up) + np.maximum(gam_free, 0), gam_lo=pick(lay.gam_lo) + np.maximum(-gam_free, 0),
        mu_up=pick(lay.mu_up), mu_lo=pick(lay.mu_lo), gen_blocks=gens, line_blocks=lines,
        A=Z[0] * sc, scale=sc)


def objective_Ot(sol: DualSolution, data: dict) -> float:
    """O_t term by term from named multipliers and the per-unit restriction data.

    Generator blocks are [[1, r], [r, s]] for the cost scaled by ``sol.scale``;
    the returned value is in cost units."""
    d = data
    sc = sol.scale
    val = 0.0
    with np.errstate(invalid="ignore"):
        for up, lo, hi_b, lo_b, dem in ((sol.lam_up, sol.lam_lo, d["pmax"], d["pmin"], d["pd"]),
                                        (sol.gam_up, sol.gam_lo, d["qmax"], d["qmin"], d["qd"])):
            val += float(np.sum(np.where(lo > 0, lo * (lo_b - dem), 0.0)))
            val -= float(np.sum(np.where(up > 0, up * (hi_b - dem), 0.0)))
    val += float(np.sum(sol.mu_lo * d["vmin"] ** 2))
    val -= float(np.sum(np.where(sol.mu_up > 0, sol.mu_up * d["vmax"] ** 2, 0.0)))
    for k, (j, c2, c1, c0) in d["costs"].items():
        val += c1 * d["pd"][j] + c0
        if k in sol.gen_blocks:
            r, s = sol.gen_blocks[k][0, 1], sol.gen_blocks[k][1, 1]
            val += sc * (2 * math.sqrt(c2 / sc) * r * d["pd"][j] - s)
    for B, smax in zip(sol.line_blocks, d.get("line_smax", [])):
        val -= smax ** 2 * B[0, 0] + B[1, 1] + B[2, 2]
    return float(val)


# ---------------------------------------------------------------------------
# solving

@dataclass
class SubproblemResult:
    status: str
    objective: float          # O_t in cost units (nan unless feasible)
    restriction: PeriodRestriction
    iterations: int = 0
    outcome: SDPOutcome | None = None
    dual: DualSolution | None = None
    sdp: DualSDP | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def solve_period(inst: UCInstance, r: PeriodRestriction, gap_tol: float = 1e-7,
                 cert_tol: float = 1e-6) -> SubproblemResult:
    ds = build_dual_sdp(inst, r)
    ds.data["line_smax"] = ds.layout.line_smax
    if ds.trivially_infeasible:
        return SubproblemResult(INFEASIBLE, math.nan, r, 0, None, None, ds)
    if ds.problem.m == 0:
        return SubproblemResult(FEASIBLE, ds.scale * ds.offset, r, 0, None, None, ds)
    out = solve_sdp(ds.problem, gap_tol=gap_tol, cert_tol=cert_tol)
    if out.status == SDPStatus.OPTIMAL:
        val = ds.scale * (out.dual_objective + ds.offset)
        return SubproblemResult(FEASIBLE, float(val), r, out.iterations, out, dual_solution(ds, out.y), ds)
    if out.status == SDPStatus.PRIMAL_INFEASIBLE:
        # the relaxed power flow has no solution: its dual is unbounded
        return SubproblemResult(INFEASIBLE, math.nan, r, out.iterations, out, None, ds)
    return SubproblemResult(INACCURATE, math.nan, r, out.iterations, out, None, ds)


def subproblem_bound(objectives, u, inst: UCInstance, c0_in_objective: bool = True) -> float | None:
    """Decomposition bound: per-period objectives plus start-up charges.

    Each O_t already contains the fixed costs of its committed units, so
    they are not added again unless ``c0_in_objective`` is False."""
    vals = list(objectives)
    if any(v is None or not math.isfinite(v) for v in vals):
        return None
    u = np.asarray(u)
    total = float(sum(vals)) + startup_cost(inst, u)
    if not c0_in_objective:
        total += float(sum(g.c0 * u[k].sum() for k, g in enumerate(inst.generators)))
    return total


def economic_dispatch(inst: UCInstance, i: int, on_set) -> float:
    """Cheapest cost the master can pay in period i with ``on_set`` committed:
    demand met exactly, outputs within [p_min, min(p_max, P% * demand)],
    fixed costs included. inf when no such dispatch exists. The value is
    rounded up slightly so that it never undercuts the true minimum."""
    gens = inst.generators
    idx = sorted(on_set)
    D = float(inst.demand[i])
    if not idx:
        return 0.0 if abs(D) <= 1e-12 else math.inf
    lb = np.array([gens[k].p_min[i] for k in idx])
    ub = np.array([min(gens[k].p_max[i], inst.pmax_demand_frac * D) for k in idx])
    slack = 1e-9 * max(1.0, abs(D))
    if np.any(lb > ub) or ub.sum() < D - slack or lb.sum() > D + slack:
        return math.inf
    prog = ConvexProgram(q=np.array([gens[k].c1 for k in idx]), Q=np.diag([2 * gens[k].c2 for k in idx]),
                         A=np.ones((1, len(idx))), senses="=", rhs=np.array([D]), lb=lb, ub=ub)
    out = solve_convex(prog, tol=1e-10)
    if out.status == Status.INFEASIBLE:
        return math.inf
    if out.status != Status.OPTIMAL:
        return math.nan
    P = np.clip(out.x, lb, ub)
    val = float(sum(gens[k].c2 * p * p + gens[k].c1 * p + gens[k].c0 for k, p in zip(idx, P)))
    return val + 1e-7 * max(1.0, abs(val))


class PeriodEvaluator:
    """Solves period sub-problems with a cache keyed by the period signature
    class, the committed and relaxed sets and the adjusted upper limits.

    ``work`` counts interior-point iterations of the solves actually
    performed and serves as a deterministic clock."""

    def __init__(self, inst: UCInstance, gap_tol: float = 1e-7, cert_tol: float = 1e-6):
        self.inst = inst
        self.gap_tol, self.cert_tol = gap_tol, cert_tol
        self.signatures = [period_signature(inst, i) for i in range(inst.n_periods)]
        self.sig_class = []
        reps = []
        for sig in self.signatures:
            for c, rep in enumerate(reps):
                if signatures_match(sig, rep):
                    self.sig_class.append(c)
                    break
            else:
                reps.append(sig)
                self.sig_class.append(len(reps) - 1)
        self.cache: dict = {}
        self.work = 0
        self.solves = 0
        self._lock = threading.Lock()

    def key(self, r: PeriodRestriction):
        act = r.on_set + r.relaxed
        return (self.sig_class[r.period], r.on_set, r.relaxed,
                tuple(float(r.p_max[k]) for k in act))

    def cached(self, r: PeriodRestriction):
        with self._lock:
            return self.cache.get(self.key(r))

    def evaluate(self, r: PeriodRestriction) -> SubproblemResult:
        key = self.key(r)
        with self._lock:
            hit = self.cache.get(key)
        if hit is not None:
            return hit if hit.restriction.period == r.period else _rebind(hit, r)
        res = solve_period(self.inst, r, self.gap_tol, self.cert_tol)
        with self._lock:
            self.cache.setdefault(key, res)
            self.work += res.iterations
            self.solves += 1
        return res


def _rebind(res: SubproblemResult, r: PeriodRestriction) -> SubproblemResult:
    return SubproblemResult(res.status, res.objective, r, 0, res.outcome, res.dual, res.sdp)
