"""Unit-commitment data, index sets and the mixed-integer QP master model.

Power quantities here are in MW (costs per MW and MW^2); the network layer is
in per-unit and conversion happens when a period sub-problem is built.
Periods carry labels (default 1..|T|); arrays are indexed by position.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convexsolve import ConvexProgram
from .envelope import CostCurve, EnvelopeQuadratic
from .netmodel import CaseParseError, CaseValidationError, PowerNetwork, load_json


class UCValidationError(ValueError):
    pass


@dataclass
class Generator:
    bus: int  # bus position in the network
    c2: float
    c1: float
    c0: float
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    carr: float = 0.0
    init: int = 0
    init_p: float = 0.0
    inertia: bool = False
    ramp_up: float = math.inf
    min_off: int = 1
    min_on: int = 1
    init_t: int = 1
    r_max: np.ndarray | None = None
    r_min: np.ndarray | None = None
    name: str = ""

    @property
    def cost(self) -> CostCurve:
        return CostCurve(self.c2, self.c1, self.c0)


@dataclass
class UCInstance:
    network: PowerNetwork
    generators: list[Generator]
    periods: list[int]
    load_p: np.ndarray  # (n_bus, n_periods), MW
    load_q: np.ndarray  # MVAr
    reserve_up: np.ndarray
    reserve_down: np.ndarray
    min_units_on: int = 0
    pmax_demand_frac: float = 1.0
    demand: np.ndarray = field(init=False)

    def __post_init__(self):
        self.load_p = np.asarray(self.load_p, dtype=float)
        self.load_q = np.asarray(self.load_q, dtype=float)
        self.demand = self.load_p.sum(axis=0)
        self.validate()

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def pos(self, label: int) -> int:
        return label - self.periods[0]

    def validate(self):
        T, nb = self.n_periods, self.network.n_bus
        if T < 1:
            raise UCValidationError("need at least one period")
        if list(self.periods) != list(range(self.periods[0], self.periods[0] + T)):
            raise UCValidationError("periods must be consecutive")
        if self.load_p.shape != (nb, T) or self.load_q.shape != (nb, T):
            raise UCValidationError(f"loads must be {nb} x {T} (bus x period)")
        for name in ("reserve_up", "reserve_down"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (T,):
                raise UCValidationError(f"{name} needs one value per period")
            setattr(self, name, arr)
        seen = set()
        for k, g in enumerate(self.generators):
            who = g.name or f"generator {k}"
            if not 0 <= g.bus < nb:
                raise UCValidationError(f"{who}: bus outside the network")
            if g.bus in seen:
                raise UCValidationError(f"{who}: at most one generator per bus is supported")
            seen.add(g.bus)
            if g.c2 < 0:
                raise UCValidationError(f"{who}: c2 must be nonnegative")
            for arr in ("p_min", "p_max", "q_min", "q_max", "r_max", "r_min"):
                if getattr(g, arr).shape != (T,):
                    raise UCValidationError(f"{who}: {arr} needs one value per period")
            if np.any(g.p_min > g.p_max) or np.any(g.q_min > g.q_max):
                raise UCValidationError(f"{who}: lower limit above upper limit")
            if np.any(g.p_min < 0):
                raise UCValidationError(f"{who}: p_min must be nonnegative")
            if g.min_on < 1 or g.min_off < 1:
                raise UCValidationError(f"{who}: min_on and min_off must be >= 1")
            if not g.ramp_up > 0:
                raise UCValidationError(f"{who}: ramp_up must be positive")
            if g.init not in (0, 1):
                raise UCValidationError(f"{who}: init must be 0 or 1")

    def curves(self) -> list[CostCurve]:
        return [g.cost for g in self.generators]


# ---------------------------------------------------------------------------
# loading

def _per_period(val, T, where, default=None, none_as=math.inf):
    if val is None:
        if default is None:
            raise CaseParseError(f"{where}: missing value")
        val = default
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return np.full(T, float(val))
    if isinstance(val, list) and len(val) == T and all(isinstance(v, (int, float)) or v is None for v in val):
        return np.array([none_as if v is None else float(v) for v in val])
    if isinstance(val, np.ndarray):
        return np.asarray(val, dtype=float).reshape(T)
    raise CaseParseError(f"{where}: expected a number or a list of {T} numbers")


def uc_from_dict(data: dict, net: PowerNetwork) -> UCInstance:
    if not isinstance(data, dict):
        raise CaseParseError("top level must be a JSON object")
    if data.get("schema", 1) != 1:
        raise CaseParseError(f"unsupported schema version {data.get('schema')!r}")
    T = data.get("periods")
    if isinstance(T, bool) or not isinstance(T, int) or T < 1:
        raise CaseParseError("'periods' must be a positive integer")
    first = int(data.get("first_period", 1))
    index = {b.id: i for i, b in enumerate(net.buses)}
    gens = []
    for i, gd in enumerate(data.get("generators", [])):
        where = f"generators[{i}]"
        if not isinstance(gd, dict):
            raise CaseParseError(f"{where}: expected an object")
        if gd.get("bus") not in index:
            raise UCValidationError(f"{where}: unknown bus id {gd.get('bus')!r}")
        try:
            p_max = _per_period(gd.get("p_max"), T, f"{where}.p_max")
            p_min = _per_period(gd.get("p_min"), T, f"{where}.p_min", 0.0)
            q_min = _per_period(gd.get("q_min"), T, f"{where}.q_min", -math.inf, -math.inf)
            q_max = _per_period(gd.get("q_max"), T, f"{where}.q_max", math.inf)
            gens.append(Generator(
                bus=index[gd["bus"]],
                c2=float(gd.get("c2", 0.0)), c1=float(gd.get("c1", 0.0)), c0=float(gd.get("c0", 0.0)),
                p_min=p_min, p_max=p_max, q_min=q_min, q_max=q_max,
                carr=float(gd.get("carr", 0.0)), init=int(gd.get("init", 0)),
                init_p=float(gd.get("init_p", 0.0)), inertia=bool(gd.get("inertia", False)),
                ramp_up=math.inf if gd.get("ramp_up") is None else float(gd["ramp_up"]),
                min_off=int(gd.get("min_off", 1)), min_on=int(gd.get("min_on", 1)),
                init_t=int(gd.get("init_t", 1)),
                r_max=_per_period(gd.get("r_max"), T, f"{where}.r_max", p_max),
                r_min=_per_period(gd.get("r_min"), T, f"{where}.r_min", p_min),
                name=str(gd.get("name", f"g{i}")),
            ))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (CaseParseError, UCValidationError)):
                raise
            raise CaseParseError(f"{where}: {exc}") from exc
    loads = data.get("loads", {})
    try:
        lp = np.asarray(loads.get("P"), dtype=float)
        lq = np.asarray(loads.get("Q", np.zeros_like(lp)), dtype=float)
    except (TypeError, ValueError) as exc:
        raise CaseParseError(f"loads: {exc}") from exc
    return UCInstance(
        network=net, generators=gens, periods=list(range(first, first + T)),
        load_p=lp, load_q=lq,
        reserve_up=_per_period(data.get("reserve_up"), T, "reserve_up", 0.0),
        reserve_down=_per_period(data.get("reserve_down"), T, "reserve_down", 0.0),
        min_units_on=int(data.get("min_units_on", 0)),
        pmax_demand_frac=float(data.get("pmax_demand_frac", 1.0)),
    )


def load_uc(path, net: PowerNetwork) -> UCInstance:
    return uc_from_dict(load_json(path), net)


def _json_num(x):
    return None if not math.isfinite(x) else float(x)


def uc_to_dict(inst: UCInstance) -> dict:
    ids = [b.id for b in inst.network.buses]
    return {
        "schema": 1,
        "periods": inst.n_periods,
        "first_period": inst.periods[0],
        "generators": [{
            "name": g.name, "bus": ids[g.bus], "c2": g.c2, "c1": g.c1, "c0": g.c0,
            "p_min": g.p_min.tolist(), "p_max": g.p_max.tolist(),
            "q_min": [_json_num(v) for v in g.q_min], "q_max": [_json_num(v) for v in g.q_max],
            "carr": g.carr, "init": g.init, "init_p": g.init_p, "inertia": g.inertia,
            "ramp_up": _json_num(g.ramp_up), "min_off": g.min_off, "min_on": g.min_on,
            "init_t": g.init_t, "r_max": g.r_max.tolist(), "r_min": g.r_min.tolist(),
        } for g in inst.generators],
        "loads": {"P": inst.load_p.tolist(), "Q": inst.load_q.tolist()},
        "reserve_up": inst.reserve_up.tolist(),
        "reserve_down": inst.reserve_down.tolist(),
        "min_units_on": inst.min_units_on,
        "pmax_demand_frac": inst.pmax_demand_frac,
    }


# ---------------------------------------------------------------------------
# index sets (period labels, not positions)

@dataclass
class IndexSets:
    ramp_ti: list[int] = field(default_factory=list)                  # k
    ramp: list[tuple[int, int]] = field(default_factory=list)         # (t, k)
    minoff_init0: list[tuple[int, int]] = field(default_factory=list)  # (k, s)
    minoff_init1: list[tuple[int, int]] = field(default_factory=list)  # (k, s)
    minoff: list[tuple[int, int, int]] = field(default_factory=list)   # (k, t, s)
    minon_init1: list[tuple[int, int]] = field(default_factory=list)
    minon_init0: list[tuple[int, int]] = field(default_factory=list)
    minon: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def has_ramping(self) -> bool:
        return bool(self.ramp_ti or self.ramp)


def build_index_sets(inst: UCInstance) -> IndexSets:
    Ti, Tf = inst.periods[0], inst.periods[-1]
    out = IndexSets()

    def span(a, b):  # inclusive range clipped to the horizon
        return range(max(a, Ti), min(b, Tf) + 1)

    for k, g in enumerate(inst.generators):
        if g.init == 1 and g.ramp_up < g.p_max[0] - g.p_min[0]:
            out.ramp_ti.append(k)
        for t in inst.periods[1:]:
            i = inst.pos(t)
            if g.ramp_up < g.p_max[i] - g.p_min[i]:
                out.ramp.append((t, k))
        if g.min_off > 1:
            if g.min_off - g.init_t > 0 and g.init == 0:
                out.minoff_init0 += [(k, s) for s in span(Ti, Ti + g.min_off - g.init_t - 1)]
            if g.init == 1:
                out.minoff_init1 += [(k, s) for s in span(Ti + 1, Ti + g.min_off - 1)]
            for t in inst.periods[1:]:
                out.minoff += [(k, t, s) for s in span(t + 1, t + g.min_off - 1)]
        if g.min_on > 1:
            if g.min_on - g.init_t > 0 and g.init == 1:
                out.minon_init1 += [(k, s) for s in span(Ti, Ti + g.min_on - g.init_t - 1)]
            if g.init == 0:
                out.minon_init0 += [(k, s) for s in span(Ti + 1, Ti + g.min_on - 1)]
            for t in inst.periods[1:]:
                out.minon += [(k, t, s) for s in span(t + 1, t + g.min_on - 1)]
    out.ramp.sort()
    return out


# ---------------------------------------------------------------------------
# master model

@dataclass
class Row:
    coef: dict[int, float]
    sense: str
    rhs: float
    tag: str = ""


class MasterModel:
    """Variables, linear rows and a separable convex quadratic objective."""

    def __init__(self, inst: UCInstance, f: EnvelopeQuadratic):
        self.inst = inst
        self.f = f
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self.binary: list[bool] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.lin: list[float] = []
        self.quad: list[float] = []  # objective term quad * x^2
        self.rows: list[Row] = []

    # variables -----------------------------------------------------------
    def add_var(self, name, lb=0.0, ub=math.inf, binary=False, lin=0.0, quad=0.0) -> int:
        if name in self.index:
            raise KeyError(f"duplicate variable {name}")
        self.index[name] = len(self.names)
        self.names.append(name)
        self.binary.append(binary)
        self.lb.append(lb)
        self.ub.append(1.0 if binary else ub)
        self.lin.append(lin)
        self.quad.append(quad)
        return self.index[name]

    @property
    def n(self) -> int:
        return len(self.names)

    def u(self, k, i):
        return self.index[f"u[{k},{i}]"]

    def p(self, k, i):
        return self.index[f"P[{k},{i}]"]

    def s(self, k, i):
        return self.index[f"s[{k},{i}]"]

    def theta(self, i):
        return self.index[f"theta[{i}]"]

    def rplus(self, i):
        return self.index[f"R+[{i}]"]

    def rminus(self, i):
        return self.index[f"R-[{i}]"]

    def binaries(self) -> list[int]:
        return [j for j, b in enumerate(self.binary) if b]

    # rows ----------------------------------------------------------------
    def add_row(self, coef: dict[int, float], sense: str, rhs: float, tag: str = "") -> int:
        if sense not in "<=>" or len(sense) != 1:
            raise ValueError(sense)
        for j in coef:
            if not 0 <= j < self.n:
                raise KeyError(f"row {tag} references undeclared variable {j}")
        self.rows.append(Row(dict(coef), sense, float(rhs), tag))
        return len(self.rows) - 1

    def matrices(self):
        A = np.zeros((len(self.rows), self.n))
        for i, r in enumerate(self.rows):
            for j, v in r.coef.items():
                A[i, j] += v
        return A, "".join(r.sense for r in self.rows), np.array([r.rhs for r in self.rows])

    def relaxation(self, lb=None, ub=None) -> ConvexProgram:
        A, senses, rhs = self.matrices()
        return ConvexProgram(q=np.array(self.lin), Q=np.diag(2.0 * np.array(self.quad)), A=A,
                             senses=senses, rhs=rhs,
                             lb=np.array(self.lb if lb is None else lb, dtype=float),
                             ub=np.array(self.ub if ub is None else ub, dtype=float))

    def row_violation(self, row: Row, x) -> float:
        lhs = sum(v * x[j] for j, v in row.coef.items())
        if row.sense == "<":
            return lhs - row.rhs
        if row.sense == ">":
            return row.rhs - lhs
        return abs(lhs - row.rhs)

    def max_violation(self, x) -> float:
        return max((self.row_violation(r, x) for r in self.rows), default=0.0)


def assemble_master(inst: UCInstance, f: EnvelopeQuadratic, sets: IndexSets | None = None) -> MasterModel:
    if f.a < 0 or f.b < 0 or f.c < 0:
        raise UCValidationError("envelope coefficients must be nonnegative")
    sets = sets or build_index_sets(inst)
    m = MasterModel(inst, f)
    G, T = range(inst.n_gen), range(inst.n_periods)
    gens = inst.generators
    for i in T:
        for k in G:
            m.add_var(f"u[{k},{i}]", binary=True, lin=gens[k].c0)
    for i in T:
        for k in G:
            m.add_var(f"P[{k},{i}]", lin=gens[k].c1, quad=gens[k].c2)
    for i in T:
        for k in G:
            m.add_var(f"s[{k},{i}]", lin=gens[k].carr)
    # the envelope constant f(0) is not charged: theta >= 0 would otherwise bill it every period
    for i in T:
        m.add_var(f"theta[{i}]", lin=f.b, quad=f.c)
    for i in T:
        m.add_var(f"R+[{i}]")
        m.add_var(f"R-[{i}]")

    P, u = m.p, m.u
    for i in T:
        D = inst.demand[i]
        m.add_row({P(k, i): 1.0 for k in G}, "=", D, f"balance[{i}]")
        up = {P(k, i): -1.0 for k in G}
        dn = {P(k, i): 1.0 for k in G}
        for k in G:
            up[u(k, i)] = gens[k].r_max[i]
            dn[u(k, i)] = -gens[k].r_min[i]
        up[m.rplus(i)] = -1.0
        dn[m.rminus(i)] = -1.0
        m.add_row(up, "=", 0.0, f"reserve_up_def[{i}]")
        m.add_row({m.rplus(i): 1.0}, ">", inst.reserve_up[i], f"reserve_up[{i}]")
        m.add_row(dn, "=", 0.0, f"reserve_down_def[{i}]")
        m.add_row({m.rminus(i): 1.0}, ">", inst.reserve_down[i], f"reserve_down[{i}]")
        for k in G:
            g = gens[k]
            m.add_row({P(k, i): 1.0, u(k, i): -g.p_min[i]}, ">", 0.0, f"pmin[{k},{i}]")
            m.add_row({P(k, i): 1.0, u(k, i): -g.p_max[i]}, "<", 0.0, f"pmax[{k},{i}]")
            m.add_row({P(k, i): 1.0, u(k, i): -inst.pmax_demand_frac * D}, "<", 0.0, f"pfrac[{k},{i}]")
        inert = {u(k, i): 1.0 for k in G if gens[k].inertia}
        if inst.min_units_on > 0:
            m.add_row(inert, ">", inst.min_units_on, f"inertia[{i}]")
    for k in sets.ramp_ti:
        m.add_row({P(k, 0): 1.0}, "<", gens[k].ramp_up + gens[k].init_p, f"ramp0[{k}]")
    for t, k in sets.ramp:
        i = inst.pos(t)
        m.add_row({P(k, i): 1.0, P(k, i - 1): -1.0}, "<", gens[k].ramp_up, f"ramp[{k},{i}]")

    pos = inst.pos
    for k, s in sets.minoff_init0:
        m.add_row({u(k, pos(s)): 1.0}, "=", 0.0, f"minoff_init0[{k},{s}]")
    for k, s in sets.minoff_init1:
        # u_init - u_Ti <= 1 - u_s
        coef = {u(k, 0): -1.0}
        coef[u(k, pos(s))] = coef.get(u(k, pos(s)), 0.0) + 1.0
        m.add_row(coef, "<", 1.0 - gens[k].init, f"minoff_init1[{k},{s}]")
    for k, t, s in sets.minoff:
        coef = {u(k, pos(t) - 1): 1.0, u(k, pos(t)): -1.0}
        coef[u(k, pos(s))] = coef.get(u(k, pos(s)), 0.0) + 1.0
        m.add_row(coef, "<", 1.0, f"minoff[{k},{t},{s}]")
    for k, s in sets.minon_init1:
        m.add_row({u(k, pos(s)): 1.0}, "=", 1.0, f"minon_init1[{k},{s}]")
    for k, s in sets.minon_init0:
        coef = {u(k, 0): 1.0}
        coef[u(k, pos(s))] = coef.get(u(k, pos(s)), 0.0) - 1.0
        m.add_row(coef, "<", gens[k].init, f"minon_init0[{k},{s}]")
    for k, t, s in sets.minon:
        coef = {u(k, pos(t)): 1.0, u(k, pos(t) - 1): -1.0}
        coef[u(k, pos(s))] = coef.get(u(k, pos(s)), 0.0) - 1.0
        m.add_row(coef, "<", 0.0, f"minon[{k},{t},{s}]")

    # startup artificials: s >= u_t - u_{t-1}, s >= u_Ti - u_init
    for k in G:
        m.add_row({m.s(k, 0): 1.0, u(k, 0): -1.0}, ">", -gens[k].init, f"startup[{k},0]")
        for i in T[1:]:
            m.add_row({m.s(k, i): 1.0, u(k, i): -1.0, u(k, i - 1): 1.0}, ">", 0.0, f"startup[{k},{i}]")
    return m


def objective_value(m: MasterModel, point) -> float:
    """Master objective at a full assignment (array in variable order or a name map)."""
    if isinstance(point, dict):
        missing = [nm for nm in m.names if nm not in point]
        if missing:
            raise KeyError(f"unassigned variables: {', '.join(missing[:5])}")
        x = np.array([float(point[nm]) for nm in m.names])
    else:
        x = np.asarray(point, dtype=float)
        if x.shape != (m.n,) or not np.all(np.isfinite(x)):
            raise ValueError("point must assign a finite value to every variable")
    return float(np.dot(m.quad, x * x) + np.dot(m.lin, x))


def startup_cost(inst: UCInstance, u: np.ndarray) -> float:
    """Start-up charges of a commitment matrix u (generator x period)."""
    total = 0.0
    for k, g in enumerate(inst.generators):
        prev = g.init
        for i in range(inst.n_periods):
            total += g.carr * max(int(u[k, i]) - prev, 0)
            prev = int(u[k, i])
    return total


def read_instance(network_path, uc_path):
    from .netmodel import parse_case
    net = parse_case(network_path)
    return load_uc(uc_path, net)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


__all__ = [
    "Generator", "UCInstance", "IndexSets", "MasterModel", "Row", "UCValidationError",
    "assemble_master", "build_index_sets", "objective_value", "startup_cost", "uc_from_dict",
    "load_uc", "uc_to_dict", "read_instance", "CaseParseError", "CaseValidationError",
]
