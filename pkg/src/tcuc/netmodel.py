"""Network data, case-file parsing and the real matrices of the rectangular
voltage formulation.

For a real voltage vector ``x = [Re V; Im V]`` the matrices built here satisfy

    tr(Y_k   x x^T) = P_k      (net active injection at bus k)
    tr(Ybar_k x x^T) = Q_k     (net reactive injection at bus k)
    tr(M_k   x x^T) = |V_k|^2
    tr(Y_b   x x^T) = P_lm     (active flow leaving l on directed branch b)
    tr(Ybar_b x x^T) = Q_lm

with ``S_k = V_k * conj((Y V)_k) = P_k + j Q_k``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CaseParseError(ValueError):
    """Malformed case file (bad JSON or missing/ill-typed fields)."""


class CaseValidationError(ValueError):
    """Case file parsed but is internally inconsistent."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = 0.9
    v_max: float = 1.1
    is_generator: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int  # bus index (position in PowerNetwork.buses), not id
    to_bus: int
    series_g: float
    series_b: float
    shunt_b: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    s_max: float | None = None
    id: int | None = None

    def two_port(self) -> tuple[complex, complex, complex, complex]:
        """Return (Yff, Yft, Ytf, Ytt) of the pi-model with the transformer
        at the from end. Half of the total charging sits at each end."""
        ys = complex(self.series_g, self.series_b)
        tap = self.tap_ratio * np.exp(1j * self.phase_shift)
        ytt = ys + 0.5j * self.shunt_b
        yff = ytt / (self.tap_ratio ** 2)
        yft = -ys / np.conj(tap)
        ytf = -ys / tap
        return complex(yff), complex(yft), complex(ytf), complex(ytt)


@dataclass
class PowerNetwork:
    buses: list[Bus]
    branches: list[Branch]
    base_mva: float = 100.0
    Y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.validate()
        self.Y = admittance_matrix(len(self.buses), self.branches)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(bus_id)

    @property
    def limited_branches(self) -> list[int]:
        """Positions of branches carrying an apparent-power limit (the set L)."""
        return [i for i, br in enumerate(self.branches) if br.s_max is not None]

    def validate(self):
        n = len(self.buses)
        if n == 0:
            raise CaseValidationError("network has no buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        for b in self.buses:
            if not (0 < b.v_min <= b.v_max):
                raise CaseValidationError(f"bus {b.id}: need 0 < vmin <= vmax")
        seen = set()
        for pos, br in enumerate(self.branches):
            label = br.id if br.id is not None else pos
            if label in seen:
                raise CaseValidationError(f"duplicate branch id {label}")
            seen.add(label)
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise CaseValidationError(f"branch {label} references a bus outside the network")
            if br.from_bus == br.to_bus:
                raise CaseValidationError(f"branch {label} is a self-loop")
            if br.tap_ratio <= 0:
                raise CaseValidationError(f"branch {label}: tap ratio must be positive")
            if br.s_max is not None and br.s_max <= 0:
                raise CaseValidationError(f"branch {label}: smax must be positive")


def admittance_matrix(n_bus: int, branches: list[Branch]) -> np.ndarray:
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for br in branches:
        yff, yft, ytf, ytt = br.two_port()
        f, t = br.from_bus, br.to_bus
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    return Y


# ---------------------------------------------------------------------------
# parsing

def _num(obj, key, where, default=None, allow_none=False):
    if key not in obj:
        if default is not None or allow_none:
            return default
        raise CaseParseError(f"{where}: missing field '{key}'")
    val = obj[key]
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CaseParseError(f"{where}: field '{key}' must be a number")
    return float(val)


def network_from_dict(data: dict) -> PowerNetwork:
    if not isinstance(data, dict):
        raise CaseParseError("top level must be a JSON object")
    schema = data.get("schema", 1)
    if schema != 1:
        raise CaseParseError(f"unsupported schema version {schema!r}")
    for key in ("buses", "branches"):
        if not isinstance(data.get(key), list):
            raise CaseParseError(f"'{key}' must be a list")
    base = _num(data, "base_mva", "case", default=100.0)

    buses = []
    for i, b in enumerate(data["buses"]):
        where = f"buses[{i}]"
        if not isinstance(b, dict) or "id" not in b:
            raise CaseParseError(f"{where}: expected an object with an 'id'")
        if isinstance(b["id"], bool) or not isinstance(b["id"], int):
            raise CaseParseError(f"{where}: id must be an integer")
        buses.append(Bus(id=b["id"], v_min=_num(b, "vmin", where, 0.9), v_max=_num(b, "vmax", where, 1.1)))
    index = {}
    for pos, b in enumerate(buses):
        if b.id in index:
            raise CaseValidationError(f"duplicate bus id {b.id}")
        index[b.id] = pos

    branches = []
    for i, br in enumerate(data["branches"]):
        where = f"branches[{i}]"
        if not isinstance(br, dict):
            raise CaseParseError(f"{where}: expected an object")
        ends = []
        for key in ("from", "to"):
            if key not in br:
                raise CaseParseError(f"{where}: missing field '{key}'")
            if br[key] not in index:
                raise CaseValidationError(f"{where}: unknown bus id {br[key]!r} in '{key}'")
            ends.append(index[br[key]])
        tap = _num(br, "tap", where, 1.0)
        branches.append(Branch(
            from_bus=ends[0], to_bus=ends[1],
            series_g=_num(br, "g", where), series_b=_num(br, "b", where),
            shunt_b=_num(br, "bsh", where, 0.0),
            tap_ratio=1.0 if tap == 0 else tap,
            phase_shift=_num(br, "shift", where, 0.0),
            s_max=_num(br, "smax", where, allow_none=True),
            id=br.get("id"),
        ))
    return PowerNetwork(buses=buses, branches=branches, base_mva=base)


def load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise CaseParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line.strip()}") from exc


def parse_case(path) -> PowerNetwork:
    return network_from_dict(load_json(path))


def network_to_dict(net: PowerNetwork) -> dict:
    return {
        "schema": 1,
        "base_mva": net.base_mva,
        "buses": [{"id": b.id, "vmin": b.v_min, "vmax": b.v_max} for b in net.buses],
        "branches": [
            {"from": net.buses[br.from_bus].id, "to": net.buses[br.to_bus].id,
             "g": br.series_g, "b": br.series_b, "bsh": br.shunt_b, "tap": br.tap_ratio,
             "shift": br.phase_shift, "smax": br.s_max,
             **({"id": br.id} if br.id is not None else {})}
            for br in net.branches
        ],
    }


# ---------------------------------------------------------------------------
# injection matrices

def _rect_pair(yrow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a complex matrix whose only nonzero row gives the current of
    interest to the (active, reactive) real symmetric 2n x 2n matrices."""
    s = yrow + yrow.T
    d = yrow.T - yrow
    act = 0.5 * np.block([[s.real, d.imag], [-d.imag, s.real]])
    rea = -0.5 * np.block([[s.imag, -d.real], [d.real, s.imag]])
    return act, rea


@dataclass(frozen=True)
class InjectionMatrices:
    Yk: np.ndarray      # (n, 2n, 2n)
    Ybar_k: np.ndarray  # (n, 2n, 2n)
    Mk: np.ndarray      # (n, 2n, 2n)
    Ylm: np.ndarray     # (2|L|, 2n, 2n); row 2i is branch L[i] from->to, 2i+1 to->from
    Ybar_lm: np.ndarray
    line_branch: tuple[int, ...]  # branch position of each directed line
    line_from: tuple[int, ...]    # sending bus of each directed line


def build_injection_matrices(net: PowerNetwork) -> InjectionMatrices:
    n = net.n_bus
    Y = net.Y
    Yk = np.empty((n, 2 * n, 2 * n))
    Ybk = np.empty_like(Yk)
    Mk = np.zeros_like(Yk)
    for k in range(n):
        row = np.zeros_like(Y)
        row[k] = Y[k]
        Yk[k], Ybk[k] = _rect_pair(row)
        Mk[k, k, k] = 1.0
        Mk[k, n + k, n + k] = 1.0

    limited = net.limited_branches
    Ylm = np.empty((2 * len(limited), 2 * n, 2 * n))
    Yblm = np.empty_like(Ylm)
    line_branch, line_from = [], []
    for i, pos in enumerate(limited):
        br = net.branches[pos]
        yff, yft, ytf, ytt = br.two_port()
        f, t = br.from_bus, br.to_bus
        for j, (src, entries) in enumerate(((f, ((f, yff), (t, yft))), (t, ((f, ytf), (t, ytt))))):
            row = np.zeros((n, n), dtype=complex)
            for col, val in entries:
                row[src, col] += val
            Ylm[2 * i + j], Yblm[2 * i + j] = _rect_pair(row)
            line_branch.append(pos)
            line_from.append(src)
    return InjectionMatrices(Yk, Ybk, Mk, Ylm, Yblm, tuple(line_branch), tuple(line_from))


def quad(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """tr(M x x^T) for a stack of matrices M."""
    return np.einsum("...ij,i,j->...", M, x, x)


def complex_injections(net: PowerNetwork, V: np.ndarray) -> np.ndarray:
    return V * np.conj(net.Y @ V)


def branch_flows(br: Branch, V: np.ndarray) -> tuple[complex, complex]:
    """Complex power leaving each end of a branch."""
    yff, yft, ytf, ytt = br.two_port()
    vf, vt = V[br.from_bus], V[br.to_bus]
    return vf * np.conj(yff * vf + yft * vt), vt * np.conj(ytf * vf + ytt * vt)
