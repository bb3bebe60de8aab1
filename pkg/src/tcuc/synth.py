"""Random small networks and unit-commitment instances for tests and demos."""
from __future__ import annotations

import numpy as np

from .netmodel import network_from_dict
from .ucmaster import UCInstance, uc_from_dict


def random_network_dict(rng: np.random.Generator, n_bus: int, n_extra: int = 1, limit_frac: float = 0.5,
                        s_range=(0.5, 1.6)) -> dict:
    """Connected network: random spanning tree plus ``n_extra`` chords; each
    branch gets a flow limit with probability ``limit_frac``."""
    buses = [{"id": k + 1, "vmin": 0.9, "vmax": 1.1} for k in range(n_bus)]
    edges = []
    for k in range(1, n_bus):
        edges.append((int(rng.integers(0, k)), k))
    tried = 0
    while n_extra > 0 and tried < 50:
        tried += 1
        a, b = sorted(rng.choice(n_bus, 2, replace=False).tolist())
        if (a, b) not in edges:
            edges.append((a, b))
            n_extra -= 1
    branches = []
    for j, (a, b) in enumerate(edges):
        r, x = rng.uniform(0.01, 0.05), rng.uniform(0.05, 0.2)
        y = 1.0 / complex(r, x)
        branches.append({
            "id": j + 1, "from": a + 1, "to": b + 1, "g": float(y.real), "b": float(y.imag),
            "bsh": float(rng.uniform(0.0, 0.04)),
            "smax": float(rng.uniform(*s_range)) if rng.random() < limit_frac else None,
        })
    return {"schema": 1, "base_mva": 100.0, "buses": buses, "branches": branches}


def random_uc_dict(rng: np.random.Generator, net_dict: dict, n_gen: int, n_periods: int,
                   repeat_prob: float = 0.3, ramp_prob: float = 0.0) -> dict:
    n_bus = len(net_dict["buses"])
    gen_buses = rng.choice(n_bus, n_gen, replace=False)
    gens = []
    for k, b in enumerate(gen_buses):
        p_max = float(rng.uniform(60, 160))
        gens.append({
            "name": f"g{k + 1}", "bus": int(b) + 1,
            "c2": float(rng.uniform(0.002, 0.03)), "c1": float(rng.uniform(5, 30)),
            "c0": float(rng.uniform(0, 60)), "carr": float(rng.uniform(0, 80)),
            "p_min": float(rng.uniform(0, 0.2) * p_max), "p_max": p_max,
            "q_min": float(-rng.uniform(30, 80)), "q_max": float(rng.uniform(30, 80)),
            "init": int(rng.integers(0, 2)), "init_p": 0.0,
            "min_on": int(rng.integers(1, 3)), "min_off": int(rng.integers(1, 3)),
            "init_t": int(rng.integers(1, 3)), "inertia": bool(rng.random() < 0.5),
        })
        if rng.random() < ramp_prob:
            gens[-1]["ramp_up"] = float(rng.uniform(0.2, 0.6) * p_max)
        if gens[-1]["init"]:
            gens[-1]["init_p"] = float(rng.uniform(gens[-1]["p_min"], p_max))
    load_buses = [k for k in range(n_bus) if k not in set(gen_buses.tolist())] or [int(rng.integers(0, n_bus))]
    P = np.zeros((n_bus, n_periods))
    Q = np.zeros((n_bus, n_periods))
    cap = sum(g["p_max"] for g in gens)
    for t in range(n_periods):
        if t > 0 and rng.random() < repeat_prob:
            P[:, t], Q[:, t] = P[:, t - 1], Q[:, t - 1]
            continue
        total = rng.uniform(0.15, 0.5) * cap
        w = rng.dirichlet(np.ones(len(load_buses)))
        for j, k in enumerate(load_buses):
            P[k, t] = round(float(total * w[j]), 3)
            Q[k, t] = round(float(P[k, t] * rng.uniform(0.0, 0.3)), 3)
    return {
        "schema": 1, "periods": n_periods, "generators": gens,
        "loads": {"P": P.tolist(), "Q": Q.tolist()},
        "reserve_up": [float(rng.uniform(0, 0.05) * P[:, t].sum()) for t in range(n_periods)],
        "reserve_down": [0.0] * n_periods,
        "min_units_on": int(any(g["inertia"] for g in gens) and rng.random() < 0.5),
        "pmax_demand_frac": 1.0,
    }


def random_instance(seed: int, n_bus=None, n_gen=None, n_periods=None, ramp_prob: float = 0.0) -> UCInstance:
    rng = np.random.default_rng(seed)
    n_bus = n_bus or int(rng.integers(3, 6))
    n_gen = n_gen or int(rng.integers(2, 4))
    n_periods = n_periods or int(rng.integers(2, 5))
    nd = random_network_dict(rng, n_bus, n_extra=int(rng.integers(0, 2)))
    ud = random_uc_dict(rng, nd, min(n_gen, n_bus), n_periods, ramp_prob=ramp_prob)
    return uc_from_dict(ud, network_from_dict(nd))


def grid_like_network_dict(seed: int = 0, n_bus: int = 45, n_branch: int = 48) -> dict:
    """Meshed network with the requested bus and branch counts."""
    rng = np.random.default_rng(seed)
    return random_network_dict(rng, n_bus, n_extra=n_branch - (n_bus - 1), limit_frac=0.3)
