"""Radial feeder model and linearized DistFlow voltage solver.

Injections are stored as net *withdrawals* (consumption positive), in p.u.
of the system MVA base.  Line flows are the subtree withdrawal sums, and bus
voltages follow the linear drop ``v_m = v_n - (r p + x q) / v0`` from the
substation outward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

BUNDLED_33BUS = Path(__file__).parent / "data" / "ieee33.case"


class NetworkError(ValueError):
    """Raised for malformed case data or inconsistent network inputs."""


@dataclass(frozen=True)
class BusRecord:
    id: int
    parent: Optional[int]
    r: float = 0.0
    x: float = 0.0
    # standard-case base load attached to the bus (p.u.)
    p_load: float = 0.0
    q_load: float = 0.0

    def __post_init__(self):
        if (self.id == 0) != (self.parent is None):
            raise NetworkError(f"bus {self.id}: only bus 0 may (and must) lack a parent")


@dataclass(frozen=True)
class RadialNetwork:
    buses: tuple
    v0: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    s_base_mva: float = 1.0
    v_base_kv: float = 12.66
    parents: np.ndarray = field(init=False, repr=False, compare=False)
    r: np.ndarray = field(init=False, repr=False, compare=False)
    x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        buses = tuple(self.buses)
        object.__setattr__(self, "buses", buses)
        if not buses:
            raise NetworkError("network has no buses")
        n = len(buses)
        ids = [b.id for b in buses]
        if sorted(ids) != list(range(n)):
            raise NetworkError(f"bus ids must be exactly 0..{n - 1}, got {sorted(ids)}")
        if buses[0].id != 0:
            raise NetworkError("substation bus 0 must come first")
        seen = set()
        for b in buses:
            if b.parent is not None:
                if b.parent == b.id:
                    raise NetworkError(f"bus {b.id} is its own parent (cycle)")
                if b.parent not in seen:
                    raise NetworkError(
                        f"bus {b.id}: parent {b.parent} not defined earlier "
                        "(cycle or disconnected topology)"
                    )
            if b.r < 0 or b.x < 0:
                raise NetworkError(f"bus {b.id}: negative line impedance r={b.r}, x={b.x}")
            seen.add(b.id)
        if not self.v_min < self.v0 < self.v_max:
            raise NetworkError(
                f"need vmin < v0 < vmax, got {self.v_min}, {self.v0}, {self.v_max}"
            )

        parents = np.full(n, -1, dtype=np.int64)
        r = np.zeros(n)
        x = np.zeros(n)
        for b in buses:
            parents[b.id] = -1 if b.parent is None else b.parent
            r[b.id] = b.r
            x[b.id] = b.x
        for name, arr in (("parents", parents), ("r", r), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def order(self) -> list:
        """Bus ids in pre-order (every parent precedes its children)."""
        return [b.id for b in self.buses]

    def base_load(self) -> tuple:
        """Per-bus base (p, q) withdrawals in p.u., indexed by bus id."""
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        for b in self.buses:
            p[b.id] = b.p_load
            q[b.id] = b.q_load
        return p, q

    def kw_to_pu(self, kw):
        return np.asarray(kw, dtype=float) / (self.s_base_mva * 1000.0)


@dataclass(frozen=True)
class InjectionProfile:
    p: np.ndarray
    q: np.ndarray

    @classmethod
    def zeros(cls, n_bus: int) -> "InjectionProfile":
        return cls(np.zeros(n_bus), np.zeros(n_bus))


@dataclass(frozen=True)
class VoltageSolution:
    v: np.ndarray


def load_network(path) -> RadialNetwork:
    """Parse a case file into a validated :class:`RadialNetwork`.

    Format: ``key=value`` preamble lines (``v0``, ``vmin``, ``vmax``,
    ``sbase_mva``, ``vbase_kv``), ``#`` comments, and one bus per line as
    ``id parent r_pu x_pu [p_load_pu q_load_pu]`` with ``-`` as the
    substation's parent.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"case file not found: {path}")
    keys = {"v0": "v0", "vmin": "v_min", "vmax": "v_max",
            "sbase_mva": "s_base_mva", "vbase_kv": "v_base_kv"}
    params = {}
    buses = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if "=" in line:
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in keys:
                raise NetworkError(f"{where}: unknown key {key!r}")
            try:
                params[keys[key]] = float(value)
            except ValueError:
                raise NetworkError(f"{where}: {key} is not a number: {value!r}") from None
            continue
        cols = line.split()
        if len(cols) not in (4, 6):
            raise NetworkError(f"{where}: expected 4 or 6 columns, got {len(cols)}")
        try:
            bus_id = int(cols[0])
            parent = None if cols[1] == "-" else int(cols[1])
            values = [float(c) for c in cols[2:]]
        except ValueError as exc:
            raise NetworkError(f"{where}: {exc}") from None
        buses.append(BusRecord(bus_id, parent, *values))
    buses.sort(key=lambda b: (b.id != 0,))
    return RadialNetwork(tuple(buses), **params)


def solve_distflow(net: RadialNetwork, inj: InjectionProfile) -> VoltageSolution:
    """Linearized DistFlow: subtree flow accumulation, then voltage drops."""
    p = np.asarray(inj.p, dtype=float)
    q = np.asarray(inj.q, dtype=float)
    n = net.n_bus
    if p.shape != (n,) or q.shape != (n,):
        raise NetworkError(f"injection length {p.shape}/{q.shape} != bus count {n}")
    order = net.order
    parents = net.parents
    # flow on the line feeding bus k = total withdrawal of k's subtree
    P = p.copy()
    Q = q.copy()
    P[0] = Q[0] = 0.0  # substation is the slack
    for k in reversed(order[1:]):
        P[parents[k]] += P[k]
        Q[parents[k]] += Q[k]
    v = np.empty(n)
    v[0] = net.v0
    for k in order[1:]:
        v[k] = v[parents[k]] - (net.r[k] * P[k] + net.x[k] * Q[k]) / net.v0
    return VoltageSolution(v)


def violation_metrics(sol: VoltageSolution, net: RadialNetwork) -> tuple:
    """Return ``(vvn, vva)``: count and summed magnitude of bound excursions."""
    v = np.asarray(sol.v)
    over = np.maximum(0.0, v - net.v_max)
    under = np.maximum(0.0, net.v_min - v)
    vvn = int(np.count_nonzero(v > net.v_max) + np.count_nonzero(v < net.v_min))
    return vvn, float(over.sum() + under.sum())


def auxiliary_cost(vvn, vva, beta: float) -> float:
    """Weighted violation cost ``beta * vvn + (1 - beta) * vva``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * vvn + (1.0 - beta) * vva


def sensitivity_matrices(net: RadialNetwork) -> tuple:
    """Dense ``(R, X)`` with ``v = v0 - (R p + X q) / v0``.

    ``R[i, k]`` is the resistance shared by the substation paths of buses
    i and k.  Useful for vectorized evaluation; :func:`solve_distflow` does
    not depend on it.
    """
    n = net.n_bus
    R = np.zeros((n, n))
    X = np.zeros((n, n))
    paths = {0: []}
    for k in net.order[1:]:
        paths[k] = paths[int(net.parents[k])] + [k]
    for i in range(n):
        pi = set(paths[i])
        for k in range(n):
            common = pi.intersection(paths[k])
            R[i, k] = sum(net.r[j] for j in common)
            X[i, k] = sum(net.x[j] for j in common)
    return R, X


def network_from_records(records: Sequence[tuple], **kwargs) -> RadialNetwork:
    """Build a network from ``(id, parent, r, x)`` tuples, parents first."""
    return RadialNetwork(tuple(BusRecord(*rec) for rec in records), **kwargs)
