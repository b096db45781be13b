"""Charger-level EV model: power limits, battery dynamics, aging, completion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

# contract tolerance for apply_power, kWh
ENERGY_TOL = 1e-9


@dataclass(frozen=True)
class EvSession:
    id: str
    arrival: int
    departure: int
    e_init: float
    e_dem: float
    e_cap: float = 60.0
    e_min: float = 0.0
    e_max: Optional[float] = None
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    l_cyc: float = 3000.0
    station: Optional[int] = None

    def __post_init__(self):
        if self.e_max is None:
            object.__setattr__(self, "e_max", self.e_cap)
        if not self.arrival < self.departure:
            raise ValueError(f"session {self.id}: arrival {self.arrival} >= departure {self.departure}")
        if not 0 <= self.e_min <= self.e_init <= self.e_max <= self.e_cap:
            raise ValueError(
                f"session {self.id}: need 0 <= e_min <= e_init <= e_max <= e_cap, got "
                f"{self.e_min}, {self.e_init}, {self.e_max}, {self.e_cap}"
            )
        if self.e_dem > self.e_max:
            raise ValueError(f"session {self.id}: demand {self.e_dem} exceeds e_max {self.e_max}")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dis <= 1):
            raise ValueError(f"session {self.id}: efficiencies must lie in (0, 1]")


@dataclass(frozen=True)
class PowerLimits:
    p_ch_max: float = 22.0
    p_dis_max: float = 22.0


@dataclass(frozen=True)
class ChargerState:
    session: Optional[EvSession] = None
    e: float = 0.0

    @property
    def connected(self) -> bool:
        return self.session is not None

    @classmethod
    def plug_in(cls, session: EvSession) -> "ChargerState":
        return cls(session, session.e_init)

    @property
    def observed_energy(self) -> float:
        return self.e if self.connected else 0.0


@dataclass(frozen=True)
class PowerCommand:
    """Signed grid-side power in kW; positive charges, negative discharges."""

    p: float

    @property
    def p_ch(self) -> float:
        return max(self.p, 0.0)

    @property
    def p_dis(self) -> float:
        return max(-self.p, 0.0)


def battery_delta(p: float, session: EvSession, dt: float) -> float:
    """Battery-side energy change (kWh) for signed grid-side power ``p``."""
    if p >= 0:
        return p * session.eta_ch * dt
    return p * dt / session.eta_dis


def clamp_feasible(state: ChargerState, p_raw: float, limits: PowerLimits, dt: float) -> PowerCommand:
    """Project a raw power request onto the rating and energy-bound limits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = state.session
    if s is None or not np.isfinite(p_raw):
        return PowerCommand(0.0)
    p = min(max(float(p_raw), -limits.p_dis_max), limits.p_ch_max)
    if p > 0:
        headroom = max(s.e_max - state.e, 0.0)
        p = min(p, headroom / (s.eta_ch * dt))
    elif p < 0:
        available = max(state.e - s.e_min, 0.0)
        p = max(p, -available * s.eta_dis / dt)
    return PowerCommand(p)


def apply_power(state: ChargerState, cmd: PowerCommand, dt: float) -> tuple:
    """Advance the battery by one step; returns ``(new_state, age_cycles)``."""
    s = state.session
    if s is None:
        if cmd.p != 0.0:
            raise ValueError("nonzero power on a disconnected charger")
        return state, 0.0
    delta = battery_delta(cmd.p, s, dt)
    e_new = state.e + delta
    if e_new > s.e_max + ENERGY_TOL or e_new < s.e_min - ENERGY_TOL:
        raise ValueError(
            f"infeasible command {cmd.p} kW: energy {e_new} leaves [{s.e_min}, {s.e_max}]"
        )
    e_new = min(max(e_new, s.e_min), s.e_max)
    age = 0.5 * abs(delta) / (s.e_cap * s.l_cyc)
    return replace(state, e=e_new), age


def completion_penalty(session: EvSession, e_final: float, sigma: float) -> float:
    return sigma * max(0.0, session.e_dem - e_final)


def degradation_cost(age_cycles: float, kappa_batt: float) -> float:
    if age_cycles < 0:
        raise ValueError("age_cycles must be non-negative")
    return age_cycles * kappa_batt


_REQUIRED = ("id", "arrival_step", "departure_step", "e_init_kwh", "e_dem_kwh", "e_cap_kwh")
_OPTIONAL = {
    "e_min_kwh": "e_min",
    "e_max_kwh": "e_max",
    "eta_ch": "eta_ch",
    "eta_dis": "eta_dis",
    "l_cyc": "l_cyc",
}


def load_sessions(path) -> list:
    """Read a session table (``sessions.csv`` schema) into :class:`EvSession` objects."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sessions file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _REQUIRED if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        sessions = []
        for row in reader:
            kwargs = {dst: float(row[src]) for src, dst in _OPTIONAL.items() if row.get(src)}
            if row.get("station"):
                kwargs["station"] = int(row["station"])
            sessions.append(
                EvSession(
                    id=row["id"],
                    arrival=int(row["arrival_step"]),
                    departure=int(row["departure_step"]),
                    e_init=float(row["e_init_kwh"]),
                    e_dem=float(row["e_dem_kwh"]),
                    e_cap=float(row["e_cap_kwh"]),
                    **kwargs,
                )
            )
    return sessions


def write_sessions(path, sessions) -> None:
    cols = list(_REQUIRED) + ["station"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in sessions:
            w.writerow([s.id, s.arrival, s.departure, repr(s.e_init), repr(s.e_dem),
                        repr(s.e_cap), "" if s.station is None else s.station])
