"""Daily scenario data: prices, solar, base-load profile and EV sessions.

A scenario is one day stored as a directory of four delimited tables::

    prices.csv            step,buy,sell[,trade]
    solar.csv             step,kw_per_kwp
    baseload_profile.csv  step,multiplier
    sessions.csv          see :func:`evsafe.ev.load_sessions`

``generate_synthetic_day`` produces the bundled data set; real price,
irradiance and session feeds can be dropped in with the same layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ev import EvSession, load_sessions, write_sessions

BUNDLED_SCENARIOS = Path(__file__).parent / "data" / "scenarios"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioData:
    solar: np.ndarray  # kW per kWp, per step
    buy: np.ndarray  # $/kWh
    sell: np.ndarray  # $/kWh
    base_scale: np.ndarray  # base-load multiplier per step
    sessions: tuple = ()
    trade: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        arrays = {}
        for key in ("solar", "buy", "sell", "base_scale"):
            arrays[key] = np.asarray(getattr(self, key), dtype=float)
        horizon = len(arrays["buy"])
        trade = self.trade
        if trade is None:
            trade = 0.5 * (arrays["buy"] + arrays["sell"])
        arrays["trade"] = np.asarray(trade, dtype=float)
        for key, arr in arrays.items():
            if arr.shape != (horizon,):
                raise ScenarioError(f"{self.name or 'scenario'}: {key} has shape {arr.shape}, expected ({horizon},)")
            if not np.all(np.isfinite(arr)):
                raise ScenarioError(f"{self.name or 'scenario'}: {key} has non-finite values")
        for key in ("buy", "sell", "trade", "solar", "base_scale"):
            if np.any(arrays[key] < 0):
                raise ScenarioError(f"{self.name or 'scenario'}: {key} has negative entries")
        for key, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "sessions", tuple(self.sessions))

    @property
    def horizon(self) -> int:
        return len(self.buy)


def _read_table(path: Path, columns) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ScenarioError(f"{path}: missing columns {missing}")
        rows = list(reader)
    steps = [int(r["step"]) for r in rows]
    if steps != list(range(len(rows))):
        raise ScenarioError(f"{path}: steps must run 0..{len(rows) - 1} in order")
    out = {}
    for c in columns:
        if c == "step":
            continue
        try:
            out[c] = np.array([float(r[c]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}: column {c}: {exc}") from None
    return out


def load_scenario(directory) -> ScenarioData:
    directory = Path(directory)
    prices_path = directory / "prices.csv"
    prices = _read_table(prices_path, ("step", "buy", "sell"))
    trade = None
    with prices_path.open(newline="") as fh:
        if "trade" in (csv.DictReader(fh).fieldnames or []):
            trade = _read_table(prices_path, ("step", "trade"))["trade"]
    solar = _read_table(directory / "solar.csv", ("step", "kw_per_kwp"))["kw_per_kwp"]
    base_path = directory / "baseload_profile.csv"
    if base_path.is_file():
        base = _read_table(base_path, ("step", "multiplier"))["multiplier"]
    else:
        base = np.ones_like(prices["buy"])
    sessions_path = directory / "sessions.csv"
    sessions = load_sessions(sessions_path) if sessions_path.is_file() else []
    return ScenarioData(solar, prices["buy"], prices["sell"], base, sessions, trade, name=directory.name)


def load_scenarios(root) -> list:
    """Load every scenario sub-directory of ``root`` in sorted name order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise ScenarioError(f"{root}: no scenario sub-directories")
    return [load_scenario(d) for d in dirs]


def save_scenario(scenario: ScenarioData, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def write(name, header, cols):
        with (directory / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in range(scenario.horizon):
                w.writerow([t] + [repr(float(c[t])) for c in cols])

    write("prices.csv", ["step", "buy", "sell", "trade"], [scenario.buy, scenario.sell, scenario.trade])
    write("solar.csv", ["step", "kw_per_kwp"], [scenario.solar])
    write("baseload_profile.csv", ["step", "multiplier"], [scenario.base_scale])
    write_sessions(directory / "sessions.csv", scenario.sessions)


def split_scenarios(scenarios, train_fraction: float = 0.8) -> tuple:
    """Partition by index: the first ``train_fraction`` days train, the rest evaluate."""
    n_train = int(round(train_fraction * len(scenarios)))
    n_train = min(max(n_train, 1), len(scenarios))
    train, test = list(scenarios[:n_train]), list(scenarios[n_train:])
    return train, (test or train)


# --- synthetic data ---------------------------------------------------------

def tou_tariff(horizon: int = 24) -> np.ndarray:
    """Four-band time-of-use purchase tariff ($/kWh) with a midday solar-soak band."""
    hours = np.arange(horizon) * 24.0 / horizon
    price = np.full(horizon, 0.18)  # overnight
    price[(hours >= 7) & (hours < 10)] = 0.28
    price[(hours >= 10) & (hours < 15)] = 0.10
    price[(hours >= 15) & (hours < 21)] = 0.45
    return price


def generate_synthetic_day(rng: np.random.Generator, horizon: int = 24, n_stations: int = 4,
                           chargers_per_station: int = 5, name: str = "", plateau: float = 0.2,
                           level_spread: float = 0.01) -> ScenarioData:
    """One synthetic day shaped like workplace charging on a commercial feeder.

    Wholesale sell prices dip under midday solar and spike in the evening
    (occasionally above the tariff); irradiance is a clear-sky bell scaled by
    a cloudiness draw; base load sits on a business-hours plateau; sessions
    arrive in the morning and leave in the afternoon.
    """
    hours = np.arange(horizon) * 24.0 / horizon
    buy = tou_tariff(horizon)

    evening = np.exp(-0.5 * ((hours - 18.5) / 1.8) ** 2)
    midday = np.exp(-0.5 * ((hours - 12.5) / 2.5) ** 2)
    spike = rng.uniform(0.2, 0.5)
    sell = 0.08 + spike * evening - 0.06 * midday + rng.normal(0.0, 0.01, horizon)
    sell = np.clip(sell, 0.0, None)

    clear = np.clip(np.sin(np.pi * (hours - 6.0) / 13.0), 0.0, None) ** 1.5
    cloud = rng.uniform(0.55, 1.0)
    solar = np.clip(0.85 * cloud * clear * (1.0 + rng.normal(0.0, 0.05, horizon)), 0.0, None)
    solar[clear == 0.0] = 0.0

    level = rng.uniform(1.0 - level_spread, 1.0 + level_spread)
    business = 1.0 / (1.0 + np.exp(-(hours - 8.0) / 0.7)) - 1.0 / (1.0 + np.exp(-(hours - 18.0) / 0.7))
    base = level * (0.42 + plateau * business)

    sessions = []
    k = 0
    n_sessions = int(rng.integers(4 * n_stations, chargers_per_station * n_stations + 1))
    for _ in range(n_sessions):
        arrival = int(np.clip(round(rng.normal(8.5, 1.2) * horizon / 24), 1, horizon - 4))
        stay = int(np.clip(round(rng.normal(8.0, 1.5) * horizon / 24), 2, horizon - 1 - arrival))
        e_cap = float(rng.choice([40.0, 60.0, 75.0]))
        e_init = round(float(rng.uniform(0.10, 0.35) * e_cap), 3)
        need = float(rng.uniform(15.0, 45.0))
        e_dem = round(min(e_init + need, 0.95 * e_cap), 3)
        sessions.append(EvSession(f"ev{k:03d}", arrival, arrival + stay, e_init, e_dem, e_cap))
        k += 1
    sessions.sort(key=lambda s: (s.arrival, s.id))
    return ScenarioData(solar, buy, sell, base, sessions, name=name)


def generate_bundle(root, n_days: int = 25, seed: int = 2024, **kwargs) -> list:
    rng = np.random.default_rng(seed)
    days = []
    for d in range(n_days):
        day = generate_synthetic_day(rng, name=f"day_{d:02d}", **kwargs)
        save_scenario(day, Path(root) / day.name)
        days.append(day)
    return days
