"""CMDP environment: stations on a radial feeder, trading, grid settlement.

One step is one settlement interval.  The pipeline inside :meth:`ChargingEnv.step`
is: clamp and apply charger powers, net each station against its own solar,
match station surpluses and deficits through :func:`dispatch_trading`, settle
the remainder with the grid, solve the feeder voltages, then price everything
into a reward and a voltage-violation auxiliary cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import ev
from .network import (
    InjectionProfile,
    RadialNetwork,
    VoltageSolution,
    auxiliary_cost,
    solve_distflow,
    violation_metrics,
)
from .scenario import ScenarioData, ScenarioError

log = logging.getLogger(__name__)

BREAKDOWN_KEYS = ("degradation", "grid_purchase", "grid_sale", "trade_net", "completion")


@dataclass(frozen=True)
class StationConfig:
    bus_id: int
    chargers: int = 5
    pv_capacity: float = 13.0  # kWp


DEFAULT_STATIONS = tuple(StationConfig(b) for b in (8, 12, 22, 30))


@dataclass(frozen=True)
class EnvConfig:
    beta: float = 0.5
    sigma: float = 1.0  # $/kWh unmet at departure
    kappa_batt: float = 9000.0  # $ per full-lifetime equivalent
    reward_scale: float = 0.1
    dt: float = 1.0  # hours
    horizon: int = 24
    p_ch_max: float = 22.0
    p_dis_max: float = 22.0
    # observation normalisers
    energy_norm: float = 60.0
    price_norm: float = 0.5
    solar_noise: float = 0.0  # multiplicative std, drawn from the reset seed

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.dt <= 0 or self.horizon < 1:
            raise ValueError("dt must be positive and horizon >= 1")


@dataclass(frozen=True)
class CmdpState:
    e_rem: np.ndarray  # kWh per charger
    t_rem: np.ndarray  # steps per charger
    pv: np.ndarray  # kW per station
    price_sell: float
    price_buy: float
    voltages: np.ndarray  # p.u., previous step
    t: int
    vector: np.ndarray = field(repr=False, compare=False)


@dataclass
class StepOutcome:
    next_state: CmdpState
    reward: float
    aux_cost: float
    done: bool
    info: dict


@dataclass(frozen=True)
class TradeMatches:
    matched: float
    delivered: np.ndarray  # kWh each station sends to peers
    received: np.ndarray  # kWh each station takes from peers
    grid_sell: np.ndarray
    grid_buy: np.ndarray


def dispatch_trading(surpluses, deficits, fractions) -> TradeMatches:
    """Pro-rata clearing of offered surplus against requested deficit.

    Station n offers ``tau_n * surplus_n`` or requests ``tau_n * deficit_n``.
    The matched volume is the smaller side's total; the longer side is
    rationed in proportion to its offers.  Whatever is not matched settles
    with the grid.
    """
    surpluses = np.asarray(surpluses, dtype=float)
    deficits = np.asarray(deficits, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    if np.any(surpluses < 0) or np.any(deficits < 0):
        raise ValueError("surpluses and deficits must be non-negative")
    if np.any((fractions < 0) | (fractions > 1)):
        raise ValueError("trade fractions must lie in [0, 1]")
    offered = fractions * surpluses
    requested = fractions * deficits
    total_off = offered.sum()
    total_req = requested.sum()
    matched = min(total_off, total_req)
    delivered = offered * (matched / total_off) if total_off > 0 else np.zeros_like(offered)
    received = requested * (matched / total_req) if total_req > 0 else np.zeros_like(requested)
    return TradeMatches(
        matched=float(matched),
        delivered=delivered,
        received=received,
        grid_sell=surpluses - delivered,
        grid_buy=deficits - received,
    )


def build_injections(net: RadialNetwork, stations: Sequence[StationConfig], station_nets_kw,
                     base_p, base_q) -> InjectionProfile:
    """Per-bus withdrawals: base load plus each station's net grid draw (unity pf)."""
    p = np.array(base_p, dtype=float)
    q = np.array(base_q, dtype=float)
    draws = net.kw_to_pu(station_nets_kw)
    for st, draw in zip(stations, np.atleast_1d(draws)):
        p[st.bus_id] += draw
    return InjectionProfile(p, q)


class ChargingEnv:
    """Multi-station EV charging CMDP over a radial feeder.

    Actions are a flat vector: one normalised power per charger in [-1, 1]
    (station-major order), then one trade fraction per station in [0, 1].
    ``action_low`` / ``action_high`` give the box.
    """

    def __init__(self, net: RadialNetwork, stations: Sequence[StationConfig] = DEFAULT_STATIONS,
                 config: Optional[EnvConfig] = None):
        self.net = net
        self.stations = tuple(stations)
        self.config = config or EnvConfig()
        for st in self.stations:
            if not 0 < st.bus_id < net.n_bus:
                raise ScenarioError(f"station bus {st.bus_id} not a load bus of the network")
        self.limits = ev.PowerLimits(self.config.p_ch_max, self.config.p_dis_max)
        self.n_chargers = sum(st.chargers for st in self.stations)
        self.n_stations = len(self.stations)
        self.station_of = np.repeat(np.arange(self.n_stations), [st.chargers for st in self.stations])
        self.pv_capacity = np.array([st.pv_capacity for st in self.stations], dtype=float)
        self.base_p, self.base_q = net.base_load()
        self.act_dim = self.n_chargers + self.n_stations
        self.action_low = np.concatenate([-np.ones(self.n_chargers), np.zeros(self.n_stations)])
        self.action_high = np.ones(self.act_dim)
        self.obs_dim = 2 * self.n_chargers + self.n_stations + 2 + net.n_bus + 1
        self.scenario: Optional[ScenarioData] = None
        self.done = True

    # -- episode bookkeeping -------------------------------------------------

    def reset(self, scenario: ScenarioData, seed: int = 0) -> CmdpState:
        cfg = self.config
        if scenario.horizon < cfg.horizon:
            raise ScenarioError(
                f"scenario {scenario.name!r} has {scenario.horizon} steps, env needs {cfg.horizon}"
            )
        for s in scenario.sessions:
            if s.station is not None and not 0 <= s.station < self.n_stations:
                raise ScenarioError(f"session {s.id}: station {s.station} out of range")
        self.scenario = scenario
        self.rng = np.random.default_rng(seed)
        self.solar = scenario.solar[: cfg.horizon].copy()
        if cfg.solar_noise > 0:
            noise = self.rng.normal(1.0, cfg.solar_noise, cfg.horizon)
            self.solar = np.clip(self.solar * noise, 0.0, None)
        self.t = 0
        self.done = False
        self.chargers = [ev.ChargerState() for _ in range(self.n_chargers)]
        self._pending = self._assign_stations(scenario.sessions)
        self.ud_kwh = 0.0
        self._connect_arrivals(0)
        v = solve_distflow(self.net, self._injections(np.zeros(self.n_chargers))).v
        self.voltages = v
        return self._state()

    def _assign_stations(self, sessions) -> list:
        ordered = sorted(sessions, key=lambda s: (s.arrival, s.id))
        pending = []
        rr = 0
        for s in ordered:
            if s.station is None:
                pending.append((s, rr % self.n_stations))
                rr += 1
            else:
                pending.append((s, s.station))
        return pending

    def _connect_arrivals(self, t: int) -> None:
        keep = []
        for s, station in self._pending:
            if s.arrival != t:
                if s.arrival > t:
                    keep.append((s, station))
                continue
            if s.departure > self.config.horizon:
                s = replace(s, departure=self.config.horizon)
            slots = np.flatnonzero(self.station_of == station)
            free = [i for i in slots if not self.chargers[i].connected]
            if not free:
                log.warning("station %d full at step %d; dropping session %s", station, t, s.id)
                continue
            self.chargers[free[0]] = ev.ChargerState.plug_in(s)
        self._pending = keep

    def _injections(self, charger_kw) -> InjectionProfile:
        pv_kw = self.solar[self.t] * self.pv_capacity
        station_kw = np.bincount(self.station_of, weights=charger_kw, minlength=self.n_stations) - pv_kw
        scale = self.scenario.base_scale[self.t]
        return build_injections(self.net, self.stations, station_kw, scale * self.base_p, scale * self.base_q)

    def _state(self) -> CmdpState:
        cfg = self.config
        t = min(self.t, cfg.horizon - 1)
        e_rem = np.zeros(self.n_chargers)
        t_rem = np.zeros(self.n_chargers)
        for i, ch in enumerate(self.chargers):
            if ch.connected:
                e_rem[i] = max(0.0, ch.session.e_dem - ch.e)
                t_rem[i] = ch.session.departure - self.t
        pv = self.solar[t] * self.pv_capacity
        sc = self.scenario
        v = self.voltages
        vector = np.concatenate([
            e_rem / cfg.energy_norm,
            t_rem / cfg.horizon,
            pv / np.maximum(self.pv_capacity, 1e-9),
            [sc.sell[t] / cfg.price_norm, sc.buy[t] / cfg.price_norm],
            (v - self.net.v0) / (self.net.v_max - self.net.v0),
            [self.t / cfg.horizon],
        ])
        return CmdpState(e_rem, t_rem, pv, float(sc.sell[t]), float(sc.buy[t]), v.copy(), self.t, vector)

    # -- dynamics ------------------------------------------------------------

    def step(self, action) -> StepOutcome:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.act_dim,):
            raise ValueError(f"action has shape {action.shape}, expected ({self.act_dim},)")
        if not np.all(np.isfinite(action)):
            raise ValueError("action has non-finite components")
        cfg = self.config
        sc = self.scenario
        t, dt = self.t, cfg.dt
        action = np.clip(action, self.action_low, self.action_high)
        a_power, tau = action[: self.n_chargers], action[self.n_chargers:]

        # (1) chargers
        charger_kw = np.zeros(self.n_chargers)
        age = 0.0
        battery_in = np.zeros(self.n_chargers)
        for i, ch in enumerate(self.chargers):
            a = a_power[i]
            p_raw = a * (self.limits.p_ch_max if a > 0 else self.limits.p_dis_max)
            cmd = ev.clamp_feasible(ch, p_raw, self.limits, dt)
            new, age_i = ev.apply_power(ch, cmd, dt)
            battery_in[i] = new.e - ch.e
            self.chargers[i] = new
            charger_kw[i] = cmd.p
            age += age_i

        # (2) station energy positions, solar consumed locally first
        load_kwh = np.bincount(self.station_of, weights=np.maximum(charger_kw, 0.0) * dt,
                               minlength=self.n_stations)
        v2g_kwh = np.bincount(self.station_of, weights=np.maximum(-charger_kw, 0.0) * dt,
                              minlength=self.n_stations)
        pv_kwh = self.solar[t] * self.pv_capacity * dt
        net_kwh = load_kwh - v2g_kwh - pv_kwh
        surplus = np.maximum(-net_kwh, 0.0)
        deficit = np.maximum(net_kwh, 0.0)

        # (3)-(4) peer trading, then grid settlement
        trade = dispatch_trading(surplus, deficit, tau)
        breakdown = {
            "degradation": ev.degradation_cost(age, cfg.kappa_batt),
            "grid_purchase": float(trade.grid_buy.sum() * sc.buy[t]),
            "grid_sale": -float(trade.grid_sell.sum() * sc.sell[t]),
            "trade_net": float((trade.received.sum() - trade.delivered.sum()) * sc.trade[t]),
        }

        # (5) power flow on the physical net draw of each station
        inj = self._injections(charger_kw)
        sol = solve_distflow(self.net, inj)
        vvn, vva = violation_metrics(sol, self.net)
        aux = auxiliary_cost(vvn, vva, cfg.beta)

        # (8) departures settle their completion penalty at this step
        self.t = t + 1
        finishing = []
        for i, ch in enumerate(self.chargers):
            if ch.connected and (ch.session.departure <= self.t or self.t >= cfg.horizon):
                finishing.append(i)
        penalty = 0.0
        ud = 0.0
        for i in finishing:
            ch = self.chargers[i]
            ud += max(0.0, ch.session.e_dem - ch.e)
            penalty += ev.completion_penalty(ch.session, ch.e, cfg.sigma)
            self.chargers[i] = ev.ChargerState()
        breakdown["completion"] = penalty
        self.ud_kwh += ud
        self.done = self.t >= cfg.horizon
        if not self.done:
            self._connect_arrivals(self.t)

        # (6)-(7) reward and auxiliary cost
        stage_cost = sum(breakdown[k] for k in BREAKDOWN_KEYS)
        reward = -cfg.reward_scale * stage_cost
        self.voltages = sol.v

        info = {
            "t": t,
            "breakdown": breakdown,
            "energy_cost": stage_cost - penalty,
            "vvn": vvn,
            "vva": vva,
            "ud_kwh": ud,
            "voltages": sol.v,
            "injections_p": inj.p,
            "injections_q": inj.q,
            "charger_kw": charger_kw,
            "battery_in": battery_in,
            "station_net_kw": net_kwh / dt,
            "pv_kwh": pv_kwh,
            "load_kwh": load_kwh,
            "v2g_kwh": v2g_kwh,
            "grid_buy_kwh": trade.grid_buy,
            "grid_sell_kwh": trade.grid_sell,
            "trade_in_kwh": trade.received,
            "trade_out_kwh": trade.delivered,
        }
        return StepOutcome(self._state(), reward, aux, self.done, info)
