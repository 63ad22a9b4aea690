"""Emulated physical plant feeding the twin.

The plant mirrors the twin's nominal models plus the scenario's fault.
It supplies environment inputs (pallet arrivals, robot measurements,
inspection completions) and records plant-side data in the store.
"""
from __future__ import annotations

import heapq

import numpy as np

from . import physics
from .kernel import ClockDomain, Tick, TickResult
from .scenario import Scenario
from .store import DataStore
from .tdf import Twin, conveyor_params

__all__ = ["PlantEmulator", "POWER_SAMPLE_RATE"]

POWER_SAMPLE_RATE = 1000.0


class PlantEmulator:
    """Per-domain environment provider and step observer.

    Random streams are independent per purpose, each seeded from
    ``(scenario.seed, k)``, so runs with equal seeds are identical.
    """

    def __init__(self, twin: Twin, scenario: Scenario, store: DataStore):
        self.twin = twin
        self.scenario = scenario
        self.store = store
        seed = scenario.seed
        self._rng_arrival = np.random.default_rng([seed, 1])
        self._rng_inspect = np.random.default_rng([seed, 2])
        self._rng_noise = np.random.default_rng([seed, 3])
        self._rng_power = np.random.default_rng([seed, 4])
        self._env_parts: dict[str, list] = {}
        self._observe_parts: dict[str, list] = {}
        td = twin.description
        b = scenario.bindings
        fault = scenario.fault

        def endpoint(key: str) -> tuple[str, str] | None:
            ep = b.get(key)
            if not ep or "." not in ep:
                return None
            model, port = ep.split(".", 1)
            return (model, port) if model in td.model_names else None

        def model(key: str) -> str | None:
            m = b.get(key)
            return m if m and m in td.model_names else None

        # pallet arrivals
        self.waiting = 0
        self.arrivals = 0
        self._next_arrival = float(self._rng_arrival.exponential(scenario.arrival_mean))
        self._pallet = endpoint("pallet")
        self._infeed = endpoint("infeed")
        if self._pallet is not None:
            self._add_env(td.domain_of(self._pallet[0]), self._env_arrivals)

        # robot plant
        self._sequencer = model("sequencer")
        self._robot = model("robot")
        self._pending_ref: tuple[float, float] | None = None
        if self._robot is not None and td.model(self._robot).type == "robot-ode":
            spec = td.model(self._robot).params
            g = spec["gains"]
            init = tuple(spec["initial"])
            self.robot_params = physics.RobotParams(**spec["params"])
            self.robot_gains = physics.PdGains(g["kp1"], g["kp2"], g["kd1"], g["kd2"],
                                               init[0], init[1])
            self.robot_state = (init[0], init[1], 0.0, 0.0)
            self._robot_dt = spec["dt"]
            self._ramp = (physics.RampFault(fault.onset, fault.rate)
                          if fault.kind == "robot-ramp" and fault.target == self._robot else None)
            self._robot_period = twin.domain_of(self._robot).period
            store.declare(f"plant.{self._robot}.torque", ("tau1", "tau2"))
            store.declare(f"plant.{self._robot}.theta", ("theta1", "theta2"))
            self._add_env(td.domain_of(self._robot), self._env_robot)
        else:
            self._robot = None
        if self._sequencer is not None:
            self._add_observe(td.domain_of(self._sequencer), self._observe_sequencer)

        # conveyor power
        self._conveyor = model("conveyor")
        if self._conveyor is not None and td.model(self._conveyor).type == "conveyor":
            cp = conveyor_params(td.model(self._conveyor).params)
            self.power_healthy = cp
            if fault.kind == "conveyor-eccentricity" and fault.target == self._conveyor:
                self.power_faulty = physics.ConveyorParams(
                    cp.um, cp.im, cp.omega1, cp.phi, cp.omega_r,
                    physics.eccentricity_harmonics(cp.im, fault.orders, fault.fraction))
            else:
                self.power_faulty = None
            period = twin.domain_of(self._conveyor).period
            self._power_k = max(1, round(period * POWER_SAMPLE_RATE))
            store.declare(f"plant.{self._conveyor}.power", ("power",))
            self._add_env(td.domain_of(self._conveyor), self._env_power)
        else:
            self._conveyor = None

        # inspection completions
        self._capture = endpoint("capture")
        self._done = endpoint("inspectionEnd")
        self._done_ticks: list[int] = []
        self.inspections: list[tuple[int, float]] = []
        if self._capture is not None and self._done is not None:
            self._add_observe(td.domain_of(self._capture[0]), self._observe_capture)
            self._add_env(td.domain_of(self._done[0]), self._env_done)

    def _add_env(self, domain: str, fn) -> None:
        self._env_parts.setdefault(domain, []).append(fn)

    def _add_observe(self, domain: str, fn) -> None:
        self._observe_parts.setdefault(domain, []).append(fn)

    # ------------------------------------------------------------ hooks
    def environment(self, domain: ClockDomain, tick: Tick) -> dict[str, float | None]:
        env: dict[str, float | None] = {}
        for fn in self._env_parts.get(domain.name, ()):
            fn(domain, tick, env)
        return env

    def observe(self, domain: ClockDomain, result: TickResult) -> None:
        for fn in self._observe_parts.get(domain.name, ()):
            fn(domain, result)

    # ------------------------------------------------------------ parts
    def _env_arrivals(self, domain: ClockDomain, tick: Tick, env: dict) -> None:
        arrived = False
        while self._next_arrival <= tick.r + 1e-12:
            self.waiting += 1
            self.arrivals += 1
            arrived = True
            self._next_arrival += float(self._rng_arrival.exponential(self.scenario.arrival_mean))
        if self.waiting > 0:
            env[".".join(self._pallet)] = None
        if arrived and self._infeed is not None:
            env[".".join(self._infeed)] = None

    def _observe_sequencer(self, domain: ClockDomain, result: TickResult) -> None:
        out = result.outputs
        s = self._sequencer
        if f"{s}.move2" in out:
            self.waiting = max(0, self.waiting - 1)
        if f"{s}.move1" in out or f"{s}.move2" in out:
            r1 = out.get(f"{s}.ref1")
            r2 = out.get(f"{s}.ref2")
            if r1 is not None and r2 is not None:
                self._pending_ref = (r1, r2)

    def _env_robot(self, domain: ClockDomain, tick: Tick, env: dict) -> None:
        if self._pending_ref is not None:
            self.robot_gains = self.robot_gains.with_reference(*self._pending_ref)
            self._pending_ref = None
        s = self.robot_state
        noise = self.scenario.noise
        n = self._rng_noise.standard_normal(4)
        r = self._robot
        env[f"{r}.meas_theta1"] = s[0] + noise.theta * float(n[0])
        env[f"{r}.meas_theta2"] = s[1] + noise.theta * float(n[1])
        env[f"{r}.meas_omega1"] = s[2] + noise.omega * float(n[2])
        env[f"{r}.meas_omega2"] = s[3] + noise.omega * float(n[3])
        u1, u2 = physics.pd_torque(self.robot_gains, s)
        if self._ramp is not None:
            d1, d2 = self._ramp.drift(tick.r)
            u1, u2 = u1 + d1, u2 + d2
        self.store.append(f"plant.{r}.torque", tick.n, tick.r, (u1, u2))
        self.store.append(f"plant.{r}.theta", tick.n, tick.r, (s[0], s[1]))
        self.robot_state = physics.integrate_robot(
            self.robot_params, self.robot_gains, s, tick.r, self._robot_period,
            fault=self._ramp, dt=min(self._robot_dt, self._robot_period))

    def _env_power(self, domain: ClockDomain, tick: Tick, env: dict) -> None:
        k = self._power_k
        times = tick.r + np.arange(k) / POWER_SAMPLE_RATE
        p = physics.conveyor_power(self.power_healthy, times)
        if self.power_faulty is not None:
            fault = self.scenario.fault
            active = times >= fault.onset
            if active.any():
                p = np.where(active, physics.conveyor_power(self.power_faulty, times), p)
        p = p + self.scenario.noise.power * self._rng_power.standard_normal(k)
        self.store.append_block(f"plant.{self._conveyor}.power", [tick.n] * k, times, p)

    def _inspection_ms(self, t: float) -> float:
        law = self.scenario.inspection
        d = float(self._rng_inspect.triangular(law.min_ms, law.mode_ms, law.max_ms))
        fault = self.scenario.fault
        extra = self._rng_inspect.random()
        if fault.active(t) and extra < fault.delay.probability:
            d += float(self._rng_inspect.uniform(fault.delay.min_ms, fault.delay.max_ms))
        return d

    def _observe_capture(self, domain: ClockDomain, result: TickResult) -> None:
        if ".".join(self._capture) not in result.outputs:
            return
        # the capture command lands on the next tick; completion follows d ms
        # later (capture and completion live in the same domain)
        d = self._inspection_ms(result.tick.r)
        done_domain = self.twin.domain_of(self._done[0])
        ticks = max(1, round(d / 1000.0 / done_domain.period))
        start = result.tick.n + 1
        heapq.heappush(self._done_ticks, start + ticks)
        self.inspections.append((start, d))

    def _env_done(self, domain: ClockDomain, tick: Tick, env: dict) -> None:
        fired = False
        while self._done_ticks and self._done_ticks[0] <= tick.n:
            heapq.heappop(self._done_ticks)
            fired = True
        if fired:
            env[".".join(self._done)] = None

