"""Twin execution: kernel + emulated plant + store + observers.

:class:`TwinRunner` is used both for batch scenario runs and by the live
service; :func:`run_scenario` wraps it and produces the scenario report.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .analysis import (ANOMALY_LIMIT_MS, Diagnostics, FaultReport, classify_fault,
                       inspection_episodes)
from .emulator import PlantEmulator
from .kernel import ONE, AsyncScheduler, ClockDomain, TickResult, Trace, TraceRecord
from .ltl import Observer
from .scenario import Scenario
from .store import DataStore
from .tdf import Twin, TwinDescription, build_twin

__all__ = ["TwinRunner", "ObserverHandle", "ScenarioResult", "run_scenario", "execute_scenario"]

log = logging.getLogger(__name__)


@dataclass
class ObserverHandle:
    name: str
    spec: str
    domain: str
    observer: Observer
    verdict_time: float | None = None

    def to_dict(self) -> dict:
        v = self.observer.verdict
        return {"name": self.name, "spec": self.spec, "domain": self.domain,
                "verdict": v.kind, "tick": v.tick, "timeS": self.verdict_time}


class TwinRunner:
    """Steps a twin against the emulated plant.

    Listeners registered with :meth:`subscribe` receive every
    ``(domain, result)`` pair; verdict listeners receive observer handles
    when a verdict is reached.
    """

    def __init__(self, td: TwinDescription, scenario: Scenario, store: DataStore | None = None,
                 trace: Trace | None = None, pacing: bool = False):
        self.description = td
        self.scenario = scenario
        self.twin: Twin = build_twin(td)
        self.store = store if store is not None else DataStore()
        self.trace = trace
        self.emulator = PlantEmulator(self.twin, scenario, self.store)
        self.observers: dict[str, ObserverHandle] = {}
        self._obs_by_domain: dict[str, list[tuple[ObserverHandle, list]]] = {}
        self._listeners: list[Callable[[ClockDomain, TickResult], None]] = []
        self._verdict_listeners: list[Callable[[ObserverHandle], None]] = []
        self._lock = threading.Lock()
        self.latest: dict[str, tuple[int, float, dict[str, tuple[int, float | None]]]] = {}
        self._mapping_rows: dict[str, list[tuple[str, list]]] = {}
        for m in td.mappings:
            dom = None
            sigs = []
            for ep in m.signals:
                dom, name = self.twin.signal_name(ep)
                sigs.append(dom.signals[name])
            self.store.declare(m.label, m.signals)
            self._mapping_rows.setdefault(dom.name, []).append((m.label, sigs))
        b = scenario.bindings
        self._episode_domain = None
        self._episode_sigs: tuple[str, str] | None = None
        try:
            d1, s1 = self.twin.signal_name(b["inspectionStart"])
            d2, s2 = self.twin.signal_name(b["inspectionEnd"])
            if d1 is d2:
                self._episode_domain = d1.name
                self._episode_sigs = (s1, s2)
        except (KeyError, ValueError):
            pass
        self.episode_records: list[TraceRecord] = []
        self.scheduler = AsyncScheduler(self.twin.domains.values(), self.twin.channels,
                                        env=self.emulator.environment, trace=trace,
                                        on_step=self._on_step, pacing=pacing)
        for o in scenario.observers:
            self.add_observer(o.spec, o.name)

    # ---------------------------------------------------------- observers
    def add_observer(self, spec: str, name: str | None = None) -> ObserverHandle:
        obs = Observer(spec, name or spec)
        resolved = []
        domains = set()
        for atom in obs.atoms:
            dom, sig = self.twin.signal_name(atom)
            domains.add(dom.name)
            resolved.append((atom, dom.signals[sig]))
        if len(domains) > 1:
            raise ValueError(f"observer {name!r}: atoms span clock domains {sorted(domains)}")
        domain = domains.pop() if domains else next(iter(self.twin.domains))
        with self._lock:
            key = name or f"obs{len(self.observers)}"
            if key in self.observers:
                raise ValueError(f"observer {key!r} already exists")
            h = ObserverHandle(key, spec, domain, obs)
            self.observers[key] = h
            self._obs_by_domain.setdefault(domain, []).append((h, resolved))
        return h

    def subscribe(self, fn: Callable[[ClockDomain, TickResult], None]) -> None:
        self._listeners.append(fn)

    def on_verdict(self, fn: Callable[[ObserverHandle], None]) -> None:
        self._verdict_listeners.append(fn)

    def override(self, endpoint: str, value: float | None, present: bool = True) -> None:
        dom, sig = self.twin.signal_name(endpoint)
        dom.request_override(sig, value, ONE if present else 0)

    # ---------------------------------------------------------- stepping
    def _on_step(self, domain: ClockDomain, result: TickResult) -> None:
        self.emulator.observe(domain, result)
        tick = result.tick
        for label, sigs in self._mapping_rows.get(domain.name, ()):
            row = [s.value if s.status is ONE and s.value is not None
                   else float(s.status is ONE) for s in sigs]
            self.store.append(label, tick.n, tick.r, row)
        if domain.name == self._episode_domain:
            a, b = self._episode_sigs
            sa, sb = domain.signals[a], domain.signals[b]
            if sa.status is ONE or sb.status is ONE:
                self.episode_records.append(TraceRecord(
                    domain.name, tick.n, tick.r, result.micro_steps, (a, b),
                    (int(sa.status), int(sb.status)), (sa.value, sb.value)))
        for h, resolved in self._obs_by_domain.get(domain.name, ()):
            if h.observer.verdict.final:
                continue
            valuation = {atom: s.status is ONE for atom, s in resolved}
            if h.observer.step(valuation, tick.n) and h.observer.verdict.final:
                h.verdict_time = tick.r
                for fn in self._verdict_listeners:
                    fn(h)
        if self._listeners:
            self.latest[domain.name] = (tick.n, tick.r, {
                n: (int(s.status), s.value) for n, s in domain.signals.items()})
            for fn in self._listeners:
                fn(domain, result)

    def run_until(self, horizon: float) -> None:
        self.scheduler.run_until(horizon)

    def step_once(self) -> TickResult:
        """Execute the single earliest pending tick."""
        d = min(self.twin.domains.values(), key=lambda d: (d.tick.r, d.name))
        return self.scheduler.step_domain(d)

    @property
    def time(self) -> float:
        return min(d.tick.r for d in self.twin.domains.values())

    # ---------------------------------------------------------- analysis
    def episodes(self) -> list[tuple[int, int, float]]:
        if self._episode_sigs is None:
            return []
        a, b = self._episode_sigs
        return inspection_episodes(self.episode_records, a, b)

    def diagnose(self, failure_node: str, detection_tick: int | None) -> FaultReport:
        td = self.description
        power, torque = {}, {}
        labels = set(self.store.labels())
        for name in td.model_names:
            kind = td.model(name).type
            if kind == "conveyor" and f"plant.{name}.power" in labels:
                power[name] = self.store.series(f"plant.{name}.power", "power")
            elif kind == "robot-ode" and f"plant.{name}.torque" in labels:
                pairs = []
                for j in (1, 2):
                    twin = self.mapped_series(f"{name}.tau{j}")
                    if twin is not None:
                        pairs.append((twin, self.store.series(f"plant.{name}.torque", f"tau{j}")))
                if pairs:
                    torque[name] = pairs
        d = Diagnostics(td, failure_node, detection_tick, power, torque)
        return classify_fault(d, log=log.info)

    def mapped_series(self, endpoint: str):
        for m in self.description.mappings:
            if endpoint in m.signals:
                return self.store.series(m.label, endpoint)
        return None


@dataclass
class ScenarioResult:
    report: dict
    runner: TwinRunner
    fault_report: FaultReport | None

    @property
    def store(self) -> DataStore:
        return self.runner.store


def execute_scenario(td: TwinDescription, scenario: Scenario, out_dir: str | Path | None = None,
                     keep_trace: bool = False, pacing: bool = False) -> ScenarioResult:
    """Run a scenario to completion and analyse it.

    With ``out_dir`` the full execution trace is streamed to ``trace.txt``.
    """
    trace_path = None
    stream = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace_path = out / "trace.txt"
        stream = open(trace_path, "w")
    trace = Trace(keep=keep_trace, stream=stream) if (keep_trace or stream) else None
    try:
        runner = TwinRunner(td, scenario, trace=trace, pacing=pacing)
        runner.run_until(scenario.duration)
    finally:
        if stream is not None:
            stream.close()
    episodes = runner.episodes()
    times = [ms for _, _, ms in episodes]
    anomalies = [i for i, ms in enumerate(times) if ms > ANOMALY_LIMIT_MS]
    fault_report = None
    if anomalies:
        failure = scenario.bindings["inspectionEnd"].split(".", 1)[0]
        fault_report = runner.diagnose(failure, episodes[anomalies[0]][1])
    report: dict[str, Any] = {
        "scenario": scenario.name,
        "twin": td.name,
        "seed": scenario.seed,
        "durationS": scenario.duration,
        "ticks": dict(runner.scheduler.steps),
        "arrivals": runner.emulator.arrivals,
        "inspection": {
            "episodes": len(times),
            "timesMs": times,
            "meanMs": sum(times) / len(times) if times else None,
            "limitMs": ANOMALY_LIMIT_MS,
            "anomalies": anomalies,
        },
        "observers": {n: h.to_dict() for n, h in runner.observers.items()},
        "trace": str(trace_path) if trace_path is not None else None,
    }
    if fault_report is not None:
        report["faultReport"] = fault_report.to_dict()
    return ScenarioResult(report, runner, fault_report)


def run_scenario(td: TwinDescription, scenario: Scenario,
                 out_dir: str | Path | None = None) -> dict:
    """Run a scenario and return its JSON-ready report."""
    return execute_scenario(td, scenario, out_dir).report
