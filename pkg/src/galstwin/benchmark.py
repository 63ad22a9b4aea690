"""Fidelity benchmark: tick cost as high-fidelity ODE robots are swapped
for table-driven FSM robots."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

from . import physics
from .kernel import ONE, ClockDomain
from .tdf import build_twin, parse_tdf

__all__ = ["precompute_table", "fidelity_tdf", "BenchmarkRow", "BenchmarkResult",
           "fidelity_benchmark", "configs_for", "CONFIGS"]

ROBOT = {"m1": 2.0, "m2": 1.5, "l1": 0.5, "l2": 0.4, "r1": 0.25, "r2": 0.2,
         "I1": 0.04, "I2": 0.02}
GAINS = {"kp1": 100.0, "kp2": 100.0, "kd1": 20.0, "kd2": 20.0}
ASSEMBLY_POSE = (1.2, 0.6)
CONVEYOR_POSE = (-0.8, 1.0)


def configs_for(replicas: int = 5) -> tuple[tuple[int, int], ...]:
    """All (h, l) splits of ``replicas`` cells, from all-ODE to all-FSM."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    return tuple((h, replicas - h) for h in range(replicas, -1, -1))


CONFIGS = configs_for(5)


def precompute_table(start: Sequence[float], target: Sequence[float], epsilon: float = 0.01,
                     sample: float = 0.01, horizon: float = 10.0) -> list[list[float]]:
    """Sample the ODE robot moving from ``start`` to ``target``.

    Rows run until both joints are within ``epsilon / 2``; the final row is
    the target itself so the FSM always reaches it.
    """
    p = physics.RobotParams(**ROBOT)
    g = physics.PdGains(**GAINS).with_reference(*target)
    s = (start[0], start[1], 0.0, 0.0)
    rows = [[0.0, s[0], s[1]]]
    t = 0.0
    while t < horizon:
        s = physics.integrate_robot(p, g, s, t, sample)
        t = round(t + sample, 9)
        rows.append([t, s[0], s[1]])
        if abs(s[0] - target[0]) < epsilon / 2 and abs(s[1] - target[1]) < epsilon / 2:
            break
    rows.append([round(t + sample, 9), float(target[0]), float(target[1])])
    return rows


def fidelity_tdf(h: int, l: int, period: float = 0.01) -> dict:
    """Single-domain twin with ``h`` ODE and ``l`` FSM robot cells."""
    tables = {"asm": {"rows": precompute_table(CONVEYOR_POSE, ASSEMBLY_POSE)},
              "conv": {"rows": precompute_table(ASSEMBLY_POSE, CONVEYOR_POSE)}}
    models, wires = [], []
    for i in range(h + l):
        if i < h:
            models.append({"name": f"robot{i}", "type": "robot-ode", "params": {
                "params": ROBOT, "gains": GAINS, "initial": list(CONVEYOR_POSE)}})
        else:
            models.append({"name": f"robot{i}", "type": "fsm", "params": {
                "tables": tables, "initial": list(CONVEYOR_POSE)}})
        models += [
            {"name": f"seq{i}", "type": "controller", "params": {
                "preset": "robot-sequencer", "assemblyPose": list(ASSEMBLY_POSE),
                "conveyorPose": list(CONVEYOR_POSE)}},
            {"name": f"cb{i}", "type": "conveyor", "params": {
                "sensors": {"incoming": 0.5, "ready": 1.0}}},
            {"name": f"camera{i}", "type": "petri", "params": {"preset": "camera-station"}},
            {"name": f"trigger{i}", "type": "controller", "params": {"preset": "camera-trigger"}},
        ]
        links = [("seq", "move1", "robot", "move1"), ("seq", "move2", "robot", "move2"),
                 ("seq", "ref1", "robot", "ref1"), ("seq", "ref2", "robot", "ref2"),
                 ("robot", "reached1", "seq", "reached1"),
                 ("robot", "reached2", "seq", "reached2"),
                 ("seq", "drop", "cb", "load"), ("cb", "incoming", "camera", "incoming"),
                 ("cb", "ready", "camera", "ready"),
                 ("camera", "processing", "trigger", "processing"),
                 ("trigger", "capture", "camera", "capture")]
        wires += [{"from": f"{a}{i}.{pa}", "to": f"{b}{i}.{pb}"} for a, pa, b, pb in links]
    return {"name": f"fidelity-{h}-{l}",
            "clockDomains": [{"name": "line", "period": period, "models": models}],
            "wires": wires, "channels": [], "dataMappings": []}


class _Driver:
    """Keeps every cell busy: pallets always waiting, fixed inspection time."""

    def __init__(self, domain: ClockDomain, cells: int, inspection_ticks: int = 120):
        self.domain = domain
        self.cells = cells
        self.inspection_ticks = inspection_ticks
        self.pending: list[list[int]] = [[] for _ in range(cells)]
        self.capture = [domain.signals[f"trigger{i}.capture"] for i in range(cells)]

    def env(self, n: int) -> dict:
        env: dict = {f"seq{i}.pallet": None for i in range(self.cells)}
        for i, q in enumerate(self.pending):
            if q and q[0] <= n:
                q.pop(0)
                env[f"camera{i}.done"] = None
        return env

    def observe(self, n: int) -> None:
        for i, s in enumerate(self.capture):
            if s.status is ONE:
                self.pending[i].append(n + 1 + self.inspection_ticks)


@dataclass(frozen=True)
class BenchmarkRow:
    h: int
    l: int
    mean_tick_us: float
    std_tick_us: float
    repetitions: tuple[float, ...]

    @property
    def config(self) -> str:
        return f"{self.h}-{self.l}"


@dataclass(frozen=True)
class BenchmarkResult:
    rows: tuple[BenchmarkRow, ...]
    ticks: int

    def row(self, h: int, l: int) -> BenchmarkRow:
        return next(r for r in self.rows if (r.h, r.l) == (h, l))

    @property
    def baseline(self) -> BenchmarkRow:
        """The all-high-fidelity configuration."""
        return max(self.rows, key=lambda r: (r.h, -r.l))

    def speedup_of(self, row: BenchmarkRow) -> float:
        return self.baseline.mean_tick_us / row.mean_tick_us

    @property
    def speedup(self) -> float:
        """All-high over all-low mean tick time."""
        low = max(self.rows, key=lambda r: (r.l, -r.h))
        return self.speedup_of(low)

    def monotone(self, band: float = 0.10) -> bool:
        """Tick time non-increasing in l, allowing ``band`` relative noise."""
        means = [r.mean_tick_us for r in sorted(self.rows, key=lambda r: r.l)]
        return all(b <= a * (1.0 + band) for a, b in zip(means, means[1:]))

    def to_csv(self) -> str:
        lines = ["h,l,mean_tick_us,speedup"]
        for r in self.rows:
            lines.append(f"{r.h},{r.l},{r.mean_tick_us:.3f},{self.speedup_of(r):.4f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"ticks": self.ticks, "speedup": self.speedup,
                "rows": [{"config": r.config, "h": r.h, "l": r.l,
                          "meanTickUs": r.mean_tick_us, "stdTickUs": r.std_tick_us,
                          "repetitionsUs": list(r.repetitions),
                          "speedup": self.speedup_of(r)}
                         for r in self.rows]}


def _time_config(h: int, l: int, ticks: int, warmup: int) -> float:
    twin = build_twin(parse_tdf(fidelity_tdf(h, l)))
    domain = twin.domains["line"]
    drv = _Driver(domain, h + l)
    clock = time.perf_counter
    total = 0.0
    for k in range(warmup + ticks):
        n = domain.tick.n
        env = drv.env(n)
        t0 = clock()
        domain.execute_tick(env)
        dt = clock() - t0
        drv.observe(n)
        domain.advance()
        if k >= warmup:
            total += dt
    return total / ticks * 1e6


def fidelity_benchmark(replicas: int = 5, ticks: int = 10_000, repetitions: int = 3,
                       warmup: int = 200,
                       configs: Sequence[tuple[int, int]] | None = None) -> BenchmarkResult:
    """Mean wall-clock time per macro step for each (h, l) configuration.

    Repetitions are interleaved across configurations so slow drifts in
    machine load affect every configuration alike.
    """
    if ticks < 1 or repetitions < 1:
        raise ValueError("ticks and repetitions must be >= 1")
    configs = configs_for(replicas) if configs is None else tuple(configs)
    for h, l in configs:
        if h < 0 or l < 0 or h + l != replicas:
            raise ValueError(f"configuration {h}-{l} does not split {replicas} replicas")
    samples: dict[tuple[int, int], list[float]] = {c: [] for c in configs}
    for _ in range(repetitions):
        for h, l in configs:
            samples[(h, l)].append(_time_config(h, l, ticks, warmup))
    rows = []
    for h, l in configs:
        s = samples[(h, l)]
        rows.append(BenchmarkRow(h, l, statistics.fmean(s),
                                 statistics.stdev(s) if len(s) > 1 else 0.0, tuple(s)))
    return BenchmarkResult(tuple(rows), ticks)

