"""GALS execution kernel.

Clock domains run their models in lock-step, resolving signal statuses
through micro-steps until no signal is unknown, then advance one tick
(macro-step).  Domains are composed asynchronously and exchange values
through bounded FIFO channels only.
"""
from __future__ import annotations

import enum
import heapq
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

__all__ = [
    "SignalStatus", "Signal", "Tick", "ModelBlock", "WireMode", "Wire",
    "FifoChannel", "ClockDomain", "MicroStepReport", "TickResult",
    "TraceRecord", "Trace", "AsyncScheduler", "run_async",
    "KernelError", "ConfigurationError", "CausalityError", "FifoOverflow",
]


class KernelError(Exception):
    """Base class for kernel failures."""


class ConfigurationError(KernelError):
    pass


class CausalityError(KernelError):
    """Signal resolution made no progress: a combinational cycle."""

    def __init__(self, signals, domain: str = "", tick: "Tick | None" = None):
        self.signals = frozenset(signals)
        self.domain = domain
        self.tick = tick
        where = f" in domain {domain!r}" if domain else ""
        if tick is not None:
            where += f" at tick {tick.n}"
        super().__init__(
            f"causality cycle{where}: {', '.join(sorted(self.signals))}")


class FifoOverflow(KernelError):
    def __init__(self, channel: "FifoChannel", domain: str = "",
                 tick: "Tick | None" = None):
        self.channel = channel
        self.domain = domain
        self.tick = tick
        at = f" at tick {tick.n}" if tick is not None else ""
        super().__init__(
            f"channel {channel.label} full (capacity {channel.capacity}){at}")


class SignalStatus(enum.IntEnum):
    ZERO = 0
    ONE = 1
    UNKNOWN = 2

    def __str__(self) -> str:
        return "U" if self is SignalStatus.UNKNOWN else str(int(self))


ZERO = SignalStatus.ZERO
ONE = SignalStatus.ONE
UNKNOWN = SignalStatus.UNKNOWN


@dataclass(slots=True)
class Signal:
    """A tick-scoped status plus value.

    With ``hold`` set the value survives ticks where the signal is absent
    (sample-and-hold); otherwise it is cleared whenever the status is not ONE.
    """

    name: str
    status: SignalStatus = ZERO
    value: float | None = None
    hold: bool = False

    @property
    def present(self) -> bool:
        return self.status is ONE

    def set(self, status: SignalStatus, value: float | None = None) -> None:
        self.status = status
        if status is ONE:
            self.value = value
        elif not self.hold:
            self.value = None


@dataclass(frozen=True, slots=True)
class Tick:
    n: int
    r: float


class ModelBlock:
    """A synchronous model executed by a clock domain.

    Subclasses set ``inputs``/``outputs`` and implement :meth:`react`.
    ``react`` must be pure: it receives the current state and returns
    ``(emits, next_state)`` where ``emits`` maps output ports to values
    (``None`` for pure events).  Ports absent from ``emits`` are ZERO.

    ``dependencies`` maps an output port to the input ports it needs
    resolved before it can be computed.  Outputs not listed depend on
    nothing and are computed even while inputs are still unknown.
    """

    name: str = ""
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    dependencies: Mapping[str, frozenset[str]] = {}
    hold_ports: frozenset[str] = frozenset()

    def initial_state(self) -> Any:
        return None

    def react(self, state: Any, tick: Tick,
              inputs: Mapping[str, Signal]) -> tuple[dict[str, float | None], Any]:
        raise NotImplementedError


class WireMode(str, enum.Enum):
    IMMEDIATE = "immediate"
    DELAYED = "delayed"


@dataclass(frozen=True)
class Wire:
    source: tuple[str, str]
    sink: tuple[str, str]
    mode: WireMode = WireMode.DELAYED


class FifoChannel:
    """Bounded point-to-point FIFO between two clock domains.

    One producer and one consumer thread may use it concurrently.
    """

    def __init__(self, source: tuple[str, str, str], sink: tuple[str, str, str],
                 capacity: int):
        if capacity < 1:
            raise ConfigurationError(f"channel capacity must be >= 1, got {capacity}")
        self.source = source
        self.sink = sink
        self.capacity = capacity
        self._queue: deque[tuple[float | None, int]] = deque()
        self._lock = threading.Lock()
        self.pushed = 0
        self.popped = 0

    @property
    def label(self) -> str:
        s, k = self.source, self.sink
        return f"{s[0]}:{s[1]}.{s[2]}->{k[0]}:{k[1]}.{k[2]}"

    def __len__(self) -> int:
        return len(self._queue)

    def full(self) -> bool:
        return len(self._queue) >= self.capacity

    def push(self, value: float | None, source_tick: int) -> None:
        with self._lock:
            if len(self._queue) >= self.capacity:
                raise FifoOverflow(self)
            self._queue.append((value, source_tick))
            self.pushed += 1

    def pop(self) -> tuple[float | None, int] | None:
        with self._lock:
            if not self._queue:
                return None
            self.popped += 1
            return self._queue.popleft()

    def snapshot(self) -> list[tuple[float | None, int]]:
        with self._lock:
            return list(self._queue)


@dataclass(frozen=True)
class MicroStepReport:
    zeta_before: int
    zeta_after: int
    index: int


@dataclass
class TickResult:
    tick: Tick
    micro_steps: int
    outputs: dict[str, float | None]


class ClockDomain:
    """A set of models executing in lock-step on one tick sequence.

    Signals are named ``model.port``.  An immediate wire makes the sink
    input an alias of the source output (one signal); a delayed wire gives
    the sink its own signal, loaded at BOT from a one-slot register.
    """

    def __init__(self, name: str, models: Iterable[ModelBlock], period: float,
                 wires: Iterable[Wire] = (), start: Tick = Tick(0, 0.0)):
        self.name = name
        models = list(models)
        if not models:
            raise ConfigurationError(f"clock domain {name!r} has no models")
        if not period > 0:
            raise ConfigurationError(f"clock domain {name!r}: period must be > 0")
        self.period = float(period)
        self.models: dict[str, ModelBlock] = {}
        # sorted by name so scheduling is independent of submission order
        for m in sorted(models, key=lambda m: m.name):
            if m.name in self.models:
                raise ConfigurationError(f"duplicate model {m.name!r} in {name!r}")
            self.models[m.name] = m
        self.wires = list(wires)
        self._r0 = start.r
        self._n0 = start.n
        self.tick = start
        self.micro_index = 0
        self.inbound: list[FifoChannel] = []
        self.outbound: list[FifoChannel] = []
        self.states: dict[str, Any] = {m: b.initial_state() for m, b in self.models.items()}
        self._pending_overrides: deque[tuple[str, SignalStatus, float | None]] = deque()
        self._override_lock = threading.Lock()
        self._build_signals()

    # ------------------------------------------------------------------ setup
    def _port(self, model: str, port: str, direction: str) -> str:
        block = self.models.get(model)
        if block is None:
            raise ConfigurationError(f"{self.name}: unknown model {model!r}")
        ports = block.outputs if direction == "out" else block.inputs
        if port not in ports:
            raise ConfigurationError(
                f"{self.name}: {model!r} has no {direction}put port {port!r}")
        return f"{model}.{port}"

    def _build_signals(self) -> None:
        alias: dict[str, str] = {}
        driven: set[str] = set()
        self._delayed: list[tuple[str, str]] = []  # (source signal, sink signal)
        for w in self.wires:
            src = self._port(*w.source, "out")
            dst = self._port(*w.sink, "in")
            if dst in driven:
                raise ConfigurationError(f"{self.name}: input {dst} has two drivers")
            driven.add(dst)
            if WireMode(w.mode) is WireMode.IMMEDIATE:
                alias[dst] = src
            else:
                self._delayed.append((src, dst))
        self._driven = driven
        self._alias = alias

        self.signals: dict[str, Signal] = {}
        self.port_signal: dict[tuple[str, str], str] = {}
        for mname, block in self.models.items():
            for p in block.outputs:
                sname = f"{mname}.{p}"
                self.signals[sname] = Signal(sname, hold=p in block.hold_ports)
                self.port_signal[(mname, p)] = sname
        for mname, block in self.models.items():
            for p in block.inputs:
                sname = f"{mname}.{p}"
                if sname in alias:
                    self.port_signal[(mname, p)] = alias[sname]
                else:
                    self.signals[sname] = Signal(sname, hold=p in block.hold_ports)
                    self.port_signal[(mname, p)] = sname
        self.signal_names: tuple[str, ...] = tuple(self.signals)
        self._output_names = [f"{m}.{p}" for m, b in self.models.items() for p in b.outputs]
        self._registers: dict[str, tuple[SignalStatus, float | None]] = {
            dst: (ZERO, None) for _, dst in self._delayed}
        self._channel_sinks: dict[str, FifoChannel] = {}
        self._env_inputs: list[str] = [
            f"{m}.{p}" for m, b in self.models.items() for p in b.inputs
            if f"{m}.{p}" not in driven]
        self._env_set = set(self._env_inputs)
        # per-model lookup tables for the hot path
        self._model_io: list[tuple[str, ModelBlock, list[tuple[str, Signal]],
                                   list[tuple[str, Signal, list[Signal]]]]] = []
        for mname, block in self.models.items():
            ins = [(p, self.signals[self.port_signal[(mname, p)]]) for p in block.inputs]
            outs = []
            for p in block.outputs:
                deps = block.dependencies.get(p, frozenset())
                dep_sigs = [self.signals[self.port_signal[(mname, d)]] for d in deps]
                outs.append((p, self.signals[f"{mname}.{p}"], dep_sigs))
            self._model_io.append((mname, block, ins, outs))

    def attach_inbound(self, channel: FifoChannel) -> None:
        dom, model, port = channel.sink
        if dom != self.name:
            raise ConfigurationError(f"channel {channel.label} does not sink into {self.name}")
        sname = self._port(model, port, "in")
        if sname in self._driven or sname in self._channel_sinks:
            raise ConfigurationError(f"{self.name}: input {sname} has two drivers")
        self._channel_sinks[sname] = channel
        self._env_inputs.remove(sname)
        self._env_set.discard(sname)
        self.inbound.append(channel)

    def attach_outbound(self, channel: FifoChannel) -> None:
        dom, model, port = channel.source
        if dom != self.name:
            raise ConfigurationError(f"channel {channel.label} does not source from {self.name}")
        self._port(model, port, "out")
        self.outbound.append(channel)

    @property
    def environment_inputs(self) -> tuple[str, ...]:
        return tuple(self._env_inputs)

    def is_output(self, model: str, port: str) -> bool:
        b = self.models.get(model)
        return b is not None and port in b.outputs

    def is_input(self, model: str, port: str) -> bool:
        b = self.models.get(model)
        return b is not None and port in b.inputs

    # --------------------------------------------------------------- runtime
    def zeta(self) -> int:
        return sum(1 for s in self.signals.values() if s.status is UNKNOWN)

    def request_override(self, signal: str, value: float | None,
                         status: SignalStatus = ONE) -> None:
        """Queue an input override applied at the next BOT (thread-safe)."""
        if signal not in self.signals or signal in self._alias or signal in self._output_names:
            raise ConfigurationError(f"{self.name}: cannot override {signal!r}")
        with self._override_lock:
            self._pending_overrides.append((signal, SignalStatus(status), value))

    def capture_inputs(self, env: Mapping[str, float | None] | None = None) -> None:
        env = env or {}
        for key in env:
            if key not in self._env_set:
                raise ConfigurationError(f"{self.name}: unknown environment input {key!r}")
        sigs = self.signals
        for name in self._env_inputs:
            if name in env:
                sigs[name].set(ONE, env[name])
            else:
                sigs[name].set(ZERO)
        for name, (st, val) in self._registers.items():
            sigs[name].set(st, val)
        for name, ch in self._channel_sinks.items():
            item = ch.pop()
            if item is None:
                sigs[name].set(ZERO)
            else:
                sigs[name].set(ONE, item[0])
        with self._override_lock:
            overrides = list(self._pending_overrides)
            self._pending_overrides.clear()
        for name, st, val in overrides:
            sigs[name].set(st, val)
        for name in self._output_names:
            sigs[name].status = UNKNOWN
        self.micro_index = 0
        self._final_state: dict[str, Any] = {}

    def micro_step(self) -> MicroStepReport:
        before = self.zeta()
        if before == 0:
            raise KernelError(f"{self.name}: micro-step requested with no unknown signals")
        pending: list[tuple[Signal, SignalStatus, float | None]] = []
        tick = self.tick
        for mname, block, ins, outs in self._model_io:
            enabled = [(p, sig) for p, sig, deps in outs
                       if sig.status is UNKNOWN and all(d.status is not UNKNOWN for d in deps)]
            if not enabled:
                continue
            view = {p: s for p, s in ins}
            emits, nxt = block.react(self.states[mname], tick, view)
            if all(s.status is not UNKNOWN for _, s in ins):
                self._final_state[mname] = nxt
            for p, sig in enabled:
                if p in emits:
                    pending.append((sig, ONE, emits[p]))
                else:
                    pending.append((sig, ZERO, None))
        for sig, st, val in pending:
            sig.set(st, val)
        after = self.zeta()
        if after >= before:
            raise CausalityError(self._cycle_signals(), self.name, tick)
        self.micro_index += 1
        return MicroStepReport(before, after, self.micro_index)

    def _cycle_signals(self) -> set[str]:
        """Unknown signals lying on a dependency cycle (SCCs with a loop)."""
        graph: dict[str, set[str]] = {}
        for mname, block, ins, outs in self._model_io:
            for p, sig, deps in outs:
                if sig.status is not UNKNOWN:
                    continue
                graph.setdefault(sig.name, set())
                for d in deps:
                    if d.status is UNKNOWN:
                        graph.setdefault(d.name, set()).add(sig.name)
        index: dict[str, int] = {}
        low: dict[str, int] = {}
        stack: list[str] = []
        on: set[str] = set()
        result: set[str] = set()
        counter = [0]

        def strong(v: str) -> None:
            index[v] = low[v] = counter[0]
            counter[0] += 1
            stack.append(v)
            on.add(v)
            for w in graph.get(v, ()):
                if w not in index:
                    strong(w)
                    low[v] = min(low[v], low[w])
                elif w in on:
                    low[v] = min(low[v], index[w])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1 or v in graph.get(v, ()):
                    result.update(comp)

        for v in sorted(graph):
            if v not in index:
                strong(v)
        return result or {s.name for s in self.signals.values() if s.status is UNKNOWN}

    def _commit(self) -> None:
        for mname, block, ins, outs in self._model_io:
            if mname in self._final_state:
                self.states[mname] = self._final_state[mname]
            else:
                view = {p: s for p, s in ins}
                _, nxt = block.react(self.states[mname], self.tick, view)
                self.states[mname] = nxt

    def execute_tick(self, env: Mapping[str, float | None] | None = None) -> TickResult:
        self.capture_inputs(env)
        try:
            while self.zeta() > 0:
                self.micro_step()
        except CausalityError as exc:
            exc.domain, exc.tick = self.name, self.tick
            raise
        self._commit()
        sigs = self.signals
        for ch in self.outbound:
            _, model, port = ch.source
            s = sigs[f"{model}.{port}"]
            if s.status is ONE:
                if ch.full():
                    raise FifoOverflow(ch, self.name, self.tick)
                ch.push(s.value, self.tick.n)
        for src, dst in self._delayed:
            s = sigs[src]
            self._registers[dst] = (s.status, s.value)
        outputs = {n: sigs[n].value for n in self._output_names if sigs[n].status is ONE}
        return TickResult(self.tick, self.micro_index, outputs)

    def advance(self) -> None:
        n = self.tick.n + 1
        self.tick = Tick(n, self._r0 + (n - self._n0) * self.period)

    def step(self, env: Mapping[str, float | None] | None = None) -> TickResult:
        """Execute one macro step and advance the tick."""
        result = self.execute_tick(env)
        self.advance()
        return result

    def snapshot(self) -> tuple[tuple[SignalStatus, float | None], ...]:
        return tuple((s.status, s.value) for s in self.signals.values())


# ---------------------------------------------------------------- tracing
def _fmt_value(v: float | None) -> str:
    if v is None:
        return ""
    return repr(float(v))


@dataclass(frozen=True)
class TraceRecord:
    domain: str
    n: int
    r: float
    micro_steps: int
    names: tuple[str, ...]
    statuses: tuple[int, ...]
    values: tuple[float | None, ...]

    def status_of(self, name: str) -> int:
        return self.statuses[self.names.index(name)]

    def line(self) -> str:
        parts = [self.domain, str(self.n), f"{self.r:.6f}"]
        for name, st, v in zip(self.names, self.statuses, self.values):
            if st == ONE and v is not None:
                parts.append(f"{name}={st}:{_fmt_value(v)}")
            else:
                parts.append(f"{name}={st}")
        return " ".join(parts)


class Trace:
    """Execution trace sink.

    Records are kept in memory (``keep``) and/or written as lines to
    ``stream``.  ``select`` restricts the recorded signals.  Appends are
    serialised, so several domains may report concurrently.
    """

    def __init__(self, select: Iterable[str] | None = None, keep: bool = True,
                 stream=None):
        self.select = None if select is None else frozenset(select)
        self.keep = keep
        self.stream = stream
        self.records: list[TraceRecord] = []
        self._lock = threading.Lock()
        self._names_cache: dict[str, tuple[tuple[str, ...], tuple[int, ...]]] = {}

    def _names_for(self, domain: ClockDomain) -> tuple[tuple[str, ...], tuple[int, ...]]:
        cached = self._names_cache.get(domain.name)
        if cached is None:
            idx = [i for i, n in enumerate(domain.signal_names)
                   if self.select is None or n in self.select]
            cached = (tuple(domain.signal_names[i] for i in idx), tuple(idx))
            self._names_cache[domain.name] = cached
        return cached

    def record(self, domain: ClockDomain, result: TickResult) -> TraceRecord:
        names, idx = self._names_for(domain)
        sigs = list(domain.signals.values())
        rec = TraceRecord(domain.name, result.tick.n, result.tick.r, result.micro_steps,
                          names, tuple(int(sigs[i].status) for i in idx),
                          tuple(sigs[i].value for i in idx))
        with self._lock:
            if self.keep:
                self.records.append(rec)
            if self.stream is not None:
                self.stream.write(rec.line() + "\n")
        return rec

    def lines(self) -> list[str]:
        return [r.line() for r in self.records]

    def for_domain(self, name: str) -> list[TraceRecord]:
        return [r for r in self.records if r.domain == name]

    def to_csv(self, domain: str, signals: Sequence[str]) -> str:
        rows = [",".join(["domain", "tick_n", "time_s", *signals])]
        for rec in self.for_domain(domain):
            cells = []
            for s in signals:
                i = rec.names.index(s)
                st, v = rec.statuses[i], rec.values[i]
                cells.append(_fmt_value(v) if st == ONE and v is not None else str(st))
            rows.append(",".join([rec.domain, str(rec.n), f"{rec.r:.6f}", *cells]))
        return "\n".join(rows) + "\n"


# ------------------------------------------------------- async composition
EnvProvider = Callable[[ClockDomain, Tick], Mapping[str, float | None] | None]
StepHook = Callable[[ClockDomain, TickResult], None]


class AsyncScheduler:
    """Asynchronous composition of clock domains.

    Domains are stepped round-robin in order of (next tick time, name),
    which is starvation-free and reproducible.  With ``pacing`` the
    scheduler sleeps so that tick times track the wall clock.
    """

    def __init__(self, domains: Iterable[ClockDomain],
                 channels: Iterable[FifoChannel] = (),
                 env: EnvProvider | None = None,
                 trace: Trace | None = None,
                 on_step: StepHook | None = None,
                 pacing: bool = False):
        self.domains = {d.name: d for d in domains}
        seen: set[str] = set()
        for d in self.domains.values():
            overlap = seen & set(d.models)
            if overlap:
                raise ConfigurationError(f"model(s) {sorted(overlap)} in several clock domains")
            seen |= set(d.models)
        self.channels = list(channels)
        for ch in self.channels:
            src, dst = ch.source[0], ch.sink[0]
            if src not in self.domains or dst not in self.domains:
                raise ConfigurationError(f"channel {ch.label} references unknown domain")
            if ch not in self.domains[src].outbound:
                self.domains[src].attach_outbound(ch)
            if ch not in self.domains[dst].inbound:
                self.domains[dst].attach_inbound(ch)
        self.env = env
        self.trace = trace
        self.on_step = on_step
        self.pacing = pacing
        self.steps: dict[str, int] = {n: 0 for n in self.domains}
        self._wall0: float | None = None

    def step_domain(self, d: ClockDomain) -> TickResult:
        if self.pacing:
            if self._wall0 is None:
                self._wall0 = time.monotonic() - d.tick.r
            delay = self._wall0 + d.tick.r - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        env = self.env(d, d.tick) if self.env is not None else None
        result = d.execute_tick(env)
        if self.trace is not None:
            self.trace.record(d, result)
        if self.on_step is not None:
            self.on_step(d, result)
        d.advance()
        self.steps[d.name] += 1
        return result

    def run_until(self, horizon: float) -> None:
        """Run every domain for all ticks with time r < horizon (up to rounding)."""
        limits = {name: _ticks_before(d, horizon) for name, d in self.domains.items()}
        heap = [(d.tick.r, name) for name, d in self.domains.items()
                if d.tick.n < limits[name]]
        heapq.heapify(heap)
        while heap:
            _, name = heapq.heappop(heap)
            d = self.domains[name]
            self.step_domain(d)
            if d.tick.n < limits[name]:
                heapq.heappush(heap, (d.tick.r, name))


def _ticks_before(d: ClockDomain, horizon: float) -> int:
    """Absolute tick index bound: ticks n with r_n < horizon."""
    count = math.floor((horizon - d._r0) / d.period + 1e-9)
    return d._n0 + max(count, 0)


def run_async(domains: Iterable[ClockDomain], channels: Iterable[FifoChannel] = (),
              horizon: float = 0.0, env: EnvProvider | None = None,
              trace: Trace | None = None, on_step: StepHook | None = None,
              pacing: bool = False) -> Trace:
    """Run domains asynchronously for ``horizon`` seconds; return the trace.

    Each domain executes floor(horizon / period) macro steps.
    """
    trace = trace if trace is not None else Trace()
    sched = AsyncScheduler(domains, channels, env=env, trace=trace,
                           on_step=on_step, pacing=pacing)
    sched.run_until(horizon)
    return trace
