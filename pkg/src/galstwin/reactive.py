"""Discrete model families: Petri nets, the table-driven robot FSM and
scripted Mealy controllers, each with a kernel ``ModelBlock`` adapter."""
from __future__ import annotations

import bisect
import csv
import logging
import operator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .kernel import ModelBlock, ONE, Signal, Tick

log = logging.getLogger(__name__)

Marking = dict[str, int]


class PetriNetError(ValueError):
    pass


class ConflictError(PetriNetError):
    def __init__(self, place: str):
        self.place = place
        super().__init__(f"enabled transitions compete for tokens in place {place!r}")


class ContractViolation(RuntimeError):
    """A scripted controller found no rule for its state and inputs."""


# ------------------------------------------------------------------ Petri nets
_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt,
        "<=": operator.le, "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True)
class Transition:
    name: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    guard: str | None = None
    trigger: str = "level"  # or "rising"

    def __post_init__(self):
        if self.trigger not in ("level", "rising"):
            raise PetriNetError(f"{self.name}: unknown trigger {self.trigger!r}")


@dataclass(frozen=True)
class OutputExpr:
    """``signal`` is ONE iff ``tokens(place) <op> threshold``."""

    signal: str
    place: str
    op: str = ">"
    threshold: int = 0

    def holds(self, marking: Mapping[str, int]) -> bool:
        return _OPS[self.op](marking.get(self.place, 0), self.threshold)


@dataclass(frozen=True)
class PetriNet:
    places: tuple[tuple[str, int], ...]
    transitions: tuple[Transition, ...]
    outputs: tuple[OutputExpr, ...] = ()

    def __post_init__(self):
        names = [p for p, _ in self.places]
        if len(set(names)) != len(names):
            raise PetriNetError("duplicate place names")
        for p, k in self.places:
            if k < 0 or int(k) != k:
                raise PetriNetError(f"place {p!r}: token count must be a non-negative integer")
        known = set(names)
        tnames = [t.name for t in self.transitions]
        if len(set(tnames)) != len(tnames):
            raise PetriNetError("duplicate transition names")
        for t in self.transitions:
            for p in (*t.inputs, *t.outputs):
                if p not in known:
                    raise PetriNetError(f"transition {t.name!r} references unknown place {p!r}")
        for o in self.outputs:
            if o.place not in known:
                raise PetriNetError(f"output {o.signal!r} references unknown place {o.place!r}")
            if o.op not in _OPS:
                raise PetriNetError(f"output {o.signal!r}: unknown operator {o.op!r}")

    @property
    def place_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.places)

    @property
    def guards(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for t in self.transitions:
            if t.guard is not None:
                seen.setdefault(t.guard)
        return tuple(seen)

    def initial_marking(self) -> Marking:
        return {p: k for p, k in self.places}

    def to_dict(self) -> dict:
        return {
            "places": {p: k for p, k in self.places},
            "transitions": [
                {"name": t.name, "inputs": list(t.inputs), "outputs": list(t.outputs),
                 **({"guard": t.guard, "trigger": t.trigger} if t.guard else {})}
                for t in self.transitions],
            "outputs": [{"signal": o.signal, "place": o.place, "op": o.op,
                         "threshold": o.threshold} for o in self.outputs],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PetriNet":
        places = d["places"]
        if isinstance(places, Mapping):
            places = tuple((str(p), int(k)) for p, k in places.items())
        else:
            places = tuple((str(p), int(k)) for p, k in places)
        transitions = tuple(
            Transition(t["name"], tuple(t.get("inputs", ())), tuple(t.get("outputs", ())),
                       t.get("guard"), t.get("trigger", "level"))
            for t in d.get("transitions", ()))
        outputs = tuple(OutputExpr(o["signal"], o["place"], o.get("op", ">"),
                                   int(o.get("threshold", 0)))
                        for o in d.get("outputs", ()))
        return cls(places, transitions, outputs)


def _guard_active(t: Transition, inputs: Mapping[str, Any],
                  previous: Mapping[str, Any]) -> bool:
    if t.guard is None:
        return True
    now = bool(inputs.get(t.guard, False))
    if t.trigger == "rising":
        return now and not bool(previous.get(t.guard, False))
    return now


def petri_tick(net: PetriNet, marking: Mapping[str, int], inputs: Mapping[str, Any],
               previous: Mapping[str, Any] | None = None) -> tuple[Marking, dict[str, bool]]:
    """One synchronous firing round.

    Every transition enabled at BOT fires once, simultaneously; tokens are
    taken from the BOT marking, so there is no cascading within a tick.
    ``inputs``/``previous`` give guard truth values for this and the prior
    tick (the latter only matters for rising-edge guards).
    """
    previous = previous or {}
    for p, k in marking.items():
        if k < 0:
            raise PetriNetError(f"negative marking at {p!r}")
    enabled = [t for t in net.transitions
               if all(marking.get(p, 0) >= 1 for p in t.inputs)
               and _guard_active(t, inputs, previous)]
    demand: dict[str, int] = {}
    for t in enabled:
        for p in t.inputs:
            demand[p] = demand.get(p, 0) + 1
    for p in sorted(demand):
        if demand[p] > marking.get(p, 0):
            raise ConflictError(p)
    new = dict(marking)
    for p in net.place_names:
        new.setdefault(p, 0)
    for t in enabled:
        for p in t.inputs:
            new[p] -= 1
        for p in t.outputs:
            new[p] += 1
    return new, {o.signal: o.holds(new) for o in net.outputs}


def camera_outputs(marking: Mapping[str, int]) -> tuple[bool, bool]:
    """(full, processing) for the inspection-station net."""
    return marking.get("queue", 0) > 3, marking.get("inprocess", 0) > 0


def build_camera_station() -> PetriNet:
    """Inspection-station net: a workpiece queue feeding a capture/done cycle."""
    return PetriNet(
        places=(("next", 1), ("queue", 0), ("inprocess", 0), ("precapture", 0), ("wait", 0)),
        transitions=(
            Transition("t_incoming", (), ("queue",), "incoming", "rising"),
            Transition("t_ready", ("queue", "next"), ("inprocess", "precapture"), "ready"),
            Transition("t_capture", ("precapture",), ("wait",), "capture"),
            Transition("t_done", ("inprocess", "wait"), ("next",), "done"),
        ),
        outputs=(OutputExpr("full", "queue", ">", 3),
                 OutputExpr("processing", "inprocess", ">", 0)),
    )


class PetriModel(ModelBlock):
    """Kernel adapter; state is (marking, previous guard values)."""

    def __init__(self, name: str, net: PetriNet):
        self.name = name
        self.net = net
        self.inputs = net.guards
        self.outputs = tuple(o.signal for o in net.outputs)
        all_in = frozenset(self.inputs)
        self.dependencies = {o: all_in for o in self.outputs}

    def initial_state(self):
        return self.net.initial_marking(), {g: False for g in self.inputs}

    def react(self, state, tick, inputs):
        marking, prev = state
        now = {g: inputs[g].status is ONE for g in self.inputs}
        new, outs = petri_tick(self.net, marking, now, prev)
        return {s: None for s, on in outs.items() if on}, (new, now)


# ------------------------------------------------------------------ robot FSM
@dataclass(frozen=True)
class InterpolationTable:
    times: tuple[float, ...]
    theta1: tuple[float, ...]
    theta2: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) < 2:
            raise ValueError("interpolation table needs at least 2 rows")
        if not (len(self.times) == len(self.theta1) == len(self.theta2)):
            raise ValueError("interpolation table columns differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("interpolation table times must be strictly increasing")

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "InterpolationTable":
        rows = [tuple(float(x) for x in r) for r in rows]
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows),
                   tuple(r[2] for r in rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "InterpolationTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            want = ["t_s", "theta1_rad", "theta2_rad"]
            if reader.fieldnames != want:
                raise ValueError(f"{path}: expected header {','.join(want)}")
            return cls.from_rows((r["t_s"], r["theta1_rad"], r["theta2_rad"]) for r in reader)

    def rows(self) -> list[list[float]]:
        return [list(r) for r in zip(self.times, self.theta1, self.theta2)]

    def at(self, t: float) -> tuple[float, float]:
        ts = self.times
        if t <= ts[0]:
            return self.theta1[0], self.theta2[0]
        if t >= ts[-1]:
            return self.theta1[-1], self.theta2[-1]
        i = bisect.bisect_right(ts, t) - 1
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        a1, a2 = self.theta1[i], self.theta2[i]
        return a1 + w * (self.theta1[i + 1] - a1), a2 + w * (self.theta2[i + 1] - a2)

    @property
    def end(self) -> tuple[float, float]:
        return self.theta1[-1], self.theta2[-1]

    def max_slope(self) -> float:
        s = 0.0
        for i in range(len(self.times) - 1):
            dt = self.times[i + 1] - self.times[i]
            s = max(s, abs(self.theta1[i + 1] - self.theta1[i]) / dt,
                    abs(self.theta2[i + 1] - self.theta2[i]) / dt)
        return s


FSM_STATES = ("idle", "conv", "asm")


@dataclass(frozen=True)
class RobotFsm:
    tables: Mapping[str, InterpolationTable]
    state: str = "idle"
    start: float = 0.0
    epsilon: float = 0.01
    theta: tuple[float, float] = (0.0, 0.0)
    target: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.state not in FSM_STATES:
            raise ValueError(f"unknown FSM state {self.state!r}")
        missing = {"conv", "asm"} - set(self.tables)
        if missing:
            raise ValueError(f"FSM tables missing for {sorted(missing)}")


def fsm_step(fsm: RobotFsm, inputs: Mapping[str, float | None],
             tick: Tick) -> tuple[RobotFsm, float, float, tuple[str, ...]]:
    """Advance the low-fidelity robot by one tick.

    ``inputs`` holds the present events (``move1``/``move2``) and the
    reference angles ``ref1``/``ref2`` that accompany a move.
    """
    state = fsm.state
    if "move1" in inputs or "move2" in inputs:
        if state == "idle":
            new_state = "conv" if "move1" in inputs else "asm"
            table = fsm.tables[new_state]
            end = table.end
            target = (inputs.get("ref1", end[0]), inputs.get("ref2", end[1]))
            target = (end[0] if target[0] is None else target[0],
                      end[1] if target[1] is None else target[1])
            fsm = replace(fsm, state=new_state, start=tick.r, target=target)
        else:
            log.info("robot FSM: move ignored in state %s at tick %d", state, tick.n)
    if fsm.state == "idle":
        return fsm, fsm.theta[0], fsm.theta[1], ()
    th1, th2 = fsm.tables[fsm.state].at(tick.r - fsm.start)
    if abs(th1 - fsm.target[0]) < fsm.epsilon and abs(th2 - fsm.target[1]) < fsm.epsilon:
        event = "reached1" if fsm.state == "conv" else "reached2"
        return replace(fsm, state="idle", theta=(th1, th2)), th1, th2, (event,)
    return replace(fsm, theta=(th1, th2)), th1, th2, ()


ROBOT_INPUTS = ("move1", "move2", "ref1", "ref2",
                "meas_theta1", "meas_theta2", "meas_omega1", "meas_omega2")
ROBOT_OUTPUTS = ("theta1", "theta2", "tau1", "tau2", "reached1", "reached2")


def _present(inputs: Mapping[str, Signal], names: Iterable[str]) -> dict[str, float | None]:
    return {n: inputs[n].value for n in names if inputs[n].status is ONE}


class FsmRobotModel(ModelBlock):
    """Low-fidelity robot; same ports as the ODE robot, never emits torque."""

    inputs = ROBOT_INPUTS
    outputs = ROBOT_OUTPUTS

    def __init__(self, name: str, tables: Mapping[str, InterpolationTable],
                 initial: tuple[float, float] = (0.0, 0.0), epsilon: float = 0.01):
        self.name = name
        self.fsm = RobotFsm(dict(tables), epsilon=epsilon, theta=tuple(initial),
                            target=tuple(initial))

    def initial_state(self):
        return self.fsm

    def react(self, state, tick, inputs):
        ev = _present(inputs, ("move1", "move2", "ref1", "ref2"))
        fsm, th1, th2, events = fsm_step(state, ev, tick)
        emits: dict[str, float | None] = {"theta1": th1, "theta2": th2}
        for e in events:
            emits[e] = None
        return emits, fsm


# ----------------------------------------------------------- Mealy controllers
@dataclass(frozen=True)
class Rule:
    state: str
    next: str
    when: Mapping[str, int] = field(default_factory=dict)
    emit: Mapping[str, float | None] = field(default_factory=dict)

    def matches(self, state: str, present: set[str]) -> bool:
        if state != self.state:
            return False
        return all((port in present) == bool(level) for port, level in self.when.items())


@dataclass(frozen=True)
class ScriptedController:
    states: tuple[str, ...]
    initial: str
    rules: tuple[Rule, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def __post_init__(self):
        if self.initial not in self.states:
            raise ValueError(f"initial state {self.initial!r} not declared")
        for r in self.rules:
            if r.state not in self.states or r.next not in self.states:
                raise ValueError(f"rule {r.state}->{r.next} uses an undeclared state")
            for p in r.when:
                if p not in self.inputs:
                    raise ValueError(f"rule tests undeclared input {p!r}")
            for p in r.emit:
                if p not in self.outputs:
                    raise ValueError(f"rule emits undeclared output {p!r}")

    def to_dict(self) -> dict:
        return {
            "states": list(self.states), "initial": self.initial,
            "inputs": list(self.inputs), "outputs": list(self.outputs),
            "rules": [{"state": r.state, "next": r.next, "when": dict(r.when),
                       "emit": dict(r.emit)} for r in self.rules],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScriptedController":
        rules = tuple(Rule(r["state"], r["next"], dict(r.get("when", {})),
                           dict(r.get("emit", {}))) for r in d["rules"])
        return cls(tuple(d["states"]), d["initial"], rules,
                   tuple(d.get("inputs", ())), tuple(d.get("outputs", ())))


def controller_step(c: ScriptedController, state: str,
                    inputs: Mapping[str, Any]) -> tuple[dict[str, float | None], str]:
    """Deterministic Mealy step; the first matching rule wins.

    ``inputs`` keys are the present input events.
    """
    present = set(inputs)
    for rule in c.rules:
        if rule.matches(state, present):
            return dict(rule.emit), rule.next
    raise ContractViolation(f"no rule for state {state!r} with inputs {sorted(present)}")


def robot_sequencer(assembly_pose: tuple[float, float],
                    conveyor_pose: tuple[float, float]) -> ScriptedController:
    """Pallet arrival -> move to the assembly area -> move to CB2 -> drop."""
    a1, a2 = assembly_pose
    c1, c2 = conveyor_pose
    return ScriptedController(
        states=("idle", "to_asm", "to_conv"), initial="idle",
        inputs=("pallet", "reached1", "reached2"),
        outputs=("move1", "move2", "ref1", "ref2", "drop"),
        rules=(
            Rule("idle", "to_asm", {"pallet": 1}, {"move2": None, "ref1": a1, "ref2": a2}),
            Rule("idle", "idle"),
            Rule("to_asm", "to_conv", {"reached2": 1}, {"move1": None, "ref1": c1, "ref2": c2}),
            Rule("to_asm", "to_asm"),
            Rule("to_conv", "idle", {"reached1": 1}, {"drop": None}),
            Rule("to_conv", "to_conv"),
        ))


def camera_trigger() -> ScriptedController:
    """Emit ``capture`` once per inspection, when ``processing`` goes high."""
    return ScriptedController(
        states=("idle", "busy"), initial="idle",
        inputs=("processing",), outputs=("capture",),
        rules=(
            Rule("idle", "busy", {"processing": 1}, {"capture": None}),
            Rule("idle", "idle"),
            Rule("busy", "idle", {"processing": 0}),
            Rule("busy", "busy"),
        ))


class ControllerModel(ModelBlock):
    def __init__(self, name: str, controller: ScriptedController):
        self.name = name
        self.controller = controller
        self.inputs = controller.inputs
        self.outputs = controller.outputs
        all_in = frozenset(self.inputs)
        self.dependencies = {o: all_in for o in self.outputs}

    def initial_state(self):
        return self.controller.initial

    def react(self, state, tick, inputs):
        present = {p: inputs[p].value for p in self.inputs if inputs[p].status is ONE}
        return controller_step(self.controller, state, present)
