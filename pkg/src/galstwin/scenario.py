"""Scenario files: duration, seed, injected fault and observers for a run."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

__all__ = ["ScenarioError", "Fault", "DelayModel", "Noise", "InspectionLaw", "ObserverSpec",
           "Scenario", "parse_scenario", "load_scenario", "DEFAULT_BINDINGS", "FAULT_KINDS"]

FAULT_KINDS = ("none", "conveyor-eccentricity", "robot-ramp")

# Where the emulated plant connects to the twin.  Values are model names or
# 'model.port' endpoints; a missing model disables that part of the plant.
DEFAULT_BINDINGS = {
    "pallet": "sequencer.pallet",
    "infeed": "cb1.load",
    "sequencer": "sequencer",
    "robot": "robot",
    "conveyor": "cb2",
    "capture": "trigger.capture",
    "inspectionStart": "camera.capture",
    "inspectionEnd": "camera.done",
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    """Extra inspection delay drawn after fault onset."""

    probability: float = 0.0
    min_ms: float = 0.0
    max_ms: float = 0.0


@dataclass(frozen=True)
class Fault:
    kind: str = "none"
    target: str | None = None
    onset: float = 0.0
    fraction: float = 0.05
    orders: tuple[int, ...] = (1, 2, 3)
    rate: tuple[float, float] = (0.05, 0.05)
    delay: DelayModel = DelayModel()

    def active(self, t: float) -> bool:
        return self.kind != "none" and t >= self.onset


@dataclass(frozen=True)
class Noise:
    theta: float = 0.001
    omega: float = 0.001
    power: float = 10.0


@dataclass(frozen=True)
class InspectionLaw:
    """Triangular inspection duration law, in ms."""

    min_ms: float = 990.0
    mode_ms: float = 1080.0
    max_ms: float = 1530.0

    @property
    def mean_ms(self) -> float:
        return (self.min_ms + self.mode_ms + self.max_ms) / 3.0


@dataclass(frozen=True)
class ObserverSpec:
    name: str
    spec: str


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    seed: int = 0
    fault: Fault = Fault()
    noise: Noise = Noise()
    arrival_mean: float = 8.0
    inspection: InspectionLaw = InspectionLaw()
    observers: tuple[ObserverSpec, ...] = ()
    bindings: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_BINDINGS))

    def with_overrides(self, seed: int | None = None,
                       duration: float | None = None) -> "Scenario":
        return replace(self, seed=self.seed if seed is None else seed,
                       duration=self.duration if duration is None else duration)

    def to_dict(self) -> dict:
        f = self.fault
        return {
            "name": self.name, "durationS": self.duration, "seed": self.seed,
            "fault": {"type": f.kind, "target": f.target, "onsetS": f.onset,
                      "fraction": f.fraction, "orders": list(f.orders), "rateNmS": list(f.rate),
                      "delay": {"probability": f.delay.probability, "minMs": f.delay.min_ms,
                                "maxMs": f.delay.max_ms}},
            "noise": {"thetaRad": self.noise.theta, "omegaRadS": self.noise.omega,
                      "powerW": self.noise.power},
            "arrivals": {"meanIntervalS": self.arrival_mean},
            "inspection": {"minMs": self.inspection.min_ms, "modeMs": self.inspection.mode_ms,
                           "maxMs": self.inspection.max_ms},
            "observers": [{"name": o.name, "spec": o.spec} for o in self.observers],
            "bindings": dict(self.bindings),
        }


def _num(d: Mapping, key: str, default: float, low: float = -math.inf,
         where: str = "") -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < low:
        raise ScenarioError(f"{where}{key!r} must be a finite number >= {low}")
    return float(v)


def parse_scenario(doc: Mapping[str, Any] | str) -> Scenario:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ScenarioError("'name' must be a non-empty string")
    duration = _num(doc, "durationS", 60.0, 0.0)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ScenarioError("'seed' must be a non-negative integer")

    fd = doc.get("fault", {"type": "none"})
    if not isinstance(fd, Mapping):
        raise ScenarioError("'fault' must be an object")
    kind = fd.get("type", "none")
    if kind not in FAULT_KINDS:
        raise ScenarioError(f"unknown fault type {kind!r}")
    dd = fd.get("delay", {})
    delay = DelayModel(_num(dd, "probability", 0.0, 0.0, "delay "),
                       _num(dd, "minMs", 0.0, 0.0, "delay "),
                       _num(dd, "maxMs", 0.0, 0.0, "delay "))
    if delay.probability > 1 or delay.max_ms < delay.min_ms:
        raise ScenarioError("delay needs probability <= 1 and minMs <= maxMs")
    rate = fd.get("rateNmS", [0.05, 0.05])
    if isinstance(rate, (int, float)) and not isinstance(rate, bool):
        rate = [rate, rate]
    if not (isinstance(rate, list) and len(rate) == 2):
        raise ScenarioError("'rateNmS' must be a number or a pair")
    orders = fd.get("orders", [1, 2, 3])
    if not (isinstance(orders, list) and orders
            and all(isinstance(m, int) and not isinstance(m, bool) and m > 0 for m in orders)):
        raise ScenarioError("'orders' must be a list of positive integers")
    default_target = {"conveyor-eccentricity": "cb2", "robot-ramp": "robot"}.get(kind)
    fault = Fault(kind, fd.get("target", default_target), _num(fd, "onsetS", 0.0, 0.0),
                  _num(fd, "fraction", 0.05, 0.0), tuple(orders),
                  (float(rate[0]), float(rate[1])), delay)

    nd = doc.get("noise", {})
    noise = Noise(_num(nd, "thetaRad", 0.001, 0.0), _num(nd, "omegaRadS", 0.001, 0.0),
                  _num(nd, "powerW", 10.0, 0.0))
    arrival_mean = _num(doc.get("arrivals", {}), "meanIntervalS", 8.0, 1e-6)
    idoc = doc.get("inspection", {})
    law = InspectionLaw(_num(idoc, "minMs", 990.0, 0.0), _num(idoc, "modeMs", 1080.0, 0.0),
                        _num(idoc, "maxMs", 1530.0, 0.0))
    if not law.min_ms <= law.mode_ms <= law.max_ms or law.min_ms == law.max_ms:
        raise ScenarioError("inspection law needs minMs <= modeMs <= maxMs and minMs < maxMs")

    observers = []
    for i, o in enumerate(doc.get("observers", [])):
        if not (isinstance(o, Mapping) and isinstance(o.get("spec"), str)):
            raise ScenarioError(f"observers[{i}] needs a 'spec' string")
        observers.append(ObserverSpec(str(o.get("name", f"obs{i}")), o["spec"]))
    bindings = dict(DEFAULT_BINDINGS)
    extra = doc.get("bindings", {})
    if not isinstance(extra, Mapping):
        raise ScenarioError("'bindings' must be an object")
    for k, v in extra.items():
        if k not in DEFAULT_BINDINGS:
            raise ScenarioError(f"unknown binding {k!r}")
        bindings[k] = v
    return Scenario(name, duration, seed, fault, noise, arrival_mean, law,
                    tuple(observers), bindings)


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())
