"""Twin Description File: JSON declaration of clock domains, models,
wires, channels and data mappings, plus the twin builder."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import physics, reactive
from .analysis import InterconnectGraph
from .kernel import ClockDomain, FifoChannel, ModelBlock, Wire, WireMode

__all__ = [
    "TdfError", "SchemaError", "DanglingEndpoint", "DuplicateModel", "UnknownModelType",
    "ModelSpec", "DomainSpec", "WireSpec", "ChannelSpec", "DataMapping", "TwinDescription",
    "Twin", "parse_tdf", "serialize_tdf", "load_tdf", "build_twin", "MODEL_TYPES",
]

MODEL_TYPES = ("petri", "fsm", "robot-ode", "conveyor", "controller")


class TdfError(ValueError):
    """Invalid twin description; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics: list[str] | str):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class SchemaError(TdfError):
    pass


class DanglingEndpoint(TdfError):
    pass


class DuplicateModel(TdfError):
    def __init__(self, model: str, domains: list[str]):
        self.model = model
        super().__init__(f"model {model!r} declared more than once (domains: {', '.join(domains)})")


class UnknownModelType(TdfError):
    pass


# --------------------------------------------------------------- params
def _num(d: Mapping, key: str, default: float | None = None) -> float:
    if key not in d:
        if default is None:
            raise SchemaError(f"missing numeric field {key!r}")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"field {key!r} must be a finite number")
    return float(v)


def _pair(d: Mapping, key: str, default: tuple[float, float]) -> list[float]:
    v = d.get(key, list(default))
    if not (isinstance(v, (list, tuple)) and len(v) == 2
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise SchemaError(f"field {key!r} must be a pair of numbers")
    return [float(v[0]), float(v[1])]


def _robot_params(d: Mapping) -> dict:
    p = d.get("params", {})
    base = physics.RobotParams()
    out = {k: _num(p, k, getattr(base, k)) for k in ("m1", "m2", "l1", "l2", "r1", "r2", "I1", "I2")}
    physics.RobotParams(**out)
    return out


def _canon_robot(d: Mapping) -> dict:
    g = d.get("gains", {})
    base = physics.PdGains()
    gains = {k: _num(g, k, getattr(base, k)) for k in ("kp1", "kp2", "kd1", "kd2")}
    physics.PdGains(**gains)
    return {"params": _robot_params(d), "gains": gains,
            "initial": _pair(d, "initial", (0.0, 0.0)),
            "epsilon": _num(d, "epsilon", 0.01), "dt": _num(d, "dt", physics.DEFAULT_DT),
            "literal": bool(d.get("literal", False))}


def _canon_table(t: Any) -> dict:
    if isinstance(t, Mapping) and "csv" in t:
        table = reactive.InterpolationTable.from_csv(t["csv"])
    elif isinstance(t, Mapping) and "rows" in t:
        table = reactive.InterpolationTable.from_rows(t["rows"])
    else:
        raise SchemaError("FSM table needs 'rows' or 'csv'")
    return {"rows": table.rows()}


def _canon_fsm(d: Mapping) -> dict:
    tables = d.get("tables")
    if not isinstance(tables, Mapping) or set(tables) != {"conv", "asm"}:
        raise SchemaError("fsm model needs tables for exactly 'conv' and 'asm'")
    return {"tables": {k: _canon_table(tables[k]) for k in ("asm", "conv")},
            "initial": _pair(d, "initial", (0.0, 0.0)), "epsilon": _num(d, "epsilon", 0.01)}


def _canon_harmonic(h: Mapping) -> dict:
    m = h.get("m")
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise SchemaError("harmonic order 'm' must be a positive integer")
    return {"m": m, "iEc1": _num(h, "iEc1", 0.0), "phiEc1": _num(h, "phiEc1", 0.0),
            "iEc2": _num(h, "iEc2", 0.0), "phiEc2": _num(h, "phiEc2", 0.0)}


def _canon_conveyor(d: Mapping) -> dict:
    base = physics.ConveyorParams()
    sensors = d.get("sensors", {"ready": 1.0})
    if not isinstance(sensors, Mapping) or not sensors:
        raise SchemaError("conveyor 'sensors' must be a non-empty object")
    out = {"um": _num(d, "um", base.um), "im": _num(d, "im", base.im),
           "omega1": _num(d, "omega1", base.omega1), "phi": _num(d, "phi", base.phi),
           "omegaR": _num(d, "omegaR", base.omega_r),
           "harmonics": [_canon_harmonic(h) for h in d.get("harmonics", [])],
           "mMax": d.get("mMax"), "v0": _num(d, "v0", 0.5), "tau": _num(d, "tau", 0.1),
           "sensors": {str(k): _num(sensors, k) for k in sorted(sensors)}}
    if out["mMax"] is not None and not isinstance(out["mMax"], int):
        raise SchemaError("'mMax' must be an integer")
    if not (out["v0"] > 0 and out["um"] > 0 and out["im"] > 0):
        raise SchemaError("conveyor um, im and v0 must be > 0")
    conveyor_params(out)
    return out


def conveyor_params(c: Mapping) -> physics.ConveyorParams:
    return physics.ConveyorParams(
        um=c["um"], im=c["im"], omega1=c["omega1"], phi=c["phi"], omega_r=c["omegaR"],
        harmonics=tuple(physics.Harmonic(h["m"], h["iEc1"], h["phiEc1"], h["iEc2"], h["phiEc2"])
                        for h in c["harmonics"]),
        m_max=c["mMax"])


def _canon_petri(d: Mapping) -> dict:
    if d.get("preset") == "camera-station":
        return reactive.build_camera_station().to_dict()
    try:
        return reactive.PetriNet.from_dict(d).to_dict()
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed Petri net: {exc}") from None


def _canon_controller(d: Mapping) -> dict:
    preset = d.get("preset")
    if preset == "robot-sequencer":
        c = reactive.robot_sequencer(tuple(_pair(d, "assemblyPose", (1.2, 0.6))),
                                     tuple(_pair(d, "conveyorPose", (-0.8, 1.0))))
    elif preset == "camera-trigger":
        c = reactive.camera_trigger()
    elif preset is not None:
        raise SchemaError(f"unknown controller preset {preset!r}")
    else:
        try:
            c = reactive.ScriptedController.from_dict(d)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed controller: {exc}") from None
    return c.to_dict()


_CANON = {"robot-ode": _canon_robot, "fsm": _canon_fsm, "conveyor": _canon_conveyor,
          "petri": _canon_petri, "controller": _canon_controller}


def ports_for(kind: str, params: Mapping) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if kind in ("robot-ode", "fsm"):
        return reactive.ROBOT_INPUTS, reactive.ROBOT_OUTPUTS
    if kind == "conveyor":
        return ("load",), ("power", "speed", *params["sensors"])
    if kind == "petri":
        net = reactive.PetriNet.from_dict(params)
        return net.guards, tuple(o.signal for o in net.outputs)
    if kind == "controller":
        return tuple(params["inputs"]), tuple(params["outputs"])
    raise UnknownModelType(f"unknown model type {kind!r}")


# ----------------------------------------------------------- description
@dataclass(frozen=True)
class ModelSpec:
    name: str
    type: str
    params: Mapping[str, Any]
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class DomainSpec:
    name: str
    period: float
    models: tuple[ModelSpec, ...]


@dataclass(frozen=True)
class WireSpec:
    source: tuple[str, str]
    sink: tuple[str, str]
    mode: str = "delayed"


@dataclass(frozen=True)
class ChannelSpec:
    source: tuple[str, str]
    sink: tuple[str, str]
    capacity: int


@dataclass(frozen=True)
class DataMapping:
    label: str
    signals: tuple[str, ...]


@dataclass(frozen=True)
class TwinDescription:
    name: str
    domains: tuple[DomainSpec, ...]
    wires: tuple[WireSpec, ...]
    channels: tuple[ChannelSpec, ...]
    mappings: tuple[DataMapping, ...]
    _index: Mapping[str, tuple[str, ModelSpec]] = field(default_factory=dict, compare=False,
                                                         repr=False)

    def model(self, name: str) -> ModelSpec:
        return self._index[name][1]

    def domain_of(self, model: str) -> str:
        return self._index[model][0]

    @property
    def model_names(self) -> tuple[str, ...]:
        return tuple(self._index)

    def graph(self) -> InterconnectGraph:
        nodes = {m.name: m.type for d in self.domains for m in d.models}
        edges = tuple(sorted({(w.source[0], w.sink[0]) for w in self.wires}
                             | {(c.source[0], c.sink[0]) for c in self.channels}))
        return InterconnectGraph(nodes, edges)

    def to_dict(self) -> dict:
        return serialize_tdf(self)


def _endpoint(text: Any, where: str) -> tuple[str, str]:
    if not isinstance(text, str) or text.count(".") < 1:
        raise SchemaError(f"{where}: endpoint must be 'model.port', got {text!r}")
    model, port = text.split(".", 1)
    return model, port


def _require(doc: Mapping, key: str, kind: type, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing key {key!r}")
    v = doc[key]
    if not isinstance(v, kind):
        raise SchemaError(f"{where}: {key!r} must be a {kind.__name__}")
    return v


def parse_tdf(document: Mapping[str, Any] | str) -> TwinDescription:
    """Validate a TDF document and return its canonical description."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise SchemaError("TDF must be a JSON object")
    doms_raw = _require(document, "clockDomains", list, "TDF")
    wires_raw = _require(document, "wires", list, "TDF")
    chans_raw = _require(document, "channels", list, "TDF")
    maps_raw = _require(document, "dataMappings", list, "TDF")

    index: dict[str, tuple[str, ModelSpec]] = {}
    seen_in: dict[str, list[str]] = {}
    domains = []
    dom_names: set[str] = set()
    for i, d in enumerate(doms_raw):
        where = f"clockDomains[{i}]"
        if not isinstance(d, Mapping):
            raise SchemaError(f"{where} must be an object")
        name = _require(d, "name", str, where)
        if name in dom_names:
            raise SchemaError(f"duplicate clock domain {name!r}")
        dom_names.add(name)
        period = _num(d, "period", None) if "period" in d else None
        if period is None or not period > 0:
            raise SchemaError(f"{where}: 'period' must be a positive number")
        models_raw = _require(d, "models", list, where)
        if not models_raw:
            raise SchemaError(f"clock domain {name!r} has no models")
        models = []
        for j, m in enumerate(models_raw):
            mw = f"{where}.models[{j}]"
            if not isinstance(m, Mapping):
                raise SchemaError(f"{mw} must be an object")
            mname = _require(m, "name", str, mw)
            if "." in mname or not mname:
                raise SchemaError(f"{mw}: model name {mname!r} must be non-empty without '.'")
            kind = _require(m, "type", str, mw)
            if kind not in _CANON:
                raise UnknownModelType(f"model {mname!r}: unknown type {kind!r}")
            params = m.get("params", {})
            if not isinstance(params, Mapping):
                raise SchemaError(f"model {mname!r}: 'params' must be an object")
            try:
                canon = _CANON[kind](params)
            except TdfError as exc:
                raise type(exc)([f"model {mname!r}: {x}" for x in exc.diagnostics]) from None
            except ValueError as exc:
                raise SchemaError(f"model {mname!r}: {exc}") from None
            ins, outs = ports_for(kind, canon)
            spec = ModelSpec(mname, kind, canon, tuple(ins), tuple(outs))
            seen_in.setdefault(mname, []).append(name)
            if mname not in index:
                index[mname] = (name, spec)
            models.append(spec)
        domains.append(DomainSpec(name, period, tuple(models)))
    for mname, where in seen_in.items():
        if len(where) > 1:
            raise DuplicateModel(mname, where)

    def check(ep: tuple[str, str], direction: str, where: str) -> None:
        model, port = ep
        if model not in index:
            raise DanglingEndpoint(f"{where}: unknown model {model!r}")
        spec = index[model][1]
        ports = spec.outputs if direction == "out" else spec.inputs
        if port not in ports:
            raise DanglingEndpoint(f"{where}: model {model!r} has no {direction}put port {port!r}")

    driven: set[tuple[str, str]] = set()
    wires = []
    for i, w in enumerate(wires_raw):
        where = f"wires[{i}]"
        if not isinstance(w, Mapping):
            raise SchemaError(f"{where} must be an object")
        src = _endpoint(w.get("from"), where)
        dst = _endpoint(w.get("to"), where)
        check(src, "out", where)
        check(dst, "in", where)
        if index[src[0]][0] != index[dst[0]][0]:
            raise SchemaError(f"{where}: wire crosses clock domains; use a channel")
        mode = w.get("mode", "delayed")
        if mode not in ("delayed", "immediate"):
            raise SchemaError(f"{where}: mode must be 'delayed' or 'immediate'")
        if dst in driven:
            raise SchemaError(f"{where}: input {'.'.join(dst)} has two drivers")
        driven.add(dst)
        wires.append(WireSpec(src, dst, mode))
    channels = []
    for i, c in enumerate(chans_raw):
        where = f"channels[{i}]"
        if not isinstance(c, Mapping):
            raise SchemaError(f"{where} must be an object")
        src = _endpoint(c.get("from"), where)
        dst = _endpoint(c.get("to"), where)
        check(src, "out", where)
        check(dst, "in", where)
        cap = c.get("capacity")
        if not isinstance(cap, int) or isinstance(cap, bool) or cap < 1:
            raise SchemaError(f"{where}: capacity must be an integer >= 1")
        if index[src[0]][0] == index[dst[0]][0]:
            raise SchemaError(f"{where}: channel endpoints share a clock domain; use a wire")
        if dst in driven:
            raise SchemaError(f"{where}: input {'.'.join(dst)} has two drivers")
        driven.add(dst)
        channels.append(ChannelSpec(src, dst, cap))
    mappings = []
    labels: set[str] = set()
    for i, m in enumerate(maps_raw):
        where = f"dataMappings[{i}]"
        if not isinstance(m, Mapping):
            raise SchemaError(f"{where} must be an object")
        label = _require(m, "label", str, where)
        if not label or label in labels:
            raise SchemaError(f"{where}: label {label!r} empty or duplicated")
        labels.add(label)
        sigs = _require(m, "signals", list, where)
        if not sigs:
            raise SchemaError(f"{where}: no signals")
        doms = set()
        for s in sigs:
            model, port = _endpoint(s, where)
            if model not in index:
                raise DanglingEndpoint(f"{where}: unknown model {model!r}")
            spec = index[model][1]
            if port not in spec.inputs and port not in spec.outputs:
                raise DanglingEndpoint(f"{where}: model {model!r} has no port {port!r}")
            doms.add(index[model][0])
        if len(doms) != 1:
            raise SchemaError(f"{where}: signals of one mapping must share a clock domain")
        mappings.append(DataMapping(label, tuple(sigs)))
    name = document.get("name", "twin")
    if not isinstance(name, str):
        raise SchemaError("TDF 'name' must be a string")
    return TwinDescription(name, tuple(domains), tuple(wires), tuple(channels),
                           tuple(mappings), index)


def serialize_tdf(td: TwinDescription) -> dict:
    """Canonical JSON-ready form; parsing it again yields an equal description."""
    return {
        "name": td.name,
        "clockDomains": [
            {"name": d.name, "period": d.period,
             "models": [{"name": m.name, "type": m.type, "params": copy.deepcopy(dict(m.params))}
                        for m in d.models]}
            for d in td.domains],
        "wires": [{"from": ".".join(w.source), "to": ".".join(w.sink), "mode": w.mode}
                  for w in td.wires],
        "channels": [{"from": ".".join(c.source), "to": ".".join(c.sink),
                      "capacity": c.capacity} for c in td.channels],
        "dataMappings": [{"label": m.label, "signals": list(m.signals)} for m in td.mappings],
    }


def load_tdf(path: str | Path) -> TwinDescription:
    with open(path) as fh:
        text = fh.read()
    return parse_tdf(text)


# ---------------------------------------------------------------- builder
@dataclass
class Twin:
    description: TwinDescription
    domains: dict[str, ClockDomain]
    channels: list[FifoChannel]

    def domain_of(self, model: str) -> ClockDomain:
        return self.domains[self.description.domain_of(model)]

    def signal_name(self, endpoint: str) -> tuple[ClockDomain, str]:
        """Resolve 'model.port' to its domain and kernel signal name."""
        model, port = endpoint.split(".", 1)
        if model not in self.description.model_names:
            raise KeyError(endpoint)
        dom = self.domain_of(model)
        key = (model, port)
        if key not in dom.port_signal:
            raise KeyError(endpoint)
        return dom, dom.port_signal[key]


def build_model(spec: ModelSpec, period: float) -> ModelBlock:
    p = spec.params
    if spec.type == "robot-ode":
        g = p["gains"]
        return physics.RobotModel(spec.name, physics.RobotParams(**p["params"]),
                                  physics.PdGains(g["kp1"], g["kp2"], g["kd1"], g["kd2"]),
                                  initial=tuple(p["initial"]), period=period,
                                  epsilon=p["epsilon"], dt=min(p["dt"], period),
                                  literal=p["literal"])
    if spec.type == "fsm":
        tables = {k: reactive.InterpolationTable.from_rows(v["rows"])
                  for k, v in p["tables"].items()}
        return reactive.FsmRobotModel(spec.name, tables, tuple(p["initial"]), p["epsilon"])
    if spec.type == "conveyor":
        return physics.ConveyorModel(spec.name, conveyor_params(p), v0=p["v0"],
                                     sensors=p["sensors"], period=period, tau=p["tau"])
    if spec.type == "petri":
        return reactive.PetriModel(spec.name, reactive.PetriNet.from_dict(p))
    if spec.type == "controller":
        return reactive.ControllerModel(spec.name, reactive.ScriptedController.from_dict(p))
    raise UnknownModelType(f"unknown model type {spec.type!r}")


def build_twin(td: TwinDescription) -> Twin:
    domains: dict[str, ClockDomain] = {}
    for d in td.domains:
        models = [build_model(m, d.period) for m in d.models]
        wires = [Wire(w.source, w.sink, WireMode(w.mode)) for w in td.wires
                 if td.domain_of(w.source[0]) == d.name]
        domains[d.name] = ClockDomain(d.name, models, d.period, wires)
    channels = []
    for c in td.channels:
        ch = FifoChannel((td.domain_of(c.source[0]), *c.source),
                         (td.domain_of(c.sink[0]), *c.sink), c.capacity)
        domains[ch.source[0]].attach_outbound(ch)
        domains[ch.sink[0]].attach_inbound(ch)
        channels.append(ch)
    return Twin(td, domains, channels)
