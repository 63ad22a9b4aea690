"""HTTP API over a live twin: description, offline simulation, observers
with polled event topics, data queries, per-port signal access and
ingestion."""
from __future__ import annotations

import itertools
import logging
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any

from fastapi import Body, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse, Response

from .kernel import ConfigurationError, KernelError
from .ltl import LtlSyntaxError, NotCoSafe, StateBlowup
from .runner import ObserverHandle, TwinRunner, run_scenario
from .scenario import Scenario, ScenarioError, parse_scenario
from .store import OrderingError, QueryError, StoreError, UnknownLabel
from .tdf import TdfError, TwinDescription, parse_tdf, serialize_tdf

__all__ = ["TopicQueue", "LiveTwin", "create_app", "TOPIC_BOUND", "TOKEN_HEADER"]

log = logging.getLogger(__name__)

TOPIC_BOUND = 1024
TOKEN_HEADER = "X-Twin-Token"


class TopicQueue:
    """Bounded event queue polled with monotone cursors.

    Event ``k`` (0-based, over the topic's lifetime) is returned to polls
    with ``cursor <= k``.  When full, the oldest event is dropped.
    """

    def __init__(self, name: str, bound: int = TOPIC_BOUND):
        self.name = name
        self.bound = bound
        self._events: deque[tuple[int, dict]] = deque()
        self._next = 0
        self.dropped = 0
        self._lock = threading.Lock()

    def publish(self, event: dict) -> None:
        with self._lock:
            if len(self._events) >= self.bound:
                self._events.popleft()
                self.dropped += 1
            self._events.append((self._next, event))
            self._next += 1

    def poll(self, cursor: int = 0) -> dict:
        with self._lock:
            first = self._events[0][0] if self._events else self._next
            events = [e for k, e in self._events if k >= cursor]
            # events this consumer can no longer see
            missed = max(0, first - cursor)
            return {"events": events, "nextCursor": max(cursor, self._next),
                    "dropped": missed}


@dataclass
class _Topic:
    queue: TopicQueue
    handle: ObserverHandle


class LiveTwin:
    """A twin running against the emulated plant.

    With ``start()`` it runs on a background thread (paced to the wall
    clock when ``pacing``); tests may instead call :meth:`advance`.
    """

    def __init__(self, td: TwinDescription, scenario: Scenario, pacing: bool = True,
                 trace=None):
        self.description = td
        self.runner = TwinRunner(td, scenario, trace=trace, pacing=pacing)
        self.runner.subscribe(lambda d, r: None)  # keeps latest EOT values
        self.runner.on_verdict(self._verdict)
        self.topics: dict[str, _Topic] = {}
        self._counter = itertools.count(1)
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.error: BaseException | None = None

    @property
    def store(self):
        return self.runner.store

    def _verdict(self, h: ObserverHandle) -> None:
        t = self.topics.get(h.name)
        if t is not None:
            v = h.observer.verdict
            t.queue.publish({"tick": v.tick, "time": h.verdict_time, "observer": h.spec,
                             "domain": h.domain, "verdict": v.kind})

    def create_observer(self, spec: str) -> str:
        with self._lock:
            topic = f"event-{next(self._counter)}"
            queue = TopicQueue(topic)
            self.topics[topic] = _Topic(queue, None)  # type: ignore[arg-type]
            try:
                h = self.runner.add_observer(spec, topic)
            except BaseException:
                del self.topics[topic]
                raise
            self.topics[topic].handle = h
        return topic

    def advance(self, seconds: float) -> None:
        self.runner.run_until(self.runner.time + seconds)

    def _loop(self) -> None:
        try:
            while not self._stop.is_set():
                self.runner.step_once()
        except BaseException as exc:  # surfaced via /twins status
            log.exception("live twin stopped")
            self.error = exc

    def start(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._loop, name="live-twin", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def read(self, model: str, port: str) -> dict:
        """Latest EOT status and value of a port."""
        dom, sig = self.runner.twin.signal_name(f"{model}.{port}")
        latest = self.runner.latest.get(dom.name)
        if latest is None:
            return {"status": None, "value": None, "tickN": None, "timeR": None}
        n, r, values = latest
        status, value = values[sig]
        return {"status": status, "value": value, "tickN": n, "timeR": r}

    def write(self, model: str, port: str, value: Any, present: bool = True) -> None:
        td = self.description
        if model not in td.model_names:
            raise KeyError(model)
        spec = td.model(model)
        if port in spec.outputs:
            raise PermissionError(f"{model}.{port} is an output port")
        if port not in spec.inputs:
            raise KeyError(port)
        try:
            self.runner.override(f"{model}.{port}", value, present)
        except ConfigurationError as exc:
            # an immediate wire makes the input an alias of an output
            raise PermissionError(str(exc)) from None


def _error(status: int, error: str, **extra) -> JSONResponse:
    return JSONResponse({"error": error, **extra}, status_code=status)


def _kernel_payload(exc: KernelError) -> dict:
    tick = getattr(exc, "tick", None)
    out: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc),
                           "domain": getattr(exc, "domain", None) or None,
                           "tick": None if tick is None else {"n": tick.n, "r": tick.r}}
    signals = getattr(exc, "signals", None)
    if signals:
        out["signals"] = sorted(signals)
    return out


def create_app(live: LiveTwin | None = None, token: str | None = None) -> FastAPI:
    app = FastAPI(title="galstwin", version="0.1.0")
    app.state.live = live

    @app.get("/twins")
    def get_twins():
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        return serialize_tdf(lv.description)

    @app.post("/simulate")
    def simulate(body: dict = Body(...)):
        try:
            td = parse_tdf(body.get("tdf"))
            scenario = parse_scenario(body.get("scenario"))
        except (TdfError, ScenarioError) as exc:
            diags = getattr(exc, "diagnostics", [str(exc)])
            return _error(400, "invalid request", diagnostics=diags)
        try:
            return run_scenario(td, scenario)
        except KernelError as exc:
            return JSONResponse(_kernel_payload(exc), status_code=422)

    @app.post("/create/observer", status_code=201)
    def create_observer(request: Request, body: dict = Body(...)):
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        spec = body.get("spec") if isinstance(body, dict) else None
        if not isinstance(spec, str):
            return _error(400, "body needs a 'spec' string")
        try:
            topic = lv.create_observer(spec)
        except NotCoSafe as exc:
            return _error(400, "NotCoSafe", message=str(exc))
        except LtlSyntaxError as exc:
            return _error(400, "SyntaxError", message=str(exc), position=exc.position)
        except StateBlowup as exc:
            return _error(400, "StateBlowup", message=str(exc))
        except KeyError as exc:
            return _error(404, f"unknown atom {exc.args[0]!r}")
        except ValueError as exc:
            return _error(400, str(exc))
        uri = str(request.url_for("get_events", topic=topic))
        return JSONResponse({"topic": topic, "uri": uri}, status_code=201)

    @app.get("/events/{topic}", name="get_events")
    def get_events(topic: str, cursor: int = Query(0, ge=0)):
        lv: LiveTwin | None = app.state.live
        t = lv.topics.get(topic) if lv is not None else None
        if t is None:
            return _error(404, f"unknown topic {topic!r}")
        return t.queue.poll(cursor)

    @app.get("/data/query")
    def data_query(q: str = Query(...)):
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        try:
            return lv.store.query(q)
        except UnknownLabel as exc:
            return _error(404, str(exc))
        except QueryError as exc:
            return _error(400, str(exc), position=exc.position)

    @app.get("/model/{name}/{port}")
    def read_port(name: str, port: str):
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        try:
            return lv.read(name, port)
        except KeyError:
            return _error(404, f"unknown port {name}.{port}")

    @app.post("/model/{name}/{port}", status_code=202)
    def write_port(name: str, port: str, body: dict = Body(default={}),
                   x_twin_token: str | None = Header(default=None)):
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        if token is not None and x_twin_token != token:
            return _error(403, f"override requires a valid {TOKEN_HEADER} header")
        value = body.get("value")
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            return _error(400, "'value' must be a number or null")
        try:
            lv.write(name, port, value, bool(body.get("present", True)))
        except KeyError:
            return _error(404, f"unknown port {name}.{port}")
        except PermissionError as exc:
            return _error(409, str(exc))
        return JSONResponse({"accepted": True}, status_code=202)

    @app.post("/ingest", status_code=204)
    def ingest(body: Any = Body(...)):
        lv: LiveTwin | None = app.state.live
        if lv is None:
            return _error(404, "no twin loaded")
        rows = body if isinstance(body, list) else [body]
        for row in rows:
            try:
                label, t, values = row["label"], row["time"], row["values"]
                tick = int(row.get("tick", 0))
                if not isinstance(label, str) or not isinstance(t, (int, float)):
                    raise TypeError
                if isinstance(values, (int, float)):
                    values = [values]
                values = [float(v) for v in values]
            except (KeyError, TypeError, ValueError):
                return _error(400, "rows need 'label', 'time' and 'values'")
            try:
                lv.store.append(label, tick, float(t), values)
            except OrderingError as exc:
                return _error(409, str(exc))
            except StoreError as exc:
                return _error(400, str(exc))
        return Response(status_code=204)

    @app.get("/map")
    @app.get("/map/collada")
    def not_implemented():
        return _error(501, "plant geometry (AutomationML/COLLADA) is not supported by this "
                           "twin runtime")

    return app


def serve(live: LiveTwin, host: str, port: int, token: str | None = None) -> None:
    import uvicorn

    app = create_app(live, token)
    live.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        live.stop()

