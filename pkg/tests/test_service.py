import json
import warnings

import pytest

warnings.filterwarnings("ignore", category=DeprecationWarning)
from fastapi.testclient import TestClient  # noqa: E402

from galstwin import data_path  # noqa: E402
from galstwin.scenario import load_scenario  # noqa: E402
from galstwin.service import LiveTwin, TopicQueue, create_app  # noqa: E402
from galstwin.tdf import load_tdf, serialize_tdf  # noqa: E402

TD = load_tdf(data_path("fma_line.tdf.json"))
NOMINAL = load_scenario(data_path("nominal.scenario.json"))


@pytest.fixture()
def live():
    return LiveTwin(TD, NOMINAL.with_overrides(duration=60), pacing=False)


@pytest.fixture()
def client(live):
    return TestClient(create_app(live, token="s3cret"))


def test_twins_returns_canonical_tdf(client):
    assert client.get("/twins").json() == serialize_tdf(TD)


def test_simulate_validation_errors(client):
    bad = serialize_tdf(TD)
    bad["wires"].append({"from": "ghost.x", "to": "cb2.load"})
    r = client.post("/simulate", json={"tdf": bad, "scenario": NOMINAL.to_dict()})
    assert r.status_code == 400 and any("ghost" in d for d in r.json()["diagnostics"])


def test_simulate_kernel_error_payload(client):
    doc = serialize_tdf(TD)
    for w in doc["wires"]:
        if w["from"] in ("camera.processing", "trigger.capture"):
            w["mode"] = "immediate"
    scn = NOMINAL.with_overrides(duration=1).to_dict()
    r = client.post("/simulate", json={"tdf": doc, "scenario": scn})
    assert r.status_code == 422
    body = r.json()
    assert body["error"] == "CausalityError" and body["domain"] == "inspection"
    assert set(body["signals"]) == {"camera.processing", "trigger.capture"}


def test_observer_lifecycle(client, live):
    r = client.post("/create/observer", json={"spec": "F robot.reached2"})
    assert r.status_code == 201
    topic = r.json()["topic"]
    assert r.json()["uri"].endswith(f"/events/{topic}")
    assert client.get(f"/events/{topic}").json()["events"] == []
    live.advance(30)
    page = client.get(f"/events/{topic}").json()
    assert [e["verdict"] for e in page["events"]] == ["Accepted"]
    assert client.get(f"/events/{topic}", params={"cursor": page["nextCursor"]}).json()["events"] == []


@pytest.mark.parametrize("spec,status,error", [
    ("G camera.full", 400, "NotCoSafe"), ("F (", 400, "SyntaxError"),
    ("F nope.sig", 404, None)])
def test_observer_errors(client, spec, status, error):
    r = client.post("/create/observer", json={"spec": spec})
    assert r.status_code == status
    if error:
        assert r.json()["error"] == error


def test_unknown_topic(client):
    assert client.get("/events/event-99").status_code == 404


def test_query_and_errors(client, live):
    live.advance(0.1)
    rows = client.get("/data/query", params={"q": "SELECT tick FROM twin.robot.tau LIMIT 2"}).json()
    assert rows == [{"tick": 0}, {"tick": 1}]
    r = client.get("/data/query", params={"q": "SELECT * FROM missing"})
    assert r.status_code == 404
    r = client.get("/data/query", params={"q": "SELECT * FROM twin.robot.tau LIMIT x"})
    assert r.status_code == 400 and r.json()["position"] == 35


def test_port_read_and_write(client, live):
    assert client.get("/model/robot/theta1").json()["status"] is None
    live.advance(0.05)
    body = client.get("/model/robot/theta1").json()
    assert body["status"] == 1 and body["tickN"] == 4
    assert client.get("/model/robot/nope").status_code == 404
    assert client.post("/model/sequencer/pallet", json={}).status_code == 403
    hdr = {"X-Twin-Token": "s3cret"}
    assert client.post("/model/robot/theta1", json={"value": 1}, headers=hdr).status_code == 409
    assert client.post("/model/sequencer/pallet", json={"value": "x"}, headers=hdr).status_code == 400
    assert client.post("/model/sequencer/pallet", json={}, headers=hdr).status_code == 202
    live.advance(0.01)  # overrides hold for exactly the next tick
    assert client.get("/model/sequencer/pallet").json()["status"] == 1
    live.advance(0.01)
    assert client.get("/model/sequencer/pallet").json()["status"] == 0


def test_ingest(client, live):
    rows = [{"label": "ext.temp", "time": 1.0, "values": 20.5},
            {"label": "ext.temp", "time": 2.0, "values": [21.0]}]
    assert client.post("/ingest", json=rows).status_code == 204
    assert live.store.count("ext.temp") == 2
    assert client.post("/ingest", json={"label": "ext.temp", "time": 0.5,
                                        "values": 1}).status_code == 409
    assert client.post("/ingest", json={"label": "ext.temp"}).status_code == 400


def test_map_not_implemented(client):
    assert client.get("/map").status_code == 501
    assert client.get("/map/collada").status_code == 501


def test_topic_queue_bound_and_cursor():
    q = TopicQueue("t", bound=3)
    for k in range(5):
        q.publish({"k": k})
    page = q.poll(0)
    assert [e["k"] for e in page["events"]] == [2, 3, 4]
    assert page["dropped"] == 2 and page["nextCursor"] == 5
    assert q.poll(5)["events"] == []
    json.dumps(page)
