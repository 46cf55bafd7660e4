import json

import pytest
from hypothesis import given, settings, strategies as st

from lodbridge.broker import BrokerClient, ContextBroker, Dispatcher, Predicate, Subscription, build_router
from lodbridge.clock import ManualClock
from lodbridge.entity import Attribute, Entity, from_key_values
from lodbridge.errors import AlreadyExists, BadRequest, ImmutableField, NotFound
from lodbridge.httpd import Router, Response, Server, http_request


def entity(eid="urn:ngsi-ld:Thing:1", etype="Thing", **attrs):
    return Entity(eid, etype, {k: Attribute(k, v) for k, v in attrs.items()})


class Recorder:
    def __init__(self, ok=True):
        self.ok = ok
        self.bodies = []

    def __call__(self, endpoint, body):
        self.bodies.append((endpoint, json.loads(json.dumps(body))))
        return self.ok(len(self.bodies)) if callable(self.ok) else self.ok


def make(clock, **kw):
    rec = kw.pop("transport", None) or Recorder()
    return ContextBroker(clock=clock, transport=rec, **kw), rec


def test_crud(clock):
    b, _ = make(clock)
    b.create_entity(entity(temperature=14.6, address={"addressLocality": "Santander"}))
    with pytest.raises(AlreadyExists):
        b.create_entity(entity())
    assert b.get_entity("urn:ngsi-ld:Thing:1", "keyValues")["temperature"] == 14.6
    assert b.get_entity("urn:ngsi-ld:Thing:1")["temperature"] == {"type": "Property", "value": 14.6}
    b.update_attrs("urn:ngsi-ld:Thing:1", {"temperature": 15})
    assert b.get_entity("urn:ngsi-ld:Thing:1", "entity").value("temperature") == 15
    with pytest.raises(ImmutableField):
        b.upsert_entity(entity(etype="Other"))
    with pytest.raises(NotFound):
        b.update_attrs("urn:missing:1", {"a": 1})
    with pytest.raises(BadRequest):
        b.get_entity("urn:ngsi-ld:Thing:1", "xml")
    b.delete_entity("urn:ngsi-ld:Thing:1")
    with pytest.raises(NotFound):
        b.get_entity("urn:ngsi-ld:Thing:1")
    assert b.entity_count() == 0


def test_query_with_predicates(clock):
    b, _ = make(clock)
    for i in range(30):
        b.create_entity(entity(f"urn:t:{i:02d}", "Even" if i % 2 == 0 else "Odd", n=i,
                               address={"addressLocality": "Santander" if i < 10 else "Madrid"}))
    assert [e.id for e in b.query_entities("Even", "n>20")] == ["urn:t:22", "urn:t:24", "urn:t:26", "urn:t:28"]
    assert len(b.query_entities(None, 'address.addressLocality=="Santander"', limit=100)) == 10
    assert len(b.query_entities(limit=100)) == 30
    assert len(b.query_entities()) == 20
    assert b.query_entities(None, "n==3")[0].id == "urn:t:03"
    with pytest.raises(BadRequest):
        b.query_entities(limit=0)
    for bad in ("n>>3", "n<'x'", "", "==3"):
        with pytest.raises(BadRequest):
            Predicate.parse(bad)
    assert not Predicate.parse("n<3").test(entity(n="2"))


def test_subscription_matching_and_formats(clock):
    b, rec = make(clock)
    b.create_subscription(Subscription("s-all", "http://a.example/n"))
    b.create_subscription(Subscription("s-kv", "http://b.example/n", ("Thing",), ("temperature",), "keyValues"))
    b.create_subscription(Subscription("s-other", "http://c.example/n", ("Other",)))
    b.create_entity(entity(temperature=1, humidity=2))
    b.update_attrs("urn:ngsi-ld:Thing:1", {"humidity": 3})
    b.update_attrs("urn:ngsi-ld:Thing:1", {"temperature": 4})
    b.drain()
    by_endpoint = {}
    for endpoint, body in rec.bodies:
        by_endpoint.setdefault(endpoint, []).append(body)
    assert len(by_endpoint["http://a.example/n"]) == 3
    kv = by_endpoint["http://b.example/n"]
    assert [d["data"][0]["temperature"] for d in kv] == [1, 4]
    assert "http://c.example/n" not in by_endpoint
    body = by_endpoint["http://a.example/n"][0]
    assert body["type"] == "Notification" and body["subscriptionId"] == "s-all"
    assert body["data"][0]["temperature"] == {"type": "Property", "value": 1}
    assert body["notifiedAt"].endswith("Z")


def test_deletes_do_not_notify(clock):
    b, rec = make(clock)
    b.create_subscription(Subscription("s", "http://a.example/n"))
    b.create_entity(entity())
    b.drain()
    b.delete_entity("urn:ngsi-ld:Thing:1")
    assert b.pending() == 0
    assert len(rec.bodies) == 1


def test_subscription_validation(clock):
    b, _ = make(clock)
    with pytest.raises(BadRequest):
        Subscription("s", "not-a-url")
    with pytest.raises(BadRequest):
        Subscription("s", "http://a.example", format="xml")
    sid = b.create_subscription({"entities": [{"type": "Thing"}],
                                 "notification": {"endpoint": {"uri": "http://a.example/n"}}})
    assert sid.startswith("urn:ngsi-ld:Subscription:")
    assert b.get_subscription(sid).entity_types == ("Thing",)
    with pytest.raises(AlreadyExists):
        b.create_subscription(Subscription(sid, "http://a.example/n"))
    b.delete_subscription(sid)
    with pytest.raises(NotFound):
        b.delete_subscription(sid)


def test_retries_back_off_then_dead_letter(clock):
    rec = Recorder(ok=False)
    b, _ = make(clock, transport=rec, max_attempts=3, backoff_base=2, backoff_cap=3)
    b.create_subscription(Subscription("s", "http://down.example/n"))
    start = clock.now()
    b.create_entity(entity())
    report = b.drain()
    assert len(rec.bodies) == 3
    assert report.retried == 2 and report.dead_lettered == 1 and report.delivered == 0
    assert [a[1] for a in report.attempts] == [1, 2, 3]
    assert len(b.dead_letters) == 1
    # waits of 2 s then min(4, cap 3) s on the broker clock
    assert (clock.now() - start).total_seconds() == 5


def test_flaky_endpoint_recovers(clock):
    rec = Recorder(ok=lambda n: n >= 3)
    b, _ = make(clock, transport=rec, max_attempts=5)
    b.create_subscription(Subscription("s", "http://flaky.example/n"))
    b.create_entity(entity())
    report = b.drain()
    assert report.delivered == 1 and report.retried == 2 and not b.dead_letters
    assert len({body["id"] for _, body in rec.bodies}) == 1


def test_notification_never_precedes_commit(clock):
    seen = []
    b = ContextBroker(clock=clock)

    def transport(endpoint, body):
        # the notified state is already readable when the POST goes out
        current = b.get_entity(body["data"][0]["id"], "keyValues")
        seen.append((body["data"][0]["n"]["value"], current["n"]))
        return True

    b.transport = transport
    b.create_subscription(Subscription("s", "http://a.example/n"))
    d = Dispatcher(b, poll_interval=0.001).start()
    try:
        b.create_entity(entity(n=0))
        for i in range(1, 200):
            b.update_attrs("urn:ngsi-ld:Thing:1", {"n": i})
    finally:
        d.stop()
    b.drain()
    assert len(seen) == 200
    assert all(notified <= current for notified, current in seen)


def test_snapshot_round_trip(clock, tmp_path):
    b, _ = make(clock)
    b.create_entity(entity(temperature=1))
    b.create_subscription(Subscription("s", "http://a.example/n", ("Thing",)))
    path = b.save_snapshot(tmp_path / "snap" / "broker.json")
    again = ContextBroker(clock=clock, snapshot_path=path)
    assert again.get_entity("urn:ngsi-ld:Thing:1") == b.get_entity("urn:ngsi-ld:Thing:1")
    assert again.subscriptions() == b.subscriptions()


@settings(max_examples=40)
@given(st.lists(st.tuples(st.sampled_from(["create", "update", "delete"]), st.integers(0, 4),
                          st.sampled_from(["a", "b", "c"]), st.integers(0, 9)), max_size=40),
       st.lists(st.booleans(), min_size=1, max_size=8))
def test_every_matched_change_gets_an_attempt(ops, script):
    clock = ManualClock("2021-11-10T15:00:00Z")
    calls = []

    def transport(endpoint, body):
        ok = script[len(calls) % len(script)]
        calls.append((body["id"], ok))
        return ok

    b = ContextBroker(clock=clock, transport=transport, max_attempts=3)
    b.create_subscription(Subscription("s", "http://a.example/n", watched_attributes=("a",)))
    expected = 0
    live = set()
    for op, n, attr, value in ops:
        eid = f"urn:x:{n}"
        if op == "create" and eid not in live:
            b.create_entity(entity(eid, **{attr: value}))
            live.add(eid)
            expected += attr == "a"
        elif op == "update" and eid in live:
            b.update_attrs(eid, {attr: value})
            expected += attr == "a"
        elif op == "delete" and eid in live:
            b.delete_entity(eid)
            live.discard(eid)
    report = b.drain()
    outcomes: dict[str, list[bool]] = {}
    for nid, ok in calls:
        outcomes.setdefault(nid, []).append(ok)
    assert len(outcomes) == expected
    assert report.delivered + report.dead_lettered == expected
    for seq in outcomes.values():
        # retried only after a failure, and never past the cap
        assert 1 <= len(seq) <= 3
        assert not any(seq[:-1])
    dead = {nid for nid, seq in outcomes.items() if not seq[-1]}
    assert all(len(outcomes[nid]) == 3 for nid in dead)
    assert {n.id for n in b.dead_letters} == dead
    assert b.pending() == 0


def test_deleting_a_subscription_purges_its_queue(clock):
    b, rec = make(clock)
    b.create_subscription(Subscription("keep", "http://a.example/n"))
    b.create_subscription(Subscription("drop", "http://b.example/n"))
    b.create_entity(entity())
    assert b.pending() == 2
    b.delete_subscription("drop")
    assert b.pending() == 1
    b.drain()
    assert [e for e, _ in rec.bodies] == ["http://a.example/n"]


def test_http_api_and_client(clock):
    received = []
    sink = Router()

    @sink.route("POST", "/notify")
    def notify(req):
        received.append(req.json())
        return Response(200, {})

    b = ContextBroker(clock=clock)
    with Server(build_router(b)) as server, Server(sink) as sink_server:
        client = BrokerClient(server.url)
        sid = client.create_subscription(Subscription("", sink_server.url + "/notify", ("Thing",)))
        assert sid.startswith("urn:ngsi-ld:Subscription:")
        client.create_entity(from_key_values({"id": "urn:ngsi-ld:Thing:1", "type": "Thing", "t": 1}))
        with pytest.raises(AlreadyExists):
            client.create_entity(from_key_values({"id": "urn:ngsi-ld:Thing:1", "type": "Thing"}))
        client.upsert_entity(entity(t=2))
        assert client.get_entity("urn:ngsi-ld:Thing:1", "keyValues")["t"] == 2
        assert [e.id for e in client.query_entities("Thing", "t==2")] == ["urn:ngsi-ld:Thing:1"]
        res = http_request("GET", server.url + "/ngsi-ld/v1/entities?limit=zero")
        assert res.status == 400 and res.json()["type"].startswith("https://uri.etsi.org/ngsi-ld/errors/")
        assert http_request("GET", server.url + "/ngsi-ld/v1/entities/urn:none:1").status == 404
        assert http_request("POST", server.url + "/ngsi-ld/v1/entities", data=b"{not json").status == 400
        b.drain()
        assert [n["data"][0]["t"]["value"] for n in received] == [1, 2]
        client.delete_entity("urn:ngsi-ld:Thing:1")
        with pytest.raises(NotFound):
            client.get_entity("urn:ngsi-ld:Thing:1")
        assert http_request("GET", server.url + f"/ngsi-ld/v1/subscriptions/{sid}").json()["id"] == sid
