import hashlib
import json
import threading

import pytest
from fastapi.testclient import TestClient

from lcaas.anchor import LatencyModel, SimulatedAnchor
from lcaas.api import create_app
from lcaas.clock import SimClock
from lcaas.config import ServiceConfig
from lcaas.ledger import Ledger, audit_ledger

from conftest import digest_of


@pytest.fixture
def service(tmp_path):
    """Factory: (client, ledger, clock) over a fresh ledger of capacity n."""
    opened = []

    def make(n=10, anchor=True, max_body=10 * 1024 * 1024):
        clock = SimClock(1_000)
        led = Ledger.create(
            tmp_path / f"L{len(opened)}", n, clock=clock,
            anchor=SimulatedAnchor(LatencyModel(rng_seed=0)) if anchor else None,
        )
        cfg = ServiceConfig(capacity_n=n, clock_mode="simulated", max_body_bytes=max_body)
        client = TestClient(create_app(cfg, led, request_log=False))
        client.__enter__()
        opened.append((client, led))
        return client, led, clock

    yield make
    for client, led in opened:
        client.__exit__(None, None, None)
        led.close()


def post(client, d):
    return client.post("/api/v1/digests", json={"digest": d})


def test_n1_first_submission_seals(service):
    client, _, _ = service(n=1)
    body = post(client, digest_of(0)).json()
    assert body["chain_state"] == "sealed" and body["sb_index"] == 1
    assert body["anchor_ticket"] is not None


def test_n10_boundary(service):
    client, _, _ = service(n=10)
    for i in range(9):
        body = post(client, digest_of(i)).json()
        assert body["chain_state"] == "open"
        assert body["sb_index"] is None and body["anchor_ticket"] is None
    body = post(client, digest_of(9)).json()
    assert body["chain_state"] == "sealed" and body["sb_index"] == 1


def test_thousand_at_n100(service):
    client, led, _ = service(n=100)
    sealed = sum(post(client, digest_of(i)).json()["chain_state"] == "sealed" for i in range(1000))
    assert sealed == 10
    assert len(led.super_chain.super_blocks) == 10
    assert sum(c.sealed for c in led.chains) == 10
    assert audit_ledger(led.store.root)["ok"]


@pytest.mark.parametrize("payload", [{"digest": "abc"}, {"digest": "A" * 64}, {}, [1]])
def test_invalid_digest(service, payload):
    client, _, _ = service()
    r = client.post("/api/v1/digests", json=payload)
    assert r.status_code == 400 and r.json()["error"] == "invalid_digest"


def test_logs_endpoint(service):
    client, _, _ = service(n=10)
    r1 = client.post("/api/v1/logs", content=b"hello")
    r2 = client.post("/api/v1/logs", content=b"hello")
    assert r1.json()["digest"] == hashlib.sha256(b"hello").hexdigest()
    assert r2.json()["digest"] == r1.json()["digest"]
    assert r1.json()["block_index"] != r2.json()["block_index"]
    r = client.post("/api/v1/logs", content=bytes(range(64)))
    assert r.status_code == 200


def test_logs_errors(service):
    client, _, _ = service(max_body=100)
    assert client.post("/api/v1/logs", content=b"").status_code == 400
    r = client.post("/api/v1/logs", content=b"x" * 101)
    assert r.status_code == 413 and r.json()["error"] == "too_large"


def test_raw_body_not_persisted(service):
    client, led, _ = service(n=2)
    secret = b"user=alice password=hunter2"
    client.post("/api/v1/logs", content=secret)
    client.post("/api/v1/logs", content=b"more")
    for p in led.store.root.iterdir():
        if p.is_file():
            assert b"hunter2" not in p.read_bytes()


def test_verify_digest_endpoint(service):
    client, led, _ = service(n=3)
    for i in range(4):
        post(client, digest_of(i))
    r = client.get(f"/api/v1/verify/digest/{digest_of(1)}")
    assert r.status_code == 200
    body = r.json()
    assert body["ok"] and body["proof"]["chain_id"] == 0 and body["proof"]["sb_index"] == 1
    assert client.get(f"/api/v1/verify/digest/{digest_of(77)}").status_code == 404
    assert client.get("/api/v1/verify/digest/xyz").status_code == 400


def test_verify_digest_after_disk_tamper(service):
    client, led, _ = service(n=3)
    for i in range(4):
        post(client, digest_of(i))
    path = led.store.root / "circled-0.jsonl"
    rows = path.read_text().splitlines()
    rec = json.loads(rows[2])
    rec["timestamp"] += 1
    rows[2] = json.dumps(rec, separators=(",", ":"))
    path.write_text("\n".join(rows) + "\n")
    r = client.get(f"/api/v1/verify/digest/{digest_of(1)}")
    assert r.status_code == 200
    body = r.json()
    assert not body["ok"]
    assert body["chain_report"]["failures"][0] == {"index": 2, "reason": "hash_mismatch"}


def test_verify_digest_when_own_data_tampered(service):
    client, led, _ = service(n=3)
    for i in range(3):
        post(client, digest_of(i))
    path = led.store.root / "circled-0.jsonl"
    text = path.read_text().replace(digest_of(1), digest_of(55))
    path.write_text(text)
    body = client.get(f"/api/v1/verify/digest/{digest_of(1)}").json()
    assert not body["ok"] and not body["found_in_files"]
    assert body["proof"]["block_index"] == 2


def test_chain_superchain_receipt_resources(service):
    client, led, clock = service(n=2)
    tickets = [post(client, digest_of(i)).json()["anchor_ticket"] for i in range(4)]
    tickets = [t for t in tickets if t]
    chain0 = client.get("/api/v1/chains/0").json()
    assert chain0["length"] == 4 and chain0["sealed"] and chain0["verification"]["ok"]
    assert client.get("/api/v1/chains/9").status_code == 404
    sc = client.get("/api/v1/superchain").json()
    assert sc["length"] == 3 and sc["verification"]["ok"]
    pending = client.get(f"/api/v1/receipts/{tickets[0]}").json()
    assert pending["status"] == "pending"
    clock.advance(10**8)
    led.poll_anchor()
    rec = client.get(f"/api/v1/receipts/{tickets[0]}").json()
    assert rec["status"] == "confirmed" and rec["latency_ms"] > 0
    assert client.get("/api/v1/receipts/unknown").status_code == 404


def test_forced_seal(service):
    client, led, _ = service(n=100)
    assert client.post("/api/v1/seal").status_code == 409
    for i in range(5):
        post(client, digest_of(i))
    r = client.post("/api/v1/seal")
    assert r.status_code == 200 and r.json()["sb_index"] == 1
    assert len(led.chains[0].blocks) == 7
    body = post(client, digest_of(5)).json()
    assert body["chain_id"] == 1 and body["block_index"] == 1
    assert led.chains[1].blocks[0].previous_hash == led.chains[0].blocks[-1].current_hash
    assert client.get("/api/v1/verify").json()["ok"]


def test_concurrent_submissions_no_loss(service):
    client, led, _ = service(n=7)
    results = []
    lock = threading.Lock()

    def worker(base):
        for i in range(50):
            r = post(client, digest_of(base * 1000 + i))
            with lock:
                results.append((r.status_code, r.json()["digest"]))

    threads = [threading.Thread(target=worker, args=(b,)) for b in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    acked = sorted(d for code, d in results if code == 200)
    stored = sorted(b.data for c in led.chains for b in c.blocks if b.block_type == "data")
    assert acked == stored and len(acked) == 200
    assert audit_ledger(led.store.root)["ok"]
    ids = [c.chain_id for c in led.chains]
    assert ids == list(range(len(ids))) and sum(not c.sealed for c in led.chains) == 1


def test_status(service):
    client, _, _ = service(n=4)
    post(client, digest_of(0))
    s = client.get("/api/v1/status").json()
    assert s["capacity_n"] == 4 and s["open_chain_data_blocks"] == 1


def test_config_env_overrides(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"capacity_n": 10, "gas_price_gwei": 6}))
    cfg = ServiceConfig.load(cfg_file, env={"LCAAS_CAPACITY": "100", "LCAAS_SEED": "4",
                                            "LCAAS_ANCHOR": "none", "LCAAS_LISTEN": "0.0.0.0:9000"})
    assert (cfg.capacity_n, cfg.gas_price_gwei, cfg.rng_seed, cfg.anchor_backend) == (100, 6, 4, "none")
    assert cfg.port == 9000
    with pytest.raises(ValueError):
        ServiceConfig(capacity_n=0)
    cfg_file.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        ServiceConfig.load(cfg_file, env={})


def test_service_opens_ledger_from_config(tmp_path):
    cfg = ServiceConfig(capacity_n=1, ledger_root=str(tmp_path / "L"), anchor_backend="none")
    with TestClient(create_app(cfg, request_log=False)) as client:
        assert post(client, digest_of(0)).json()["chain_state"] == "sealed"
    # restart resumes on the recovered open chain
    with TestClient(create_app(cfg, request_log=False)) as client:
        body = post(client, digest_of(1)).json()
        assert body["chain_id"] == 1 and body["sb_index"] == 2
        assert client.get("/api/v1/verify").json()["ok"]
