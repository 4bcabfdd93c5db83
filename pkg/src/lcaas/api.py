"""HTTP surface of the log-sealing service."""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.concurrency import run_in_threadpool

from .anchor import LatencyModel, NullAnchor, SimulatedAnchor
from .chain import is_hash
from .clock import SimClock, WallClock
from .config import ServiceConfig
from .ledger import (
    Ledger,
    LedgerError,
    audit_ledger,
    chain_resource,
    superchain_resource,
    verify_digest,
)
from .store import StoreError

logger = logging.getLogger("lcaas.requests")


def _error(status: int, code: str, detail: str = "") -> JSONResponse:
    return JSONResponse({"error": code, "detail": detail}, status_code=status)


def build_ledger(config: ServiceConfig, clock=None) -> Ledger:
    if clock is None:
        clock = SimClock() if config.clock_mode == "simulated" else WallClock()
    if config.anchor_backend == "simulated":
        anchor = SimulatedAnchor(LatencyModel(rng_seed=config.rng_seed))
    else:
        anchor = NullAnchor()
    return Ledger.open_or_create(
        config.ledger_root,
        config.capacity_n,
        anchor=anchor,
        gas_price=config.gas_price_gwei,
        clock=clock,
        fsync=config.fsync,
    )


class AnchorPoller(threading.Thread):
    def __init__(self, ledger: Ledger, interval_s: float):
        super().__init__(name="anchor-poller", daemon=True)
        self.ledger = ledger
        self.interval_s = interval_s
        self.stopped = threading.Event()

    def run(self):
        while not self.stopped.wait(self.interval_s):
            try:
                self.ledger.poll_anchor()
            except Exception:
                logger.exception("anchor poll failed")

    def stop(self):
        self.stopped.set()


def _setup_request_log() -> None:
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False


def create_app(
    config: ServiceConfig | None = None,
    ledger: Ledger | None = None,
    *,
    poll: bool | None = None,
    request_log: bool = True,
) -> FastAPI:
    """Build the app. Pass ``ledger`` to serve an already-open ledger (tests, bench).

    The background anchor poller runs under a wall clock unless ``poll`` says
    otherwise; with a simulated clock whoever advances time also polls.
    """
    config = config or ServiceConfig()
    state: dict = {"ledger": ledger, "owned": ledger is None}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if state["ledger"] is None:
            state["ledger"] = build_ledger(config)
        led: Ledger = state["ledger"]
        run_poller = poll if poll is not None else isinstance(led.clock, WallClock)
        poller = None
        if run_poller and not isinstance(led.anchor, NullAnchor):
            poller = AnchorPoller(led, config.poll_interval_s)
            poller.start()
        try:
            yield
        finally:
            if poller:
                poller.stop()
            if state["owned"]:
                led.close()

    app = FastAPI(title="LCaaS", lifespan=lifespan)
    app.state.lcaas = state
    if request_log:
        _setup_request_log()

    def get_ledger() -> Ledger:
        return state["ledger"]

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        t0 = time.perf_counter()
        response = await call_next(request)
        if request_log:
            logger.info(
                json.dumps(
                    {
                        "method": request.method,
                        "path": request.url.path,
                        "status": response.status_code,
                        "ms": round((time.perf_counter() - t0) * 1000, 3),
                    }
                )
            )
        return response

    def _submit(fn, *args) -> JSONResponse:
        try:
            resp = fn(*args)
        except LedgerError as exc:
            if exc.code == "invalid_digest":
                return _error(400, "invalid_digest", str(exc))
            return _error(503, "ledger_unavailable", str(exc))
        except StoreError as exc:
            return _error(503, "ledger_unavailable", str(exc))
        return JSONResponse(resp.to_dict())

    @app.post("/api/v1/digests")
    async def post_digest(request: Request):
        try:
            body = json.loads(await request.body())
            digest = body["digest"]
        except (ValueError, KeyError, TypeError):
            return _error(400, "invalid_digest", "body must be {\"digest\": <64 hex chars>}")
        if not is_hash(digest):
            return _error(400, "invalid_digest", "digest must be 64 lowercase hex characters")
        return _submit(get_ledger().submit_digest, digest)

    @app.post("/api/v1/logs")
    async def post_log(request: Request):
        declared = request.headers.get("content-length")
        if declared is not None and int(declared) > config.max_body_bytes:
            return _error(413, "too_large", f"limit is {config.max_body_bytes} bytes")
        body = await request.body()
        if not body:
            return _error(400, "empty_body")
        if len(body) > config.max_body_bytes:
            return _error(413, "too_large", f"limit is {config.max_body_bytes} bytes")
        return _submit(get_ledger().submit_log, body)

    @app.post("/api/v1/seal")
    async def post_seal():
        try:
            record = get_ledger().force_seal()
        except LedgerError as exc:
            if exc.code == "empty_chain":
                return _error(409, "empty_chain", str(exc))
            return _error(503, "ledger_unavailable", str(exc))
        except StoreError as exc:
            return _error(503, "ledger_unavailable", str(exc))
        return {
            "chain_id": record.chain_id,
            "chain_state": "sealed",
            "sb_index": record.sb_index,
            "anchor_ticket": record.ticket_id,
        }

    @app.get("/api/v1/verify/digest/{digest}")
    async def get_verify_digest(digest: str):
        if not is_hash(digest):
            return _error(400, "invalid_digest")
        led = get_ledger()
        result = await run_in_threadpool(_locked, led, verify_digest, led.store.root, digest,
                                         led.locate(digest))
        if result is None:
            return _error(404, "not_found", digest)
        return result

    @app.get("/api/v1/verify")
    async def get_audit():
        led = get_ledger()
        return await run_in_threadpool(_locked, led, audit_ledger, led.store.root)

    @app.get("/api/v1/chains/{chain_id}")
    async def get_chain(chain_id: int):
        led = get_ledger()
        res = await run_in_threadpool(_locked, led, chain_resource, led.store.root, chain_id)
        if res is None:
            return _error(404, "not_found", f"chain {chain_id}")
        return res

    @app.get("/api/v1/superchain")
    async def get_superchain():
        led = get_ledger()
        return await run_in_threadpool(_locked, led, superchain_resource, led.store.root)

    @app.get("/api/v1/receipts/{ticket_id}")
    async def get_receipt(ticket_id: str):
        res = get_ledger().receipt(ticket_id)
        if res is None:
            return _error(404, "not_found", ticket_id)
        return res

    @app.get("/api/v1/status")
    async def get_status():
        led = get_ledger()
        return {
            "capacity_n": led.capacity_n,
            "open_chain_id": led.current.chain_id,
            "open_chain_data_blocks": led.current.data_count,
            "sb_count": len(led.super_chain.super_blocks),
            "pending_anchors": len(led.pending_tickets),
            "receipts": len(led.receipts),
            "anchor_backend": led.anchor.name,
            "gas_price_gwei": led.gas_price,
        }

    return app


def _locked(led: Ledger, fn, *args):
    # files are read under the writer lock so a read never sees half a rotation
    with led.lock:
        return fn(*args)


def serve(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
