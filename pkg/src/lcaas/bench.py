"""
Open-loop load generator and factor-matrix driver.

Each cell pushes ``file_count`` synthetic 64-byte digests into a service
configured with capacity ``n`` and gas tier ``g`` at a fixed rate, tracks
every super block until its anchor receipt arrives and summarizes the
submit-to-confirm latencies.

Two clock modes:

* ``sim``: the service, its anchor and the generator share one
  :class:`~lcaas.clock.SimClock`. The service is driven in-process through
  its HTTP app, so a 2000-second cell costs only the work it does.
* ``wall``: real time against a URL; if none is given a server is started
  on a loopback port for the duration of the run.
"""

from __future__ import annotations

import asyncio
import csv
import hashlib
import itertools
import json
import logging
import math
import random
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import stats
from .anchor import LatencyModel, SimulatedAnchor
from .clock import SimClock
from .config import ServiceConfig
from .ledger import Ledger

logger = logging.getLogger(__name__)

TPS_LEVELS = (0.1, 1, 10, 100)
N_LEVELS = (1, 10, 100)
GAS_LEVELS = (6, 9, 20)
OUTLIER_MS = 180_000
FACTORS = ("tps", "n", "gas_gwei")


class BenchError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


def default_file_count(tps: float) -> int:
    return 1000 if tps >= 10 else 200


@dataclass(frozen=True)
class ExperimentConfig:
    tps: float
    n: int
    gas_gwei: int
    file_count: int
    file_size_bytes: int = 64
    seed: int = 0

    @property
    def label(self) -> str:
        return f"tps{self.tps:g}-n{self.n}-g{self.gas_gwei}"

    @property
    def expected_sbs(self) -> int:
        return self.file_count // self.n

    @property
    def interarrival_ms(self) -> float:
        return 1000.0 / self.tps


def matrix(seed: int = 0, file_count: dict | None = None) -> list[ExperimentConfig]:
    """All 4 x 3 x 3 cells in a fixed order; ``file_count`` may override per tps level."""
    cells = []
    for i, (tps, n, g) in enumerate(itertools.product(TPS_LEVELS, N_LEVELS, GAS_LEVELS)):
        count = (file_count or {}).get(tps, default_file_count(tps))
        cells.append(ExperimentConfig(tps, n, g, count, seed=seed * 1000 + i))
    return cells


def synthetic_digests(config: ExperimentConfig) -> list[str]:
    rng = random.Random(config.seed)
    return [
        hashlib.sha256(rng.randbytes(config.file_size_bytes)).hexdigest()
        for _ in range(config.file_count)
    ]


@dataclass
class SBTiming:
    sb_index: int
    ticket_id: str | None
    sealed_at: int
    submitted_at: int | None = None
    confirmed_at: int | None = None

    @property
    def latency_ms(self) -> int | None:
        if self.confirmed_at is None or self.submitted_at is None:
            return None
        return self.confirmed_at - self.submitted_at

    @property
    def seal_to_confirm_ms(self) -> int | None:
        return None if self.confirmed_at is None else self.confirmed_at - self.sealed_at


@dataclass
class RawTimings:
    config: ExperimentConfig
    clock: str
    sbs: list[SBTiming] = field(default_factory=list)
    ingest_ms: list[float] = field(default_factory=list)
    send_lag_ms: list[float] = field(default_factory=list)
    rejected: int = 0
    send_window_s: float = 0.0
    errors: list[str] = field(default_factory=list)


def _summary(values) -> dict:
    if not values:
        return {"count": 0, "mean": None, "median": None, "p95": None}
    return {
        "count": len(values),
        "mean": stats.mean(values),
        "median": stats.median(values),
        "p95": stats.percentile(values, 95),
    }


def histogram(values, bins: int = 50, hi: float | None = None) -> dict:
    """Equal-width bins over [0, hi]; ``hi`` defaults to the 99.9th percentile."""
    if not values:
        return {"edges": [], "counts": []}
    hi = stats.percentile(values, 99.9) if hi is None else hi
    hi = hi if hi > 0 else 1.0
    width = hi / bins
    counts = [0] * bins
    for v in values:
        if 0 <= v <= hi:
            counts[min(int(v / width), bins - 1)] += 1
    return {"edges": [i * width for i in range(bins + 1)], "counts": counts}


# -- simulated-clock cells ----------------------------------------------------


def run_cell_sim(config: ExperimentConfig, workdir: str | Path | None = None) -> RawTimings:
    """Drive one cell through the HTTP app in-process on a shared virtual clock."""
    from fastapi.testclient import TestClient

    from .api import create_app

    clock = SimClock(0)
    raw = RawTimings(config, "sim")
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        anchor = SimulatedAnchor(LatencyModel(rng_seed=config.seed))
        ledger = Ledger.create(
            Path(tmp) / "ledger", config.n, anchor=anchor, gas_price=config.gas_gwei, clock=clock
        )
        app = create_app(
            ServiceConfig(capacity_n=config.n, gas_price_gwei=config.gas_gwei, clock_mode="simulated"),
            ledger,
            poll=False,
            request_log=False,
        )
        tracked: dict[str, SBTiming] = {}
        try:
            with TestClient(app) as client:
                for k, digest in enumerate(synthetic_digests(config)):
                    # open loop: the k-th send time depends on k alone
                    clock.advance_to(round(k * config.interarrival_ms))
                    ledger.poll_anchor()
                    t0 = time.perf_counter()
                    r = client.post("/api/v1/digests", json={"digest": digest})
                    raw.ingest_ms.append((time.perf_counter() - t0) * 1000)
                    raw.send_lag_ms.append(0.0)
                    if r.status_code != 200:
                        raw.rejected += 1
                        raw.errors.append(f"submission {k}: HTTP {r.status_code}")
                        continue
                    body = r.json()
                    if body["chain_state"] == "sealed":
                        t = SBTiming(body["sb_index"], body["anchor_ticket"], clock.now_ms())
                        raw.sbs.append(t)
                        if t.ticket_id:
                            tracked[t.ticket_id] = t
                raw.send_window_s = clock.now_ms() / 1000

                while ledger.pending_tickets:
                    nxt = anchor.next_confirmation()
                    if nxt is None:
                        break
                    clock.advance_to(max(nxt, clock.now_ms()))
                    ledger.poll_anchor()

                for ticket_id, t in tracked.items():
                    rec = client.get(f"/api/v1/receipts/{ticket_id}").json()
                    t.submitted_at = rec.get("submitted_at")
                    t.confirmed_at = rec.get("confirmed_at")
        finally:
            ledger.close()
    return raw


# -- wall-clock cells ---------------------------------------------------------


class LocalServer:
    """Serve a fresh ledger on a loopback port from a background thread."""

    def __init__(self, config: ServiceConfig):
        import uvicorn

        from .api import create_app

        self.config = config
        app = create_app(config, request_log=False)
        self.server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=config.port, log_level="warning",
                           lifespan="on")
        )
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        sock = self.server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline or not self.thread.is_alive():
                raise BenchError("service_unreachable", "local server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


async def _generate_wall(
    config: ExperimentConfig, url: str, receipt_timeout_s: float, raw: RawTimings
) -> None:
    import httpx

    interval = 1.0 / config.tps
    digests = synthetic_digests(config)
    sealed: list[SBTiming] = []
    limits = httpx.Limits(max_connections=64, max_keepalive_connections=64)
    async with httpx.AsyncClient(base_url=url, timeout=10.0, limits=limits) as client:
        try:
            await client.get("/api/v1/status")
        except httpx.HTTPError as exc:
            raise BenchError("service_unreachable", str(exc)) from exc

        async def send(k: int, digest: str, scheduled: float):
            t0 = time.perf_counter()
            raw.send_lag_ms[k] = (t0 - scheduled) * 1000
            try:
                r = await client.post("/api/v1/digests", json={"digest": digest})
            except httpx.HTTPError as exc:
                raw.rejected += 1
                raw.errors.append(f"submission {k}: {exc!r}")
                return
            raw.ingest_ms[k] = (time.perf_counter() - t0) * 1000
            if r.status_code != 200:
                raw.rejected += 1
                raw.errors.append(f"submission {k}: HTTP {r.status_code}")
                return
            body = r.json()
            if body["chain_state"] == "sealed":
                sealed.append(SBTiming(body["sb_index"], body["anchor_ticket"], 0))

        raw.send_lag_ms = [0.0] * len(digests)
        raw.ingest_ms = [math.nan] * len(digests)
        tasks = []
        start = time.perf_counter()
        for k, digest in enumerate(digests):
            scheduled = start + k * interval
            delay = scheduled - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            tasks.append(asyncio.create_task(send(k, digest, scheduled)))
        last_send = time.perf_counter()
        await asyncio.gather(*tasks)
        raw.send_window_s = last_send - start
        raw.ingest_ms = [v for v in raw.ingest_ms if not math.isnan(v)]

        deadline = time.perf_counter() + receipt_timeout_s
        waiting = {t.ticket_id: t for t in sealed if t.ticket_id}
        raw.sbs = sorted(sealed, key=lambda t: t.sb_index)
        while True:
            for ticket_id, t in list(waiting.items()):
                rec = (await client.get(f"/api/v1/receipts/{ticket_id}")).json()
                t.submitted_at = rec.get("submitted_at")
                t.sealed_at = t.submitted_at or 0
                if rec.get("status") == "confirmed":
                    t.confirmed_at = rec["confirmed_at"]
                    del waiting[ticket_id]
            if not waiting or time.perf_counter() >= deadline:
                break
            await asyncio.sleep(min(0.5, max(0.0, deadline - time.perf_counter())))


def run_cell_wall(
    config: ExperimentConfig,
    url: str | None = None,
    receipt_timeout_s: float = 60.0,
    workdir: str | Path | None = None,
) -> RawTimings:
    raw = RawTimings(config, "wall")
    if url is not None:
        asyncio.run(_generate_wall(config, url, receipt_timeout_s, raw))
        return raw
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        svc = ServiceConfig(
            capacity_n=config.n,
            gas_price_gwei=config.gas_gwei,
            ledger_root=str(Path(tmp) / "ledger"),
            listen_address="127.0.0.1:0",
            rng_seed=config.seed,
        )
        with LocalServer(svc) as server:
            asyncio.run(_generate_wall(config, server.url, receipt_timeout_s, raw))
    return raw


def generate_load(config: ExperimentConfig, clock: str = "sim", **kwargs) -> RawTimings:
    if clock == "sim":
        return run_cell_sim(config, workdir=kwargs.get("workdir"))
    if clock == "wall":
        return run_cell_wall(config, **kwargs)
    raise ValueError(f"unknown clock mode {clock!r}")


# -- reports ------------------------------------------------------------------


def build_report(raw: RawTimings) -> dict:
    cfg = raw.config
    latencies = [t.latency_ms for t in raw.sbs if t.latency_ms is not None]
    seal_to_confirm = [t.seal_to_confirm_ms for t in raw.sbs if t.seal_to_confirm_ms is not None]
    summary = _summary(latencies)
    # factors are constant inside a cell, so the only in-cell relation worth
    # reporting is drift of latency over the run
    trend = None
    if len(latencies) >= 3 and len(set(latencies)) > 1:
        order = list(range(len(latencies)))
        trend = {
            "pearson": stats.pearson(order, latencies),
            "spearman": stats.spearman(order, latencies),
            "fit": stats.linear_fit(order, latencies).to_dict(),
        }
    return {
        "cell": cfg.label,
        "config": asdict(cfg),
        "clock": raw.clock,
        "expected_sbs": cfg.expected_sbs,
        "sb_count": len(raw.sbs),
        "confirmed_sbs": len(latencies),
        "rejected": raw.rejected,
        "errors": raw.errors[:20],
        "send_window_s": raw.send_window_s,
        "nominal_window_s": (cfg.file_count - 1) / cfg.tps,
        "max_send_lag_ms": max(raw.send_lag_ms, default=0.0),
        "ingest_ms": _summary(raw.ingest_ms),
        "latency_ms": latencies,
        "seal_to_confirm_ms": seal_to_confirm,
        "mean_ms": summary["mean"],
        "median_ms": summary["median"],
        "p95_ms": summary["p95"],
        "factor_correlations": {f: None for f in FACTORS},
        "trend": trend,
        "histogram": histogram(latencies),
        "outliers_ms": sorted(v for v in latencies if v > OUTLIER_MS),
    }


def run_cell(config: ExperimentConfig, clock: str = "sim", **kwargs) -> dict:
    return build_report(generate_load(config, clock, **kwargs))


def run_matrix(
    base_seed: int = 0,
    clock: str = "sim",
    cells: list[ExperimentConfig] | None = None,
    progress=None,
    **kwargs,
) -> list[dict]:
    reports = []
    for cfg in cells or matrix(base_seed):
        try:
            report = run_cell(cfg, clock, **kwargs)
        except Exception as exc:  # one bad cell must not sink the matrix
            logger.exception("cell %s failed", cfg.label)
            report = {"cell": cfg.label, "config": asdict(cfg), "error": repr(exc),
                      "latency_ms": []}
        reports.append(report)
        if progress:
            progress(report)
    return reports


# -- cross-experiment analysis ------------------------------------------------


def _relations(xs, ys) -> dict:
    out: dict = {"n": len(xs)}
    for name, fn in (("pearson", stats.pearson), ("spearman", stats.spearman)):
        try:
            out[name] = fn(xs, ys)
        except stats.StatsError as exc:
            out[name] = None
            out[f"{name}_error"] = exc.code
    try:
        out["linear_fit"] = stats.linear_fit(xs, ys).to_dict()
    except stats.StatsError as exc:
        out["linear_fit"] = None
        out["linear_fit_error"] = exc.code
    return out


COMPOSITES = {
    "tps*n": lambda c: c["tps"] * c["n"],
    "tps*gas_gwei": lambda c: c["tps"] * c["gas_gwei"],
    "n*gas_gwei": lambda c: c["n"] * c["gas_gwei"],
}


def analyze(reports: list[dict], bins: int = 50) -> dict:
    good = [r for r in reports if "error" not in r and r["latency_ms"]]
    if len(good) < 2:
        raise BenchError("insufficient_data", f"{len(good)} usable reports")

    def factor_value(cfg, name):
        return COMPOSITES[name](cfg) if name in COMPOSITES else cfg[name]

    names = list(FACTORS) + list(COMPOSITES)
    raw_rows = [(r["config"], v) for r in good for v in r["latency_ms"]]
    latencies = [v for _, v in raw_rows]
    correlations: dict = {"raw": {}}
    for name in names:
        correlations["raw"][name] = _relations([factor_value(c, name) for c, _ in raw_rows], latencies)
    for agg in ("mean_ms", "median_ms", "p95_ms"):
        correlations[agg] = {
            name: _relations([factor_value(r["config"], name) for r in good], [r[agg] for r in good])
            for name in names
        }

    tiers: dict[int, list[float]] = {}
    for r in good:
        tiers.setdefault(r["config"]["gas_gwei"], []).extend(r["latency_ms"])
    ks = {}
    for a, b in itertools.combinations(sorted(tiers), 2):
        d, p = stats.ks_two_sample(tiers[a], tiers[b])
        ks[f"g{a}_vs_g{b}"] = {"D": d, "p_value": p, "sizes": [len(tiers[a]), len(tiers[b])]}

    return {
        "cells": len(reports),
        "failed_cells": [r["cell"] for r in reports if "error" in r],
        "total_sbs": len(latencies),
        "overall": _summary(latencies),
        "per_tier": {f"g{g}": {**_summary(v), "share_over_32s": sum(x > 32_000 for x in v) / len(v)}
                     for g, v in sorted(tiers.items())},
        "correlations": correlations,
        "max_abs_raw_correlation": {
            f: max(abs(correlations["raw"][f]["pearson"] or 0), abs(correlations["raw"][f]["spearman"] or 0))
            for f in FACTORS
        },
        "ks": ks,
        "density": {f"g{g}": histogram(v, bins) for g, v in sorted(tiers.items())},
        "outliers": {
            "over_180s": sum(v > OUTLIER_MS for v in latencies),
            "in_180_300s": sum(180_000 <= v <= 300_000 for v in latencies),
            "over_20min": sum(v > 1_200_000 for v in latencies),
            "max_ms": max(latencies),
        },
    }


def write_outputs(out_dir: str | Path, reports: list[dict], analysis: dict | None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r in reports:
        p = out / f"report-{r['cell']}.json"
        p.write_text(json.dumps(r, indent=1))
        written.append(p)
    if analysis is not None:
        p = out / "analysis.json"
        p.write_text(json.dumps(analysis, indent=1))
        written.append(p)
        for tier, hist in analysis["density"].items():
            p = out / f"density-{tier}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_lo", "bin_hi", "count"])
                for lo, hi, c in zip(hist["edges"], hist["edges"][1:], hist["counts"]):
                    w.writerow([f"{lo:.3f}", f"{hi:.3f}", c])
            written.append(p)
    return written
