"""
Anchoring backends for super-block hashes.

The real deployment notarizes each super block on a public network. Here
the network is replaced by :class:`SimulatedAnchor`, which confirms a
submission after a random delay drawn from :class:`LatencyModel`: a
lognormal body per gas tier plus rare, heavy stall bands.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field

from .chain import compute_hash, is_hash


class AnchorError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


@dataclass(frozen=True)
class GasPrice:
    gwei: int

    def __post_init__(self):
        if not isinstance(self.gwei, int) or self.gwei < 1:
            raise AnchorError("invalid_gas_price", repr(self.gwei))


@dataclass(frozen=True)
class AnchorTicket:
    ticket_id: str
    payload_hash: str
    gas_price: int
    submitted_at: int

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "payload_hash": self.payload_hash,
            "gas_price": self.gas_price,
            "submitted_at": self.submitted_at,
        }


@dataclass(frozen=True)
class AnchorReceipt:
    ticket_id: str
    payload_hash: str
    pseudo_tx_hash: str
    gas_price: int
    submitted_at: int
    confirmed_at: int

    @property
    def latency_ms(self) -> int:
        return self.confirmed_at - self.submitted_at

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "payload_hash": self.payload_hash,
            "pseudo_tx_hash": self.pseudo_tx_hash,
            "gas_price": self.gas_price,
            "submitted_at": self.submitted_at,
            "confirmed_at": self.confirmed_at,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorReceipt":
        r = cls(
            d["ticket_id"], d["payload_hash"], d["pseudo_tx_hash"], int(d["gas_price"]),
            int(d["submitted_at"]), int(d["confirmed_at"]),
        )
        if "latency_ms" in d and d["latency_ms"] != r.latency_ms:
            raise ValueError("latency_ms disagrees with timestamps")
        return r


def pseudo_tx_hash(payload_hash: str, ticket_id: str) -> str:
    return compute_hash((payload_hash + ticket_id).encode("utf-8"))


@dataclass(frozen=True)
class TailBand:
    """With probability ``p`` a draw is replaced by Uniform(lo_ms, hi_ms)."""

    p: float
    lo_ms: float
    hi_ms: float


# Body medians (ms) and log-sigmas per gas tier. Cheaper gas gets a wider
# body, so more submissions land beyond 32 s while the medians stay close.
DEFAULT_TIERS: dict[int, tuple[float, float]] = {
    6: (math.log(21_600), 0.34),
    9: (math.log(21_300), 0.30),
    20: (math.log(20_800), 0.17),
}
DEFAULT_TAIL = (
    TailBand(0.0016, 180_000, 300_000),
    TailBand(0.0003, 1_200_000, 1_500_000),
)


@dataclass
class LatencyModel:
    tiers: dict[int, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_TIERS))
    tail: tuple[TailBand, ...] = DEFAULT_TAIL
    rng_seed: int = 0
    strict: bool = False

    def __post_init__(self):
        if not self.tiers:
            raise ValueError("at least one gas tier is required")
        for g, (mu, sigma) in self.tiers.items():
            if g < 1 or not math.isfinite(mu) or not math.isfinite(sigma) or sigma < 0:
                raise ValueError(f"bad tier {g}: mu={mu}, sigma={sigma}")
        total = sum(b.p for b in self.tail)
        if not 0 <= total < 0.01:
            raise ValueError(f"total tail probability must be in [0, 0.01), got {total}")
        for b in self.tail:
            if b.p < 0 or not 0 < b.lo_ms < b.hi_ms:
                raise ValueError(f"bad tail band {b}")
        self.rng = random.Random(self.rng_seed)

    @property
    def p_tail(self) -> float:
        return sum(b.p for b in self.tail)

    def tier_for(self, gas_price: int) -> int:
        if gas_price in self.tiers:
            return gas_price
        if self.strict:
            raise AnchorError("unknown_gas_tier", str(gas_price))
        return min(self.tiers, key=lambda g: (abs(g - gas_price), g))

    def body_mean_ms(self, gas_price: int) -> float:
        mu, sigma = self.tiers[self.tier_for(gas_price)]
        return math.exp(mu + sigma * sigma / 2)

    def expected_mean_ms(self, gas_price: int) -> float:
        tail_mean = sum(b.p * (b.lo_ms + b.hi_ms) / 2 for b in self.tail)
        return (1 - self.p_tail) * self.body_mean_ms(gas_price) + tail_mean


def draw(model: LatencyModel, gas_price: int) -> int:
    """One confirmation delay in whole milliseconds, always >= 1."""
    mu, sigma = model.tiers[model.tier_for(gas_price)]
    u = model.rng.random()
    acc = 0.0
    for band in model.tail:
        acc += band.p
        if u < acc:
            value = model.rng.uniform(band.lo_ms, band.hi_ms)
            break
    else:
        value = math.exp(model.rng.gauss(mu, sigma)) if sigma > 0 else math.exp(mu)
    return max(1, round(value))


class AnchorBackend:
    """Interface for notarization backends (public-network clients plug in here)."""

    name = "abstract"

    def submit(self, payload_hash: str, gas_price: int, now: int) -> AnchorTicket:
        raise NotImplementedError

    def poll(self, ticket: AnchorTicket | str, now: int) -> AnchorReceipt | None:
        raise NotImplementedError

    def pending(self) -> list[AnchorTicket]:
        return []


class NullAnchor(AnchorBackend):
    """Anchoring disabled: submissions are refused quietly by the ledger."""

    name = "none"


class SimulatedAnchor(AnchorBackend):
    name = "simulated"

    def __init__(self, model: LatencyModel | None = None):
        self.model = model or LatencyModel()
        self._lock = threading.Lock()
        self._seq = 0
        self._tickets: dict[str, tuple[AnchorTicket, int]] = {}

    def submit(self, payload_hash: str, gas_price: int, now: int) -> AnchorTicket:
        if not is_hash(payload_hash):
            raise AnchorError("invalid_hash", repr(payload_hash))
        gwei = GasPrice(gas_price).gwei
        with self._lock:
            delay = draw(self.model, gwei)
            ticket = AnchorTicket(f"t{self._seq:06d}-{payload_hash[:8]}", payload_hash, gwei, now)
            self._seq += 1
            self._tickets[ticket.ticket_id] = (ticket, now + delay)
        return ticket

    def scheduled_confirmation(self, ticket_id: str) -> int:
        return self._lookup(ticket_id)[1]

    def _lookup(self, ticket_id: str) -> tuple[AnchorTicket, int]:
        try:
            return self._tickets[ticket_id]
        except KeyError:
            raise AnchorError("unknown_ticket", ticket_id) from None

    def poll(self, ticket: AnchorTicket | str, now: int) -> AnchorReceipt | None:
        ticket_id = ticket if isinstance(ticket, str) else ticket.ticket_id
        with self._lock:
            t, confirm_at = self._lookup(ticket_id)
        if now < confirm_at:
            return None
        return AnchorReceipt(
            t.ticket_id, t.payload_hash, pseudo_tx_hash(t.payload_hash, t.ticket_id),
            t.gas_price, t.submitted_at, confirm_at,
        )

    def pending(self) -> list[AnchorTicket]:
        with self._lock:
            return [t for t, _ in self._tickets.values()]

    def forget(self, ticket_id: str) -> None:
        with self._lock:
            self._tickets.pop(ticket_id, None)

    def next_confirmation(self) -> int | None:
        with self._lock:
            return min((c for _, c in self._tickets.values()), default=None)


def make_backend(kind: str, *, seed: int = 0) -> AnchorBackend:
    if kind == "simulated":
        return SimulatedAnchor(LatencyModel(rng_seed=seed))
    if kind == "none":
        return NullAnchor()
    raise ValueError(f"unknown anchor backend {kind!r}")
