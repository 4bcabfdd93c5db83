"""
The ledger: one open circled chain, the super chain above it, and the
rotation that ties them together.

All mutations go through :class:`Ledger` under a single lock, which is the
single-writer point for the on-disk files. Rotation order on seal is
terminal -> super block -> next relative genesis -> anchor submission, and
recovery on open finishes any rotation a crash interrupted.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from .anchor import AnchorBackend, AnchorReceipt, NullAnchor
from .chain import (
    BlockType,
    ChainError,
    CircledBlockchain,
    SuperBlockchain,
    compute_hash,
    find_digest,
    is_hash,
    make_super_block,
    parse_block,
    seal,
    append_data,
    new_absolute_genesis,
    new_super_genesis,
    verify_circled,
    verify_hierarchy,
    verify_super_chain,
)
from .clock import WallClock
from .store import SUPER, LedgerStore, StoreError, read_ledger

logger = logging.getLogger(__name__)


class LedgerError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


@dataclass
class SubmissionResponse:
    digest: str
    chain_id: int
    block_index: int
    chain_state: str
    sb_index: int | None = None
    anchor_ticket: str | None = None

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "chain_id": self.chain_id,
            "block_index": self.block_index,
            "chain_state": self.chain_state,
            "sb_index": self.sb_index,
            "anchor_ticket": self.anchor_ticket,
        }


@dataclass
class SealRecord:
    """Bookkeeping for one sealed chain, used by the benchmark harness."""

    chain_id: int
    sb_index: int
    sb_hash: str
    sealed_at: int
    ticket_id: str | None = None
    submitted_at: int | None = None


class Ledger:
    def __init__(
        self,
        store: LedgerStore,
        capacity_n: int,
        chains: list[CircledBlockchain],
        super_chain: SuperBlockchain,
        *,
        anchor: AnchorBackend | None = None,
        gas_price: int = 9,
        clock=None,
        receipts: list[AnchorReceipt] | None = None,
    ):
        self.store = store
        self.capacity_n = capacity_n
        self.chains = chains
        self.super_chain = super_chain
        self.anchor = anchor or NullAnchor()
        self.gas_price = gas_price
        self.clock = clock or WallClock()
        self._lock = threading.RLock()
        self.receipts: dict[str, AnchorReceipt] = {r.ticket_id: r for r in receipts or []}
        self.seals: dict[int, SealRecord] = {}
        self._pending: dict[str, int] = {}  # ticket_id -> sb_index
        self._index: dict[str, tuple[int, int]] = {}
        self.broken = False
        for chain in chains:
            self._index_chain(chain)

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path, capacity_n: int, **kwargs) -> "Ledger":
        if capacity_n < 1:
            raise LedgerError("bad_capacity", str(capacity_n))
        clock = kwargs.get("clock") or WallClock()
        kwargs["clock"] = clock
        store = LedgerStore(root, fsync=kwargs.pop("fsync", False))
        try:
            now = clock.now_ms()
            genesis, super_genesis = new_absolute_genesis(now), new_super_genesis(now)
            store.initialize(capacity_n, genesis, super_genesis)
        except Exception:
            store.close()
            raise
        chain = CircledBlockchain(0, capacity_n, [genesis])
        return cls(store, capacity_n, [chain], SuperBlockchain([super_genesis]), **kwargs)

    @classmethod
    def open(cls, root: str | Path, **kwargs) -> "Ledger":
        store = LedgerStore(root, fsync=kwargs.pop("fsync", False))
        try:
            state = store.load()
        except Exception:
            store.close()
            raise
        ledger = cls(
            store, state.capacity_n, state.chains, state.super_chain,
            receipts=state.receipts, **kwargs,
        )
        ledger._recover()
        return ledger

    @classmethod
    def open_or_create(cls, root: str | Path, capacity_n: int, **kwargs) -> "Ledger":
        if LedgerStore.is_ledger(root):
            ledger = cls.open(root, **kwargs)
            if ledger.capacity_n != capacity_n:
                logger.warning(
                    "ledger at %s was created with n=%d; ignoring configured n=%d",
                    root, ledger.capacity_n, capacity_n,
                )
            return ledger
        return cls.create(root, capacity_n, **kwargs)

    def close(self) -> None:
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _recover(self) -> None:
        with self._lock:
            now = self.clock.now_ms()
            if not self.current.sealed and self.current.data_count == self.capacity_n:
                # died between the n-th data block and its terminal
                logger.warning("recovery: sealing full chain %d", self.current.chain_id)
                self.store.append_block(self.current.chain_id, seal(self.current, now))
            sealed = [c for c in self.chains if c.sealed]
            for chain in sealed[len(self.super_chain.super_blocks):]:
                logger.warning("recovery: adding missing super block for chain %d", chain.chain_id)
                sb = make_super_block(chain.terminal, self.super_chain, now)
                self.store.append_block(SUPER, sb)
            if self.current.sealed:
                logger.warning("recovery: opening chain after sealed chain %d", self.current.chain_id)
                self._open_next(now)
            anchored = {r.payload_hash for r in self.receipts.values()}
            for k, sb in enumerate(self.super_chain.super_blocks, start=1):
                self.seals[k] = SealRecord(k - 1, k, sb.current_hash, sb.timestamp)
                if sb.current_hash not in anchored:
                    self._anchor(k, now)
            self._write_manifest()

    # -- state --------------------------------------------------------------

    @property
    def lock(self) -> threading.RLock:
        """The single-writer lock; hold it to read the files at a rotation boundary."""
        return self._lock

    @property
    def current(self) -> CircledBlockchain:
        return self.chains[-1]

    def _index_chain(self, chain: CircledBlockchain) -> None:
        for b in chain.blocks:
            if b.block_type == BlockType.DATA:
                self._index.setdefault(b.data, (chain.chain_id, b.index))

    def _write_manifest(self) -> None:
        self.store.write_manifest(
            {
                "capacity_n": self.capacity_n,
                "active_chain_id": self.current.chain_id,
                "chain_count": len(self.chains),
                "sb_count": len(self.super_chain.super_blocks),
                "receipt_count": len(self.receipts),
            }
        )

    # -- mutations ----------------------------------------------------------

    def submit_digest(self, digest: str) -> SubmissionResponse:
        if not is_hash(digest):
            raise LedgerError("invalid_digest", repr(digest)[:80])
        with self._lock:
            self._check_usable()
            chain = self.current
            now = self.clock.now_ms()
            block = append_data(chain, digest, now)
            try:
                self.store.append_block(chain.chain_id, block)
            except StoreError:
                chain.blocks.pop()
                raise
            self._index.setdefault(digest, (chain.chain_id, block.index))
            resp = SubmissionResponse(digest, chain.chain_id, block.index, "open")
            if chain.data_count == self.capacity_n:
                record = self._rotate(now)
                resp.chain_state = "sealed"
                resp.sb_index = record.sb_index
                resp.anchor_ticket = record.ticket_id
            return resp

    def _check_usable(self) -> None:
        if self.broken:
            raise LedgerError("ledger_unavailable", "a previous write failed; restart to recover")

    def submit_log(self, body: bytes) -> SubmissionResponse:
        return self.submit_digest(compute_hash(body))

    def force_seal(self) -> SealRecord:
        with self._lock:
            self._check_usable()
            if self.current.data_count == 0:
                raise LedgerError("empty_chain", f"chain {self.current.chain_id} has no data")
            return self._rotate(self.clock.now_ms(), partial=True)

    def _rotate(self, now: int, partial: bool = False) -> SealRecord:
        # a failure part-way leaves memory ahead of disk; only a reload can fix that
        self.broken = True
        record = self._do_rotate(now, partial)
        self.broken = False
        return record

    def _do_rotate(self, now: int, partial: bool) -> SealRecord:
        chain = self.current
        terminal = seal(chain, now, allow_partial=partial)
        self.store.append_block(chain.chain_id, terminal)
        sb = make_super_block(terminal, self.super_chain, now)
        self.store.append_block(SUPER, sb)
        record = SealRecord(chain.chain_id, sb.index, sb.current_hash, now)
        self.seals[sb.index] = record
        self._open_next(now)
        self._anchor(sb.index, now)
        self._write_manifest()
        return record

    def _open_next(self, now: int) -> None:
        prev = self.current
        nxt = CircledBlockchain.open(prev.chain_id + 1, self.capacity_n, now, prev.terminal)
        self.store.append_block(nxt.chain_id, nxt.blocks[0])
        self.chains.append(nxt)

    def _anchor(self, sb_index: int, now: int) -> None:
        if isinstance(self.anchor, NullAnchor):
            return
        record = self.seals[sb_index]
        ticket = self.anchor.submit(record.sb_hash, self.gas_price, now)
        record.ticket_id = ticket.ticket_id
        record.submitted_at = ticket.submitted_at
        self._pending[ticket.ticket_id] = sb_index

    def poll_anchor(self) -> list[AnchorReceipt]:
        """Collect confirmations that are due and persist their receipts."""
        with self._lock:
            now = self.clock.now_ms()
            done = []
            for ticket_id in list(self._pending):
                receipt = self.anchor.poll(ticket_id, now)
                if receipt is None:
                    continue
                self.store.append_receipt(receipt)
                self.receipts[ticket_id] = receipt
                del self._pending[ticket_id]
                if hasattr(self.anchor, "forget"):
                    self.anchor.forget(ticket_id)
                done.append(receipt)
            return done

    @property
    def pending_tickets(self) -> list[str]:
        with self._lock:
            return list(self._pending)

    # -- reads --------------------------------------------------------------

    def locate(self, digest: str) -> tuple[int, int] | None:
        return self._index.get(digest)

    def receipt(self, ticket_id: str) -> dict | None:
        with self._lock:
            r = self.receipts.get(ticket_id)
            if r is not None:
                return {"status": "confirmed", **r.to_dict()}
            if ticket_id in self._pending:
                rec = self.seals[self._pending[ticket_id]]
                return {
                    "status": "pending",
                    "ticket_id": ticket_id,
                    "payload_hash": rec.sb_hash,
                    "submitted_at": rec.submitted_at,
                }
            return None


# -- audits over the evidence files -----------------------------------------
#
# These read the directory, not the in-memory ledger, so they catch edits made
# to the files behind the service's back. The CLI and the HTTP service both
# call them, which keeps their answers identical.


def audit_ledger(root: str | Path) -> dict:
    raw = read_ledger(root)
    report = verify_hierarchy(raw.super_chain, raw.chains)
    out = report.to_dict()
    out["parse_problems"] = [{"file": f, "line": ln, "reason": r} for f, ln, r in raw.problems]
    out["ok"] = report.ok and not raw.problems
    out["failures"] = [
        {"scope": s, "index": i, "reason": r} for s, i, r in report.failures()
    ]
    return out


def _chain_report(raw, chain_id: int) -> dict:
    chain = raw.chains[chain_id]
    prev = raw.chains[chain_id - 1].blocks[-1].current_hash if chain_id > 0 and raw.chains[
        chain_id - 1
    ].blocks else None
    report = verify_circled(chain, prev).to_dict()
    bad_lines = [p for p in raw.problems if p[0] == f"circled-{chain_id}.jsonl"]
    if bad_lines:
        report["ok"] = False
        report["failures"] += [
            {"index": ln - 1, "reason": r} for _, ln, r in bad_lines
        ]
    return report


def chain_resource(root: str | Path, chain_id: int) -> dict | None:
    raw = read_ledger(root)
    if not 0 <= chain_id < len(raw.chains):
        return None
    chain = raw.chains[chain_id]
    return {
        "chain_id": chain_id,
        "capacity_n": chain.capacity_n,
        "sealed": chain.sealed,
        "length": len(chain.blocks),
        "blocks": [b.to_dict() for b in chain.blocks],
        "verification": _chain_report(raw, chain_id),
    }


def superchain_resource(root: str | Path) -> dict:
    raw = read_ledger(root)
    report = verify_super_chain(raw.super_chain).to_dict()
    bad = [p for p in raw.problems if p[0] == "superchain.jsonl"]
    if bad:
        report["ok"] = False
        report["failures"] += [{"index": ln - 1, "reason": r} for _, ln, r in bad]
    return {
        "length": len(raw.super_chain.blocks),
        "blocks": [b.to_dict() for b in raw.super_chain.blocks],
        "verification": report,
    }


def verify_digest(
    root: str | Path, digest: str, hint: tuple[int, int] | None = None
) -> dict | None:
    """Membership proof for ``digest`` plus verification of its chain and the super chain.

    ``hint`` is a known (chain_id, block_index) used when the digest can no
    longer be found in the files, e.g. because its own block was altered.
    """
    raw = read_ledger(root)
    proof = find_digest(digest, raw.chains)
    if proof is None and hint is None:
        return None
    if proof is not None:
        chain_id, block_index = proof.chain_id, proof.block_index
        located = True
    else:
        chain_id, block_index = hint
        located = False
        if chain_id >= len(raw.chains):
            return {
                "digest": digest, "ok": False, "found_in_files": False,
                "proof": None, "chain_report": None, "super_report": None,
                "embedding_ok": False,
            }
    chain = raw.chains[chain_id]
    chain_report = _chain_report(raw, chain_id)
    super_report = verify_super_chain(raw.super_chain).to_dict()
    terminal = chain.terminal
    sb_index = chain_id + 1 if terminal is not None else None
    embedding_ok = True
    if sb_index is not None:
        try:
            sb = raw.super_chain.blocks[sb_index]
            embedding_ok = sb.block_type == BlockType.SUPER and parse_block(sb.data) == terminal
        except (IndexError, ChainError):
            embedding_ok = False
    if not located:
        chain_report["ok"] = False
        chain_report["failures"].append({"index": block_index, "reason": "digest_not_in_file"})
        chain_report["failures"].sort(key=lambda f: f["index"])
    return {
        "digest": digest,
        "ok": chain_report["ok"] and super_report["ok"] and embedding_ok,
        "found_in_files": located,
        "proof": {
            "chain_id": chain_id,
            "block_index": block_index,
            "terminal": terminal.to_dict() if terminal else None,
            "sb_index": sb_index,
        },
        "chain_report": chain_report,
        "super_report": super_report,
        "embedding_ok": embedding_ok,
    }
