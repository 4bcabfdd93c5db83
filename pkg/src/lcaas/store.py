"""
Append-only JSON Lines persistence for a ledger directory.

Layout::

    <root>/manifest.json
    <root>/circled-<id>.jsonl
    <root>/superchain.jsonl
    <root>/receipts.jsonl

Every line is written with a single ``write`` on an ``O_APPEND`` descriptor
before the caller is acknowledged. A final line without its newline is a
torn write and is dropped on load; anything wrong before that is treated
as tampering and stops the load.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .anchor import AnchorReceipt, pseudo_tx_hash
from .chain import (
    Block,
    BlockType,
    ChainError,
    CircledBlockchain,
    SuperBlockchain,
    parse_block,
    verify_circled,
    verify_super_chain,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUPERCHAIN = "superchain.jsonl"
RECEIPTS = "receipts.jsonl"
LOCKFILE = ".lock"
_CIRCLED_RE = re.compile(r"circled-(\d+)\.jsonl")

SUPER = "superchain"


class StoreError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class CorruptionDetected(StoreError):
    def __init__(self, file: str | Path, line: int, reason: str):
        super().__init__("corruption_detected", f"{Path(file).name}:{line}: {reason}")
        self.file = str(file)
        self.line = line
        self.reason = reason


class LedgerLocked(StoreError):
    pass


def circled_name(chain_id: int) -> str:
    return f"circled-{chain_id}.jsonl"


@dataclass
class ParsedFile:
    records: list[dict]
    torn: bool = False
    # (line number, reason) of the first unparseable complete line
    error: tuple[int, str] | None = None
    good_bytes: int = 0


def read_jsonl(path: Path) -> ParsedFile:
    """Parse complete lines up to the first bad one; report a torn tail separately."""
    raw = path.read_bytes() if path.exists() else b""
    out = ParsedFile([])
    offset = 0
    lineno = 0
    while offset < len(raw):
        nl = raw.find(b"\n", offset)
        if nl < 0:
            out.torn = True
            break
        lineno += 1
        chunk = raw[offset:nl]
        try:
            rec = json.loads(chunk.decode("utf-8"))
            if not isinstance(rec, dict):
                raise ValueError("line is not a JSON object")
        except (UnicodeDecodeError, ValueError) as exc:
            out.error = (lineno, f"unparseable: {exc}")
            break
        out.records.append(rec)
        offset = nl + 1
        out.good_bytes = offset
    return out


def records_to_blocks(records: list[dict]) -> tuple[list[Block], tuple[int, str] | None]:
    blocks = []
    for i, rec in enumerate(records):
        try:
            blocks.append(Block.from_dict(rec))
        except (ValueError, TypeError, KeyError) as exc:
            return blocks, (i + 1, f"bad block record: {exc}")
    return blocks, None


@dataclass
class LedgerState:
    capacity_n: int
    chains: list[CircledBlockchain]
    super_chain: SuperBlockchain
    receipts: list[AnchorReceipt]
    manifest: dict = field(default_factory=dict)
    # files whose torn trailing line was dropped, with the byte length to keep
    torn: dict[str, int] = field(default_factory=dict)


@dataclass
class RawLedger:
    """Whatever could be parsed from a directory, plus every parse problem found."""

    manifest: dict
    chains: list[CircledBlockchain]
    super_chain: SuperBlockchain
    receipts: list[AnchorReceipt]
    problems: list[tuple[str, int, str]] = field(default_factory=list)
    torn: dict[str, int] = field(default_factory=dict)


def read_manifest(root: Path) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise StoreError("no_ledger", f"{root} has no {MANIFEST}") from None
    except ValueError as exc:
        raise CorruptionDetected(path, 1, f"unparseable manifest: {exc}") from None
    if not isinstance(manifest.get("capacity_n"), int) or manifest["capacity_n"] < 1:
        raise CorruptionDetected(path, 1, "manifest lacks a valid capacity_n")
    return manifest


def chain_ids(root: Path) -> list[int]:
    ids = []
    for p in Path(root).iterdir():
        m = _CIRCLED_RE.fullmatch(p.name)
        if m:
            ids.append(int(m.group(1)))
    return sorted(ids)


def read_ledger(root: str | Path) -> RawLedger:
    """Tolerant read used by audits: never raises on content, records problems instead."""
    root = Path(root)
    manifest = read_manifest(root)
    capacity = manifest["capacity_n"]
    problems: list[tuple[str, int, str]] = []
    torn: dict[str, int] = {}

    def blocks_of(path: Path) -> list[Block]:
        parsed = read_jsonl(path)
        if parsed.torn:
            torn[path.name] = parsed.good_bytes
        if parsed.error:
            problems.append((path.name, *parsed.error))
        blocks, err = records_to_blocks(parsed.records)
        if err:
            problems.append((path.name, *err))
        return blocks

    ids = chain_ids(root)
    if ids != list(range(len(ids))):
        problems.append((root.name, 0, f"chain files not contiguous: {ids}"))
    chains = [CircledBlockchain(cid, capacity, blocks_of(root / circled_name(cid))) for cid in ids]
    super_chain = SuperBlockchain(blocks_of(root / SUPERCHAIN))

    receipts = []
    rpath = root / RECEIPTS
    parsed = read_jsonl(rpath)
    if parsed.torn:
        torn[RECEIPTS] = parsed.good_bytes
    if parsed.error:
        problems.append((RECEIPTS, *parsed.error))
    for i, rec in enumerate(parsed.records, start=1):
        try:
            r = AnchorReceipt.from_dict(rec)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append((RECEIPTS, i, f"bad receipt record: {exc}"))
            break
        if r.pseudo_tx_hash != pseudo_tx_hash(r.payload_hash, r.ticket_id) or r.latency_ms < 0:
            problems.append((RECEIPTS, i, "receipt does not re-verify"))
            break
        receipts.append(r)
    return RawLedger(manifest, chains, super_chain, receipts, problems, torn)


def load_all(root: str | Path) -> LedgerState:
    """Strict load: every chain must verify, or :class:`CorruptionDetected` is raised."""
    root = Path(root)
    raw = read_ledger(root)
    for name, size in raw.torn.items():
        logger.warning("discarding torn trailing line in %s (keeping %d bytes)", name, size)
    if raw.problems:
        name, line, reason = raw.problems[0]
        raise CorruptionDetected(root / name, line, reason)

    if raw.chains and not raw.chains[-1].blocks and raw.chains[-1].chain_id > 0:
        # the crash hit while the next chain's genesis was being written
        empty = raw.chains.pop()
        raw.torn[circled_name(empty.chain_id)] = 0

    prev_terminal = None
    for chain in raw.chains:
        report = verify_circled(chain, prev_terminal)
        if not report.ok:
            f = report.first_failure
            raise CorruptionDetected(root / circled_name(chain.chain_id), f.index + 1, f.reason)
        if not chain.sealed and chain.chain_id != len(raw.chains) - 1:
            raise CorruptionDetected(
                root / circled_name(chain.chain_id), len(chain.blocks), "unsealed interior chain"
            )
        prev_terminal = chain.blocks[-1].current_hash
    if not raw.chains:
        raise CorruptionDetected(root / circled_name(0), 1, "missing first circled chain")

    report = verify_super_chain(raw.super_chain)
    if not report.ok:
        f = report.first_failure
        raise CorruptionDetected(root / SUPERCHAIN, f.index + 1, f.reason)
    for k, sb in enumerate(raw.super_chain.super_blocks):
        line = k + 2
        if k >= len(raw.chains) or not raw.chains[k].sealed:
            raise CorruptionDetected(root / SUPERCHAIN, line, "super block without sealed chain")
        try:
            embedded = parse_block(sb.data)
        except ChainError as exc:
            raise CorruptionDetected(root / SUPERCHAIN, line, str(exc)) from None
        if embedded != raw.chains[k].terminal:
            raise CorruptionDetected(root / SUPERCHAIN, line, "terminal_mismatch")

    return LedgerState(
        raw.manifest["capacity_n"], raw.chains, raw.super_chain, raw.receipts, raw.manifest,
        raw.torn,
    )


class LedgerStore:
    """Single-writer handle on a ledger directory."""

    def __init__(self, root: str | Path, *, fsync: bool = False, lock: bool = True):
        self.root = Path(root)
        self.fsync = fsync
        self._fds: dict[str, int] = {}
        self._tails: dict[object, Block] = {}
        self._lock_fd: int | None = None
        if lock:
            self._acquire_lock()

    # -- lifecycle ----------------------------------------------------------

    def _acquire_lock(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.root / LOCKFILE, os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(fd)
            raise LedgerLocked("ledger_locked", f"{self.root} is held by another writer") from None
        os.ftruncate(fd, 0)
        os.write(fd, str(os.getpid()).encode())
        self._lock_fd = fd

    def close(self) -> None:
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def is_ledger(root: str | Path) -> bool:
        return (Path(root) / MANIFEST).exists()

    def initialize(self, capacity_n: int, genesis: Block, super_genesis: Block) -> None:
        existing = [p for p in self.root.iterdir() if p.name != LOCKFILE]
        if existing:
            raise StoreError("nonempty_dir", str(self.root))
        self.append_block(0, genesis)
        self.append_block(SUPER, super_genesis)
        self.write_manifest({"capacity_n": capacity_n, "active_chain_id": 0})

    def load(self) -> LedgerState:
        """Strict load, then cut torn tails so later appends start on a clean line."""
        state = load_all(self.root)
        for name, size in state.torn.items():
            if size == 0 and _CIRCLED_RE.fullmatch(name):
                (self.root / name).unlink()
                continue
            with open(self.root / name, "r+b") as fh:
                fh.truncate(size)
        for chain in state.chains:
            self._tails[chain.chain_id] = chain.blocks[-1]
        self._tails[SUPER] = state.super_chain.blocks[-1]
        return state

    # -- writes -------------------------------------------------------------

    def _write_line(self, name: str, record: dict) -> None:
        fd = self._fds.get(name)
        if fd is None:
            fd = os.open(self.root / name, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            self._fds[name] = fd
        line = (json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n").encode()
        try:
            written = os.write(fd, line)
            if written != len(line):
                raise OSError(f"short write to {name}: {written} of {len(line)} bytes")
            if self.fsync:
                os.fsync(fd)
        except OSError as exc:
            raise StoreError("io_failure", str(exc)) from exc

    def append_block(self, target: int | str, block: Block) -> None:
        """Persist one block of circled chain ``target`` or of the super chain."""
        tail = self._tails.get(target)
        if tail is None:
            ok = block.index == 0 and self._genesis_fits(target, block)
        else:
            ok = (
                block.index == tail.index + 1
                and block.previous_hash == tail.current_hash
                and tail.block_type != BlockType.TERMINAL
            )
        if not ok or block.recompute_hash() != block.current_hash:
            raise StoreError("out_of_order_block", f"{target}: index {block.index}")
        name = SUPERCHAIN if target == SUPER else circled_name(int(target))
        self._write_line(name, block.to_dict())
        self._tails[target] = block

    def _genesis_fits(self, target, block: Block) -> bool:
        if target == SUPER:
            return block.block_type == BlockType.SUPER_GENESIS
        if target == 0:
            return block.block_type == BlockType.ABSOLUTE_GENESIS
        prev = self._tails.get(target - 1)
        return (
            block.block_type == BlockType.RELATIVE_GENESIS
            and prev is not None
            and prev.block_type == BlockType.TERMINAL
            and block.previous_hash == prev.current_hash
        )

    def append_receipt(self, receipt: AnchorReceipt) -> None:
        self._write_line(RECEIPTS, receipt.to_dict())

    def write_manifest(self, manifest: dict) -> None:
        tmp = self.root / (MANIFEST + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        os.replace(tmp, self.root / MANIFEST)
