"""
Block types, canonical hashing and the two-level chain hierarchy.

Lower level: circled blockchains. Each one opens with a genesis block
(absolute for chain 0, relative afterwards), holds up to ``capacity_n``
data blocks and is closed by a terminal block carrying an aggregate digest
of everything before it.

Upper level: the super blockchain. Every super block embeds the full
serialization of one terminal block, so checking the super chain's own
links vouches for every lower chain without re-hashing them.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

ZERO_HASH = "0" * 64
ABSOLUTE_GENESIS_DATA = "ABSOLUTE_GENESIS"
RELATIVE_GENESIS_DATA = "RELATIVE_GENESIS"
SUPER_GENESIS_DATA = "SUPER_GENESIS"

_HASH_RE = re.compile(r"[0-9a-f]{64}")


class ChainError(Exception):
    """Raised when a chain operation violates the chain contract."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class BlockType(str, enum.Enum):
    ABSOLUTE_GENESIS = "absolute_genesis"
    RELATIVE_GENESIS = "relative_genesis"
    DATA = "data"
    TERMINAL = "terminal"
    SUPER_GENESIS = "super_genesis"
    SUPER = "super"

    def __str__(self) -> str:
        return self.value


GENESIS_TYPES = frozenset({BlockType.ABSOLUTE_GENESIS, BlockType.RELATIVE_GENESIS})


def is_hash(value: object) -> bool:
    return isinstance(value, str) and _HASH_RE.fullmatch(value) is not None


def _tag(block_type) -> str:
    # verification must cope with mutated, non-enum tags
    return block_type.value if isinstance(block_type, BlockType) else str(block_type)


def canonical_serialize(
    index: int, timestamp: int, block_type, data: str, previous_hash: str
) -> bytes:
    """Hash input for a block: ``index|timestamp|type|len(data):data|previous_hash``.

    The data field is length-prefixed (in code points) so payloads containing
    ``|`` cannot collide with a different field split.
    """
    text = f"{int(index)}|{int(timestamp)}|{_tag(block_type)}|{len(data)}:{data}|{previous_hash}"
    try:
        return text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ChainError("invalid_data", "data is not valid UTF-8") from exc


def compute_hash(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class Block:
    index: int
    timestamp: int
    block_type: BlockType
    data: str
    previous_hash: str
    current_hash: str

    @classmethod
    def create(
        cls, index: int, timestamp: int, block_type: BlockType, data: str, previous_hash: str
    ) -> "Block":
        digest = compute_hash(canonical_serialize(index, timestamp, block_type, data, previous_hash))
        return cls(index, timestamp, block_type, data, previous_hash, digest)

    def recompute_hash(self) -> str:
        return compute_hash(
            canonical_serialize(
                self.index, self.timestamp, self.block_type, self.data, self.previous_hash
            )
        )

    def serialize(self) -> str:
        """All six fields in canonical form; this is what a super block embeds."""
        return (
            f"{self.index}|{self.timestamp}|{_tag(self.block_type)}|"
            f"{len(self.data)}:{self.data}|{self.previous_hash}|{self.current_hash}"
        )

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "timestamp": self.timestamp,
            "block_type": _tag(self.block_type),
            "data": self.data,
            "previous_hash": self.previous_hash,
            "current_hash": self.current_hash,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Block":
        fields = ("index", "timestamp", "block_type", "data", "previous_hash", "current_hash")
        if set(d) != set(fields):
            raise ValueError(f"block record must have exactly the fields {fields}")
        index, timestamp = d["index"], d["timestamp"]
        if not (isinstance(index, int) and isinstance(timestamp, int)) or isinstance(
            index, bool
        ):
            raise ValueError("index and timestamp must be integers")
        for name in ("data", "previous_hash", "current_hash"):
            if not isinstance(d[name], str):
                raise ValueError(f"{name} must be a string")
        return cls(
            index, timestamp, BlockType(d["block_type"]), d["data"], d["previous_hash"],
            d["current_hash"],
        )


def parse_block(text: str) -> Block:
    """Inverse of :meth:`Block.serialize`."""
    try:
        index_s, ts_s, tag, rest = text.split("|", 3)
        length_s, rest = rest.split(":", 1)
        length = int(length_s)
        if length < 0 or len(rest) < length:
            raise ValueError("data length prefix out of range")
        data, rest = rest[:length], rest[length:]
        if not rest.startswith("|"):
            raise ValueError("missing separator after data")
        prev, cur = rest[1:].split("|")
        return Block(int(index_s), int(ts_s), BlockType(tag), data, prev, cur)
    except ValueError as exc:
        raise ChainError("malformed_block", str(exc)) from exc


# -- construction -----------------------------------------------------------


def new_absolute_genesis(timestamp: int) -> Block:
    return Block.create(0, timestamp, BlockType.ABSOLUTE_GENESIS, ABSOLUTE_GENESIS_DATA, ZERO_HASH)


def new_super_genesis(timestamp: int) -> Block:
    return Block.create(0, timestamp, BlockType.SUPER_GENESIS, SUPER_GENESIS_DATA, ZERO_HASH)


def new_relative_genesis(prev_terminal: Block, timestamp: int) -> Block:
    if prev_terminal.block_type != BlockType.TERMINAL:
        raise ChainError("not_terminal", f"got {_tag(prev_terminal.block_type)}")
    if prev_terminal.recompute_hash() != prev_terminal.current_hash:
        raise ChainError("tampered_terminal")
    return Block.create(
        0, timestamp, BlockType.RELATIVE_GENESIS, RELATIVE_GENESIS_DATA, prev_terminal.current_hash
    )


def aggregate_digest(blocks: Iterable[Block]) -> str:
    return compute_hash("".join(b.current_hash for b in blocks).encode("utf-8", "surrogatepass"))


@dataclass
class CircledBlockchain:
    chain_id: int
    capacity_n: int
    blocks: list[Block] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity_n < 1:
            raise ValueError("capacity_n must be >= 1")

    @classmethod
    def open(
        cls, chain_id: int, capacity_n: int, timestamp: int, prev_terminal: Block | None = None
    ) -> "CircledBlockchain":
        if chain_id == 0:
            if prev_terminal is not None:
                raise ChainError("bad_genesis", "chain 0 takes the absolute genesis")
            genesis = new_absolute_genesis(timestamp)
        else:
            if prev_terminal is None:
                raise ChainError("bad_genesis", "relative genesis needs the previous terminal")
            genesis = new_relative_genesis(prev_terminal, timestamp)
        return cls(chain_id, capacity_n, [genesis])

    @property
    def sealed(self) -> bool:
        return bool(self.blocks) and self.blocks[-1].block_type == BlockType.TERMINAL

    @property
    def data_count(self) -> int:
        return sum(1 for b in self.blocks if b.block_type == BlockType.DATA)

    @property
    def terminal(self) -> Block | None:
        return self.blocks[-1] if self.sealed else None

    @property
    def last(self) -> Block:
        return self.blocks[-1]


def append_data(chain: CircledBlockchain, payload_digest: str, timestamp: int) -> Block:
    if chain.sealed:
        raise ChainError("chain_sealed", f"chain {chain.chain_id}")
    if chain.data_count >= chain.capacity_n:
        raise ChainError("chain_full", f"chain {chain.chain_id} holds {chain.capacity_n}")
    if not is_hash(payload_digest):
        raise ChainError("invalid_digest", repr(payload_digest))
    prev = chain.last
    block = Block.create(prev.index + 1, timestamp, BlockType.DATA, payload_digest, prev.current_hash)
    chain.blocks.append(block)
    return block


def seal(chain: CircledBlockchain, timestamp: int, *, allow_partial: bool = False) -> Block:
    """Cap the chain with a terminal block.

    ``allow_partial`` permits an operator-forced seal with at least one data
    block; automatic rotation always seals at exactly ``capacity_n``.
    """
    if chain.sealed:
        raise ChainError("already_sealed", f"chain {chain.chain_id}")
    count = chain.data_count
    if count == 0 or (count < chain.capacity_n and not allow_partial):
        raise ChainError("not_full", f"{count} of {chain.capacity_n} data blocks")
    prev = chain.last
    terminal = Block.create(
        prev.index + 1, timestamp, BlockType.TERMINAL, aggregate_digest(chain.blocks),
        prev.current_hash,
    )
    chain.blocks.append(terminal)
    return terminal


@dataclass
class SuperBlockchain:
    blocks: list[Block] = field(default_factory=list)

    @classmethod
    def open(cls, timestamp: int) -> "SuperBlockchain":
        return cls([new_super_genesis(timestamp)])

    @property
    def last(self) -> Block:
        return self.blocks[-1]

    @property
    def super_blocks(self) -> list[Block]:
        return self.blocks[1:]


def make_super_block(terminal: Block, super_chain: SuperBlockchain, timestamp: int) -> Block:
    if not super_chain.blocks:
        raise ChainError("empty_super_chain", "super chain has no genesis")
    if terminal.block_type != BlockType.TERMINAL or terminal.recompute_hash() != terminal.current_hash:
        raise ChainError("tampered_terminal")
    prev = super_chain.last
    sb = Block.create(
        prev.index + 1, timestamp, BlockType.SUPER, terminal.serialize(), prev.current_hash
    )
    super_chain.blocks.append(sb)
    return sb


# -- verification -----------------------------------------------------------


@dataclass(frozen=True)
class VerificationResult:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Failure:
    index: int
    reason: str


@dataclass
class ChainReport:
    ok: bool
    hash_count: int
    failures: list[Failure] = field(default_factory=list)
    partial: bool = False
    note: str | None = None

    @property
    def first_failure(self) -> Failure | None:
        return self.failures[0] if self.failures else None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "partial": self.partial,
            "hash_count": self.hash_count,
            "note": self.note,
            "failures": [{"index": f.index, "reason": f.reason} for f in self.failures],
        }


def verify_block(block: Block, expected_previous_hash: str) -> VerificationResult:
    if block.recompute_hash() != block.current_hash:
        return VerificationResult(False, "hash_mismatch")
    if block.previous_hash != expected_previous_hash:
        return VerificationResult(False, "link_broken")
    return VerificationResult(True)


def verify_circled(chain: CircledBlockchain, prev_terminal_hash: str | None = None) -> ChainReport:
    """Check every block of a circled chain plus its terminal aggregate.

    The relative genesis link to the previous chain is only checked when
    ``prev_terminal_hash`` is supplied. Hash recomputations: one per block,
    plus one for the aggregate when sealed.
    """
    failures: list[Failure] = []
    hashes = 0
    blocks = chain.blocks
    if not blocks:
        return ChainReport(False, 0, [Failure(0, "empty_chain")])

    terminal_at = None
    for i, block in enumerate(blocks):
        if i == 0:
            want_type = (
                BlockType.ABSOLUTE_GENESIS if chain.chain_id == 0 else BlockType.RELATIVE_GENESIS
            )
            if block.block_type == BlockType.ABSOLUTE_GENESIS:
                expected_prev = ZERO_HASH
            elif prev_terminal_hash is not None:
                expected_prev = prev_terminal_hash
            else:
                expected_prev = block.previous_hash
        else:
            expected_prev = blocks[i - 1].current_hash
            if block.block_type == BlockType.TERMINAL and i == len(blocks) - 1:
                want_type = BlockType.TERMINAL
                terminal_at = i
            else:
                want_type = BlockType.DATA

        result = verify_block(block, expected_prev)
        hashes += 1
        if not result:
            failures.append(Failure(i, result.reason))
        elif block.block_type != want_type:
            failures.append(Failure(i, "bad_block_type"))
        elif block.index != i:
            failures.append(Failure(i, "bad_index"))
        elif want_type == BlockType.DATA and not is_hash(block.data):
            failures.append(Failure(i, "invalid_digest"))

    data_count = len(blocks) - 1 - (1 if terminal_at is not None else 0)
    if terminal_at is not None:
        hashes += 1
        if aggregate_digest(blocks[:terminal_at]) != blocks[terminal_at].data:
            failures.append(Failure(terminal_at, "aggregate_mismatch"))
        if data_count < 1 or data_count > chain.capacity_n:
            failures.append(Failure(terminal_at, "bad_length"))
    elif data_count > chain.capacity_n:
        failures.append(Failure(len(blocks) - 1, "bad_length"))

    failures.sort(key=lambda f: f.index)
    partial = terminal_at is None
    return ChainReport(
        ok=not failures,
        hash_count=hashes,
        failures=failures,
        partial=partial,
        note="missing terminal block" if partial else None,
    )


def verify_super_chain(super_chain: SuperBlockchain) -> ChainReport:
    """Check the super chain's own links and block hashes, nothing below it."""
    failures: list[Failure] = []
    hashes = 0
    blocks = super_chain.blocks
    if not blocks:
        return ChainReport(False, 0, [Failure(0, "empty_chain")])
    for i, block in enumerate(blocks):
        expected_prev = ZERO_HASH if i == 0 else blocks[i - 1].current_hash
        want_type = BlockType.SUPER_GENESIS if i == 0 else BlockType.SUPER
        result = verify_block(block, expected_prev)
        hashes += 1
        if not result:
            failures.append(Failure(i, result.reason))
        elif block.block_type != want_type:
            failures.append(Failure(i, "bad_block_type"))
        elif block.index != i:
            failures.append(Failure(i, "bad_index"))
    return ChainReport(not failures, hashes, failures)


@dataclass
class HierarchyReport:
    ok: bool
    hash_count: int
    super_report: ChainReport
    chain_reports: dict[int, ChainReport]
    mismatches: list[tuple[int, str]] = field(default_factory=list)

    def failures(self) -> list[tuple[str | int, int, str]]:
        """Flat ``(scope, index, reason)`` list; scope is ``"super"`` or a chain id."""
        out: list[tuple[str | int, int, str]] = [
            ("super", f.index, f.reason) for f in self.super_report.failures
        ]
        for cid in sorted(self.chain_reports):
            out.extend((cid, f.index, f.reason) for f in self.chain_reports[cid].failures)
        return out

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "hash_count": self.hash_count,
            "super_chain": self.super_report.to_dict(),
            "chains": {str(k): v.to_dict() for k, v in sorted(self.chain_reports.items())},
            "mismatches": [{"chain_id": c, "reason": r} for c, r in self.mismatches],
        }


def verify_hierarchy(
    super_chain: SuperBlockchain, circled_chains: Sequence[CircledBlockchain]
) -> HierarchyReport:
    super_report = verify_super_chain(super_chain)
    mismatches: list[tuple[int, str]] = []
    by_id = {c.chain_id: c for c in circled_chains}

    if sorted(by_id) != list(range(len(circled_chains))):
        mismatches.append((-1, "chain_ids_not_contiguous"))

    sbs = super_chain.super_blocks
    for k, sb in enumerate(sbs):
        chain = by_id.get(k)
        if chain is None:
            mismatches.append((k, "missing_chain"))
            continue
        try:
            embedded = parse_block(sb.data)
        except ChainError:
            mismatches.append((k, "malformed_super_block"))
            continue
        if chain.terminal is None:
            mismatches.append((k, "chain_not_sealed"))
        elif embedded != chain.terminal:
            mismatches.append((k, "terminal_mismatch"))
    for cid, chain in by_id.items():
        if chain.sealed and cid >= len(sbs):
            mismatches.append((cid, "missing_super_block"))
        elif not chain.sealed and cid != max(by_id):
            mismatches.append((cid, "chain_not_sealed"))

    chain_reports: dict[int, ChainReport] = {}
    prev_terminal_hash: str | None = None
    for cid in sorted(by_id):
        chain = by_id[cid]
        chain_reports[cid] = verify_circled(chain, prev_terminal_hash)
        t = chain.blocks[-1] if chain.blocks else None
        prev_terminal_hash = t.current_hash if t is not None else None

    hash_count = super_report.hash_count + sum(r.hash_count for r in chain_reports.values())
    ok = super_report.ok and not mismatches and all(r.ok for r in chain_reports.values())
    mismatches.sort()
    return HierarchyReport(ok, hash_count, super_report, chain_reports, mismatches)


@dataclass(frozen=True)
class MembershipProof:
    digest: str
    chain_id: int
    block_index: int
    terminal: Block | None
    sb_index: int | None

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "chain_id": self.chain_id,
            "block_index": self.block_index,
            "terminal": self.terminal.to_dict() if self.terminal else None,
            "sb_index": self.sb_index,
        }


def find_digest(digest: str, circled_chains: Sequence[CircledBlockchain]) -> MembershipProof | None:
    """Earliest occurrence (lowest chain id, then lowest index) or ``None``."""
    for chain in sorted(circled_chains, key=lambda c: c.chain_id):
        for block in chain.blocks:
            if block.block_type == BlockType.DATA and block.data == digest:
                terminal = chain.terminal
                return MembershipProof(
                    digest,
                    chain.chain_id,
                    block.index,
                    terminal,
                    chain.chain_id + 1 if terminal is not None else None,
                )
    return None
