"""Tamper-evident log storage: circled hash chains sealed into a super chain."""

from .chain import (
    Block,
    BlockType,
    ChainError,
    CircledBlockchain,
    SuperBlockchain,
    append_data,
    canonical_serialize,
    compute_hash,
    find_digest,
    make_super_block,
    new_absolute_genesis,
    new_relative_genesis,
    seal,
    verify_block,
    verify_circled,
    verify_hierarchy,
    verify_super_chain,
)
from .ledger import Ledger

__version__ = "0.1.0"

__all__ = [
    "Block", "BlockType", "ChainError", "CircledBlockchain", "SuperBlockchain",
    "append_data", "canonical_serialize", "compute_hash", "find_digest", "make_super_block",
    "new_absolute_genesis", "new_relative_genesis", "seal", "verify_block", "verify_circled",
    "verify_hierarchy", "verify_super_chain", "Ledger",
]
