import hashlib
import random

import pytest

from lcaas.chain import (
    CircledBlockchain,
    SuperBlockchain,
    append_data,
    make_super_block,
    seal,
)


def digest_of(i: int) -> str:
    return hashlib.sha256(f"log-{i}".encode()).hexdigest()


def build_hierarchy(n: int, chains: int, *, open_tail: bool = False, seed: int | None = None):
    """``chains`` sealed circled chains of capacity ``n`` plus their super chain.

    Timestamps advance by 1 ms per block so every block is distinct.
    """
    rng = random.Random(seed)
    ts = 1_000
    sc = SuperBlockchain.open(ts)
    circled = []
    prev_terminal = None
    k = 0
    for cid in range(chains):
        ts += 1
        chain = CircledBlockchain.open(cid, n, ts, prev_terminal)
        for _ in range(n):
            ts += 1
            payload = digest_of(k) if seed is None else "%064x" % rng.getrandbits(256)
            append_data(chain, payload, ts)
            k += 1
        ts += 1
        prev_terminal = seal(chain, ts)
        make_super_block(prev_terminal, sc, ts)
        circled.append(chain)
    if open_tail:
        ts += 1
        circled.append(CircledBlockchain.open(chains, n, ts, prev_terminal))
    return sc, circled


@pytest.fixture
def hierarchy():
    return build_hierarchy(3, 4)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
