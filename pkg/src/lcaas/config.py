"""Service configuration: JSON file, then ``LCAAS_*`` environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

ENV_OVERRIDES = {
    "LCAAS_CAPACITY": ("capacity_n", int),
    "LCAAS_GAS_GWEI": ("gas_price_gwei", int),
    "LCAAS_ANCHOR": ("anchor_backend", str),
    "LCAAS_ROOT": ("ledger_root", str),
    "LCAAS_LISTEN": ("listen_address", str),
    "LCAAS_SEED": ("rng_seed", int),
}


@dataclass(frozen=True)
class ServiceConfig:
    capacity_n: int = 100
    gas_price_gwei: int = 9
    anchor_backend: str = "simulated"
    ledger_root: str = "./ledger"
    listen_address: str = "127.0.0.1:8080"
    rng_seed: int = 0
    clock_mode: str = "wall"
    max_body_bytes: int = 10 * 1024 * 1024
    poll_interval_s: float = 0.25
    fsync: bool = False

    def __post_init__(self):
        if not isinstance(self.capacity_n, int) or self.capacity_n < 1:
            raise ValueError(f"capacity_n must be a positive integer, got {self.capacity_n!r}")
        if self.gas_price_gwei < 1:
            raise ValueError(f"gas_price_gwei must be >= 1, got {self.gas_price_gwei}")
        if self.anchor_backend not in ("simulated", "none"):
            raise ValueError(f"anchor_backend must be simulated or none, got {self.anchor_backend!r}")
        if self.clock_mode not in ("wall", "simulated"):
            raise ValueError(f"clock_mode must be wall or simulated, got {self.clock_mode!r}")

    @property
    def host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rsplit(":", 1)[1])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "ServiceConfig":
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text()))
            known = {f.name for f in fields(cls)}
            unknown = set(values) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
        env = os.environ if env is None else env
        for var, (name, conv) in ENV_OVERRIDES.items():
            if var in env:
                values[name] = conv(env[var])
        return cls(**values)

    def with_overrides(self, **kw) -> "ServiceConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
