"""Device budget and per-operation resource costs, loadable from JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources

from .errors import StencilError


class ConfigError(StencilError):
    pass


BRAM_BLOCK_BITS = 18432  # one 18-kilobit block


def _defaults() -> dict:
    return json.loads(resources.files(__package__).joinpath("data/device.json").read_text())


@dataclass(frozen=True)
class OpCost:
    mult: int
    add: int


@dataclass(frozen=True)
class DeviceBudget:
    """Off-chip bandwidth and on-chip resources of the target device.

    ``costs`` maps an element type to its DSP cost per multiply and per add.
    Defaults come from ``data/device.json``.
    """

    dram_read_bits_per_cycle: int = 512
    dram_write_bits_per_cycle: int = 512
    clock_mhz: int = 250
    dsp_count: int = 6840
    bram_blocks: int = 4320
    lut_proxy_count: int = 1182240
    bram_ports_per_block: int = 2
    costs: dict = field(default_factory=lambda: {
        t: OpCost(**c) for t, c in _defaults()["costs"].items()
    }, compare=False, hash=False)

    def __post_init__(self):
        for f in fields(self):
            if f.name != "costs" and getattr(self, f.name) <= 0:
                raise ConfigError(f"device budget field {f.name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceBudget":
        base = _defaults()
        unknown = set(data) - set(base)
        if unknown:
            raise ConfigError(f"unknown device budget keys: {', '.join(sorted(unknown))}")
        merged = {**base, **{k: v for k, v in data.items() if k != "costs"}}
        costs = {t: dict(c) for t, c in base["costs"].items()}
        for t, c in data.get("costs", {}).items():
            if t not in costs:
                raise ConfigError(f"unknown element type in costs: {t}")
            costs[t].update(c)
        try:
            merged["costs"] = {t: OpCost(int(c["mult"]), int(c["add"])) for t, c in costs.items()}
            return cls(**merged)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad device budget: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "DeviceBudget":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "costs"}
        out["costs"] = {t: {"mult": c.mult, "add": c.add} for t, c in sorted(self.costs.items())}
        return out
