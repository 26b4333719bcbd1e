"""Ablation and memory-utilization variant flags shared by pipeline and harness."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class MemoryMode(str, Enum):
    ALL = "all"    # inject every bank entry, no retrieval
    RAND = "rand"  # uniform seeded sample of q entries
    SIM = "sim"    # cosine ranking only, top q
    OURS = "ours"  # full two-stage retrieval


@dataclass(frozen=True)
class VariantSpec:
    name: str = "base"
    without_um: bool = False  # drop user-specific memory entirely
    without_ck: bool = False  # no expert candidates in the prompt
    without_rg: bool = False  # no reasoning guidelines in the prompt
    manual_rg: bool = False   # freeze guidelines at the manual seed set
    memory_mode: MemoryMode = MemoryMode.OURS

    def __post_init__(self):
        if self.manual_rg and self.without_rg:
            raise ValueError("manual_rg and without_rg are mutually exclusive")


_PRESETS = {
    "base": VariantSpec(name="base"),
    "wo-um": VariantSpec(name="wo-um", without_um=True),
    "wo-ck": VariantSpec(name="wo-ck", without_ck=True),
    "wo-rg": VariantSpec(name="wo-rg", without_rg=True),
    "wo-gm": VariantSpec(name="wo-gm", without_ck=True, without_rg=True),
    "manual-rg": VariantSpec(name="manual-rg", manual_rg=True),
    "mem-all": VariantSpec(name="mem-all", memory_mode=MemoryMode.ALL),
    "mem-rand": VariantSpec(name="mem-rand", memory_mode=MemoryMode.RAND),
    "mem-sim": VariantSpec(name="mem-sim", memory_mode=MemoryMode.SIM),
    "mem-ours": VariantSpec(name="mem-ours", memory_mode=MemoryMode.OURS),
}

VARIANT_NAMES = tuple(_PRESETS)


def variant_by_name(name: str) -> VariantSpec:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANT_NAMES)}") from None
