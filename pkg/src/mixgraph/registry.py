"""Plugin descriptors and the registry that resolves effect names.

Descriptors carry everything the rest of the engine needs to know about a
plugin without touching DSP code: parameter names, the map from normalized
[0, 1] values to physical units, discretization grids for sampling, channel
arity and sidechain capability.

The built-in inventory ships as a JSON data file (``data/builtin_plugins.json``)
rather than hard-coded tables, so alternative inventories can be loaded from
disk with the same loader.  Names are matched after stripping a leading
plugin-format prefix ("VST3:", "JS:", "Internal:", ...), so metadata written
against hosted plugins resolves against the internal backend unchanged.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

__all__ = [
    "ParamMap",
    "ParamSpec",
    "PluginDescriptor",
    "PluginRegistry",
    "UnknownPluginError",
    "builtin_registry",
    "canonical_name",
    "REDUCED_SET",
]

_PREFIX = re.compile(r"^(?:VST3?|JS|LV2|CLAP|AU|Internal)\s*:\s*", re.IGNORECASE)

# The canonical five-plugin inventory the dataset experiments run on.
REDUCED_SET = ("3 Band EQ", "3-Band Splitter", "Samurai Delay", "Schroeder", "ZamCompX2")


class UnknownPluginError(KeyError):
    """An fx_name that no registry entry matches."""


def canonical_name(fx_name: str) -> str:
    return _PREFIX.sub("", fx_name.strip())


@dataclass(frozen=True)
class ParamMap:
    """Map a normalized value in [0, 1] to physical units and back.

    kinds:
      linear  -- lo + p * (hi - lo)
      log     -- lo * (hi / lo) ** p   (lo > 0)
      db      -- like linear but the physical unit is decibels
    """

    kind: str
    lo: float
    hi: float
    unit: str = ""

    def to_physical(self, p: float) -> float:
        p = min(1.0, max(0.0, p))
        if self.kind == "log":
            return self.lo * (self.hi / self.lo) ** p
        return self.lo + p * (self.hi - self.lo)

    def from_physical(self, x: float) -> float:
        if self.kind == "log":
            return math.log(x / self.lo) / math.log(self.hi / self.lo)
        return (x - self.lo) / (self.hi - self.lo)


@dataclass(frozen=True)
class ParamSpec:
    """One plugin parameter: name, default, mapping, grid and sampling law."""

    name: str
    default: float
    map: ParamMap
    grid_step: Optional[float] = 0.01
    grid_list: Optional[tuple[float, ...]] = None
    dist: str = "uniform"  # uniform | log | categorical

    def grid_values(self) -> Optional[list[float]]:
        """Admissible normalized values, or None when only the default is legal."""
        if self.grid_list is not None:
            return sorted(set(float(x) for x in self.grid_list))
        if self.grid_step is None:
            return None
        count = round(1.0 / self.grid_step)
        return [round(i * self.grid_step, 12) for i in range(count + 1)]


@dataclass(frozen=True)
class PluginDescriptor:
    fx_name: str
    fx_type: str
    n_inputs: int = 2
    n_outputs: int = 2
    supports_sidechain: bool = False
    params: tuple[ParamSpec, ...] = ()

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    def param_index(self, name: str) -> int:
        for i, p in enumerate(self.params):
            if p.name == name:
                return i
        raise KeyError(name)

    def defaults(self) -> list[float]:
        return [p.default for p in self.params]

    def resolve(self, values: tuple[Optional[float], ...]) -> list[float]:
        """Fill None / missing tail entries with the parameter defaults."""
        out = self.defaults()
        for i, v in enumerate(values):
            if i >= len(out):
                break
            if v is not None:
                out[i] = float(v)
        return out


@dataclass
class PluginRegistry:
    """Lookup table from canonical plugin names to descriptors."""

    plugins: dict[str, PluginDescriptor] = field(default_factory=dict)

    def add(self, desc: PluginDescriptor) -> None:
        self.plugins[canonical_name(desc.fx_name)] = desc

    def find(self, fx_name: str) -> Optional[PluginDescriptor]:
        return self.plugins.get(canonical_name(fx_name))

    def get(self, fx_name: str) -> PluginDescriptor:
        desc = self.find(fx_name)
        if desc is None:
            raise UnknownPluginError(fx_name)
        return desc

    def names(self) -> list[str]:
        return sorted(self.plugins)

    def __contains__(self, fx_name: str) -> bool:
        return self.find(fx_name) is not None

    @classmethod
    def from_file(cls, path: str | Path) -> "PluginRegistry":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_dict(cls, data: dict) -> "PluginRegistry":
        reg = cls()
        for entry in data["plugins"]:
            params = []
            for p in entry.get("params", []):
                m = p["map"]
                grid = p.get("grid", {"step": 0.01})
                params.append(
                    ParamSpec(
                        name=p["name"],
                        default=float(p.get("default", 0.5)),
                        map=ParamMap(kind=m["kind"], lo=float(m["lo"]), hi=float(m["hi"]), unit=m.get("unit", "")),
                        grid_step=(float(grid["step"]) if grid and "step" in grid else None),
                        grid_list=(tuple(grid["values"]) if grid and "values" in grid else None),
                        dist=p.get("dist", "uniform"),
                    )
                )
            reg.add(
                PluginDescriptor(
                    fx_name=entry["fx_name"],
                    fx_type=entry["fx_type"],
                    n_inputs=int(entry.get("n_inputs", 2)),
                    n_outputs=int(entry.get("n_outputs", 2)),
                    supports_sidechain=bool(entry.get("supports_sidechain", False)),
                    params=tuple(params),
                )
            )
        return reg


_BUILTIN: Optional[PluginRegistry] = None


def builtin_registry() -> PluginRegistry:
    """The packaged internal-backend inventory (loaded once, shared)."""
    global _BUILTIN
    if _BUILTIN is None:
        text = resources.files("mixgraph").joinpath("data/builtin_plugins.json").read_text("utf-8")
        _BUILTIN = PluginRegistry.from_dict(json.loads(text))
    return _BUILTIN
