"""Preset generation: parameter grids, sampling and cluster selection.

Plugin parameters are sampled from per-parameter discretized grids (step
0.01 by default, matching a 101-point grid) with a per-parameter sampling
law; a configurable share of draws falls back to the plugin default,
serialized as ``null``.  Optionally, candidate presets are auditioned on a
probe signal, embedded as mean-pooled MFCC vectors and clustered so only
one representative per cluster survives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from mixgraph.dsp.buffers import AudioBuffer, log_sweep, white_noise
from mixgraph.features import kmeans, mfcc_features
from mixgraph.registry import PluginDescriptor, PluginRegistry, canonical_name

__all__ = [
    "ParameterGrid",
    "PresetFile",
    "PresetStore",
    "EmptyGridError",
    "build_grid",
    "sample_presets",
    "make_probe",
    "validate_by_clustering",
]


class EmptyGridError(ValueError):
    """A parameter ended up with no admissible values."""


@dataclass(frozen=True)
class ParameterGrid:
    """Admissible normalized values per parameter, plus sampling law tags.

    ``values[i] is None`` marks a default-only parameter (every draw yields
    the default marker).
    """

    names: tuple[str, ...]
    values: tuple[Optional[tuple[float, ...]], ...]
    dists: tuple[str, ...]

    def __post_init__(self) -> None:
        for name, vals in zip(self.names, self.values):
            if vals is None:
                continue
            if not vals:
                raise EmptyGridError(name)
            if list(vals) != sorted(set(vals)):
                raise ValueError(f"grid for {name} must be sorted and unique")
            if vals[0] < 0.0 or vals[-1] > 1.0:
                raise ValueError(f"grid for {name} leaves [0, 1]")

    def contains(self, i: int, value: float, eps: float = 1e-9) -> bool:
        vals = self.values[i]
        if vals is None:
            return False
        return any(abs(value - g) <= eps for g in vals)


def _step_values(step: float) -> tuple[float, ...]:
    if not 0.0 < step <= 1.0:
        raise EmptyGridError(f"step {step}")
    count = round(1.0 / step)
    if abs(count * step - 1.0) > 1e-9:
        raise EmptyGridError(f"step {step} does not divide [0, 1] evenly")
    return tuple(round(i * step, 12) for i in range(count + 1))


def build_grid(
    descriptor: PluginDescriptor,
    step: Optional[float] = None,
    explicit: Optional[dict[str, list[float]]] = None,
) -> ParameterGrid:
    """Grid for every parameter of a plugin.

    Without arguments the registry's per-parameter grid specs apply (the
    default being 101 points at step 0.01, with some parameters declared
    default-only).  ``step`` overrides the step for every gridded
    parameter; ``explicit`` pins exact value lists by parameter name.
    """
    names, values, dists = [], [], []
    for spec in descriptor.params:
        names.append(spec.name)
        dists.append(spec.dist)
        if explicit and spec.name in explicit:
            vals = sorted(set(float(x) for x in explicit[spec.name]))
            if not vals:
                raise EmptyGridError(spec.name)
            values.append(tuple(vals))
        elif spec.grid_values() is None:
            values.append(None)
        elif step is not None:
            values.append(_step_values(step))
        else:
            values.append(tuple(spec.grid_values()))
    return ParameterGrid(names=tuple(names), values=tuple(values), dists=tuple(dists))


def sample_presets(
    grid: ParameterGrid,
    n: int,
    default_prob: float = 0.3,
    seed: int = 0,
) -> list[list[Optional[float]]]:
    """Draw n preset vectors; None marks "use the plugin default".

    Every value is drawn from its parameter's grid according to the
    parameter's distribution tag, replaced by the default marker with
    probability ``default_prob``.  Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    out: list[list[Optional[float]]] = []
    for _ in range(n):
        vector: list[Optional[float]] = []
        for vals, dist in zip(grid.values, grid.dists):
            if vals is None or rng.random() < default_prob:
                vector.append(None)
                continue
            if dist == "log":
                positive = [v for v in vals if v > 0.0]
                if positive:
                    lo, hi = positive[0], positive[-1]
                    x = lo if lo == hi else float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
                    vector.append(min(positive, key=lambda g: (abs(g - x), g)))
                    continue
            vector.append(float(vals[rng.integers(len(vals))]))
        out.append(vector)
    return out


@dataclass
class PresetFile:
    """On-disk preset collection for one plugin (see the JSON schema)."""

    fx_name: str
    fx_type: str
    n_inputs: int
    n_outputs: int
    valid_params: dict[str, list[float]]
    presets: list[list[Optional[float]]]

    def grid_violations(self, descriptor: Optional[PluginDescriptor] = None, eps: float = 1e-9) -> list[str]:
        """Human-readable breaches: off-grid values and bad vector widths."""
        problems = []
        names = descriptor.param_names if descriptor else list(self.valid_params)
        for pi, vector in enumerate(self.presets):
            if descriptor is not None and len(vector) != len(descriptor.params):
                problems.append(f"preset {pi}: {len(vector)} values for {len(descriptor.params)} parameters")
            for vi, value in enumerate(vector):
                if value is None:
                    continue
                name = names[vi] if vi < len(names) else f"param {vi}"
                grid = self.valid_params.get(name)
                if grid is None:
                    problems.append(f"preset {pi}: {name} has no grid but value {value}")
                elif not any(abs(value - g) <= eps for g in grid):
                    problems.append(f"preset {pi}: {name}={value} off grid")
        return problems


@dataclass
class PresetStore:
    """Preset files keyed by canonical plugin name."""

    files: dict[str, PresetFile] = field(default_factory=dict)

    def add(self, pf: PresetFile) -> None:
        self.files[canonical_name(pf.fx_name)] = pf

    def find(self, fx_name: str) -> Optional[PresetFile]:
        return self.files.get(canonical_name(fx_name))

    @classmethod
    def from_dir(cls, path: str | Path) -> "PresetStore":
        from mixgraph.io.presetjson import parse_preset_json

        store = cls()
        for p in sorted(Path(path).glob("*.json")):
            store.add(parse_preset_json(p.read_text("utf-8")))
        return store


def preset_file_for(
    descriptor: PluginDescriptor,
    grid: ParameterGrid,
    presets: list[list[Optional[float]]],
) -> PresetFile:
    """Assemble the serializable preset file for one plugin."""
    valid = {name: list(vals) for name, vals in zip(grid.names, grid.values) if vals is not None}
    return PresetFile(
        fx_name=descriptor.fx_name,
        fx_type=descriptor.fx_type,
        n_inputs=descriptor.n_inputs,
        n_outputs=descriptor.n_outputs,
        valid_params=valid,
        presets=[list(p) for p in presets],
    )


def make_probe(seed: int = 7) -> AudioBuffer:
    """Default audition signal: 2 s log sweep 20 Hz-20 kHz plus 1 s noise."""
    sweep = log_sweep(2.0)
    noise = white_noise(1.0, seed=seed)
    return AudioBuffer(np.concatenate([sweep.samples, noise.samples], axis=1), sweep.sample_rate)


def validate_by_clustering(
    descriptor: PluginDescriptor,
    candidates: list[list[Optional[float]]],
    probe: AudioBuffer,
    k: int,
    backend,
    seed: int = 0,
    registry: Optional[PluginRegistry] = None,
) -> list[list[Optional[float]]]:
    """Keep k representative candidates by clustering their rendered sound.

    Each candidate renders the probe, is embedded as its mean MFCC vector,
    and KMeans picks k clusters; the candidate nearest each centroid (ties
    to the lowest index, never reusing a candidate) survives.  The result
    is always a subset of ``candidates``, deterministic given the seed.
    """
    from mixgraph.core import FxSetting
    from mixgraph.dsp.backend import ResolvedFx

    if k > len(candidates):
        from mixgraph.features import KTooLargeError

        raise KTooLargeError(f"k={k} with {len(candidates)} candidates")

    points = []
    for vector in candidates:
        setting = FxSetting(fx_name=descriptor.fx_name, fx_type=descriptor.fx_type)
        rfx = ResolvedFx(setting=setting, descriptor=descriptor, params=tuple(descriptor.resolve(tuple(vector))))
        rendered = backend.render_path([rfx], probe, {}, probe.sample_rate)
        points.append(mfcc_features(rendered.tap()).mean(axis=0))
    feats = np.asarray(points)

    _assign, centroids = kmeans(feats, k, seed=seed)
    selected: list[int] = []
    for centroid in centroids:
        d2 = np.sum((feats - centroid[None, :]) ** 2, axis=1)
        for idx in np.argsort(d2, kind="stable"):
            if int(idx) not in selected:
                selected.append(int(idx))
                break
    return [candidates[i] for i in selected]
