"""Render-backend contract plus the two in-repo implementations.

A backend renders one *path* (a chain's effect sequence) over a premixed
input buffer -- the minimal unit the scheduler dispatches.  The internal
DSP backend applies the effects from :mod:`mixgraph.dsp.effects`; the
identity backend keeps the routing structure while passing audio through,
which makes scheduling tests independent of DSP behaviour.  An
out-of-process host backend can plug in by implementing ``render_path``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from mixgraph.core import ChainDefinition, FxSetting
from mixgraph.dsp.buffers import AudioBuffer
from mixgraph.dsp.effects import make_effect
from mixgraph.registry import PluginDescriptor, PluginRegistry

__all__ = [
    "ChainOutput",
    "ResolvedFx",
    "RenderBackend",
    "InternalDspBackend",
    "IdentityBackend",
    "PresetResolutionError",
    "resolve_path",
]


class PresetResolutionError(ValueError):
    """A preset_index could not be resolved against the preset store."""


@dataclass(frozen=True)
class ChainOutput:
    """What a rendered path yields: one buffer, or one per splitter band."""

    buffers: tuple[AudioBuffer, ...]
    is_split: bool = False

    @property
    def main(self) -> AudioBuffer:
        if self.is_split:
            raise ValueError("split output has no single main buffer")
        return self.buffers[0]

    def tap(self) -> AudioBuffer:
        """Control-signal view: the processed output; band sum for splitters."""
        if not self.is_split:
            return self.buffers[0]
        acc = np.zeros_like(self.buffers[0].samples, dtype=np.float64)
        for b in self.buffers:
            acc += b.samples.astype(np.float64)
        return AudioBuffer(acc.astype(np.float32), self.buffers[0].sample_rate)


@dataclass(frozen=True)
class ResolvedFx:
    """An FxSetting bound to its descriptor and a concrete parameter vector."""

    setting: FxSetting
    descriptor: PluginDescriptor
    params: tuple[float, ...]

    @property
    def is_splitter(self) -> bool:
        return self.setting.is_splitter


def resolve_path(chain: ChainDefinition, registry: PluginRegistry, preset_store=None) -> list[ResolvedFx]:
    """Bind every effect of a chain to a descriptor and parameter vector.

    ``preset_store`` maps fx names to preset files (see
    :class:`mixgraph.presets.PresetStore`); it is only consulted for
    effects that reference a preset_index.
    """
    path: list[ResolvedFx] = []
    for fx in chain.fx_chain:
        desc = registry.get(fx.fx_name)
        if fx.preset_index is not None:
            if preset_store is None:
                raise PresetResolutionError(f"{fx.fx_name}: preset_index set but no preset store given")
            pf = preset_store.find(fx.fx_name)
            if pf is None:
                raise PresetResolutionError(f"{fx.fx_name}: no preset file in store")
            if not 0 <= fx.preset_index < len(pf.presets):
                raise PresetResolutionError(f"{fx.fx_name}: preset_index {fx.preset_index} out of range")
            vector = tuple(pf.presets[fx.preset_index])
        else:
            vector = fx.params
        path.append(ResolvedFx(fx, desc, tuple(desc.resolve(vector))))
    return path


@runtime_checkable
class RenderBackend(Protocol):
    def render_path(
        self,
        path: list[ResolvedFx],
        input_buffer: AudioBuffer,
        sidechain_buffers: dict[int, AudioBuffer],
        sample_rate: int,
    ) -> ChainOutput: ...


class InternalDspBackend:
    """Applies the internal effect implementations in sequence."""

    def render_path(
        self,
        path: list[ResolvedFx],
        input_buffer: AudioBuffer,
        sidechain_buffers: dict[int, AudioBuffer],
        sample_rate: int,
    ) -> ChainOutput:
        buf = input_buffer
        for pos, rfx in enumerate(path):
            effect = make_effect(rfx.descriptor, list(rfx.params))
            if rfx.is_splitter:
                if pos != len(path) - 1:
                    raise ValueError("splitter must be the last effect in a path")
                bands = effect.process(buf)
                return ChainOutput(tuple(bands), is_split=True)
            buf = effect.process(buf, sidechain=sidechain_buffers.get(pos))
        return ChainOutput((buf,))


class IdentityBackend:
    """Structure-preserving no-op backend: audio passes through untouched.

    Splitter-terminal paths still fan out (each band a copy of the input) so
    the store-key structure matches the internal backend's exactly.
    """

    def render_path(
        self,
        path: list[ResolvedFx],
        input_buffer: AudioBuffer,
        sidechain_buffers: dict[int, AudioBuffer],
        sample_rate: int,
    ) -> ChainOutput:
        if path and path[-1].is_splitter:
            return ChainOutput(tuple(input_buffer for _ in range(path[-1].descriptor.n_outputs // 2 or 3)), is_split=True)
        return ChainOutput((input_buffer,))
