"""Reference renderer: direct recursive evaluation of a mixing graph.

Evaluates chains by memoized recursion with no layering, batching or
worker machinery, so it serves as the semantic oracle the scheduler and
the normalizer are checked against.  It accepts the free general form:
mid-chain splitters run split-then-sum, non-splitter chains with several
targets copy their signal to each, and every output chain yields one
buffer.
"""

from __future__ import annotations

import numpy as np

from mixgraph.core import CycleError, Project, band_assignment
from mixgraph.dsp.backend import resolve_path
from mixgraph.dsp.buffers import TAIL_SECONDS, AudioBuffer
from mixgraph.dsp.effects import make_effect
from mixgraph.normalize import GeneralMixGraph
from mixgraph.registry import PluginRegistry

__all__ = ["render_general", "project_length"]


def project_length(stems: list[AudioBuffer], sample_rate: int) -> int:
    """Common buffer length: longest stem plus the fixed effect tail."""
    longest = max((s.n_samples for s in stems), default=0)
    return longest + int(round(TAIL_SECONDS * sample_rate))


class _Eval:
    def __init__(
        self,
        g: GeneralMixGraph,
        stems: list[AudioBuffer],
        registry: PluginRegistry,
        preset_store,
        sample_rate: int,
    ):
        self.g = g
        self.registry = registry
        self.preset_store = preset_store
        self.sample_rate = sample_rate
        self.length = project_length(stems, sample_rate)
        self.stems = [s.to_stereo().padded_to(self.length) for s in stems]
        self.memo: dict[int, tuple[tuple[AudioBuffer, ...], bool]] = {}
        self.in_progress: set[int] = set()

    def incoming(self, t: int) -> list[tuple[int, float]]:
        out = []
        for u in range(self.g.n_chains):
            if t in self.g.fx_chains[u].next_chains:
                out.append((u, self.g.fx_chains[u].next_chains[t]))
        return sorted(out)

    def premix(self, t: int) -> AudioBuffer:
        acc = np.zeros((2, self.length), dtype=np.float64)
        for u, gain in self.incoming(t):
            buffers, is_split = self.chain(u)
            if is_split:
                assignment = band_assignment(sorted(self.g.fx_chains[u].next_chains))
                part = np.zeros_like(acc)
                for band in assignment[t]:
                    part += buffers[band].samples.astype(np.float64)
                acc += gain * part
            else:
                acc += gain * buffers[0].samples.astype(np.float64)
        for i, audio in enumerate(self.g.input_audios):
            if audio.input_fx_chain == t:
                acc += self.stems[i].samples.astype(np.float64)
        return AudioBuffer(acc.astype(np.float32), self.sample_rate)

    def tap(self, s: int) -> AudioBuffer:
        buffers, is_split = self.chain(s)
        if not is_split:
            return buffers[0]
        acc = np.zeros_like(buffers[0].samples, dtype=np.float64)
        for b in buffers:
            acc += b.samples.astype(np.float64)
        return AudioBuffer(acc.astype(np.float32), self.sample_rate)

    def chain(self, ci: int) -> tuple[tuple[AudioBuffer, ...], bool]:
        if ci in self.memo:
            return self.memo[ci]
        if ci in self.in_progress:
            raise CycleError(f"cycle through chain {ci}")
        self.in_progress.add(ci)

        buf = self.premix(ci)
        path = resolve_path(self.g.fx_chains[ci], self.registry, self.preset_store)
        result: tuple[tuple[AudioBuffer, ...], bool] = ((buf,), False)
        for pos, rfx in enumerate(path):
            effect = make_effect(rfx.descriptor, list(rfx.params))
            if rfx.is_splitter:
                bands = effect.process(buf)
                if pos == len(path) - 1:
                    result = (tuple(bands), True)
                    break
                mixed = np.zeros_like(bands[0].samples, dtype=np.float64)
                for b in bands:
                    mixed += b.samples.astype(np.float64)
                buf = AudioBuffer(mixed.astype(np.float32), self.sample_rate)
            else:
                control = None
                if rfx.setting.sidechain_input is not None:
                    control = self.tap(rfx.setting.sidechain_input)
                buf = effect.process(buf, sidechain=control)
            result = ((buf,), False)

        self.in_progress.discard(ci)
        self.memo[ci] = result
        return result


def render_general(
    g: GeneralMixGraph | Project,
    stems: list[AudioBuffer],
    registry: PluginRegistry,
    preset_store=None,
    sample_rate: int = 44100,
) -> list[AudioBuffer]:
    """Render every output chain; returns one buffer per sink, ascending.

    ``stems`` align positionally with ``input_audios``.  Raises
    :class:`CycleError` on cyclic graphs and ValueError when an output
    chain ends with a splitter (a band stack is not a mix output).
    """
    if isinstance(g, Project):
        g = GeneralMixGraph.from_project(g)
    ev = _Eval(g, stems, registry, preset_store, sample_rate)
    outputs = []
    for sink in g.sinks():
        buffers, is_split = ev.chain(sink)
        if is_split:
            raise ValueError(f"output chain {sink} ends with a splitter")
        outputs.append(buffers[0])
    return outputs
