"""Cross-project layer scheduling and parallel batch execution.

Chains are hyper-nodes: main edges order them into dependency layers by
iterated removal of in-degree-zero nodes, pooled across every project in
the batch.  Each layer is rendered as a batch of single-path tasks; inputs
are premixed host-side (stems plus gain-weighted upstream buffers summed
before any effect runs).  Sidechain pairs share a layer by validation;
inside a layer, consumers run in a later wave than their control sources.

Execution is deterministic for any worker count: premixing and store
writes happen on the coordinating thread in task order, workers only run
pure path renders, and buffers are write-once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mixgraph.core import CycleError, Project, band_assignment, kahn_layers
from mixgraph.dsp.backend import ChainOutput, RenderBackend, ResolvedFx, resolve_path
from mixgraph.dsp.buffers import AudioBuffer
from mixgraph.dsp.oracle import project_length
from mixgraph.registry import PluginRegistry, builtin_registry

__all__ = [
    "RenderTask",
    "LayerPlan",
    "BufferStore",
    "RenderSummary",
    "MissingUpstreamError",
    "BackendFailure",
    "compute_layers",
    "premix_inputs",
    "execute_plan",
]

Key = tuple[int, int]  # (project_id, chain_index)


class MissingUpstreamError(KeyError):
    """A premix needed a buffer that is not in the store yet."""


class BackendFailure(RuntimeError):
    """Wraps an error raised while rendering one task."""

    def __init__(self, key: Key, cause: BaseException):
        super().__init__(f"task {key}: {cause}")
        self.key = key
        self.cause = cause


@dataclass(frozen=True)
class RenderTask:
    """One chain of one project: the minimal unit a backend can render."""

    project_id: int
    chain_index: int
    upstream: tuple[tuple[int, float], ...]  # (source chain, gain), ascending
    stem_indices: tuple[int, ...]  # positions into project.input_audios
    sidechain_refs: dict[int, int]  # fx position -> source chain
    path: tuple[ResolvedFx, ...]
    output_key: Key


@dataclass(frozen=True)
class LayerPlan:
    """Batch schedule: ordered layers of tasks plus dependency bookkeeping."""

    projects: tuple[Project, ...]
    layers: tuple[tuple[RenderTask, ...], ...]
    indegree: dict[Key, int]
    main_edges: tuple[tuple[Key, Key], ...]
    sidechain_edges: tuple[tuple[Key, Key], ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_tasks(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def layer_of(self, key: Key) -> int:
        for d, layer in enumerate(self.layers):
            if any(t.output_key == key for t in layer):
                return d
        raise KeyError(key)


class BufferStore:
    """Write-once keyed store of rendered chain outputs."""

    def __init__(self) -> None:
        self._data: dict[Key, ChainOutput] = {}

    def put(self, key: Key, value: ChainOutput) -> None:
        if key in self._data:
            raise ValueError(f"buffer {key} already written")
        self._data[key] = value

    def get(self, key: Key) -> ChainOutput:
        try:
            return self._data[key]
        except KeyError:
            raise MissingUpstreamError(f"no buffer for {key}") from None

    def pop(self, key: Key) -> None:
        self._data.pop(key, None)

    def __contains__(self, key: Key) -> bool:
        return key in self._data

    def keys(self) -> list[Key]:
        return sorted(self._data)


@dataclass
class RenderSummary:
    layers_executed: int = 0
    tasks_run: int = 0
    outputs: dict[int, AudioBuffer] = field(default_factory=dict)  # project_id -> final mix
    failures: dict[int, str] = field(default_factory=dict)  # project_id -> reason

    @property
    def ok(self) -> bool:
        return not self.failures


def compute_layers(
    projects: list[Project],
    registry: Optional[PluginRegistry] = None,
    preset_store=None,
) -> LayerPlan:
    """Layer every chain of every project by pooled in-degree-zero waves.

    Expects validated projects; a cycle raises :class:`CycleError`
    defensively.  The layer index of a chain equals its main-edge
    longest-path depth, so the plan depth is the max over all projects.
    """
    registry = registry or builtin_registry()
    per_project_layers: list[dict[int, int]] = []
    for pid, project in enumerate(projects):
        adj = {i: sorted(project.fx_chains[i].next_chains) for i in range(project.n_chains)}
        layers = kahn_layers(adj)
        if layers is None:
            raise CycleError(f"project {pid} has a cyclic chain graph")
        per_project_layers.append(layers)

    depth = max((max(ls.values(), default=0) for ls in per_project_layers), default=0)
    batches: list[list[RenderTask]] = [[] for _ in range(depth + 1)]
    indegree: dict[Key, int] = {}
    main_edges: list[tuple[Key, Key]] = []
    sc_edges: list[tuple[Key, Key]] = []

    for pid, project in enumerate(projects):
        incoming: dict[int, list[tuple[int, float]]] = {i: [] for i in range(project.n_chains)}
        for u, chain in enumerate(project.fx_chains):
            for v, gain in chain.next_chains.items():
                incoming[v].append((u, gain))
                main_edges.append(((pid, u), (pid, v)))
        for ci, chain in enumerate(project.fx_chains):
            indegree[(pid, ci)] = len(incoming[ci])
            sidechain_refs = {
                k: fx.sidechain_input
                for k, fx in enumerate(chain.fx_chain)
                if fx.sidechain_input is not None
            }
            for s in sidechain_refs.values():
                sc_edges.append(((pid, s), (pid, ci)))
            task = RenderTask(
                project_id=pid,
                chain_index=ci,
                upstream=tuple(sorted(incoming[ci])),
                stem_indices=tuple(
                    i for i, a in enumerate(project.input_audios) if a.input_fx_chain == ci
                ),
                sidechain_refs=sidechain_refs,
                path=tuple(resolve_path(chain, registry, preset_store)),
                output_key=(pid, ci),
            )
            batches[per_project_layers[pid][ci]].append(task)

    ordered = tuple(tuple(sorted(layer, key=lambda t: t.output_key)) for layer in batches)
    return LayerPlan(
        projects=tuple(projects),
        layers=ordered,
        indegree=indegree,
        main_edges=tuple(main_edges),
        sidechain_edges=tuple(sc_edges),
    )


def premix_inputs(
    task: RenderTask,
    project: Project,
    store: BufferStore,
    stems: list[AudioBuffer],
) -> AudioBuffer:
    """Sum gain-weighted upstream buffers and directly attached stems.

    Shorter contributions are zero-padded to the longest; splitter sources
    contribute only the bands assigned to this chain.  Raises
    :class:`MissingUpstreamError` when an upstream buffer is absent.
    """
    pid = task.project_id
    parts: list[tuple[float, np.ndarray]] = []
    for u, gain in task.upstream:
        out = store.get((pid, u))
        if out.is_split:
            assignment = band_assignment(sorted(project.fx_chains[u].next_chains))
            acc = None
            for band in assignment[task.chain_index]:
                x = out.buffers[band].samples.astype(np.float64)
                acc = x.copy() if acc is None else acc + x
            parts.append((gain, acc))
        else:
            parts.append((gain, out.buffers[0].samples.astype(np.float64)))
    for i in task.stem_indices:
        parts.append((1.0, stems[i].samples.astype(np.float64)))

    if not parts:
        raise MissingUpstreamError(f"chain ({pid}, {task.chain_index}) has no inputs")
    length = max(p.shape[1] for _, p in parts)
    channels = max(p.shape[0] for _, p in parts)
    acc = np.zeros((channels, length), dtype=np.float64)
    for gain, p in parts:
        acc[: p.shape[0], : p.shape[1]] += gain * p
    sr = stems[0].sample_rate if stems else 44100
    return AudioBuffer(acc.astype(np.float32), sr)


def _sidechain_waves(layer: tuple[RenderTask, ...]) -> list[list[RenderTask]]:
    """Split a layer into waves so control sources render before consumers."""
    keys = {t.output_key for t in layer}
    deps: dict[Key, set[Key]] = {t.output_key: set() for t in layer}
    for t in layer:
        for s in t.sidechain_refs.values():
            skey = (t.project_id, s)
            if skey in keys:
                deps[t.output_key].add(skey)
    waves: list[list[RenderTask]] = []
    remaining = {t.output_key: t for t in layer}
    done: set[Key] = set()
    while remaining:
        ready = sorted(k for k, _ in remaining.items() if deps[k] <= done)
        if not ready:
            raise CycleError("mutual sidechain dependency inside one layer")
        waves.append([remaining.pop(k) for k in ready])
        done.update(ready)
    return waves


def execute_plan(
    plan: LayerPlan,
    backend: RenderBackend,
    stems_by_project: dict[int, list[AudioBuffer]],
    max_workers: int = 1,
    store: Optional[BufferStore] = None,
    keep_intermediates: bool = False,
) -> RenderSummary:
    """Render the batch layer by layer; layers are barriers.

    Task failures abort their own project (downstream tasks are skipped,
    the failure recorded) but not the batch.  Intermediate buffers are
    dropped as soon as every consumer has read them unless
    ``keep_intermediates`` is set.
    """
    store = store if store is not None else BufferStore()
    summary = RenderSummary()

    prepared: dict[int, list[AudioBuffer]] = {}
    sinks: dict[int, int] = {}
    consumers_left: dict[Key, int] = {}
    for pid, project in enumerate(plan.projects):
        raw = stems_by_project.get(pid, [])
        if len(raw) != len(project.input_audios):
            summary.failures[pid] = (
                f"expected {len(project.input_audios)} stems, got {len(raw)}"
            )
            continue
        length = project_length(raw, raw[0].sample_rate if raw else 44100)
        prepared[pid] = [s.to_stereo().padded_to(length) for s in raw]
        project_sinks = project.sinks()
        sinks[pid] = project_sinks[0] if project_sinks else -1
        for ci, chain in enumerate(project.fx_chains):
            n_consumers = len(chain.next_chains)
            for other in project.fx_chains:
                for fx in other.fx_chain:
                    if fx.sidechain_input == ci:
                        n_consumers += 1
            consumers_left[(pid, ci)] = n_consumers

    indegree = dict(plan.indegree)
    pool = ThreadPoolExecutor(max_workers=max(1, max_workers))
    try:
        for depth, layer in enumerate(plan.layers):
            live = [t for t in layer if t.project_id not in summary.failures]
            # progress invariant: everything scheduled now must be unblocked
            for t in live:
                if indegree[t.output_key] != 0:
                    raise CycleError(f"task {t.output_key} scheduled with unresolved dependencies")
            for wave in _sidechain_waves(tuple(live)):
                jobs = []
                for t in wave:
                    if t.project_id in summary.failures:
                        jobs.append((t, None, None))
                        continue
                    try:
                        premixed = premix_inputs(t, plan.projects[t.project_id], store, prepared[t.project_id])
                        side = {
                            pos: store.get((t.project_id, s)).tap()
                            for pos, s in t.sidechain_refs.items()
                        }
                    except Exception as exc:  # missing upstream, resolution issues
                        summary.failures[t.project_id] = str(BackendFailure(t.output_key, exc))
                        jobs.append((t, None, None))
                        continue
                    jobs.append((t, premixed, side))

                futures = []
                for t, premixed, side in jobs:
                    if premixed is None:
                        futures.append(None)
                    else:
                        sr = premixed.sample_rate
                        futures.append(
                            pool.submit(backend.render_path, list(t.path), premixed, side, sr)
                        )
                for (t, premixed, _side), fut in zip(jobs, futures):
                    if fut is None:
                        continue
                    try:
                        result = fut.result()
                    except Exception as exc:
                        summary.failures[t.project_id] = str(BackendFailure(t.output_key, exc))
                        continue
                    store.put(t.output_key, result)
                    summary.tasks_run += 1
                    if not keep_intermediates:
                        pid = t.project_id
                        for u, _gain in t.upstream:
                            consumers_left[(pid, u)] -= 1
                            if consumers_left[(pid, u)] == 0 and u != sinks.get(pid):
                                store.pop((pid, u))
                        for s in t.sidechain_refs.values():
                            consumers_left[(pid, s)] -= 1
                            if consumers_left[(pid, s)] == 0 and s != sinks.get(pid):
                                store.pop((pid, s))
            summary.layers_executed += 1
            # Kahn bookkeeping: completing a layer unblocks its successors.
            done_keys = {t.output_key for t in layer}
            for (src, dst) in plan.main_edges:
                if src in done_keys:
                    indegree[dst] -= 1
    finally:
        pool.shutdown(wait=True)

    for pid, project in enumerate(plan.projects):
        if pid in summary.failures:
            continue
        key = (pid, sinks[pid])
        if key in store:
            summary.outputs[pid] = store.get(key).buffers[0]
        else:
            summary.failures[pid] = f"output buffer {key} missing"
    return summary
