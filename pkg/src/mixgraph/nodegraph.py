"""Expansion of a project into its node-level heterogeneous graph.

Audio nodes carry the stem label and source file; fx nodes carry the
plugin name, its type and the explicitly set parameters by name.  Edges
record signal kind (``send_signal`` for ordinary routing and control
sends, ``split_signal`` out of splitters), a ``main``/``control`` label
and a linear gain.  Empty chains materialize as one unity pass-through
node of type ``mix`` so every edge has real endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from mixgraph.core import FX_MIX, Project
from mixgraph.registry import PluginRegistry, builtin_registry

__all__ = [
    "GraphNode",
    "GraphEdge",
    "NodeGraph",
    "to_node_graph",
    "SEND_SIGNAL",
    "SPLIT_SIGNAL",
    "LABEL_MAIN",
    "LABEL_CONTROL",
]

SEND_SIGNAL = "send_signal"
SPLIT_SIGNAL = "split_signal"
LABEL_MAIN = "main"
LABEL_CONTROL = "control"

PASSTHROUGH_FX_NAME = "Internal: Mix"


@dataclass(frozen=True)
class GraphNode:
    id: str
    type: str  # audio | fx
    label: str
    instance: Optional[str] = None  # audio nodes: the source file
    fx_type: Optional[str] = None  # fx nodes
    params: dict[str, float] = field(default_factory=dict)  # fx nodes


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    type: str  # send_signal | split_signal
    label: str  # main | control
    gain: float


@dataclass(frozen=True)
class NodeGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def edges_labelled(self, label: str) -> list[GraphEdge]:
        return [e for e in self.edges if e.label == label]


def _params_map(fx, registry: PluginRegistry, preset_store) -> dict[str, float]:
    """Explicitly set parameter values by name (defaults stay implicit)."""
    desc = registry.get(fx.fx_name)
    if fx.preset_index is not None and preset_store is not None:
        pf = preset_store.find(fx.fx_name)
        vector = list(pf.presets[fx.preset_index]) if pf is not None else []
    else:
        vector = list(fx.params)
    names = desc.param_names
    return {names[i]: float(v) for i, v in enumerate(vector) if v is not None and i < len(names)}


def to_node_graph(project: Project, registry: Optional[PluginRegistry] = None, preset_store=None) -> NodeGraph:
    """Expand a validated project to audio/fx nodes and typed edges.

    Raises :class:`mixgraph.registry.UnknownPluginError` when an effect
    name is absent from the registry.
    """
    registry = registry or builtin_registry()
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []

    first_node: dict[int, str] = {}
    last_node: dict[int, str] = {}

    for ci, chain in enumerate(project.fx_chains):
        if not chain.fx_chain:
            nid = f"c{ci}f0"
            nodes.append(
                GraphNode(id=nid, type="fx", label=PASSTHROUGH_FX_NAME, fx_type=FX_MIX, params={})
            )
            first_node[ci] = last_node[ci] = nid
            continue
        prev = None
        for k, fx in enumerate(chain.fx_chain):
            nid = f"c{ci}f{k}"
            nodes.append(
                GraphNode(
                    id=nid,
                    type="fx",
                    label=fx.fx_name,
                    fx_type=fx.fx_type,
                    params=_params_map(fx, registry, preset_store),
                )
            )
            if prev is not None:
                edges.append(GraphEdge(src=prev, dst=nid, type=SEND_SIGNAL, label=LABEL_MAIN, gain=1.0))
            prev = nid
        first_node[ci] = f"c{ci}f0"
        last_node[ci] = f"c{ci}f{len(chain.fx_chain) - 1}"

    for i, audio in enumerate(project.input_audios):
        nid = f"audio{i}"
        nodes.insert(i, GraphNode(id=nid, type="audio", label=audio.audio_type, instance=audio.audio_path))
        edges.append(
            GraphEdge(src=nid, dst=first_node[audio.input_fx_chain], type=SEND_SIGNAL, label=LABEL_MAIN, gain=1.0)
        )

    for ci, chain in enumerate(project.fx_chains):
        etype = SPLIT_SIGNAL if chain.ends_with_splitter else SEND_SIGNAL
        for target in sorted(chain.next_chains):
            edges.append(
                GraphEdge(
                    src=last_node[ci],
                    dst=first_node[target],
                    type=etype,
                    label=LABEL_MAIN,
                    gain=float(chain.next_chains[target]),
                )
            )
        for k, fx in enumerate(chain.fx_chain):
            if fx.sidechain_input is not None:
                edges.append(
                    GraphEdge(
                        src=last_node[fx.sidechain_input],
                        dst=f"c{ci}f{k}",
                        type=SEND_SIGNAL,
                        label=LABEL_CONTROL,
                        gain=1.0,
                    )
                )

    return NodeGraph(nodes=tuple(nodes), edges=tuple(edges))
