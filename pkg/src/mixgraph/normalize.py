"""Rewrites of free-form mixing graphs into the restricted renderable form.

A :class:`GeneralMixGraph` may contain things a renderable `Project` cannot:
effects mid-chain after a splitter, several sidechain-enabled effects in one
chain, sidechains tapping a lone splitter band, plain copy fan-out (one
chain feeding several targets without a splitter) and multiple output
chains.  The transformations here remove each of those in turn without
changing what the graph sounds like:

  split_sidechain_chains  cut chains so each holds at most one sidechain
  hoist_splitters         cut chains so every splitter is terminal
  insert_pseudo_layers    reroute splitter-band taps through empty chains
                          and delay chains with empty pass-throughs until
                          every sidechain pair sits in the same layer
  expand_multi_output     duplicate shared upstream cones per copy fan-out
                          branch and partition the graph per output chain

``normalize`` composes them in that order.  Inserted chains are always
empty and inserted edges always carry gain 1, so the rewrites are audibly
transparent; `expand_multi_output` is the only step that duplicates effect
instances.

Graph semantics assumed throughout (shared with the oracle renderer): a
non-splitter chain with several outgoing edges copies its signal to every
target; a splitter-terminal chain routes bands to targets in ascending
chain-index order with leftover bands summed into the last target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from mixgraph.core import (
    ChainDefinition,
    FxSetting,
    InputAudio,
    Project,
    kahn_layers,
)

__all__ = [
    "GeneralMixGraph",
    "UnnormalizableError",
    "split_sidechain_chains",
    "hoist_splitters",
    "insert_pseudo_layers",
    "expand_multi_output",
    "normalize",
    "canonical_form",
]


class UnnormalizableError(ValueError):
    """The graph cannot be rewritten into the restricted form.

    Raised for cyclic inputs, sidechain consumers that sit strictly
    downstream of their control source on the main path (no amount of
    delay padding can level those), splitters whose bands straddle
    different outputs, sidechain taps reading a splitter-terminal chain
    (a multiband stack is not a control signal), and sidechain sources
    that do not reach every output their consumer feeds.
    """


@dataclass(frozen=True)
class GeneralMixGraph:
    """Project-shaped graph with the restricted-form rules relaxed.

    ``output_audios`` holds one path per output chain, ordered by ascending
    sink index.
    """

    fx_chains: tuple[ChainDefinition, ...]
    input_audios: tuple[InputAudio, ...]
    output_audios: tuple[str, ...]
    customized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "fx_chains", tuple(self.fx_chains))
        object.__setattr__(self, "input_audios", tuple(self.input_audios))
        object.__setattr__(self, "output_audios", tuple(self.output_audios))

    @property
    def n_chains(self) -> int:
        return len(self.fx_chains)

    def sinks(self) -> list[int]:
        return [i for i, c in enumerate(self.fx_chains) if not c.next_chains]

    @classmethod
    def from_project(cls, project: Project) -> "GeneralMixGraph":
        return cls(
            fx_chains=project.fx_chains,
            input_audios=project.input_audios,
            output_audios=(project.output_audio,),
            customized=project.customized,
        )


# ---------------------------------------------------------------------------
# Mutable working form
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self, g: GeneralMixGraph):
        self.fx: list[list[FxSetting]] = [list(c.fx_chain) for c in g.fx_chains]
        self.nxt: list[dict[int, float]] = [dict(c.next_chains) for c in g.fx_chains]
        self.stems: list[InputAudio] = list(g.input_audios)
        self.customized = g.customized
        sinks = g.sinks()
        if len(sinks) != len(g.output_audios):
            raise UnnormalizableError(
                f"{len(g.output_audios)} output paths for {len(sinks)} output chains"
            )
        self.sink_paths: dict[int, str] = dict(zip(sinks, g.output_audios))

    @property
    def n(self) -> int:
        return len(self.fx)

    def to_graph(self) -> GeneralMixGraph:
        chains = tuple(
            ChainDefinition(fx_chain=tuple(f), next_chains=dict(nx)) for f, nx in zip(self.fx, self.nxt)
        )
        sinks = sorted(i for i, nx in enumerate(self.nxt) if not nx)
        return GeneralMixGraph(
            fx_chains=chains,
            input_audios=tuple(self.stems),
            output_audios=tuple(self.sink_paths[s] for s in sinks),
            customized=self.customized,
        )

    def append_chain(self, fx: list[FxSetting], nxt: dict[int, float]) -> int:
        self.fx.append(fx)
        self.nxt.append(nxt)
        return self.n - 1

    def retarget_taps(self, old: int, new: int) -> None:
        for ci in range(self.n):
            for k, fx in enumerate(self.fx[ci]):
                if fx.sidechain_input == old:
                    self.fx[ci][k] = replace(fx, sidechain_input=new)

    def cut_chain(self, i: int, pos: int) -> int:
        """Split chain i so effects [pos:] move to a new chain fed by i.

        Outgoing edges, tap references and (when i was a sink) the output
        binding follow the tail; the link edge carries gain 1.
        """
        tail = self.fx[i][pos:]
        self.fx[i] = self.fx[i][:pos]
        new = self.append_chain(tail, self.nxt[i])
        self.nxt[i] = {new: 1.0}
        self.retarget_taps(i, new)
        if i in self.sink_paths:
            self.sink_paths[new] = self.sink_paths.pop(i)
        return new

    def insert_after(self, s: int) -> int:
        """Insert an empty pass-through chain on s's main path.

        The new chain inherits s's outgoing edges, tap references and output
        binding; s keeps a single gain-1 edge into it.
        """
        e = self.append_chain([], self.nxt[s])
        self.nxt[s] = {e: 1.0}
        self.retarget_taps(s, e)
        if s in self.sink_paths:
            self.sink_paths[e] = self.sink_paths.pop(s)
        return e

    def main_in_edges(self, x: int) -> list[int]:
        return sorted(u for u in range(self.n) if x in self.nxt[u])

    def stem_count(self, x: int) -> int:
        return sum(1 for a in self.stems if a.input_fx_chain == x)

    def sidechain_edges(self) -> list[tuple[int, int, int]]:
        """(source, consumer_chain, fx_pos) triples, deterministic order."""
        out = []
        for ci in range(self.n):
            for k, fx in enumerate(self.fx[ci]):
                if fx.sidechain_input is not None:
                    out.append((fx.sidechain_input, ci, k))
        return out

    def main_adj(self) -> dict[int, list[int]]:
        return {i: sorted(self.nxt[i]) for i in range(self.n)}

    def layers(self) -> dict[int, int]:
        layers = kahn_layers(self.main_adj())
        if layers is None:
            raise UnnormalizableError("main-edge graph has a cycle")
        return layers

    def ends_with_splitter(self, i: int) -> bool:
        return bool(self.fx[i]) and self.fx[i][-1].is_splitter


def _check_acyclic(g: GeneralMixGraph) -> None:
    adj = {i: sorted(c.next_chains) for i, c in enumerate(g.fx_chains)}
    for s, ci, _k in _sidechain_edges_of(g):
        adj[s].append(ci)
    if kahn_layers(adj) is None:
        raise UnnormalizableError("graph has a cycle")


def _sidechain_edges_of(g: GeneralMixGraph) -> list[tuple[int, int, int]]:
    out = []
    for ci, chain in enumerate(g.fx_chains):
        for k, fx in enumerate(chain.fx_chain):
            if fx.sidechain_input is not None:
                out.append((fx.sidechain_input, ci, k))
    return out


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def split_sidechain_chains(g: GeneralMixGraph) -> GeneralMixGraph:
    """Cut every chain holding several sidechain-enabled effects.

    The cut lands right after each sidechain effect except the last, so each
    resulting chain keeps exactly one; a possible effect tail after the last
    one stays with it.
    """
    _check_acyclic(g)
    b = _Builder(g)
    for i in range(len(g.fx_chains)):
        while True:
            pos = [k for k, fx in enumerate(b.fx[i]) if fx.sidechain_input is not None]
            if len(pos) <= 1:
                break
            b.cut_chain(i, pos[0] + 1)
            # the tail became a fresh chain; re-examine it next outer loop
            i = b.n - 1
    return b.to_graph()


def hoist_splitters(g: GeneralMixGraph) -> GeneralMixGraph:
    """Cut chains right after every non-terminal splitter.

    The splitter-terminal head keeps a single gain-1 edge into the tail, so
    the split-then-continue semantics (bands summed back together) is
    preserved exactly.
    """
    _check_acyclic(g)
    b = _Builder(g)
    work = list(range(b.n))
    while work:
        i = work.pop(0)
        for k, fx in enumerate(b.fx[i][:-1]):
            if fx.is_splitter:
                work.append(b.cut_chain(i, k + 1))
                break
    return b.to_graph()


def _lone_split_band(b: _Builder, s: int) -> bool:
    """True when chain s is fed by nothing but a single splitter edge."""
    if b.stem_count(s) > 0:
        return False
    incoming = b.main_in_edges(s)
    return len(incoming) == 1 and b.ends_with_splitter(incoming[0])


def _solve_levels(b: _Builder) -> dict[int, int]:
    """Target layer per chain satisfying every sidechain equality.

    Sidechain pairs are merged into components; the component DAG over main
    edges is levelled by longest path.  A main edge inside a component or a
    cycle in the component DAG means no padding can level the pair.
    """
    parent = list(range(b.n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s, c, _k in b.sidechain_edges():
        rs, rc = find(s), find(c)
        if rs != rc:
            parent[rs] = rc

    qadj: dict[int, set[int]] = {find(i): set() for i in range(b.n)}
    for u in range(b.n):
        for v in b.nxt[u]:
            ru, rv = find(u), find(v)
            if ru == rv:
                raise UnnormalizableError(
                    f"sidechain consumer is downstream of its source on the main path (chains {u}->{v})"
                )
            qadj[ru].add(rv)

    levels = kahn_layers({u: sorted(vs) for u, vs in qadj.items()})
    if levels is None:
        raise UnnormalizableError("sidechain layer constraints are contradictory")

    # Longest-path levels: kahn_layers already gives longest-path depth.
    return {i: levels[find(i)] for i in range(b.n)}


def _topo_order(b: _Builder) -> list[int]:
    layers = b.layers()
    return sorted(range(b.n), key=lambda i: (layers[i], i))


def insert_pseudo_layers(g: GeneralMixGraph) -> GeneralMixGraph:
    """Repair sidechain routing so the restricted-form rules hold.

    Splitter-band taps are rerouted through an empty chain inserted on the
    band's main path, and the consuming chain is cut before its sidechain
    effect so the consumer can land a layer later.  Afterwards every
    sidechain pair is levelled by padding the earlier side with empty
    pass-through chains until both sit in the same main-edge layer.
    """
    _check_acyclic(g)
    b = _Builder(g)

    for s, c, _k in b.sidechain_edges():
        if b.ends_with_splitter(s):
            raise UnnormalizableError(f"sidechain of chain {c} taps splitter-terminal chain {s}")

    # Reroute taps that read a lone splitter band, cutting the consumer
    # ahead of its sidechain effect so only the consuming tail is delayed.
    changed = True
    while changed:
        changed = False
        for s, c, k in b.sidechain_edges():
            if _lone_split_band(b, s):
                b.insert_after(s)
                if k > 0:
                    b.cut_chain(c, k)
                changed = True
                break

    # Level every sidechain pair: walk chains in dependency order, raising
    # any chain below its target level by padding its critical input (or its
    # stems, for source chains) with empty chains.
    targets = _solve_levels(b)
    involved = set()
    for s, c, _k in b.sidechain_edges():
        involved.add(s)
        involved.add(c)

    achieved: dict[int, int] = {}
    for x in _topo_order(b):
        incoming = b.main_in_edges(x)
        level = 0 if not incoming else 1 + max(achieved[u] for u in incoming)
        if x in involved and level < targets[x]:
            deficit = targets[x] - level
            if incoming:
                crit = max(incoming, key=lambda u: (achieved[u], -u))
                gain = b.nxt[crit].pop(x)
                prev = crit
                for step in range(deficit):
                    pad = b.append_chain([], {})
                    b.nxt[prev][pad] = gain if prev == crit else 1.0
                    achieved[pad] = achieved[crit] + 1 + step
                    prev = pad
                b.nxt[prev][x] = 1.0 if deficit else gain
            else:
                first = None
                prev = None
                for _ in range(deficit):
                    pad = b.append_chain([], {})
                    if prev is not None:
                        b.nxt[prev][pad] = 1.0
                    achieved[pad] = 0 if prev is None else achieved[prev] + 1
                    first = pad if first is None else first
                    prev = pad
                b.nxt[prev][x] = 1.0
                for a, stem in enumerate(b.stems):
                    if stem.input_fx_chain == x:
                        b.stems[a] = replace(stem, input_fx_chain=first)
            level = targets[x]
        achieved[x] = level

    return b.to_graph()


def _ancestor_cone(b: _Builder, x: int) -> set[int]:
    cone = {x}
    frontier = [x]
    while frontier:
        t = frontier.pop()
        for u in b.main_in_edges(t):
            if u not in cone:
                cone.add(u)
                frontier.append(u)
    return cone


def _eliminate_plain_fanout(b: _Builder) -> None:
    """Duplicate upstream cones so non-splitter chains keep one target each."""
    while True:
        u = next(
            (i for i in range(b.n) if len(b.nxt[i]) >= 2 and not b.ends_with_splitter(i)),
            None,
        )
        if u is None:
            return
        targets = sorted(b.nxt[u])
        gains = dict(b.nxt[u])
        cone = sorted(_ancestor_cone(b, u))
        b.nxt[u] = {targets[0]: gains[targets[0]]}
        for t in targets[1:]:
            mapping: dict[int, int] = {}
            for ci in cone:
                mapping[ci] = b.append_chain(list(b.fx[ci]), {})
            for ci in cone:
                clone = mapping[ci]
                if ci == u:
                    b.nxt[clone] = {t: gains[t]}
                else:
                    b.nxt[clone] = {
                        (mapping.get(v, v)): gv for v, gv in b.nxt[ci].items() if v in mapping
                    }
                # sidechain sources inside the cone follow the clone; outside
                # sources are shared (identical control either way)
                for k, fx in enumerate(b.fx[clone]):
                    if fx.sidechain_input is not None and fx.sidechain_input in mapping:
                        b.fx[clone][k] = replace(fx, sidechain_input=mapping[fx.sidechain_input])
            for stem in list(b.stems):
                if stem.input_fx_chain in mapping:
                    b.stems.append(replace(stem, input_fx_chain=mapping[stem.input_fx_chain]))


def expand_multi_output(g: GeneralMixGraph) -> list[Project]:
    """One single-output `Project` per output chain.

    Plain copy fan-out is first removed by cone duplication; each output
    then keeps its main-edge ancestor cone.  Sidechain sources must reach
    every output their consumer feeds and splitter bands must not straddle
    outputs, otherwise the partition cannot preserve semantics.
    """
    _check_acyclic(g)
    b = _Builder(g)
    _eliminate_plain_fanout(b)

    sinks = sorted(i for i in range(b.n) if not b.nxt[i])
    projects: list[Project] = []
    for o in sinks:
        keep = _ancestor_cone(b, o)
        for s, c, _k in b.sidechain_edges():
            if c in keep and s not in keep:
                raise UnnormalizableError(
                    f"sidechain source {s} does not reach output chain {o} its consumer {c} feeds"
                )
        for u in sorted(keep):
            if b.ends_with_splitter(u) and not all(t in keep for t in b.nxt[u]):
                raise UnnormalizableError(f"splitter chain {u} bands straddle different outputs")

        order = sorted(keep)
        remap = {old: new for new, old in enumerate(order)}
        chains = tuple(
            ChainDefinition(
                fx_chain=tuple(
                    replace(fx, sidechain_input=remap[fx.sidechain_input])
                    if fx.sidechain_input is not None
                    else fx
                    for fx in b.fx[old]
                ),
                next_chains={remap[v]: gv for v, gv in b.nxt[old].items()},
            )
            for old in order
        )
        stems = tuple(
            replace(stem, input_fx_chain=remap[stem.input_fx_chain])
            for stem in b.stems
            if stem.input_fx_chain in keep
        )
        projects.append(
            Project(
                fx_chains=chains,
                input_audios=stems,
                output_audio=b.sink_paths[o],
                customized=b.customized,
            )
        )
    return projects


def normalize(g: GeneralMixGraph) -> list[Project]:
    """Full rewrite pipeline; every returned project is restricted-form valid."""
    return expand_multi_output(insert_pseudo_layers(hoist_splitters(split_sidechain_chains(g))))


# ---------------------------------------------------------------------------
# Canonical comparison (for idempotence up to chain reindexing)
# ---------------------------------------------------------------------------


def canonical_form(project: Project):
    """A hashable rendering of a project invariant under chain reindexing.

    Chains are relabelled by (main-edge layer, structural fingerprint); the
    result compares equal for projects that differ only by index permutation.
    """
    n = project.n_chains
    adj = {i: sorted(project.fx_chains[i].next_chains) for i in range(n)}
    layers = kahn_layers(adj)
    if layers is None:
        raise ValueError("cyclic project")

    def fx_key(fx: FxSetting):
        return (fx.fx_name, fx.fx_type, fx.preset_index, fx.params, fx.sidechain_input is not None)

    def chain_fingerprint(i: int):
        return (
            layers[i],
            tuple(fx_key(fx) for fx in project.fx_chains[i].fx_chain),
            tuple(sorted((layers[t], round(gv, 12)) for t, gv in project.fx_chains[i].next_chains.items())),
            tuple(
                sorted(
                    (a.audio_path, a.audio_type)
                    for a in project.input_audios
                    if a.input_fx_chain == i
                )
            ),
        )

    order = sorted(range(n), key=lambda i: (chain_fingerprint(i), i))
    remap = {old: new for new, old in enumerate(order)}
    chains = tuple(
        (
            tuple(
                fx_key(fx) + ((remap[fx.sidechain_input],) if fx.sidechain_input is not None else (None,))
                for fx in project.fx_chains[old].fx_chain
            ),
            tuple(sorted((remap[t], round(gv, 12)) for t, gv in project.fx_chains[old].next_chains.items())),
        )
        for old in order
    )
    stems = tuple(sorted((a.audio_path, a.audio_type, remap[a.input_fx_chain]) for a in project.input_audios))
    return (chains, stems, project.output_audio)
