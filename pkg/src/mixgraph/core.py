"""Core data model for mixing-graph projects.

A project is a directed acyclic graph whose nodes are FX chains (ordered
effect sequences).  Chains route audio to each other through gain-weighted
``next_chains`` edges; multiband splitters fan a chain out to several
successors; compressors may take a control signal from another chain via
``sidechain_input``.  Stems enter the graph through ``InputAudio`` bindings
and exactly one chain (the one with no outgoing edges) produces the mix.

This module owns the structural rules a renderable project must satisfy
and reports breaches as data (`ValidationReport`), never as exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

__all__ = [
    "FX_EQ",
    "FX_SPLITTER",
    "FX_DELAY",
    "FX_REVERB",
    "FX_COMPRESSOR",
    "FX_GAIN",
    "FX_MIX",
    "SPLITTER_BANDS",
    "MAX_LINEAR_GAIN",
    "Rule",
    "FxSetting",
    "ChainDefinition",
    "InputAudio",
    "Project",
    "Violation",
    "ValidationReport",
    "BadIndexError",
    "CycleError",
    "chain_dag",
    "kahn_layers",
    "validate_project",
    "band_assignment",
]

# Effect type vocabulary.  The set is open (external plugins may declare new
# types); only "splitter" carries structural meaning to the graph rules.
FX_EQ = "eq"
FX_SPLITTER = "splitter"
FX_DELAY = "delay"
FX_REVERB = "reverb"
FX_COMPRESSOR = "compressor"
FX_GAIN = "gain"
FX_MIX = "mix"

SPLITTER_BANDS = 3

# Routing gains are linear amplitude; anything outside (0, 16] is rejected
# because unbounded gain yields non-finite renders downstream.
MAX_LINEAR_GAIN = 16.0

# Tolerance for deciding a parameter value sits on its discretized grid.
GRID_EPS = 1e-9


class Rule(str, Enum):
    """Machine-readable codes for the structural rules of a project."""

    ACYCLICITY = "ACYCLICITY"
    SINGLE_OUTPUT = "SINGLE_OUTPUT"
    NO_INPUT = "NO_INPUT"
    SPLITTER_NOT_LAST = "SPLITTER_NOT_LAST"
    MULTI_OUT_NO_SPLITTER = "MULTI_OUT_NO_SPLITTER"
    OUTPUT_ENDS_SPLITTER = "OUTPUT_ENDS_SPLITTER"
    MULTI_SIDECHAIN_IN_CHAIN = "MULTI_SIDECHAIN_IN_CHAIN"
    SIDECHAIN_FROM_SPLITTER = "SIDECHAIN_FROM_SPLITTER"
    SIDECHAIN_LAYER_MISMATCH = "SIDECHAIN_LAYER_MISMATCH"
    BAD_INDEX = "BAD_INDEX"
    BAD_GAIN = "BAD_GAIN"
    PARAM_OFF_GRID = "PARAM_OFF_GRID"

    def __str__(self) -> str:  # report lines print the bare code
        return self.value


class BadIndexError(ValueError):
    """An operation received a chain index outside the project."""


class CycleError(ValueError):
    """A graph operation met a cycle it cannot proceed through."""


@dataclass(frozen=True)
class FxSetting:
    """One effect instance inside a chain.

    ``params`` are normalized values in [0, 1] aligned positionally with the
    plugin's parameter list; ``None`` (or a missing tail entry) means "use
    the plugin default".  When ``preset_index`` is set the parameter vector
    comes from the plugin's preset file instead and ``params`` must be empty.
    """

    fx_name: str
    fx_type: str
    preset_index: Optional[int] = None
    params: tuple[Optional[float], ...] = ()
    n_inputs: int = 2
    n_outputs: int = 2
    sidechain_input: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(self.params))
        if self.preset_index is not None:
            if self.preset_index < 0:
                raise ValueError("preset_index must be non-negative")
            if self.params:
                raise ValueError("preset_index and params are mutually exclusive")
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ValueError("channel counts must be positive")

    @property
    def is_splitter(self) -> bool:
        return self.fx_type == FX_SPLITTER


@dataclass(frozen=True)
class ChainDefinition:
    """An ordered effect sequence plus its gain-weighted outgoing edges."""

    fx_chain: tuple[FxSetting, ...] = ()
    next_chains: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "fx_chain", tuple(self.fx_chain))
        object.__setattr__(
            self, "next_chains", {int(k): float(v) for k, v in self.next_chains.items()}
        )

    @property
    def ends_with_splitter(self) -> bool:
        return bool(self.fx_chain) and self.fx_chain[-1].is_splitter

    @property
    def is_sink(self) -> bool:
        return not self.next_chains

    def sidechain_positions(self) -> list[int]:
        return [i for i, fx in enumerate(self.fx_chain) if fx.sidechain_input is not None]


@dataclass(frozen=True)
class InputAudio:
    """A stem file bound to its entry chain."""

    audio_path: str
    audio_type: str
    input_fx_chain: int


@dataclass(frozen=True)
class Project:
    """A complete mixing graph: chains, stem bindings and the output target."""

    fx_chains: tuple[ChainDefinition, ...]
    input_audios: tuple[InputAudio, ...]
    output_audio: str
    customized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "fx_chains", tuple(self.fx_chains))
        object.__setattr__(self, "input_audios", tuple(self.input_audios))

    @property
    def n_chains(self) -> int:
        return len(self.fx_chains)

    def sinks(self) -> list[int]:
        return [i for i, c in enumerate(self.fx_chains) if c.is_sink]

    def with_output(self, path: str) -> "Project":
        return replace(self, output_audio=path)


@dataclass(frozen=True)
class Violation:
    """One breached rule: the code, where it happened, and a human hint."""

    rule: Rule
    location: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.rule} at {self.location}"
        return f"{msg}: {self.detail}" if self.detail else msg


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[Rule]:
        return [v.rule for v in self.violations]

    def has(self, rule: Rule) -> bool:
        return rule in self.codes()

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


# ---------------------------------------------------------------------------
# Graph substrate
# ---------------------------------------------------------------------------


def chain_dag(project: Project, include_sidechain: bool = False) -> dict[int, list[int]]:
    """Adjacency lists over chain indices (main edges, plus sidechain edges
    as source->consumer when requested).  Deterministic ordering.

    Raises :class:`BadIndexError` on out-of-range references.
    """
    n = project.n_chains
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, chain in enumerate(project.fx_chains):
        for j in chain.next_chains:
            if not 0 <= j < n:
                raise BadIndexError(f"chain {i} routes to missing chain {j}")
            adj[i].append(j)
        if include_sidechain:
            for fx in chain.fx_chain:
                if fx.sidechain_input is not None:
                    s = fx.sidechain_input
                    if not 0 <= s < n:
                        raise BadIndexError(f"chain {i} sidechains missing chain {s}")
                    adj[s].append(i)
    for targets in adj.values():
        targets.sort()
    return adj


def _find_cycle(adj: dict[int, list[int]]) -> Optional[list[int]]:
    """Iterative DFS cycle search; returns one cycle's node list or None."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {u: WHITE for u in adj}
    parent: dict[int, Optional[int]] = {}
    for start in adj:
        if color[start] != WHITE:
            continue
        stack: list[tuple[int, Iterable[int]]] = [(start, iter(adj[start]))]
        color[start] = GREY
        parent[start] = None
        while stack:
            u, it = stack[-1]
            advanced = False
            for v in it:
                if color[v] == WHITE:
                    color[v] = GREY
                    parent[v] = u
                    stack.append((v, iter(adj[v])))
                    advanced = True
                    break
                if color[v] == GREY:
                    cyc = [v, u]
                    w = parent[u]
                    while w is not None and w != v:
                        cyc.append(w)
                        w = parent[w]
                    cyc.reverse()
                    return cyc
            if not advanced:
                color[u] = BLACK
                stack.pop()
        # fall through: this component is acyclic
    return None


def kahn_layers(adj: dict[int, list[int]]) -> Optional[dict[int, int]]:
    """Wave layering by iterated removal of in-degree-zero nodes.

    Returns node -> layer, or None when the graph has a cycle.  The wave
    index equals the longest-path depth from any source.
    """
    indeg = {u: 0 for u in adj}
    for targets in adj.values():
        for v in targets:
            indeg[v] += 1
    frontier = sorted(u for u, d in indeg.items() if d == 0)
    layers: dict[int, int] = {}
    depth = 0
    while frontier:
        nxt: list[int] = []
        for u in frontier:
            layers[u] = depth
            for v in adj[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    nxt.append(v)
        frontier = sorted(nxt)
        depth += 1
    if len(layers) != len(adj):
        return None
    return layers


def band_assignment(targets: list[int]) -> dict[int, list[int]]:
    """Map splitter targets to band indices (low/mid/high = 0/1/2).

    Targets take bands in ascending chain-index order; when there are fewer
    targets than bands the leftover high bands are summed into the last
    target, so no signal energy is dropped.
    """
    ordered = sorted(targets)
    if not ordered:
        return {}
    if len(ordered) > SPLITTER_BANDS:
        raise ValueError(f"splitter fan-out {len(ordered)} exceeds {SPLITTER_BANDS} bands")
    out: dict[int, list[int]] = {t: [i] for i, t in enumerate(ordered)}
    for extra in range(len(ordered), SPLITTER_BANDS):
        out[ordered[-1]].append(extra)
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _index_ok(i: object, n: int) -> bool:
    return isinstance(i, int) and 0 <= i < n


def validate_project(project: Project, registry=None) -> ValidationReport:
    """Check every structural rule and report all breaches.

    Total over well-formed `Project` values: breaches come back as data.
    ``registry`` (a :class:`mixgraph.registry.PluginRegistry`) enables the
    parameter-grid check; when omitted the built-in registry is used, and
    plugins it does not know are skipped.
    """
    if registry is None:
        from mixgraph.registry import builtin_registry

        registry = builtin_registry()

    v: list[Violation] = []
    n = project.n_chains

    # Index and gain hygiene first; out-of-range edges are excluded from the
    # graph-level checks below so the validator stays total.
    for i, chain in enumerate(project.fx_chains):
        for j, gain in chain.next_chains.items():
            if not _index_ok(j, n):
                v.append(Violation(Rule.BAD_INDEX, f"chain {i}", f"next_chains -> {j}"))
            if not (gain > 0.0 and gain <= MAX_LINEAR_GAIN and gain == gain and gain != float("inf")):
                v.append(Violation(Rule.BAD_GAIN, f"chain {i} -> {j}", f"gain {gain!r}"))
        for k, fx in enumerate(chain.fx_chain):
            if fx.sidechain_input is not None and not _index_ok(fx.sidechain_input, n):
                v.append(
                    Violation(Rule.BAD_INDEX, f"chain {i} fx {k}", f"sidechain_input -> {fx.sidechain_input}")
                )
    for a, audio in enumerate(project.input_audios):
        if not _index_ok(audio.input_fx_chain, n):
            v.append(Violation(Rule.BAD_INDEX, f"input {a}", f"input_FxChain -> {audio.input_fx_chain}"))

    # Effective (in-range) edge sets.
    main: dict[int, list[int]] = {i: [] for i in range(n)}
    split_sources: dict[int, list[int]] = {i: [] for i in range(n)}  # target -> splitter chains
    for i, chain in enumerate(project.fx_chains):
        for j in chain.next_chains:
            if _index_ok(j, n):
                main[i].append(j)
                if chain.ends_with_splitter:
                    split_sources[j].append(i)
    sidechains: list[tuple[int, int, int]] = []  # (source, consumer_chain, fx_pos)
    for i, chain in enumerate(project.fx_chains):
        for k, fx in enumerate(chain.fx_chain):
            if fx.sidechain_input is not None and _index_ok(fx.sidechain_input, n):
                sidechains.append((fx.sidechain_input, i, k))

    # Acyclicity over main + sidechain edges.
    full = {i: list(ts) for i, ts in main.items()}
    for s, c, _ in sidechains:
        full[s].append(c)
    cycle = _find_cycle(full)
    if cycle is not None:
        v.append(Violation(Rule.ACYCLICITY, "project", "cycle through chains " + "->".join(map(str, cycle))))

    # Exactly one sink, and it must not end with a splitter.
    sinks = project.sinks()
    if len(sinks) != 1:
        v.append(Violation(Rule.SINGLE_OUTPUT, "project", f"{len(sinks)} chains have empty next_chains"))
    for s in sinks:
        if project.fx_chains[s].ends_with_splitter:
            v.append(Violation(Rule.OUTPUT_ENDS_SPLITTER, f"chain {s}"))

    # Input coverage: every chain must be fed, directly or transitively.
    if not project.input_audios:
        v.append(Violation(Rule.NO_INPUT, "project", "no input audios"))
    fed = {a.input_fx_chain for a in project.input_audios if _index_ok(a.input_fx_chain, n)}
    reach = set(fed)
    frontier = list(fed)
    while frontier:
        u = frontier.pop()
        for t in main[u]:
            if t not in reach:
                reach.add(t)
                frontier.append(t)
    for i in range(n):
        if i not in reach:
            v.append(Violation(Rule.NO_INPUT, f"chain {i}", "not reachable from any input"))

    # Splitter placement and fan-out.
    for i, chain in enumerate(project.fx_chains):
        for k, fx in enumerate(chain.fx_chain[:-1]):
            if fx.is_splitter:
                v.append(Violation(Rule.SPLITTER_NOT_LAST, f"chain {i} fx {k}"))
        fanout = len(chain.next_chains)
        if fanout > 1 and not chain.ends_with_splitter:
            v.append(Violation(Rule.MULTI_OUT_NO_SPLITTER, f"chain {i}", f"{fanout} targets"))
        # Fan-out beyond the band count is unroutable; reported under the
        # same code since the band budget is what a splitter buys you.
        if chain.ends_with_splitter and fanout > SPLITTER_BANDS:
            v.append(
                Violation(Rule.MULTI_OUT_NO_SPLITTER, f"chain {i}", f"{fanout} targets exceed {SPLITTER_BANDS} bands")
            )

    # Sidechain rules.
    for i, chain in enumerate(project.fx_chains):
        pos = chain.sidechain_positions()
        if len(pos) > 1:
            v.append(Violation(Rule.MULTI_SIDECHAIN_IN_CHAIN, f"chain {i}", f"fx positions {pos}"))
    for s, c, k in sidechains:
        incoming = [u for u in range(n) if s in main[u]]
        stems_here = sum(1 for a in project.input_audios if a.input_fx_chain == s)
        if stems_here == 0 and len(incoming) == 1 and incoming[0] in split_sources[s] and len(split_sources[s]) == 1:
            v.append(
                Violation(Rule.SIDECHAIN_FROM_SPLITTER, f"chain {c} fx {k}", f"source chain {s} is a lone splitter band")
            )

    # Same-layer rule under main-edge-only layering (sidechain edges take
    # part in the acyclicity check above but not in layering).
    layers = kahn_layers(main) if cycle is None else None
    if layers is not None:
        for s, c, k in sidechains:
            if layers[s] != layers[c]:
                v.append(
                    Violation(
                        Rule.SIDECHAIN_LAYER_MISMATCH,
                        f"chain {c} fx {k}",
                        f"source chain {s} in layer {layers[s]}, consumer in layer {layers[c]}",
                    )
                )

    # Parameter grid membership for plugins the registry knows.
    for i, chain in enumerate(project.fx_chains):
        for k, fx in enumerate(chain.fx_chain):
            desc = registry.find(fx.fx_name) if registry is not None else None
            for p, value in enumerate(fx.params):
                if value is None:
                    continue
                if not 0.0 <= value <= 1.0:
                    v.append(Violation(Rule.PARAM_OFF_GRID, f"chain {i} fx {k} param {p}", f"{value} outside [0,1]"))
                    continue
                if desc is None:
                    continue
                if p >= len(desc.params):
                    v.append(
                        Violation(Rule.PARAM_OFF_GRID, f"chain {i} fx {k} param {p}", "beyond plugin parameter count")
                    )
                    continue
                grid = desc.params[p].grid_values()
                if grid is None:
                    v.append(
                        Violation(
                            Rule.PARAM_OFF_GRID,
                            f"chain {i} fx {k} param {p}",
                            f"{desc.params[p].name} accepts only the default",
                        )
                    )
                elif not any(abs(value - g) <= GRID_EPS for g in grid):
                    v.append(Violation(Rule.PARAM_OFF_GRID, f"chain {i} fx {k} param {p}", f"{value} not on grid"))

    return ValidationReport(tuple(v))
