"""Port-numbered network graphs: loading, generation, unions, local views.

Graphs are immutable after construction.  Port numbers are the positions of
neighbors in each node's adjacency list, fixed by the order edges appear in
the input file or generator output, and stable for the lifetime of a run.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Optional, Sequence


class GraphError(ValueError):
    """Raised for malformed, disconnected or otherwise invalid graphs."""


LABEL_G0 = "g0"
LABEL_G1 = "g1"
LABEL_BOTH = "both"
_LABELS = (LABEL_G0, LABEL_G1, LABEL_BOTH)


def _edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class NodeView:
    """What a single node is allowed to see: itself, its ports, its input.

    Contains no information about non-neighbor vertices.  The random tape
    handle is attached by the engine at run time.
    """

    node: int
    neighbors: tuple[int, ...]  # neighbor ids in port order
    input: object = None

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    def port_of(self, v: int) -> int:
        return self.neighbors.index(v)


class NetworkGraph:
    """Undirected connected graph with per-node ordered (port-numbered) adjacency.

    ports[u] lists u's neighbors; the index of v in ports[u] is the port
    number u uses for the edge (u, v).  Optional per-edge labels tag union
    graphs (g0 / g1 / both); optional node_inputs carry protocol instances.
    """

    __slots__ = ("n", "ports", "edge_labels", "node_inputs", "_edge_set",
                 "planted")

    def __init__(
        self,
        n: int,
        edges: Sequence[tuple[int, int]],
        edge_labels: Optional[dict[tuple[int, int], str]] = None,
        node_inputs: Optional[Sequence[object]] = None,
    ):
        if n < 1:
            raise GraphError("graph needs at least one vertex")
        ports: list[list[int]] = [[] for _ in range(n)]
        edge_set: set[tuple[int, int]] = set()
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u},{v}) out of range for n={n}")
            if u == v:
                raise GraphError(f"self-loop at {u}")
            key = _edge_key(u, v)
            if key in edge_set:
                raise GraphError(f"duplicate edge ({u},{v})")
            edge_set.add(key)
            ports[u].append(v)
            ports[v].append(u)
        self.n = n
        self.ports = tuple(tuple(p) for p in ports)
        self._edge_set = frozenset(edge_set)
        if edge_labels is not None:
            labels = {}
            for key, lab in edge_labels.items():
                key = _edge_key(*key)
                if key not in edge_set:
                    raise GraphError(f"label for non-edge {key}")
                if lab not in _LABELS:
                    raise GraphError(f"bad edge label {lab!r}")
                labels[key] = lab
            self.edge_labels = labels
        else:
            self.edge_labels = None
        if node_inputs is not None and len(node_inputs) != n:
            raise GraphError("node_inputs length must equal n")
        self.node_inputs = tuple(node_inputs) if node_inputs is not None else None
        self._check_connected()

    def _check_connected(self) -> None:
        if self.n == 1:
            return
        seen = [False] * self.n
        seen[0] = True
        stack = [0]
        count = 1
        while stack:
            u = stack.pop()
            for v in self.ports[u]:
                if not seen[v]:
                    seen[v] = True
                    count += 1
                    stack.append(v)
        if count != self.n:
            raise GraphError("graph is disconnected")

    # -- queries ---------------------------------------------------------

    def degree(self, u: int) -> int:
        return len(self.ports[u])

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.ports[u]

    def has_edge(self, u: int, v: int) -> bool:
        return _edge_key(u, v) in self._edge_set

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self._edge_set)

    def num_edges(self) -> int:
        return len(self._edge_set)

    def label_of(self, u: int, v: int) -> str:
        if self.edge_labels is None:
            return LABEL_BOTH
        return self.edge_labels[_edge_key(u, v)]

    def view(self, u: int) -> NodeView:
        inp = self.node_inputs[u] if self.node_inputs is not None else None
        return NodeView(u, self.ports[u], inp)

    def with_inputs(self, node_inputs: Sequence[object]) -> "NetworkGraph":
        """New graph sharing topology, carrying per-node inputs."""
        g = object.__new__(NetworkGraph)
        g.n = self.n
        g.ports = self.ports
        g._edge_set = self._edge_set
        g.edge_labels = self.edge_labels
        if len(node_inputs) != self.n:
            raise GraphError("node_inputs length must equal n")
        g.node_inputs = tuple(node_inputs)
        return g

    def neighbors_in(self, u: int, which: str) -> tuple[int, ...]:
        """Neighbors of u restricted to edges labeled `which` (g0 or g1)."""
        if which not in (LABEL_G0, LABEL_G1):
            raise GraphError(f"bad selector {which!r}")
        out = []
        for v in self.ports[u]:
            lab = self.label_of(u, v)
            if lab == LABEL_BOTH or lab == which:
                out.append(v)
        return tuple(out)

    def __repr__(self) -> str:
        return f"NetworkGraph(n={self.n}, m={self.num_edges()})"


# -- loading ---------------------------------------------------------------

def load_graph(text: str) -> NetworkGraph:
    """Parse the documented edge-list format.

    First non-comment line: ``n=<int>``.  Then one edge per line,
    ``u v [label]`` with label in {g0, g1, both} (default both).
    Comments start with '#'.
    """
    n = None
    edges: list[tuple[int, int]] = []
    labels: dict[tuple[int, int], str] = {}
    any_label = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n is None:
            if not line.startswith("n="):
                raise GraphError(f"line {lineno}: expected 'n=<int>' header")
            try:
                n = int(line[2:])
            except ValueError:
                raise GraphError(f"line {lineno}: bad vertex count {line[2:]!r}")
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphError(f"line {lineno}: expected 'u v [label]'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: bad endpoints {line!r}")
        lab = LABEL_BOTH
        if len(parts) == 3:
            lab = parts[2].lower()
            if lab not in _LABELS:
                raise GraphError(f"line {lineno}: bad label {parts[2]!r}")
            any_label = True
        edges.append((u, v))
        labels[_edge_key(u, v)] = lab
    if n is None:
        raise GraphError("missing 'n=<int>' header")
    return NetworkGraph(n, edges, labels if any_label else None)


# -- generators ------------------------------------------------------------

# Six-vertex graph with trivial automorphism group; verified by exhaustive
# enumeration of all 720 vertex permutations in the test suite.
_ASYM6_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (3, 5))

# A second rigid 6-vertex graph, not isomorphic to the first (used as the
# other half of non-isomorphism experiments).
_ASYM6B_EDGES = ((0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (2, 5))

_GNP_MAX_RESAMPLES = 2000


def generate_graph(kind: str, params: Sequence = (), seed: int = 0) -> NetworkGraph:
    """Deterministic graph construction; identical (kind, params, seed) give
    identical port-numbered graphs."""
    rng = random.Random(seed)
    if kind == "path":
        (n,) = params
        _need(n >= 1, "path needs n >= 1")
        return NetworkGraph(n, [(i, i + 1) for i in range(n - 1)])
    if kind == "cycle":
        (n,) = params
        _need(n >= 3, "cycle needs n >= 3")
        return NetworkGraph(n, [(i, (i + 1) % n) for i in range(n)])
    if kind == "clique":
        (n,) = params
        _need(n >= 1, "clique needs n >= 1")
        return NetworkGraph(n, list(itertools.combinations(range(n), 2)))
    if kind == "gnp":
        n, p = params
        _need(n >= 1 and 0.0 <= p <= 1.0, "gnp needs n >= 1 and p in [0,1]")
        for _ in range(_GNP_MAX_RESAMPLES):
            edges = [e for e in itertools.combinations(range(n), 2)
                     if rng.random() < p]
            try:
                return NetworkGraph(n, edges)
            except GraphError:
                continue
        raise GraphError(f"gnp({n},{p}) failed to produce a connected graph")
    if kind == "random_tree":
        (n,) = params
        _need(n >= 1, "random_tree needs n >= 1")
        return random_tree(n, seed)
    if kind == "smallest_asymmetric":
        return NetworkGraph(6, list(_ASYM6_EDGES))
    if kind == "smallest_asymmetric_b":
        return NetworkGraph(6, list(_ASYM6B_EDGES))
    if kind == "planted_clique":
        n, k = params[0], params[1]
        base_p = params[2] if len(params) > 2 else 0.3
        _need(2 <= k <= n, "planted_clique needs 2 <= K <= n")
        members = sorted(rng.sample(range(n), k))
        for _ in range(_GNP_MAX_RESAMPLES):
            edge_set = set(itertools.combinations(members, 2))
            order = []
            for e in itertools.combinations(range(n), 2):
                if e in edge_set:
                    order.append(e)
                elif rng.random() < base_p:
                    order.append(e)
                    edge_set.add(e)
            try:
                g = NetworkGraph(n, order)
                return _with_clique(g, tuple(members))
            except GraphError:
                continue
        raise GraphError("planted_clique failed to produce a connected graph")
    raise GraphError(f"unknown generator kind {kind!r}")


def _with_clique(g: NetworkGraph, members: tuple[int, ...]) -> NetworkGraph:
    # stash the planted members for harness use; not part of node-local views
    gg = object.__new__(NetworkGraph)
    gg.n = g.n
    gg.ports = g.ports
    gg._edge_set = g._edge_set
    gg.edge_labels = g.edge_labels
    gg.node_inputs = g.node_inputs
    gg.planted = members  # type: ignore[attr-defined]
    return gg


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise GraphError(msg)


def random_tree(n: int, seed: int = 0) -> NetworkGraph:
    """Uniform-ish random tree by random parent attachment; O(n)."""
    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    edges = []
    for i in range(1, n):
        parent = order[rng.randrange(i)]
        edges.append((order[i], parent))
    return NetworkGraph(n, edges)


def random_connected(n: int, extra_edges: int = 0, seed: int = 0) -> NetworkGraph:
    """Random tree plus `extra_edges` random chords; connected, O(n + extra)."""
    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    edges = []
    present = set()
    for i in range(1, n):
        parent = order[rng.randrange(i)]
        edges.append((order[i], parent))
        present.add(_edge_key(order[i], parent))
    tries = 0
    while extra_edges > 0 and tries < 50 * extra_edges + 100:
        tries += 1
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v or _edge_key(u, v) in present:
            continue
        edges.append((u, v))
        present.add(_edge_key(u, v))
        extra_edges -= 1
    return NetworkGraph(n, edges)


# -- unions ----------------------------------------------------------------

def union_graph(g0: NetworkGraph, g1: NetworkGraph) -> NetworkGraph:
    """Union of two graphs on the same vertex set, edges labeled g0/g1/both.

    Port order: g0's edges in g0 order first, then g1-only edges in g1 order.
    """
    if g0.n != g1.n:
        raise GraphError("union requires the same vertex set")
    n = g0.n
    seen: dict[tuple[int, int], str] = {}
    order: list[tuple[int, int]] = []
    for u in range(n):
        for v in g0.ports[u]:
            key = _edge_key(u, v)
            if key not in seen:
                seen[key] = LABEL_G0
                order.append(key)
    for u in range(n):
        for v in g1.ports[u]:
            key = _edge_key(u, v)
            if key in seen:
                if seen[key] == LABEL_G0:
                    seen[key] = LABEL_BOTH
            else:
                seen[key] = LABEL_G1
                order.append(key)
    return NetworkGraph(n, order, dict(seen))


# -- brute-force symmetry utilities (desk-scale harness helpers) -----------

def automorphism_count(g: NetworkGraph) -> int:
    """|Aut(G)| by exhaustive permutation enumeration.  Desk scale only."""
    es = g._edge_set
    count = 0
    for p in itertools.permutations(range(g.n)):
        if all(_edge_key(p[u], p[v]) in es for u, v in es):
            count += 1
    return count


def is_rigid(g: NetworkGraph) -> bool:
    return automorphism_count(g) == 1


def are_isomorphic(g0: NetworkGraph, g1: NetworkGraph) -> bool:
    """Exhaustive isomorphism test.  Desk scale only."""
    if g0.n != g1.n or g0.num_edges() != g1.num_edges():
        return False
    es1 = g1._edge_set
    for p in itertools.permutations(range(g0.n)):
        if all(_edge_key(p[u], p[v]) in es1 for u, v in g0._edge_set):
            return True
    return False


def permute_graph(g: NetworkGraph, perm: Sequence[int]) -> NetworkGraph:
    """Graph with each edge (u,v) mapped to (perm[u], perm[v])."""
    edges = [(perm[u], perm[v]) for u, v in g.edges()]
    return NetworkGraph(g.n, edges)


def neighborhood_rows(g: NetworkGraph, which: Optional[str] = None) -> list[int]:
    """Row bitmasks: bit v of row u set iff (u,v) is an edge (optionally
    restricted to a g0/g1 labeled subgraph)."""
    rows = [0] * g.n
    for u in range(g.n):
        nbrs = g.ports[u] if which is None else g.neighbors_in(u, which)
        for v in nbrs:
            rows[u] |= 1 << v
    return rows
