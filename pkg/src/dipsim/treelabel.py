"""Spanning-tree proof labels, up-the-tree aggregation, and distributed
low-degree-extension evaluation.

The labeling gives every node a parent port, its distance from the root and
the root's id; neighbor exchanges of (parent, distance, root id) make the
checks local.  On any accepted labeling the parent pointers form a spanning
tree, which tests assert post hoc via `is_spanning_tree`.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .engine import Payload, ProtocolSpec, ProverEnv, RunCtx
from .netmodel import NetworkGraph


def bitlen(x: int) -> int:
    """Width needed to carry values in [0, x]; at least 1."""
    return max(1, int(x).bit_length())


@dataclass(frozen=True)
class SpanningTreeLabeling:
    """Honest labeling: parent node ids (None at the root) and distances."""

    root: int
    parent: dict
    dist: dict

    def children(self, nodes: Sequence[int]) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {u: [] for u in nodes}
        for u in nodes:
            p = self.parent.get(u)
            if p is not None:
                ch[p].append(u)
        return ch


def bfs_labeling(adj: dict[int, tuple[int, ...]], root: int) -> SpanningTreeLabeling:
    """BFS tree over an adjacency map (graph or subgraph), port order respected."""
    parent = {u: None for u in adj}
    dist = {u: -1 for u in adj}
    dist[root] = 0
    q = deque([root])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                parent[v] = u
                q.append(v)
    if any(d < 0 for d in dist.values()):
        raise ValueError("adjacency not connected")
    return SpanningTreeLabeling(root, parent, dist)


def graph_adj(graph: NetworkGraph) -> dict[int, tuple[int, ...]]:
    return {u: graph.ports[u] for u in range(graph.n)}


def is_spanning_tree(adj: dict[int, tuple[int, ...]], parent: dict) -> bool:
    """Do the parent pointers form a spanning tree of the (sub)graph?"""
    nodes = list(adj)
    roots = [u for u in nodes if parent.get(u) is None]
    if len(roots) != 1:
        return False
    seen = set()
    for u in nodes:
        path = []
        w = u
        while w is not None and w not in seen:
            path.append(w)
            seen.add(w)
            p = parent.get(w)
            if p is not None and (p not in adj or p not in adj[w]):
                return False
            w = p
        if w is not None and w in path:
            return False  # cycle
    return len(seen) == len(nodes)


# --------------------------------------------------------------------------
# Reusable tree-labeling sub-protocol: payload fields + local verification.
# Runs over the whole graph or over a connected node subset.


class TreeLabelPiece:
    """One tree labeling riding a prover message, verified with one exchange.

    `nodes` must be sorted; root ids are local indexes into it so label
    widths scale with the subgraph, not the whole network.
    """

    def __init__(self, tag: str, nodes: Sequence[int],
                 adj: dict[int, tuple[int, ...]]):
        self.tag = tag
        self.nodes = list(nodes)
        self.adj = adj
        self.lid = {u: i for i, u in enumerate(self.nodes)}
        n = len(self.nodes)
        self.dist_bits = bitlen(n - 1)
        self.rid_bits = bitlen(n - 1)

    def attach(self, payloads: list[Payload], lab: SpanningTreeLabeling) -> None:
        for u in self.nodes:
            p = payloads[u]
            par = lab.parent[u]
            deg = len(self.adj[u])
            pport = deg if par is None else self.adj[u].index(par)
            p.put(f"{self.tag}.pport", pport, bitlen(deg))
            p.put(f"{self.tag}.dist", lab.dist[u], self.dist_bits)
            p.put(f"{self.tag}.rootid", self.lid[lab.root], self.rid_bits)

    def parse(self, payloads: list[Payload]) -> dict[int, Optional[int]]:
        """Claimed parent (node id or None) per node; None also for invalid ports."""
        parent: dict[int, Optional[int]] = {}
        self.bad: set[int] = set()
        for u in self.nodes:
            pport = payloads[u].get(f"{self.tag}.pport")
            deg = len(self.adj[u])
            if pport is None or not (0 <= pport <= deg):
                parent[u] = None
                self.bad.add(u)
            elif pport == deg:
                parent[u] = None
            else:
                parent[u] = self.adj[u][pport]
        return parent

    def verify(self, ctx: RunCtx, payloads: list[Payload]) -> dict[int, Optional[int]]:
        """Exchange (parent id, dist, root id) along sub-edges and run the
        local checks.  Returns the claimed parent map."""
        parent = self.parse(payloads)
        dist = {u: payloads[u].get(f"{self.tag}.dist", 0) for u in self.nodes}
        rootid = {u: payloads[u].get(f"{self.tag}.rootid", -1) for u in self.nodes}
        member = set(self.nodes)
        msg_bits = self.dist_bits + self.rid_bits + self.rid_bits

        def out(u):
            if u not in member:
                return {}
            val = (parent[u], dist[u], rootid[u])
            return {v: (val, msg_bits) for v in self.adj[u]}

        inbox = ctx.exchange(f"{self.tag}.xchg", out, nodes=self.nodes)
        for u in self.nodes:
            if u in self.bad:
                ctx.require(u, False, f"{self.tag}: invalid parent port")
                continue
            for v in self.adj[u]:
                got = inbox[u].get(v)
                if got is None:
                    ctx.require(u, False, f"{self.tag}: neighbor {v} silent")
                    continue
                _, _, rid_v = got
                ctx.require(u, rid_v == rootid[u], f"{self.tag}: root-id mismatch")
            if parent[u] is None:
                ctx.require(u, dist[u] == 0, f"{self.tag}: root with nonzero distance")
                ctx.require(u, rootid[u] == self.lid[u], f"{self.tag}: fake root id")
            else:
                got = inbox[u].get(parent[u])
                if got is None:
                    ctx.require(u, False, f"{self.tag}: parent silent")
                else:
                    ctx.require(u, dist[u] == got[1] + 1,
                                f"{self.tag}: distance inconsistent with parent")
        self.claimed_parent = parent
        self.claimed_children = {u: [] for u in self.nodes}
        for u in self.nodes:
            p = parent[u]
            if p is not None and p in member:
                self.claimed_children[p].append(u)
        return parent


# --------------------------------------------------------------------------
# Protocol builders


def tree_labeling_protocol(graph: NetworkGraph, root: int = 0) -> ProtocolSpec:
    """One prover message: parent port, distance, root id; local checks."""
    adj = graph_adj(graph)
    piece = TreeLabelPiece("tree", range(graph.n), adj)

    def run(ctx: RunCtx) -> None:
        for u in range(graph.n):
            ctx.set_verdict(u, True)

        def honest(env: ProverEnv) -> list[Payload]:
            lab = bfs_labeling(adj, root)
            payloads = [Payload() for _ in range(graph.n)]
            piece.attach(payloads, lab)
            return payloads

        payloads = ctx.prover_phase("tree.label", honest)
        parent = piece.verify(ctx, payloads)
        ctx.set_output("parent", {u: parent[u] for u in range(graph.n)})

    return ProtocolSpec("tree-label", "M", run)


def subtree_aggregate(parent: dict, nodes: Sequence[int], values: dict,
                      op: Callable[[int, int], int], identity: int) -> dict:
    """X_u = fold of values over the subtree rooted at u (honest computation)."""
    children: dict[int, list[int]] = {u: [] for u in nodes}
    order: list[int] = []
    roots = []
    for u in nodes:
        p = parent.get(u)
        if p is None:
            roots.append(u)
        else:
            children[p].append(u)
    stack = list(roots)
    while stack:
        u = stack.pop()
        order.append(u)
        stack.extend(children[u])
    agg = {}
    for u in reversed(order):
        x = values[u]
        for v in children[u]:
            x = op(x, agg[v])
        agg[u] = x
    return agg


def aggregate_protocol(graph: NetworkGraph, values: Sequence[int],
                       op_name: str = "sum", modulus: Optional[int] = None,
                       root: int = 0) -> tuple[dict, ProtocolSpec]:
    """Prover supplies subtree aggregates over a labeled tree; every node
    checks its value against its children's.  Returns the honest per-node
    aggregates and the verification spec.
    """
    adj = graph_adj(graph)
    lab = bfs_labeling(adj, root)
    if op_name == "sum":
        if modulus is None:
            op = lambda a, b: a + b
        else:
            op = lambda a, b: (a + b) % modulus
        identity = 0
    elif op_name == "product":
        if modulus is None:
            op = lambda a, b: a * b
        else:
            op = lambda a, b: (a * b) % modulus
        identity = 1
    else:
        raise ValueError(f"unknown aggregate op {op_name!r}")
    vals = {u: values[u] for u in range(graph.n)}
    honest_agg = subtree_aggregate(lab.parent, range(graph.n), vals, op, identity)
    width = bitlen(max(max(honest_agg.values()), 1))
    piece = TreeLabelPiece("agg.tree", range(graph.n), adj)

    def run(ctx: RunCtx) -> None:
        for u in range(graph.n):
            ctx.set_verdict(u, True)

        def honest(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(graph.n)]
            piece.attach(payloads, lab)
            for u in range(graph.n):
                payloads[u].put("agg.X", honest_agg[u], width)
            return payloads

        payloads = ctx.prover_phase("agg.proof", honest)
        piece.verify(ctx, payloads)
        agg_claim = {u: payloads[u].get("agg.X", 0) for u in range(graph.n)}
        inbox = ctx.broadcast_exchange(
            "agg.xchg", lambda u: ((piece.claimed_parent[u], agg_claim[u]), width + 1))
        for u in range(graph.n):
            x = vals[u]
            for v in graph.neighbors(u):
                got = inbox[u].get(v)
                if got is not None and got[0] == u:
                    x = op(x, got[1])
            ctx.require(u, x == agg_claim[u], "agg: children inconsistent")
        root_node = piece.claimed_parent and [u for u in range(graph.n)
                                              if piece.claimed_parent[u] is None]
        if root_node:
            ctx.set_output("root_aggregate", agg_claim[root_node[0]])

    return honest_agg, ProtocolSpec("aggregate-up-tree", "M", run)


# --------------------------------------------------------------------------
# Low degree extension


@dataclass(frozen=True)
class LdeParams:
    """Grid H^m inside prime field F; query point z; claimed value v."""

    h_size: int
    m: int
    p: int               # prime field modulus
    z: tuple[int, ...]
    v: int

    @property
    def positions(self) -> int:
        return self.h_size ** self.m


def lagrange_coeffs(p: int, h_size: int, z_j: int) -> list[int]:
    """[L_h(z_j) for h in 0..h_size-1] over F_p, H = first h_size elements."""
    coeffs = []
    for h in range(h_size):
        num, den = 1, 1
        for hp in range(h_size):
            if hp == h:
                continue
            num = num * ((z_j - hp) % p) % p
            den = den * ((h - hp) % p) % p
        coeffs.append(num * pow(den, p - 2, p) % p)
    return coeffs


def tau_at(params: LdeParams, x: tuple[int, ...], z: tuple[int, ...]) -> int:
    out = 1
    tables = [lagrange_coeffs(params.p, params.h_size, zj) for zj in z]
    for j, xj in enumerate(x):
        out = out * tables[j][xj] % params.p
    return out


def lde_evaluate(params: LdeParams, phi: dict[tuple[int, ...], int],
                 z: tuple[int, ...]) -> int:
    """Centralized oracle: phi-hat(z) = sum over the grid of tau_x(z) phi(x)."""
    p = params.p
    tables = [lagrange_coeffs(p, params.h_size, zj) for zj in z]
    total = 0
    for x, val in phi.items():
        t = val % p
        for j, xj in enumerate(x):
            t = t * tables[j][xj] % p
        total = (total + t) % p
    return total


def default_lde_params(num_positions: int, n: int,
                       rng=None) -> tuple[int, int, int]:
    """(h_size, m, p) defaults: |H| the next power of two at or above
    log2(#positions), m the matching dimension, p comfortably above the
    degree bound."""
    import math
    target = max(2, math.ceil(math.log2(max(2, num_positions))))
    h = 1
    while h < target:
        h *= 2
    m = max(1, math.ceil(math.log(max(2, num_positions), h)))
    from .fieldset import next_prime
    p = next_prime(h * h * m * max(n, 2) + 1)
    return h, m, p


def lde_eval_protocol(graph: NetworkGraph, params: LdeParams,
                      shares: dict[int, dict[tuple[int, ...], int]],
                      slice_owner: Optional[dict[int, int]] = None,
                      root: int = 0) -> ProtocolSpec:
    """Verify phi-hat(z) = v: prover broadcasts (z, v) and subtree partial
    sums of the locally computable S_u; the root compares against v.

    Each coordinate of (z, v) is a slice held by one node (round-robin by
    default); holders check the broadcast against their slice.
    """
    adj = graph_adj(graph)
    n = graph.n
    fbits = bitlen(params.p - 1)
    words = list(params.z) + [params.v]
    if slice_owner is None:
        slice_owner = {k: k % n for k in range(len(words))}
    piece = TreeLabelPiece("lde.tree", range(n), adj)
    lab = bfs_labeling(adj, root)

    def local_sum(u: int) -> int:
        total = 0
        for x, val in shares.get(u, {}).items():
            total = (total + tau_at(params, x, params.z) * val) % params.p
        return total

    s_u = {u: local_sum(u) for u in range(n)}
    honest_agg = subtree_aggregate(lab.parent, range(n), s_u,
                                   lambda a, b: (a + b) % params.p, 0)

    def run(ctx: RunCtx) -> None:
        for u in range(n):
            ctx.set_verdict(u, True)

        def honest(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(n)]
            piece.attach(payloads, lab)
            for u in range(n):
                p = payloads[u]
                p.put("lde.z", tuple(params.z), fbits * params.m)
                p.put("lde.v", params.v, fbits)
                p.put("lde.X", honest_agg[u], fbits)
            return payloads

        payloads = ctx.prover_phase("lde.proof", honest)
        piece.verify(ctx, payloads)
        for u in range(n):
            z_c = payloads[u].get("lde.z")
            v_c = payloads[u].get("lde.v")
            ok = isinstance(z_c, tuple) and len(z_c) == params.m
            ctx.require(u, ok, "lde: malformed query point")
            if not ok:
                continue
            wv = list(z_c) + [v_c]
            for k, owner in slice_owner.items():
                if owner == u:
                    ctx.require(u, wv[k] == words[k], "lde: broadcast vs slice")
        claim = {u: (payloads[u].get("lde.z"), payloads[u].get("lde.v"),
                     payloads[u].get("lde.X", 0)) for u in range(n)}
        inbox = ctx.broadcast_exchange(
            "lde.xchg",
            lambda u: ((piece.claimed_parent[u],) + claim[u],
                       fbits * (params.m + 2) + 1))
        for u in range(n):
            for v in graph.neighbors(u):
                got = inbox[u].get(v)
                if got is None:
                    continue
                ctx.require(u, got[1] == claim[u][0] and got[2] == claim[u][1],
                            "lde: neighbors saw different (z, v)")
            my_z = claim[u][0]
            if not isinstance(my_z, tuple) or len(my_z) != params.m:
                continue
            total = 0
            for x, val in shares.get(u, {}).items():
                total = (total + tau_at(params, x, my_z) * val) % params.p
            for v in graph.neighbors(u):
                got = inbox[u].get(v)
                if got is not None and got[0] == u:
                    total = (total + got[3]) % params.p
            ctx.require(u, total == claim[u][2], "lde: partial sum mismatch")
            if piece.claimed_parent[u] is None:
                ctx.require(u, claim[u][2] == claim[u][1] % params.p,
                            "lde: root total differs from claimed value")
        ctx.set_output("protocol_value", honest_agg[lab.root])

    return ProtocolSpec("lde-eval", "M", run)


# -- adversaries -------------------------------------------------------------

def adversary_two_cycle() -> "ProverImpl":
    """Forge a 2-cycle of parents between nodes 0 and 1 (distance checks
    become unsatisfiable)."""
    from .engine import ProverImpl

    def transform(tag, payloads, env):
        if not tag.endswith(".label") and not tag.endswith(".proof"):
            return payloads
        out = [p.copy() for p in payloads]
        g = env.graph
        pairs = [(u, v) for u, v in g.edges()][:1]
        if not pairs:
            return out
        u, v = pairs[0]
        for node, other in ((u, v), (v, u)):
            key = next((k for k in out[node].fields if k.endswith(".pport")), None)
            dkey = next((k for k in out[node].fields if k.endswith(".dist")), None)
            if key:
                _, bits = out[node].fields[key]
                out[node].put(key, g.ports[node].index(other), bits)
            if dkey:
                _, bits = out[node].fields[dkey]
                out[node].put(dkey, 1, bits)
        return out
    return ProverImpl("tree-two-cycle", transform, honest=False)


def adversary_two_roots() -> "ProverImpl":
    """Split the tree: label two nodes as roots of separate subtrees."""
    from .engine import ProverImpl

    def transform(tag, payloads, env):
        if not tag.endswith(".label") and not tag.endswith(".proof"):
            return payloads
        out = [p.copy() for p in payloads]
        g = env.graph
        # relabel from a two-root forest: BFS from 0 and from the last node
        half = g.n // 2
        parent = {}
        dist = {}
        for start, nodes in ((0, range(half)), (g.n - 1, range(half, g.n))):
            allow = set(nodes)
            dist[start] = 0
            parent[start] = None
            q = deque([start])
            while q:
                x = q.popleft()
                for y in g.ports[x]:
                    if y in allow and y not in dist:
                        dist[y] = dist[x] + 1
                        parent[y] = x
                        q.append(y)
        for u in range(g.n):
            if u not in dist:  # unreachable inside its half: point at self-root
                parent[u] = None
                dist[u] = 0
            pk = next((k for k in out[u].fields if k.endswith(".pport")), None)
            dk = next((k for k in out[u].fields if k.endswith(".dist")), None)
            rk = next((k for k in out[u].fields if k.endswith(".rootid")), None)
            if pk:
                _, bits = out[u].fields[pk]
                deg = g.degree(u)
                port = deg if parent[u] is None else g.ports[u].index(parent[u])
                out[u].put(pk, port, bits)
            if dk:
                _, bits = out[u].fields[dk]
                out[u].put(dk, dist[u], bits)
            if rk:
                _, bits = out[u].fields[rk]
                out[u].put(rk, 0 if u < half else g.n - 1, bits)
        return out
    return ProverImpl("tree-two-roots", transform, honest=False)


def adversary_inflate_aggregate() -> "ProverImpl":
    """Inflate one internal subtree aggregate; the consistency chain pins it."""
    from .engine import ProverImpl

    def transform(tag, payloads, env):
        if tag != "agg.proof":
            return payloads
        out = [p.copy() for p in payloads]
        u = env.rng.randrange(len(out))
        if "agg.X" in out[u]:
            val, bits = out[u].fields["agg.X"]
            out[u].put("agg.X", val + 1, bits)
        return out
    return ProverImpl("agg-inflate", transform, honest=False)


TREE_ADVERSARIES = {
    "tree-two-cycle": adversary_two_cycle,
    "tree-two-roots": adversary_two_roots,
}
