"""Prime fields and the polynomial multiset-equality protocol family.

Two distributed multisets are compared by evaluating the root polynomials
prod(a - x) and prod(b - x) at a random field point chosen through a
min-alpha election, with subtree products verified up a labeled spanning
tree.  Field elements are plain int residues; `PrimeField` carries the
modulus and the arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .engine import Payload, ProtocolSpec, ProverEnv, ProverImpl, RunCtx
from .netmodel import NetworkGraph
from .treelabel import TreeLabelPiece, bfs_labeling, bitlen, graph_adj, subtree_aggregate


# -- primality ---------------------------------------------------------------

_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(m: int) -> bool:
    """Deterministic Miller-Rabin for every m < 3.3e24 (fixed witness set)."""
    if m < 2:
        return False
    for p in _SMALL_PRIMES:
        if m % p == 0:
            return m == p
    d, r = m - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(r - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def next_prime(x: int) -> int:
    """Smallest prime >= x."""
    m = max(2, x)
    if m % 2 == 0 and m != 2:
        m += 1
    while not is_prime(m):
        m += 2 if m > 2 else 1
    return m


class PrimeField:
    """Arithmetic mod a prime; elements are ints in [0, p)."""

    __slots__ = ("p", "bits")

    def __init__(self, p: int):
        if not is_prime(p):
            raise ValueError(f"{p} is not prime")
        self.p = p
        self.bits = bitlen(p - 1)

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.p

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.p

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def inv(self, a: int) -> int:
        if a % self.p == 0:
            raise ZeroDivisionError("inverse of zero")
        return pow(a, self.p - 2, self.p)

    def from_bits(self, raw: int) -> int:
        return raw % self.p

    def __repr__(self) -> str:
        return f"PrimeField({self.p})"


def field_for_elements(n: int, max_element: int, c: Optional[int] = None) -> PrimeField:
    """Smallest prime >= n^(c+3) where c makes every element fit below n^c."""
    if c is None:
        c = 1
        while n ** c <= max_element:
            c += 1
    p = next_prime(max(n ** (c + 3), 2 * max_element + 2, 7))
    return PrimeField(p)


def roots_of_difference(a_elems: Sequence[int], b_elems: Sequence[int],
                        field: PrimeField) -> int:
    """|{s : prod(a - s) = prod(b - s)}| by exhaustive scan (test oracle;
    feasible only for small fields)."""
    count = 0
    for s in range(field.p):
        pa = pb = 1
        for a in a_elems:
            pa = pa * ((a - s) % field.p) % field.p
        for b in b_elems:
            pb = pb * ((b - s) % field.p) % field.p
        if pa == pb:
            count += 1
    return count


def split_bits(value: int, widths: Sequence[int]) -> list[int]:
    """Split an int into big-endian chunks of the given widths."""
    total = sum(widths)
    out = []
    used = 0
    for w in widths:
        used += w
        out.append((value >> (total - used)) & ((1 << w) - 1) if w else 0)
    return out


# -- the multiset-equality core ---------------------------------------------


@dataclass
class ElectionState:
    """Derived per-node election draws plus the honest winner."""

    s_u: dict
    alpha_u: dict
    winner: int
    s: int
    alpha: int


class SetEqualityCore:
    """One election + one tree labeling + any number of product pairs.

    Drives the two-message pattern: an A phase where every participating
    node sends (s_u, alpha_u) coins, then an M phase carrying the tree, the
    winner, the per-pair subtree products A_u/B_u and the winner counts Q_u.
    Several cores may ride the same engine phases; field names are prefixed
    with the core's tag.  `pairs` maps pair name -> (a_lists, b_lists) where
    each is {node: [element residues]}.
    """

    def __init__(self, tag: str, nodes: Sequence[int],
                 adj: dict[int, tuple[int, ...]], field: PrimeField,
                 pairs: dict[str, tuple[dict, dict]],
                 alpha_slack_bits: int = 0,
                 contributors: Optional[Sequence[int]] = None):
        self.tag = tag
        self.nodes = sorted(nodes)
        self.node_set = set(self.nodes)
        self.adj = adj
        self.field = field
        self.pairs = pairs
        n = len(self.nodes)
        # slack widens the election draw when many instances run in parallel
        # (a tie in any one of them would fail an honest run)
        self.alpha_bits = 3 * bitlen(max(1, n - 1)) + alpha_slack_bits
        self.q_bits = bitlen(n)
        self.tree = TreeLabelPiece(f"{tag}.tree", self.nodes, adj)
        # pure pass-through members (shared block roots) skip the election
        self.contributors = (set(self.nodes) if contributors is None
                             else set(contributors))

    # -- coins ------------------------------------------------------------

    def coin_bits(self, u: int) -> int:
        if u not in self.contributors:
            return 0
        return self.field.bits + self.alpha_bits

    def derive_election(self, coin_values) -> ElectionState:
        s_u, alpha_u = {}, {}
        for u in self.nodes:
            if u not in self.contributors:
                continue
            s_part, a_part = split_bits(coin_values[u],
                                        [self.field.bits, self.alpha_bits])
            s_u[u] = self.field.from_bits(s_part)
            alpha_u[u] = a_part
        winner = min(self.contributors, key=lambda u: (alpha_u[u], u))
        return ElectionState(s_u, alpha_u, winner, s_u[winner], alpha_u[winner])

    # -- prover side -------------------------------------------------------

    def attach_honest(self, payloads: list[Payload], coin_values) -> None:
        el = self.derive_election(coin_values)
        f = self.field
        lab = bfs_labeling(self.adj, el.winner)
        self.tree.attach(payloads, lab)
        q_vals = {u: 1 if el.alpha_u.get(u) == el.alpha else 0
                  for u in self.nodes}
        q_agg = subtree_aggregate(lab.parent, self.nodes, q_vals,
                                  lambda a, b: a + b, 0)
        for u in self.nodes:
            p = payloads[u]
            p.put(f"{self.tag}.s", el.s, f.bits)
            p.put(f"{self.tag}.alpha", el.alpha, self.alpha_bits)
            p.put(f"{self.tag}.Q", q_agg[u], self.q_bits)
        for name, (a_lists, b_lists) in self.pairs.items():
            for side, lists in (("A", a_lists), ("B", b_lists)):
                own = {u: 1 for u in self.nodes}
                for u in self.nodes:
                    prod = 1
                    for e in lists.get(u, ()):
                        prod = prod * ((e - el.s) % f.p) % f.p
                    own[u] = prod
                agg = subtree_aggregate(lab.parent, self.nodes, own, f.mul, 1)
                for u in self.nodes:
                    payloads[u].put(f"{self.tag}.{side}.{name}", agg[u], f.bits)

    # -- node side ---------------------------------------------------------

    def verify(self, ctx: RunCtx, payloads: list[Payload], coin_values) -> None:
        f = self.field
        el = self.derive_election(coin_values)  # each node knows only its own
        parent = self.tree.verify(ctx, payloads)
        s_c = {u: payloads[u].get(f"{self.tag}.s", 0) for u in self.nodes}
        al_c = {u: payloads[u].get(f"{self.tag}.alpha", 0) for u in self.nodes}
        q_c = {u: payloads[u].get(f"{self.tag}.Q", 0) for u in self.nodes}
        prod_c = {
            name: {side: {u: payloads[u].get(f"{self.tag}.{side}.{name}", 0)
                          for u in self.nodes} for side in ("A", "B")}
            for name in self.pairs
        }
        pair_names = sorted(self.pairs)
        msg_bits = (f.bits + self.alpha_bits + self.q_bits
                    + 2 * f.bits * len(pair_names) + 1)

        def out(u):
            if u not in self.node_set:
                return {}
            val = (parent[u], s_c[u], al_c[u], q_c[u],
                   tuple((prod_c[nm]["A"][u], prod_c[nm]["B"][u])
                         for nm in pair_names))
            return {v: (val, msg_bits) for v in self.adj[u]}

        inbox = ctx.exchange(f"{self.tag}.pxchg", out, nodes=self.nodes)
        for u in self.nodes:
            s, alpha = s_c[u], al_c[u]
            for v in self.adj[u]:
                got = inbox[u].get(v)
                if got is None:
                    ctx.require(u, False, f"{self.tag}: silent neighbor")
                    continue
                ctx.require(u, got[1] == s and got[2] == alpha,
                            f"{self.tag}: winner differs among neighbors")
            if u in self.contributors:
                ctx.require(u, alpha <= el.alpha_u[u],
                            f"{self.tag}: alpha above own draw")
                if alpha == el.alpha_u[u]:
                    # the winner confirms the announced s is its own draw
                    ctx.require(u, s == el.s_u[u],
                                f"{self.tag}: winner s substituted")
            kids = [v for v in self.adj[u]
                    if inbox[u].get(v) is not None and inbox[u][v][0] == u]
            q_sum = (1 if u in self.contributors and alpha == el.alpha_u[u]
                     else 0)
            for v in kids:
                q_sum += inbox[u][v][3]
            ctx.require(u, q_c[u] == q_sum, f"{self.tag}: winner-count chain broken")
            for k, nm in enumerate(pair_names):
                a_lists, b_lists = self.pairs[nm]
                for side, lists, claims in (("A", a_lists, prod_c[nm]["A"]),
                                            ("B", b_lists, prod_c[nm]["B"])):
                    prod = 1
                    for e in lists.get(u, ()):
                        prod = prod * ((e - s) % f.p) % f.p
                    for v in kids:
                        prod = prod * inbox[u][v][4][k][0 if side == "A" else 1] % f.p
                    ctx.require(u, claims[u] == prod,
                                f"{self.tag}: {side}.{nm} product chain broken")
            if parent[u] is None:
                ctx.require(u, q_c[u] == 1, f"{self.tag}: winner not unique")
                for nm in pair_names:
                    ctx.require(u, prod_c[nm]["A"][u] == prod_c[nm]["B"][u],
                                f"{self.tag}: {nm} multisets differ at root")


# -- protocol builders -------------------------------------------------------


def _as_lists(values) -> dict[int, list[int]]:
    out = {}
    for u, v in enumerate(values):
        out[u] = list(v) if isinstance(v, (list, tuple)) else [v]
    return out


def set_equality_protocol(graph: NetworkGraph, a_lists, b_lists,
                          c: Optional[int] = None,
                          name: str = "set-equality") -> ProtocolSpec:
    """dAM multiset equality on per-node lists of at most n elements each."""
    n = graph.n
    a_l, b_l = _as_lists(a_lists), _as_lists(b_lists)
    if any(len(v) > n for v in list(a_l.values()) + list(b_l.values())):
        raise ValueError("lists are limited to n elements per node")
    max_el = max([0] + [e for l in list(a_l.values()) + list(b_l.values()) for e in l])
    field = field_for_elements(n, max_el, c)
    core = SetEqualityCore("se", range(n), graph_adj(graph), field,
                           {"main": (a_l, b_l)})

    def run(ctx: RunCtx) -> None:
        for u in range(n):
            ctx.set_verdict(u, True)
        coins = ctx.coin_phase("se.coins", lambda view: core.coin_bits(view.node))

        def honest(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(n)]
            core.attach_honest(payloads, env.coins["se.coins"])
            return payloads

        payloads = ctx.prover_phase("se.proof", honest)
        core.verify(ctx, payloads, coins)

    spec = ProtocolSpec(name, "AM", run,
                        budget_bits=lambda m: 24 * bitlen(m))
    spec.field = field  # harness introspection
    return spec


def permutation_protocol(graph: NetworkGraph, values: Sequence[int]) -> ProtocolSpec:
    """dAM check that per-node values in [1..n] form a permutation."""
    n = graph.n
    vals = list(values)
    in_range = [1 <= v <= n for v in vals]
    y = [(v % n) + 1 if 1 <= v <= n else 1 for v in vals]
    field = field_for_elements(n, n)
    core = SetEqualityCore("se", range(n), graph_adj(graph), field,
                           {"perm": (_as_lists(vals), _as_lists(y))})

    def run(ctx: RunCtx) -> None:
        for u in range(n):
            ctx.set_verdict(u, in_range[u], "permutation: value out of range")
        coins = ctx.coin_phase("se.coins", lambda view: core.coin_bits(view.node))

        def honest(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(n)]
            core.attach_honest(payloads, env.coins["se.coins"])
            return payloads

        payloads = ctx.prover_phase("se.proof", honest)
        core.verify(ctx, payloads, coins)

    return ProtocolSpec("permutation", "AM", run)


def distinctness_protocol(graph: NetworkGraph, values: Sequence[int]) -> ProtocolSpec:
    """dMAM distinctness: claimed cyclic successors + descent count + multiset
    equality of values vs successors.

    A node marks a descent when its value is >= its claimed successor; on a
    sorted cycle of distinct values exactly one descent appears.
    """
    n = graph.n
    vals = list(values)
    if n == 1:
        def run_one(ctx: RunCtx) -> None:
            ctx.prover_phase("dist.succ", lambda env: [Payload()])
            ctx.set_verdict(0, True)
        return ProtocolSpec("distinctness", "M", run_one)

    elem_bits = bitlen(max(max(vals), 1))
    field = field_for_elements(n, max(vals))
    adj = graph_adj(graph)
    sum_tree = TreeLabelPiece("dsum.tree", range(n), adj)
    sum_bits = bitlen(n)

    def honest_successors() -> list[int]:
        order = sorted(range(n), key=lambda i: (vals[i], i))
        succ = [0] * n
        for k, i in enumerate(order):
            succ[i] = vals[order[(k + 1) % n]]
        return succ

    def run(ctx: RunCtx) -> None:
        for u in range(n):
            ctx.set_verdict(u, True)

        def honest_m1(env: ProverEnv) -> list[Payload]:
            succ = honest_successors()
            lab = bfs_labeling(adj, 0)
            b = {u: 1 if vals[u] >= succ[u] else 0 for u in range(n)}
            agg = subtree_aggregate(lab.parent, range(n), b, lambda x, y: x + y, 0)
            payloads = [Payload() for _ in range(n)]
            sum_tree.attach(payloads, lab)
            for u in range(n):
                payloads[u].put("dist.y", succ[u], elem_bits)
                payloads[u].put("dist.S", agg[u], sum_bits)
            return payloads

        m1 = ctx.prover_phase("dist.succ", honest_m1)
        y_claim = [m1[u].get("dist.y", 0) for u in range(n)]
        b_local = [1 if vals[u] >= y_claim[u] else 0 for u in range(n)]
        parent = sum_tree.verify(ctx, m1)
        s_claim = [m1[u].get("dist.S", 0) for u in range(n)]
        inbox = ctx.broadcast_exchange(
            "dist.xchg", lambda u: ((parent[u], s_claim[u]), sum_bits + 1))
        for u in range(n):
            total = b_local[u]
            for v, got in inbox[u].items():
                if got[0] == u:
                    total += got[1]
            ctx.require(u, s_claim[u] == total, "distinctness: descent sum chain")
            if parent[u] is None:
                ctx.require(u, s_claim[u] == 1, "distinctness: descent count != 1")

        core = SetEqualityCore("se", range(n), adj, field,
                               {"ay": (_as_lists(vals), _as_lists(y_claim))})
        coins = ctx.coin_phase("se.coins", lambda view: core.coin_bits(view.node))

        def honest_m3(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(n)]
            core.attach_honest(payloads, env.coins["se.coins"])
            return payloads

        proof = ctx.prover_phase("se.proof", honest_m3)
        core.verify(ctx, proof, coins)

    return ProtocolSpec("distinctness", "MAM", run)


def encode_edge(u: int, v: int, n: int) -> int:
    a, b = (u, v) if u < v else (v, u)
    return a * n + b


def dsym_protocol(graph: NetworkGraph, pi: Sequence[int]) -> ProtocolSpec:
    """dAM fixed-automorphism check: multiset of edges of G vs pi(G).

    Every node knows pi as a common input table; edge (u,v) is contributed
    once by min(u,v), encoded as an ordered pair.
    """
    n = graph.n
    if sorted(pi) != list(range(n)):
        raise ValueError("pi must be a permutation of 0..n-1")
    a_l: dict[int, list[int]] = {u: [] for u in range(n)}
    b_l: dict[int, list[int]] = {u: [] for u in range(n)}
    for u in range(n):
        for v in graph.neighbors(u):
            if u < v:
                a_l[u].append(encode_edge(u, v, n))
                b_l[u].append(encode_edge(pi[u], pi[v], n))
    spec = set_equality_protocol(graph, [a_l[u] for u in range(n)],
                                 [b_l[u] for u in range(n)], c=2,
                                 name="dsym")
    return spec


# -- registered adversaries ---------------------------------------------------


def adv_tamper_subtree() -> ProverImpl:
    """Inflate one node's A-product; the consistency chain pins the lie."""
    def transform(tag, payloads, env):
        if not tag.endswith(".proof"):
            return payloads
        out = [p.copy() for p in payloads]
        keys = [k for k in out[0].fields if ".A." in k]
        if not keys:
            return out
        u = env.rng.randrange(len(out))
        key = keys[0]
        val, bits = out[u].fields[key]
        out[u].put(key, (val * 2 + 1) % (1 << bits), bits)
        return out
    return ProverImpl("se-tamper-subtree", transform, honest=False)


def adv_forge_election() -> ProverImpl:
    """Claim a winning alpha below every draw with a prover-chosen s; the
    winner count cannot reach 1 without a detectable chain lie."""
    def transform(tag, payloads, env):
        if not tag.endswith(".proof"):
            return payloads
        out = [p.copy() for p in payloads]
        skey = next((k for k in out[0].fields if k.endswith(".s")), None)
        akey = next((k for k in out[0].fields if k.endswith(".alpha")), None)
        qkey = next((k for k in out[0].fields if k.endswith(".Q")), None)
        if not (skey and akey and qkey):
            return out
        for u in range(len(out)):
            _, sbits = out[u].fields[skey]
            _, abits = out[u].fields[akey]
            out[u].put(skey, 1, sbits)
            out[u].put(akey, 0, abits)
        return out
    return ProverImpl("se-forge-election", transform, honest=False)


def adv_balanced_lie() -> ProverImpl:
    """Copy the B products over the A products everywhere; local product
    checks catch any node whose own lists differ."""
    def transform(tag, payloads, env):
        if not tag.endswith(".proof"):
            return payloads
        out = [p.copy() for p in payloads]
        for u in range(len(out)):
            for k in list(out[u].fields):
                if ".A." in k:
                    bkey = k.replace(".A.", ".B.")
                    if bkey in out[u]:
                        val, bits = out[u].fields[bkey]
                        out[u].put(k, val, bits)
        return out
    return ProverImpl("se-balanced-lie", transform, honest=False)


def adv_dup_pretend_set() -> ProverImpl:
    """Distinctness: successors taken over the deduplicated value set, which
    yields exactly one descent; only the multiset test can catch it."""
    def transform(tag, payloads, env):
        if tag != "dist.succ":
            return payloads
        vals = list(env.graph.node_inputs)
        n = len(vals)
        distinct = sorted(set(vals))
        succ_of = {v: distinct[(k + 1) % len(distinct)]
                   for k, v in enumerate(distinct)}
        y = [succ_of[v] for v in vals]
        b = {u: 1 if vals[u] >= y[u] else 0 for u in range(n)}
        lab = bfs_labeling(graph_adj(env.graph), 0)
        agg = subtree_aggregate(lab.parent, range(n), b, lambda a, c: a + c, 0)
        out = [p.copy() for p in payloads]
        for u in range(n):
            if "dist.y" in out[u]:
                _, bits = out[u].fields["dist.y"]
                out[u].put("dist.y", y[u] % (1 << bits), bits)
            if "dist.S" in out[u]:
                _, sbits = out[u].fields["dist.S"]
                out[u].put("dist.S", agg[u], sbits)
        return out
    return ProverImpl("dup-pretend-set", transform, honest=False)


def adv_dup_sum_lie() -> ProverImpl:
    """Distinctness: honest successors but a root-level lie in the descent sum."""
    def transform(tag, payloads, env):
        if tag != "dist.succ":
            return payloads
        out = [p.copy() for p in payloads]
        for u in range(len(out)):
            pk = next((k for k in out[u].fields if k.endswith(".pport")), None)
            if pk is None or "dist.S" not in out[u]:
                continue
            pval, _ = out[u].fields[pk]
            if pval == len(env.graph.ports[u]):  # root
                _, sbits = out[u].fields["dist.S"]
                out[u].put("dist.S", 1, sbits)
        return out
    return ProverImpl("dup-sum-lie", transform, honest=False)


SE_ADVERSARIES = {
    "se-tamper-subtree": adv_tamper_subtree,
    "se-forge-election": adv_forge_election,
    "se-balanced-lie": adv_balanced_lie,
}

DISTINCTNESS_ADVERSARIES = {
    "dup-pretend-set": adv_dup_pretend_set,
    "dup-sum-lie": adv_dup_sum_lie,
    "se-tamper-subtree": adv_tamper_subtree,
}
