"""Synchronous round engine for distributed interactive proofs.

A protocol run alternates network-wide message phases between the prover and
the n node verifiers:

* ``A`` phases: every node sends the prover a verbatim slice of its private
  random tape (public coins).
* ``M`` phases: the prover answers every node individually with a payload of
  bit-sized fields.
* exchange phases: nodes share values with their immediate neighbors.  These
  do not count as rounds but their bandwidth is recorded.

Each A or M phase is one round.  Bit counts are exact: a payload's size is
the sum of its declared field widths, and the per-node per-round figure is
(bits sent to the prover) + (bits received from the prover) + (widest single
message sent to a neighbor that round).

Determinism: node u's tape is seeded from (master seed, u) through SHA-256,
so a (spec, graph, prover, seed) quadruple fully determines the transcript.
Monte Carlo trials derive independent seeds from (master seed, trial index)
and share no mutable state, so they may be evaluated in any order.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .netmodel import NetworkGraph, NodeView


class EngineError(Exception):
    pass


class SpecMismatch(EngineError):
    """Protocol spec incompatible with the supplied graph/instance."""


DEFAULT_CAP_BITS = 1 << 22  # hard cap on a single prover->node payload


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary components (independent of
    PYTHONHASHSEED)."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


class Payload:
    """Ordered bag of (name, value, bits) fields with exact bit accounting.

    Values are ints or tuples of ints; adversaries mutate copies of honest
    payloads, so equality and canonical serialization must be cheap.
    """

    __slots__ = ("fields",)

    def __init__(self):
        self.fields: dict[str, tuple[object, int]] = {}

    def put(self, name: str, value, bits: int) -> "Payload":
        if bits < 0:
            raise EngineError(f"negative width for field {name!r}")
        self.fields[name] = (value, bits)
        return self

    def get(self, name: str, default=None):
        entry = self.fields.get(name)
        return entry[0] if entry is not None else default

    def __contains__(self, name: str) -> bool:
        return name in self.fields

    @property
    def bits(self) -> int:
        return sum(b for _, b in self.fields.values())

    def copy(self) -> "Payload":
        p = Payload()
        p.fields = dict(self.fields)
        return p

    def canonical(self) -> str:
        return repr(sorted(self.fields.items()))

    def __repr__(self) -> str:
        return f"Payload({self.fields!r})"


@dataclass
class Round:
    direction: str  # "A" (nodes->prover) or "M" (prover->nodes)
    tag: str
    bits: list[int]  # per node, prover-link bits this round
    values: list  # per node: coin ints for A, Payload for M


@dataclass
class ProtocolSpec:
    """A named protocol: metadata plus the orchestration callback.

    ``run(ctx)`` drives phases through RunCtx and must set a verdict for
    every node.  ``schedule`` documents the message pattern ("AM", "MAM",
    ...); the engine checks the executed phases against it.
    """

    name: str
    schedule: str
    run: Callable[["RunCtx"], None]
    public_coin: bool = True
    budget_bits: Optional[Callable[[int], int]] = None  # reporting only


@dataclass
class ProverImpl:
    """Prover strategy: a transform applied to the honest per-phase payloads.

    The honest prover returns them unchanged; adversaries perturb them.  The
    transform sees only public information: the graph, the instance, node
    coins sent so far, and its own deterministic RNG.
    """

    name: str
    transform: Callable[[str, list[Payload], "ProverEnv"], list[Payload]] = None
    honest: bool = True

    def respond(self, tag: str, honest: list[Payload], env: "ProverEnv") -> list[Payload]:
        if self.transform is None:
            return honest
        return self.transform(tag, honest, env)


HONEST = ProverImpl("honest", None, honest=True)


@dataclass
class ProverEnv:
    """Prover-visible state: full port-numbered graph + public transcript."""

    graph: NetworkGraph
    coins: dict[str, list[int]]
    payloads: dict[str, list[Payload]]
    rng: random.Random


@dataclass
class ProtocolRun:
    protocol: str
    n: int
    seed: int
    rounds: list[Round] = field(default_factory=list)
    # (round_idx, node) -> {neighbor: bits sent on that link this round}
    link_bits: dict = field(default_factory=dict)
    verdicts: list[Optional[bool]] = field(default_factory=list)
    reject_reasons: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def accept(self) -> bool:
        return all(v for v in self.verdicts)

    def bits_of(self, round_idx: int, node: int) -> int:
        """Prover-link bits plus the busiest neighbor link this round."""
        base = self.rounds[round_idx].bits[node]
        links = self.link_bits.get((round_idx, node))
        return base + (max(links.values()) if links else 0)

    def max_bits_per_node_per_round(self) -> int:
        best = 0
        for r in range(len(self.rounds)):
            for u in range(self.n):
                best = max(best, self.bits_of(r, u))
        return best

    def total_bits(self) -> int:
        total = 0
        for r, rnd in enumerate(self.rounds):
            total += sum(rnd.bits)
        for links in self.link_bits.values():
            total += sum(links.values())
        return total

    def mean_bits(self) -> float:
        if not self.rounds:
            return 0.0
        return self.total_bits() / self.n

    def canonical(self) -> str:
        """Canonical transcript string; equal strings == identical runs."""
        parts = [self.protocol, str(self.n), str(self.seed)]
        for r in self.rounds:
            parts.append(r.direction + ":" + r.tag)
            parts.append(repr(r.bits))
            if r.direction == "A":
                parts.append(repr(r.values))
            else:
                parts.append(";".join(p.canonical() for p in r.values))
        parts.append(repr(sorted((k, sorted(v.items()))
                                 for k, v in self.link_bits.items())))
        parts.append(repr(self.verdicts))
        parts.append(repr(sorted(self.outputs.items())))
        return "\n".join(parts)


class NodeTape:
    """Per-node private randomness; coins handed to the prover are verbatim
    getrandbits slices of this stream."""

    def __init__(self, master_seed: int, node: int):
        self.rng = random.Random(derive_seed(master_seed, "node", node))
        self.draws: list[tuple[int, int]] = []  # (nbits, value)

    def draw(self, nbits: int) -> int:
        v = self.rng.getrandbits(nbits) if nbits > 0 else 0
        self.draws.append((nbits, v))
        return v


class RunCtx:
    """Execution context handed to ProtocolSpec.run."""

    def __init__(self, graph: NetworkGraph, prover: ProverImpl, seed: int,
                 cap_bits: int = DEFAULT_CAP_BITS,
                 coin_source: Optional[Callable[[int, str, int], int]] = None):
        self.graph = graph
        self.n = graph.n
        self.prover = prover
        self.seed = seed
        self.cap_bits = cap_bits
        self.tapes = [NodeTape(seed, u) for u in range(self.n)]
        self.run = ProtocolRun("", self.n, seed, verdicts=[None] * self.n)
        self.env = ProverEnv(graph, {}, {},
                             random.Random(derive_seed(seed, "prover")))
        self.node_state: list[dict] = [dict() for _ in range(self.n)]
        self._coin_source = coin_source  # Fiat-Shamir hook
        self.fs_mode = coin_source is not None

    # -- phases ----------------------------------------------------------

    def coin_phase(self, tag: str, bits_fn: Callable[[NodeView], int]) -> list[int]:
        """A phase: every node contributes bits_fn(view) fresh random bits."""
        values = []
        bits = []
        for u in range(self.n):
            k = bits_fn(self.graph.view(u))
            if self._coin_source is None:
                v = self.tapes[u].draw(k)
            else:
                v = self._coin_source(u, tag, k)
            values.append(v)
            bits.append(k)
        if self._coin_source is None:
            self.run.rounds.append(Round("A", tag, bits, list(values)))
        self.env.coins[tag] = values
        return values

    def prover_phase(self, tag: str,
                     honest_fn: Callable[[ProverEnv], list[Payload]],
                     billing: Optional[Callable[[int, str, int], Optional[int]]] = None
                     ) -> list[Payload]:
        """M phase: prover answers every node; strategy may perturb.

        `billing(node, field, bits)` may name a carrier neighbor: the field
        then travels on the carrier's prover link and is forwarded over the
        (carrier, node) edge, the degree-redistribution delivery.
        """
        honest = honest_fn(self.env)
        if len(honest) != self.n:
            raise EngineError(f"prover phase {tag!r} must address every node")
        payloads = self.prover.respond(tag, honest, self.env)
        bits = [0] * self.n
        rnd = len(self.run.rounds)
        forwarded: list[tuple[int, int, int]] = []
        for u, p in enumerate(payloads):
            for name, (_val, b) in p.fields.items():
                carrier = billing(u, name, b) if billing else None
                if carrier is None or carrier == u:
                    bits[u] += b
                else:
                    bits[carrier] += b
                    forwarded.append((carrier, u, b))
        for u, p in enumerate(payloads):
            if p.bits > self.cap_bits:
                self.run.flags.append(f"cap-exceeded:{tag}:{u}")
                self.set_verdict(u, False, f"{tag}: oversized prover message")
        if self.fs_mode and self.run.rounds:
            # non-interactive labeling: concatenate onto the single round
            r0 = self.run.rounds[0]
            for u in range(self.n):
                r0.bits[u] += bits[u]
            r0.values = [_merge_payloads(r0.values[u], payloads[u], tag)
                         for u in range(self.n)]
        else:
            self.run.rounds.append(Round("M", tag, bits, payloads))
        for carrier, u, b in forwarded:
            links = self.run.link_bits.setdefault((rnd, carrier), {})
            links[u] = links.get(u, 0) + b
        self.env.payloads[tag] = payloads
        return payloads

    def exchange(self, tag: str,
                 out_fn: Callable[[int], dict[int, tuple[object, int]]],
                 nodes: Optional[Sequence[int]] = None
                 ) -> dict[int, dict[int, object]]:
        """Local phase: out_fn(u) maps neighbor id -> (value, bits).

        Returns inbox[u]: neighbor id -> value.  Free of rounds; bandwidth
        recorded as the widest single message each node sends.  Restricting
        `nodes` keeps subgraph sub-protocols cheap.
        """
        participants = range(self.n) if nodes is None else nodes
        inbox: dict[int, dict[int, object]] = {u: {} for u in participants}
        rnd = max(0, len(self.run.rounds) - 1)
        for u in participants:
            out = out_fn(u)
            if not out:
                continue
            links = self.run.link_bits.setdefault((rnd, u), {})
            for v, (value, bits) in out.items():
                if not self.graph.has_edge(u, v):
                    raise EngineError(f"{tag}: {u} cannot reach non-neighbor {v}")
                if v in inbox:
                    inbox[v][u] = value
                links[v] = links.get(v, 0) + bits
        return inbox

    def broadcast_exchange(self, tag: str,
                           value_fn: Callable[[int], tuple[object, int]],
                           nodes: Optional[Sequence[int]] = None
                           ) -> dict[int, dict[int, object]]:
        """Exchange where each node shares one value with all neighbors."""
        def out(u):
            value, bits = value_fn(u)
            return {v: (value, bits) for v in self.graph.neighbors(u)}
        return self.exchange(tag, out, nodes=nodes)

    # -- verdicts ----------------------------------------------------------

    def set_verdict(self, node: int, ok: bool, reason: str = "") -> None:
        cur = self.run.verdicts[node]
        if cur is False:
            return  # a node that rejected stays rejected
        self.run.verdicts[node] = bool(ok)
        if not ok and reason:
            self.run.reject_reasons.setdefault(node, reason)

    def require(self, node: int, ok: bool, reason: str) -> None:
        if not ok:
            self.set_verdict(node, False, reason)

    def set_output(self, key: str, value) -> None:
        self.run.outputs[key] = value


def _merge_payloads(a: Payload, b: Payload, tag: str) -> Payload:
    m = a.copy()
    for name, (value, bits) in b.fields.items():
        m.put(f"{tag}.{name}", value, bits)
    return m


def run_protocol(spec: ProtocolSpec, graph: NetworkGraph, prover: ProverImpl,
                 seed: int, cap_bits: int = DEFAULT_CAP_BITS,
                 coin_source=None) -> ProtocolRun:
    """Execute one protocol run; deterministic given all arguments."""
    ctx = RunCtx(graph, prover, seed, cap_bits=cap_bits, coin_source=coin_source)
    ctx.run.protocol = spec.name
    spec.run(ctx)
    for u in range(graph.n):
        if ctx.run.verdicts[u] is None:
            raise EngineError(f"protocol {spec.name!r} left node {u} undecided")
    if coin_source is None:
        executed = "".join(r.direction for r in ctx.run.rounds)
        if executed != spec.schedule:
            raise EngineError(
                f"{spec.name}: executed schedule {executed!r} != declared "
                f"{spec.schedule!r}")
    return ctx.run


def verify_public_coins(run: ProtocolRun, master_seed: int) -> bool:
    """Replay check: every A-round value is a verbatim slice of the node's
    tape as re-derived from the master seed."""
    tapes = [NodeTape(master_seed, u) for u in range(run.n)]
    for r in run.rounds:
        if r.direction != "A":
            continue
        for u in range(run.n):
            if tapes[u].draw(r.bits[u]) != r.values[u]:
                return False
    return True


@dataclass
class Stats:
    protocol: str
    n: int
    trials: int
    accepted: int
    max_bits_per_node_per_round: int
    mean_bits: float
    rounds: int
    seed: int

    @property
    def accept_rate(self) -> float:
        return self.accepted / self.trials

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "n": self.n,
            "trials": self.trials,
            "accept_rate": self.accept_rate,
            "max_bits_per_node_per_round": self.max_bits_per_node_per_round,
            "mean_bits": round(self.mean_bits, 3),
            "rounds": self.rounds,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def monte_carlo(spec: ProtocolSpec, graph: NetworkGraph, prover: ProverImpl,
                trials: int, master_seed: int,
                cap_bits: int = DEFAULT_CAP_BITS) -> Stats:
    """Independent trials; trial i runs with seed derived from
    (master_seed, i).  Merging is a pure reduction over per-trial results."""
    if trials < 1:
        raise EngineError("monte_carlo needs trials >= 1")
    accepted = 0
    max_bits = 0
    mean_acc = 0.0
    rounds = 0
    for i in range(trials):
        run = run_protocol(spec, graph, prover, derive_seed(master_seed, "trial", i),
                           cap_bits=cap_bits)
        accepted += 1 if run.accept else 0
        max_bits = max(max_bits, run.max_bits_per_node_per_round())
        mean_acc += run.mean_bits()
        rounds = run.num_rounds
    return Stats(spec.name, graph.n, trials, accepted, max_bits,
                 mean_acc / trials, rounds, master_seed)
