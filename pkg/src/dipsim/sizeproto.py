"""Set-size estimation protocols: graph Asymmetry and GNI at desk scale.

The machinery follows the Goldwasser-Sipser pattern: nodes draw per-row hash
seeds and chunks of a word-hash key, the prover searches for an isomorphic
image whose composed digest word-hashes to zero, and a compiled RAM program
re-checks the word hash over authenticated inputs.

Hash conventions.  Row hashes h_i are polynomial-evaluation hashes over a
prime field of roughly 2^(3 log n) elements; the digest word for row i of a
candidate graph H is always computed with the seed drawn by the node ranked
i, so the digest depends on H alone and the number of distinct digests
tracks |S| = |{H : H isomorphic to G}|.  The node holding row i of H under
the exhibited permutation is generally not the node that drew seed i, so
the prover forwards the seed; the verification program compares every
forwarded copy against the drawer's authentic copy, which closes the only
seed-substitution channel.
"""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import Payload, ProtocolSpec, ProverEnv, RunCtx, derive_seed, run_protocol
from .fieldset import next_prime, split_bits
from .netmodel import LABEL_G0, LABEL_G1, NetworkGraph, neighborhood_rows
from .ramcompile import Asm, CellSpec, CompilerJob, RamProgram, run_jobs_shared_phases
from .treelabel import bitlen, graph_adj

WORD_HASH_P = 65521  # largest 16-bit prime; keys and hash outputs fit one word


@dataclass(frozen=True)
class LocalHashSeed:
    """Seed (a, b) for the per-row hash over F_p with p about 2^(3 log n)."""

    a: int
    b: int
    p: int

    @property
    def bits(self) -> int:
        return 2 * bitlen(self.p - 1)


def row_hash_field(n: int) -> int:
    return next_prime(1 << (3 * bitlen(max(1, n - 1))))


def row_word_bits(p_row: int) -> int:
    return max(1, bitlen(p_row - 1) - 1)  # row words stay below p


def local_row_hash(seed: LocalHashSeed, row_mask: int, n: int) -> int:
    """h_(a,b)(x) = b + sum of x_i a^i over F_p, the row split into words."""
    p = seed.p
    wb = row_word_bits(p)
    acc = seed.b % p
    apow = seed.a % p
    x = row_mask
    while True:
        acc = (acc + (x & ((1 << wb) - 1)) * apow) % p
        x >>= wb
        if not x:
            break
        apow = apow * seed.a % p
    return acc


def graph_digest(seeds: Sequence[LocalHashSeed], rows: Sequence[int],
                 n: int) -> tuple[int, ...]:
    """y = (h_1(row_1), ..., h_n(row_n)); a function of the row tuple only."""
    return tuple(local_row_hash(seeds[i], rows[i], n) for i in range(n))


@dataclass(frozen=True)
class WordHashSeed:
    """Key k_0..k_n for g(y) = trunc_ell((k_0 + sum k_i y_i) mod p)."""

    k: tuple[int, ...]
    ell: int
    p: int = WORD_HASH_P


def smallest_ell(n: int) -> int:
    """Smallest ell with 2^ell >= 2 n!."""
    target = 2 * math.factorial(n)
    ell = 1
    while (1 << ell) < target:
        ell += 1
    return ell


def word_hash(seed: WordHashSeed, y: Sequence[int]) -> int:
    if len(y) + 1 != len(seed.k):
        raise ValueError("word hash expects one key word per digest word")
    acc = seed.k[0]
    for ki, yi in zip(seed.k[1:], y):
        acc = (acc + ki * yi) % seed.p
    return acc % (1 << seed.ell)


# -- candidate enumeration (desk scale) ----------------------------------------


def candidate_images(graph: NetworkGraph,
                     which: Optional[str] = None) -> tuple[list, list]:
    """All distinct row tuples of images of (the selected layer of) the
    communication graph, with one representative permutation per image."""
    n = graph.n
    base_rows = neighborhood_rows(graph, which)
    seen = {}
    order = []
    for pi in itertools.permutations(range(n)):
        rows = [0] * n
        for u in range(n):
            m = base_rows[u]
            out = 0
            while m:
                lsb = m & -m
                out |= 1 << pi[lsb.bit_length() - 1]
                m ^= lsb
            rows[pi[u]] = out
        key = tuple(rows)
        if key not in seen:
            seen[key] = pi
            order.append(key)
    return order, [seen[k] for k in order]


def gni_candidates(union: NetworkGraph) -> tuple[list, list, list]:
    """Distinct images of G0 and of G1 read off the labeled union graph."""
    rows0, perms0 = candidate_images(union, LABEL_G0)
    rows1, perms1 = candidate_images(union, LABEL_G1)
    rows, perms, cs = [], [], []
    seen = set()
    for rws, prm, c in ([(r, p, 0) for r, p in zip(rows0, perms0)]
                        + [(r, p, 1) for r, p in zip(rows1, perms1)]):
        if rws not in seen:
            seen.add(rws)
            rows.append(rws)
            perms.append(prm)
            cs.append(c)
    return rows, perms, cs


class CandidateSearcher:
    """Vectorized digest / word-hash evaluation over a fixed candidate set."""

    def __init__(self, rows_list: list, n: int, p_row: int):
        self.n = n
        self.p_row = p_row
        wb = row_word_bits(p_row)
        self.n_words = max(1, -(-n // wb))
        mats = []
        for w in range(self.n_words):
            shift = w * wb
            mask = (1 << wb) - 1
            mats.append(np.array([[(rows[i] >> shift) & mask
                                   for i in range(n)] for rows in rows_list],
                                 dtype=np.int64))
        self.word_mats = mats  # each: candidates x n

    def digests(self, seeds: Sequence[LocalHashSeed]) -> np.ndarray:
        p = self.p_row
        a = np.array([s.a for s in seeds], dtype=np.int64)
        acc = np.zeros_like(self.word_mats[0])
        apow = a.copy()
        for mat in self.word_mats:
            acc = (acc + mat * apow[None, :]) % p
            apow = apow * a % p
        b = np.array([s.b for s in seeds], dtype=np.int64)
        return (acc + b[None, :]) % p

    def hash_hits(self, seeds, wseed: WordHashSeed) -> np.ndarray:
        y = self.digests(seeds)
        k = np.array(wseed.k, dtype=np.int64)
        acc = (k[0] + (y % wseed.p * k[None, 1:] % wseed.p).sum(axis=1)) % wseed.p
        return np.flatnonzero(acc % (1 << wseed.ell) == 0)


# -- the compiled verification program -----------------------------------------


def prog_size_check(n: int, p_g: int, ell: int, cell_bits: int) -> RamProgram:
    """Unrolled check over n position blocks of 7 cells
    (ID, K, a, b, a', b', y): position ids ascend, forwarded seeds equal the
    authentic ones, and trunc_ell((k_0 + sum K_i y_i) mod p_g) == 0."""
    AC = 7 * n + 1
    a = Asm()
    a.emit("LOADI", "r1", 0)
    a.emit("LOAD", "r0", "r1")          # k_0
    a.emit("LOADI", "r1", AC)
    a.emit("STORE", "r1", "r0")
    for i in range(1, n + 1):
        base = 1 + 7 * (i - 1)
        a.emit("LOADI", "r1", base)
        a.emit("LOAD", "r0", "r1")      # ID at position i
        a.emit("LOADI", "r2", i)
        a.emit("SUB", "r0", "r0", "r2")
        a.emit("JNZ", "r0", "fail")
        for off in (2, 3):              # authentic (a, b) vs forwarded copies
            a.emit("LOADI", "r1", base + off)
            a.emit("LOAD", "r0", "r1")
            a.emit("LOADI", "r1", base + off + 2)
            a.emit("LOAD", "r2", "r1")
            a.emit("SUB", "r0", "r0", "r2")
            a.emit("JNZ", "r0", "fail")
        a.emit("LOADI", "r1", base + 1)
        a.emit("LOAD", "r0", "r1")      # K_i
        a.emit("LOADI", "r1", base + 6)
        a.emit("LOAD", "r2", "r1")      # y_i
        a.emit("MUL", "r0", "r0", "r2")
        a.emit("LOADI", "r1", AC)
        a.emit("LOAD", "r2", "r1")
        a.emit("ADD", "r0", "r0", "r2")
        a.emit("LOADI", "r2", p_g)
        a.emit("MOD", "r0", "r0", "r2")
        a.emit("LOADI", "r1", AC)
        a.emit("STORE", "r1", "r0")
    a.emit("LOADI", "r1", AC)
    a.emit("LOAD", "r0", "r1")
    a.emit("LOADI", "r2", 1 << ell)
    a.emit("MOD", "r0", "r0", "r2")
    a.emit("JNZ", "r0", "fail")
    a.emit("LOADI", "r0", 1)
    a.emit("HALT01", "r0")
    a.label("fail")
    a.emit("LOADI", "r0", 0)
    a.emit("HALT01", "r0")
    r0 = bitlen(p_g - 1) + cell_bits + 2
    return a.build((r0, bitlen(7 * n + 2), bitlen(p_g - 1) + 1),
                   cell_bits, 7 * n + 2, scratch=(AC,))


# -- the protocols ---------------------------------------------------------------


def _size_protocol(graph: NetworkGraph, name: str, mode: str) -> ProtocolSpec:
    """Single-shot dAMAM size-estimation protocol; see `amplified_decision`
    for the repetition/threshold rule."""
    n = graph.n
    p_row = row_hash_field(n)
    half_seed = bitlen(p_row - 1)
    key_bits = bitlen(WORD_HASH_P - 1)
    ell = smallest_ell(n)
    alpha_bits = 3 * bitlen(max(1, n - 1))
    pi_bits = bitlen(max(1, n - 1))
    adj = graph_adj(graph)
    cell_bits = max(key_bits, bitlen(p_row - 1), bitlen(n) + 1)
    if mode == "asym":
        rows_list, perms = candidate_images(graph)
        cands = [(r, p, 0) for r, p in zip(rows_list, perms)]
    else:
        rows_list, perms, cs = gni_candidates(graph)
        cands = list(zip(rows_list, perms, cs))
    searcher = CandidateSearcher([c[0] for c in cands], n, p_row)
    program = prog_size_check(n, WORD_HASH_P, ell, cell_bits)

    def coin_widths(u: int) -> list[int]:
        w = [half_seed, half_seed, key_bits, alpha_bits]
        if u == 0:
            w.append(key_bits)  # the word-hash offset rides node 0's draw
        return w

    def derive_draws(coin_vals):
        seeds, keys, alphas = [], [], []
        k0 = 0
        for u in range(n):
            chunks = split_bits(coin_vals[u], coin_widths(u))
            seeds.append(LocalHashSeed(chunks[0] % p_row, chunks[1] % p_row,
                                       p_row))
            keys.append(chunks[2] % WORD_HASH_P)
            alphas.append(chunks[3])
            if u == 0:
                k0 = chunks[4] % WORD_HASH_P
        return seeds, keys, alphas, k0

    def make_node_job(claims: dict) -> CompilerJob:
        """The verification job as the nodes interpret it: every cell value
        comes from its owner's local knowledge or received fields."""
        cells = [CellSpec(0, 0, "local", claims["k0"])]
        for u in range(n):
            i = claims["id"][u]
            if 1 <= i <= n:
                base = 1 + 7 * (i - 1)
                cells.append(CellSpec(base, u, "local", claims["id"][u]))
                cells.append(CellSpec(base + 1, u, "local", claims["key"][u]))
                cells.append(CellSpec(base + 2, u, "local", claims["seed"][u].a))
                cells.append(CellSpec(base + 3, u, "local", claims["seed"][u].b))
            w = claims["pi"][u]
            if 0 <= w < n:
                base = 1 + 7 * w
                cells.append(CellSpec(base + 4, u, "local", claims["fa"][u]))
                cells.append(CellSpec(base + 5, u, "local", claims["fb"][u]))
                cells.append(CellSpec(base + 6, u, "local", claims["y"][u]))
        return CompilerJob("cmp", range(n), adj, program, cells,
                           ids_mode="alpha", alpha=claims["alpha_map"],
                           alpha_bits=alpha_bits)

    def run(ctx: RunCtx) -> None:
        for u in range(n):
            ctx.set_verdict(u, True)
        coins = ctx.coin_phase("draw", lambda view: sum(coin_widths(view.node)))

        def honest_m2(env: ProverEnv) -> list[Payload]:
            payloads = [Payload() for _ in range(n)]
            seeds, keys, alphas, k0 = derive_draws(env.coins["draw"])
            order = sorted(range(n), key=lambda u: (alphas[u], u))
            index = {u: i + 1 for i, u in enumerate(order)}
            # digest position i uses the seed/key of the node ranked i
            by_rank_seeds = [seeds[order[i]] for i in range(n)]
            wseed = WordHashSeed(tuple([k0] + [keys[order[i]]
                                               for i in range(n)]), ell)
            hits = searcher.hash_hits(by_rank_seeds, wseed)
            if len(hits) == 0:
                for u in range(n):
                    payloads[u].put("img.found", NO_WITNESS, 1)
                return payloads
            rows, pi = cands[int(hits[0])][0], cands[int(hits[0])][1]
            c_bit = cands[int(hits[0])][2]
            for u in range(n):
                p = payloads[u]
                p.put("img.found", 1, 1)
                p.put("img.pi", pi[u], pi_bits)
                if mode == "gni":
                    p.put("img.c", c_bit, 1)
                drawer = order[pi[u]]  # rank pi[u]+1, 0-based position pi[u]
                p.put("img.fa", seeds[drawer].a, half_seed)
                p.put("img.fb", seeds[drawer].b, half_seed)
            # embedded compiled-run main fields, built from honest claims
            y = {u: local_row_hash(
                seeds[order[pi[u]]],
                _image_row_mask(graph, u, pi, c_bit, mode), n)
                for u in range(n)}
            claims = {
                "alpha_map": {u: alphas[u] for u in range(n)},
                "id": {u: index[u] for u in range(n)},
                "key": {u: keys[u] for u in range(n)},
                "seed": {u: seeds[u] for u in range(n)},
                "fa": {u: seeds[order[pi[u]]].a for u in range(n)},
                "fb": {u: seeds[order[pi[u]]].b for u in range(n)},
                "pi": {u: pi[u] for u in range(n)},
                "y": y,
                "k0": k0,
            }
            job = make_node_job(claims)
            job.honest_main_fields(payloads)
            return payloads

        m2 = ctx.prover_phase("images", honest_m2)
        seeds, keys, alphas, k0 = derive_draws(coins)
        found = {u: m2[u].get("img.found", 0) for u in range(n)}
        pi_claim = {u: m2[u].get("img.pi", 0) for u in range(n)}
        c_claim = {u: m2[u].get("img.c", 0) for u in range(n)}
        inbox = ctx.broadcast_exchange(
            "images.x",
            lambda u: ((found[u], pi_claim[u], c_claim[u]), pi_bits + 2))
        witness = True
        for u in range(n):
            for v, got in inbox[u].items():
                ctx.require(u, got[0] == found[u], "witness flag mismatch")
                if mode == "gni":
                    ctx.require(u, got[2] == c_claim[u], "graph-choice mismatch")
            if found[u] != 1:
                witness = False
        if not witness:
            for u in range(n):
                ctx.require(u, False, "no witness exhibited")
            # keep the schedule shape: empty compiled phases
            ctx.coin_phase("cmp.coins", lambda view: 0)
            ctx.prover_phase("cmp.proof", lambda env: [Payload() for _ in range(n)])
            ctx.set_output("candidates", len(cands))
            return
        for u in range(n):
            ctx.require(u, 0 <= pi_claim[u] < n, "image position out of range")
        # each node derives the row of its image vertex and hashes it with
        # the forwarded seed
        y_local, fa, fb = {}, {}, {}
        for u in range(n):
            mask = 0
            nbrs = (graph.neighbors_in(u, LABEL_G1 if c_claim[u] else LABEL_G0)
                    if mode == "gni" else graph.neighbors(u))
            for v in nbrs:
                got = inbox[u].get(v)
                if got is not None:
                    mask |= 1 << got[1]
            fa[u] = m2[u].get("img.fa", 0) % p_row
            fb[u] = m2[u].get("img.fb", 0) % p_row
            y_local[u] = local_row_hash(LocalHashSeed(fa[u], fb[u], p_row),
                                        mask, n)
        claims = {
            "alpha_map": {u: alphas[u] for u in range(n)},
            "id": {u: m2[u].get("cmp.id", 0) for u in range(n)},
            "key": {u: keys[u] for u in range(n)},
            "seed": {u: seeds[u] for u in range(n)},
            "fa": fa, "fb": fb,
            "pi": pi_claim, "y": y_local, "k0": k0,
        }
        job = make_node_job(claims)
        job.after_main(ctx, m2)
        run_jobs_shared_phases(ctx, [job], "cmp")
        ctx.set_output("candidates", len(cands))

    return ProtocolSpec(name, "AMAM", run)


def _image_row_mask(graph: NetworkGraph, u: int, pi, c_bit: int,
                    mode: str) -> int:
    mask = 0
    nbrs = (graph.neighbors_in(u, LABEL_G1 if c_bit else LABEL_G0)
            if mode == "gni" else graph.neighbors(u))
    for v in nbrs:
        mask |= 1 << pi[v]
    return mask


NO_WITNESS = 0


def asym_protocol(graph: NetworkGraph) -> ProtocolSpec:
    """dAMAM graph-asymmetry protocol (desk scale: exhaustive honest search)."""
    if graph.n > 8:
        raise ValueError("desk-scale asymmetry supports n <= 8")
    return _size_protocol(graph, "asym", "asym")


def gni_protocol(union: NetworkGraph) -> ProtocolSpec:
    """dAMAM graph non-isomorphism on a labeled union graph (rigid promise)."""
    if union.n > 8:
        raise ValueError("desk-scale GNI supports n <= 8")
    if union.edge_labels is None:
        raise ValueError("GNI needs a g0/g1-labeled union graph")
    return _size_protocol(union, "gni", "gni")


def amplified_decision(spec: ProtocolSpec, graph: NetworkGraph, prover,
                       reps: int, threshold: float, master_seed: int) -> bool:
    """Repetition rule: accept when the fraction of accepting repetitions
    clears the threshold (placed between the two single-shot rates)."""
    wins = 0
    for i in range(reps):
        run = run_protocol(spec, graph, prover, derive_seed(master_seed, "amp", i))
        wins += 1 if run.accept else 0
    return wins >= math.ceil(threshold * reps)


# -- experiment harnesses --------------------------------------------------------


def hit_probability_experiment(graph: NetworkGraph, trials: int, seed: int,
                               mode: str = "asym") -> float:
    """Frequency of 'some candidate image word-hashes to zero' over fresh
    draws; the single-shot acceptance rate up to compiled-run slack."""
    n = graph.n
    p_row = row_hash_field(n)
    ell = smallest_ell(n)
    if mode == "asym":
        rows_list, _ = candidate_images(graph)
    else:
        rows_list, _, _ = gni_candidates(graph)
    searcher = CandidateSearcher(rows_list, n, p_row)
    rng = random.Random(seed)
    hits = 0
    for _ in range(trials):
        seeds = [LocalHashSeed(rng.randrange(p_row), rng.randrange(p_row), p_row)
                 for _ in range(n)]
        wseed = WordHashSeed(tuple(rng.randrange(WORD_HASH_P)
                                   for _ in range(n + 1)), ell)
        if len(searcher.hash_hits(seeds, wseed)) > 0:
            hits += 1
    return hits / trials


def digest_collision_experiment(graph: NetworkGraph, trials: int,
                                seed: int) -> float:
    """Frequency of |S'| != |S| over fresh row-hash seeds."""
    n = graph.n
    p_row = row_hash_field(n)
    rows_list, _ = candidate_images(graph)
    searcher = CandidateSearcher(rows_list, n, p_row)
    rng = random.Random(seed)
    bad = 0
    for _ in range(trials):
        seeds = [LocalHashSeed(rng.randrange(p_row), rng.randrange(p_row), p_row)
                 for _ in range(n)]
        digests = searcher.digests(seeds)
        if len(np.unique(digests, axis=0)) != len(rows_list):
            bad += 1
    return bad / trials


def pair_collision_rate(n: int, x1: int, x2: int, trials: int, seed: int) -> float:
    """Collision frequency of the row hash on one fixed pair of rows."""
    p_row = row_hash_field(n)
    rng = random.Random(seed)
    hits = 0
    for _ in range(trials):
        s = LocalHashSeed(rng.randrange(p_row), rng.randrange(p_row), p_row)
        if local_row_hash(s, x1, n) == local_row_hash(s, x2, n):
            hits += 1
    return hits / trials


def analytic_bands(n: int) -> dict:
    """ell, p = 2 n!/2^ell and the completeness/soundness corner rates."""
    ell = smallest_ell(n)
    p = 2 * math.factorial(n) / (1 << ell)
    return {"ell": ell, "p": p, "alpha": p / 2 * (1 - p / 8), "beta": p / 4}
