"""Canonical-form RAM machine and the compiler from centralized public-coin
protocols with RAM verifiers to distributed protocols.

The machine has three registers of per-program widths plus a program
counter; every instruction touches at most one memory cell.  In canonical
mode each read writes the value back under a fresh timestamp and each write
first reads the old cell, so for honest executions the multiset of read
triples (value, address, time) equals the multiset of write triples once
initial writes and final reads are included.

The compiled protocol assigns contiguous step ranges to nodes by their ids,
ships one (state, value, address, time) record per step, has every node
re-execute its own instructions, and settles the global memory and state
consistency with the multiset-equality protocol.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .engine import Payload, ProtocolSpec, ProverEnv, ProverImpl, RunCtx
from .fieldset import PrimeField, SetEqualityCore, next_prime, split_bits
from .netmodel import NetworkGraph
from .treelabel import bitlen, graph_adj


class RamError(Exception):
    pass


# instruction opcodes
LOADI, LOAD, STORE, ADD, SUB, MUL, MOD, CMPLT, JNZ, HALT01 = range(10)

OP_NAMES = ["LOADI", "LOAD", "STORE", "ADD", "SUB", "MUL", "MOD", "CMPLT",
            "JNZ", "HALT01"]
OP_CODES = {name: i for i, name in enumerate(OP_NAMES)}

_MEM_OPS = (LOAD, STORE)


@dataclass(frozen=True)
class RamProgram:
    """Instruction list plus the width discipline everything is checked
    against.  reg_bits are the three register widths; cell values carry
    cell_bits; programs touching cells outside inputs+scratch are rejected
    at trace time."""

    instrs: tuple
    reg_bits: tuple[int, int, int]
    cell_bits: int
    mem_size: int
    scratch: tuple[int, ...] = ()
    canonical: bool = True

    @property
    def pc_bits(self) -> int:
        return bitlen(len(self.instrs))

    @property
    def state_bits(self) -> int:
        return self.pc_bits + sum(self.reg_bits)

    @property
    def addr_bits(self) -> int:
        return bitlen(max(1, self.mem_size - 1))

    def pack_state(self, pc: int, regs: Sequence[int]) -> int:
        s = pc
        for r, w in zip(regs, self.reg_bits):
            s = (s << w) | r
        return s

    def unpack_state(self, s: int) -> tuple[int, list[int]]:
        regs = [0, 0, 0]
        for i in (2, 1, 0):
            w = self.reg_bits[i]
            regs[i] = s & ((1 << w) - 1)
            s >>= w
        return s, regs


def canonicalize(program: RamProgram) -> RamProgram:
    """Canonical form: reads rewrite with fresh timestamps, writes pre-read.
    Step count is unchanged (both halves share the instruction's slot)."""
    if program.canonical:
        return program
    return RamProgram(program.instrs, program.reg_bits, program.cell_bits,
                      program.mem_size, program.scratch, canonical=True)


def validate_program(program: RamProgram) -> None:
    n_instr = len(program.instrs)
    for idx, ins in enumerate(program.instrs):
        op = ins[0]
        if op not in range(10):
            raise RamError(f"instr {idx}: bad opcode")
        if op == JNZ and not (0 <= ins[2] < n_instr):
            raise RamError(f"instr {idx}: jump target out of range")
        if op == LOADI and ins[2] >= (1 << program.reg_bits[ins[1]]):
            raise RamError(f"instr {idx}: immediate exceeds register width")
    if program.mem_size >= (1 << program.addr_bits) + 1 and program.mem_size > 1:
        raise RamError("memory size exceeds address width")


@dataclass
class TraceStep:
    j: int               # 1-based step index
    state: int           # packed state before the step
    read: Optional[tuple]   # (value, addr, last-write time) or None
    write: Optional[tuple]  # (value, addr, j) or None
    halted: bool
    output: int


@dataclass
class Trace:
    steps: list[TraceStep]
    output: int
    tau: int
    final_cells: list[tuple]  # (value, addr, time) for every footprint cell


def _exec_one(program: RamProgram, pc: int, regs: list[int],
              read_value: Optional[int]):
    """Decode/execute at pc.  Returns (needs_addr, next_pc, regs', write_val,
    is_load, is_store, halted, output).  For LOAD the caller supplies the
    cell value via read_value."""
    if not (0 <= pc < len(program.instrs)):
        raise RamError(f"pc {pc} out of program")
    ins = program.instrs[pc]
    op = ins[0]
    masks = [(1 << w) - 1 for w in program.reg_bits]
    regs = list(regs)
    nxt = pc + 1
    if op == LOADI:
        regs[ins[1]] = ins[2] & masks[ins[1]]
        return None, nxt, regs, None, False, False, False, 0
    if op == LOAD:
        addr = regs[ins[2]]
        regs[ins[1]] = (read_value or 0) & masks[ins[1]]
        return addr, nxt, regs, None, True, False, False, 0
    if op == STORE:
        addr = regs[ins[1]]
        val = regs[ins[2]] & ((1 << program.cell_bits) - 1)
        return addr, nxt, regs, val, False, True, False, 0
    if op in (ADD, SUB, MUL, MOD, CMPLT):
        a, b = regs[ins[2]], regs[ins[3]]
        if op == ADD:
            v = a + b
        elif op == SUB:
            v = a - b
        elif op == MUL:
            v = a * b
        elif op == MOD:
            v = a % b if b else 0
        else:
            v = 1 if a < b else 0
        regs[ins[1]] = v & masks[ins[1]]
        return None, nxt, regs, None, False, False, False, 0
    if op == JNZ:
        if regs[ins[1]]:
            nxt = ins[2]
        return None, nxt, regs, None, False, False, False, 0
    if op == HALT01:
        out = 1 if regs[ins[1]] == 1 else 0
        return None, pc, regs, None, False, False, True, out
    raise RamError("unreachable")


def trace(program: RamProgram, inputs: dict[int, int],
          max_steps: int = 1_000_000) -> Trace:
    """Run to halt; memory footprint is inputs plus declared scratch,
    all timestamps starting at 0."""
    validate_program(program)
    mem: dict[int, tuple[int, int]] = {}
    cellmask = (1 << program.cell_bits) - 1
    for a, v in inputs.items():
        if not (0 <= a < program.mem_size):
            raise RamError(f"input cell {a} outside memory")
        mem[a] = (v & cellmask, 0)
    for a in program.scratch:
        if a in inputs:
            raise RamError(f"scratch cell {a} collides with an input")
        mem[a] = (0, 0)
    pc, regs = 0, [0, 0, 0]
    steps: list[TraceStep] = []
    for j in range(1, max_steps + 1):
        state = program.pack_state(pc, regs)
        needs_addr, nxt, regs2, wval, is_load, is_store, halted, out = _exec_one(
            program, pc, regs, None)
        read = write = None
        if is_load:
            if needs_addr not in mem:
                raise RamError(f"step {j}: address {needs_addr} out of footprint")
            v, t = mem[needs_addr]
            _, nxt, regs2, _, _, _, _, _ = _exec_one(program, pc, regs, v)
            read = (v, needs_addr, t)
            if program.canonical:
                mem[needs_addr] = (v, j)
                write = (v, needs_addr, j)
        elif is_store:
            if needs_addr not in mem:
                raise RamError(f"step {j}: address {needs_addr} out of footprint")
            if program.canonical:
                v, t = mem[needs_addr]
                read = (v, needs_addr, t)
            mem[needs_addr] = (wval, j)
            write = (wval, needs_addr, j)
        steps.append(TraceStep(j, state, read, write, halted, out))
        pc, regs = nxt, regs2
        if halted:
            finals = [(mem[a][0], a, mem[a][1]) for a in sorted(mem)]
            return Trace(steps, out, j, finals)
    raise RamError("step budget exceeded")


def read_triples(tr: Trace) -> list[tuple]:
    return [s.read for s in tr.steps if s.read is not None]


def write_triples(tr: Trace) -> list[tuple]:
    return [s.write for s in tr.steps if s.write is not None]


def canonical_multisets(tr: Trace, inputs: dict[int, int],
                        program: RamProgram) -> tuple[list, list]:
    """(R, W) with boundary terms: initial writes at time 0 and one final
    read per footprint cell.  Equal as multisets on honest canonical runs."""
    cellmask = (1 << program.cell_bits) - 1
    w = [(v & cellmask, a, 0) for a, v in sorted(inputs.items())]
    w += [(0, a, 0) for a in program.scratch]
    w += write_triples(tr)
    r = read_triples(tr) + list(tr.final_cells)
    return r, w


# -- assembler and text format ----------------------------------------------


class Asm:
    """Tiny two-pass assembler used by the program generators."""

    def __init__(self):
        self.instrs: list[list] = []
        self.labels: dict[str, int] = {}
        self.fixups: list[tuple[int, str]] = []

    def label(self, name: str) -> None:
        self.labels[name] = len(self.instrs)

    def emit(self, op: str, *args) -> None:
        code = OP_CODES[op]
        out = [code]
        for k, a in enumerate(args):
            if isinstance(a, str) and a.startswith("r"):
                out.append(int(a[1:]))
            elif isinstance(a, str):
                self.fixups.append((len(self.instrs), a))
                out.append(-1)
            else:
                out.append(a)
        self.instrs.append(out)

    def build(self, reg_bits, cell_bits, mem_size, scratch=(),
              canonical=True) -> RamProgram:
        for idx, name in self.fixups:
            if name not in self.labels:
                raise RamError(f"undefined label {name!r}")
            ins = self.instrs[idx]
            ins[ins.index(-1)] = self.labels[name]
        prog = RamProgram(tuple(tuple(i) for i in self.instrs),
                          tuple(reg_bits), cell_bits, mem_size,
                          tuple(scratch), canonical)
        validate_program(prog)
        return prog


def program_text(program: RamProgram) -> str:
    lines = [
        f".regs {program.reg_bits[0]} {program.reg_bits[1]} {program.reg_bits[2]}",
        f".cells {program.cell_bits}",
        f".mem {program.mem_size}",
    ]
    if program.scratch:
        lines.append(".scratch " + " ".join(str(a) for a in program.scratch))
    if not program.canonical:
        lines.append(".raw")
    for ins in program.instrs:
        op = ins[0]
        parts = [OP_NAMES[op]]
        regs_of = {LOADI: (1,), LOAD: (1, 2), STORE: (1, 2),
                   ADD: (1, 2, 3), SUB: (1, 2, 3), MUL: (1, 2, 3),
                   MOD: (1, 2, 3), CMPLT: (1, 2, 3), JNZ: (1,), HALT01: (1,)}
        for k in range(1, len(ins)):
            if k in regs_of[op]:
                parts.append(f"r{ins[k]}")
            else:
                parts.append(str(ins[k]))
        lines.append("  " + " ".join(parts))
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> RamProgram:
    """Parse the documented one-instruction-per-line format (see README)."""
    reg_bits = (16, 16, 16)
    cell_bits = 16
    mem_size = 64
    scratch: tuple[int, ...] = ()
    canonical = True
    instrs = []
    labels: dict[str, int] = {}
    fixups = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("."):
            parts = line.split()
            if parts[0] == ".regs":
                reg_bits = tuple(int(x) for x in parts[1:4])
            elif parts[0] == ".cells":
                cell_bits = int(parts[1])
            elif parts[0] == ".mem":
                mem_size = int(parts[1])
            elif parts[0] == ".scratch":
                scratch = tuple(int(x) for x in parts[1:])
            elif parts[0] == ".raw":
                canonical = False
            else:
                raise RamError(f"line {lineno}: unknown directive {parts[0]}")
            continue
        while ":" in line:
            name, _, line = line.partition(":")
            labels[name.strip()] = len(instrs)
            line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] not in OP_CODES:
            raise RamError(f"line {lineno}: unknown op {parts[0]!r}")
        out = [OP_CODES[parts[0]]]
        for a in parts[1:]:
            if a.startswith("r") and a[1:].isdigit():
                out.append(int(a[1:]))
            elif a.lstrip("-").isdigit():
                out.append(int(a))
            else:
                fixups.append((len(instrs), len(out), a))
                out.append(-1)
        instrs.append(out)
    for idx, pos, name in fixups:
        if name not in labels:
            raise RamError(f"undefined label {name!r}")
        instrs[idx][pos] = labels[name]
    prog = RamProgram(tuple(tuple(i) for i in instrs), reg_bits, cell_bits,
                      mem_size, scratch, canonical)
    validate_program(prog)
    return prog


# -- shipped verifier programs ------------------------------------------------


def prog_sum_equals(n_cells: int, target: int, value_bits: int) -> RamProgram:
    """Linear scan keeping the accumulator in memory (tau = Theta(n))."""
    acc = n_cells
    acc_bits = value_bits + bitlen(n_cells) + 1
    a = Asm()
    a.emit("LOADI", "r1", acc)
    a.emit("LOADI", "r0", 0)
    a.emit("STORE", "r1", "r0")
    a.emit("LOADI", "r1", 0)
    a.label("loop")
    a.emit("LOAD", "r0", "r1")        # r0 = x[ptr]
    a.emit("LOADI", "r2", acc)
    a.emit("LOAD", "r2", "r2")        # r2 = acc
    a.emit("ADD", "r0", "r0", "r2")
    a.emit("LOADI", "r2", acc)
    a.emit("STORE", "r2", "r0")       # acc = acc + x
    a.emit("LOADI", "r2", 1)
    a.emit("ADD", "r1", "r1", "r2")
    a.emit("LOADI", "r2", n_cells)
    a.emit("CMPLT", "r2", "r1", "r2")
    a.emit("JNZ", "r2", "loop")
    a.emit("LOADI", "r1", acc)
    a.emit("LOAD", "r0", "r1")
    a.emit("LOADI", "r2", target)
    a.emit("SUB", "r0", "r0", "r2")
    a.emit("JNZ", "r0", "fail")
    a.emit("LOADI", "r0", 1)
    a.emit("HALT01", "r0")
    a.label("fail")
    a.emit("LOADI", "r0", 0)
    a.emit("HALT01", "r0")
    w0 = max(acc_bits + 1, bitlen(target) + 1, value_bits + 1)
    return a.build((w0, bitlen(n_cells + 2), w0), max(value_bits, acc_bits),
                   n_cells + 1, scratch=(acc,))


def prog_sorted(n_cells: int, value_bits: int) -> RamProgram:
    """Output 1 iff cells 0..n-1 are strictly ascending."""
    a = Asm()
    if n_cells < 2:
        a.emit("LOADI", "r0", 1)
        a.emit("HALT01", "r0")
        return a.build((value_bits, 4, value_bits), value_bits,
                       max(1, n_cells))
    a.emit("LOADI", "r1", 1)
    a.label("loop")
    a.emit("LOAD", "r0", "r1")        # x[i]
    a.emit("LOADI", "r2", 1)
    a.emit("SUB", "r2", "r1", "r2")
    a.emit("LOAD", "r2", "r2")        # x[i-1]
    a.emit("CMPLT", "r2", "r2", "r0")  # x[i-1] < x[i]
    a.emit("JNZ", "r2", "ok")
    a.emit("LOADI", "r0", 0)
    a.emit("HALT01", "r0")
    a.label("ok")
    a.emit("LOADI", "r2", 1)
    a.emit("ADD", "r1", "r1", "r2")
    a.emit("LOADI", "r2", n_cells)
    a.emit("CMPLT", "r2", "r1", "r2")
    a.emit("JNZ", "r2", "loop")
    a.emit("LOADI", "r0", 1)
    a.emit("HALT01", "r0")
    return a.build((value_bits + 1, bitlen(n_cells + 2), value_bits + 1),
                   value_bits, n_cells)


# -- the compiler -------------------------------------------------------------


TAG_RW, TAG_SS, TAG_ID = 1, 2, 3


@dataclass
class CellSpec:
    """One input cell: who vouches for it and how its value travels.

    kind "local": the owner knows the value (its input, its coins, a shard
    it received earlier); the init write uses the owner's own copy.
    kind "prover": the value is delivered in the compiler's main message;
    the init write uses whatever the owner received.
    """

    addr: int
    owner: int
    kind: str
    value: int
    bits: int = 0


class CompilerJob:
    """One compiled RAM verification, possibly on a node subset.

    ids_mode: "prover" (ids assigned in the main message, verified by the
    permutation pair), "alpha" (ids must follow the alpha draws from an
    earlier coin message, verified by the chained-pairs multiset), or
    "derived" (subgraph runs: ids are ranks in the canonical member order,
    no extra verification needed).
    """

    def __init__(self, tag: str, nodes: Sequence[int],
                 adj: dict[int, tuple[int, ...]], program: RamProgram,
                 cells: list[CellSpec], ids_mode: str = "prover",
                 merge_pairs: bool = False,
                 alpha: Optional[dict[int, int]] = None,
                 alpha_bits: int = 0,
                 contributors: Optional[Sequence[int]] = None,
                 carriers: Optional[dict[int, int]] = None):
        self.tag = tag
        self.nodes = sorted(nodes)
        self.adj = adj
        self.program = program
        self.cells = cells
        self.ids_mode = ids_mode
        self.merge_pairs = merge_pairs
        self.alpha = alpha or {}
        self.alpha_bits = alpha_bits
        # pass-through members take no steps/coins; their prover-bound
        # fields are carried by a neighbor (degree redistribution)
        self.contributors = sorted(contributors) if contributors is not None \
            else list(self.nodes)
        self.carriers = carriers or {}
        self.n = len(self.contributors)
        self.id_bits = bitlen(self.n)
        self._trace: Optional[Trace] = None
        self.cell_owner = {c.addr: c.owner for c in cells}
        self.local_value = {u: {} for u in self.nodes}
        for c in cells:
            if c.kind == "local":
                self.local_value[c.owner][c.addr] = c.value

    # honest ids: by alpha order in alpha mode, by node order otherwise
    def honest_ids(self) -> dict[int, int]:
        if self.ids_mode == "alpha":
            order = sorted(self.contributors, key=lambda u: (self.alpha[u], u))
        else:
            order = list(self.contributors)
        return {u: i + 1 for i, u in enumerate(order)}

    def derived_ids(self) -> dict[int, int]:
        return {u: i + 1 for i, u in enumerate(self.contributors)}

    def carrier_of(self, u: int) -> Optional[int]:
        return self.carriers.get(u)

    def get_trace(self) -> Trace:
        if self._trace is None:
            inputs = {c.addr: c.value for c in self.cells}
            self._trace = trace(self.program, inputs)
        return self._trace

    def block_size(self, tau: int) -> int:
        return max(1, -(-tau // self.n))

    def steps_of(self, node_id: int, tau: int) -> range:
        b = self.block_size(tau)
        lo = (node_id - 1) * b + 1
        hi = min(node_id * b, tau)
        return range(lo, hi + 1)

    # -- widths ------------------------------------------------------------

    def widths(self, tau: int) -> dict[str, int]:
        p = self.program
        tb = bitlen(max(tau, 1))
        return {
            "time": tb,
            "state": p.state_bits,
            "cell": p.cell_bits,
            "addr": p.addr_bits,
            "step": tb + p.state_bits + 1 + p.cell_bits + p.addr_bits + tb,
            "triple": p.cell_bits + p.addr_bits + tb,
        }

    def se_field(self, tau: int) -> PrimeField:
        w = self.widths(tau)
        enc_bits = max(w["triple"], w["state"] + w["time"],
                       self.alpha_bits + self.id_bits) + 2
        return PrimeField(next_prime(max(1 << (enc_bits + 1),
                                         self.n ** 4 * 64)))

    # -- prover side ---------------------------------------------------------

    def honest_main_fields(self, payloads: list[Payload]) -> None:
        tr = self.get_trace()
        ids = self.honest_ids()
        w = self.widths(tr.tau)
        by_step = {s.j: s for s in tr.steps}
        tau_bits = bitlen(tr.tau)
        finals = list(tr.final_cells)
        for u in self.nodes:
            p = payloads[u]
            p.put(f"{self.tag}.tau", tr.tau, tau_bits)
            if u not in ids:
                continue
            nid = ids[u]
            if self.ids_mode != "derived":
                p.put(f"{self.tag}.id", nid, self.id_bits)
            if self.ids_mode == "alpha":
                order = sorted(self.contributors,
                               key=lambda x: (self.alpha[x], x))
                succ = order[(nid % self.n)]
                p.put(f"{self.tag}.asucc", self.alpha[succ], self.alpha_bits)
            recs = []
            for j in self.steps_of(nid, tr.tau):
                s = by_step[j]
                if s.read is not None:
                    recs.append((j, s.state, 1, s.read[0], s.read[1], s.read[2]))
                else:
                    recs.append((j, s.state, 0, 0, 0, 0))
            p.put(f"{self.tag}.steps", tuple(recs), w["step"] * len(recs))
            fshare = tuple(finals[k] for k in range(len(finals))
                           if k % self.n == (nid - 1))
            p.put(f"{self.tag}.finals", fshare, w["triple"] * len(fshare))
            for c in self.cells:
                if c.kind == "prover" and c.owner == u:
                    p.put(f"{self.tag}.w{c.addr}", c.value, c.bits)

    # -- node side -----------------------------------------------------------

    def after_main(self, ctx: RunCtx, payloads: list[Payload]) -> None:
        """Local instruction checks; collect the multiset elements every node
        contributes to the consistency tests."""
        prog = self.program
        tau_claim = {u: payloads[u].get(f"{self.tag}.tau", 0) for u in self.nodes}
        ids = (self.derived_ids() if self.ids_mode == "derived" else
               {u: payloads[u].get(f"{self.tag}.id", 0) for u in self.nodes})
        member = set(self.nodes)

        def out(u):
            if u not in member:
                return {}
            val = (tau_claim[u], ids.get(u, 0))
            return {v: (val, bitlen(max(tau_claim[u], 1)) + self.id_bits)
                    for v in self.adj[u]}

        inbox = ctx.exchange(f"{self.tag}.meta", out, nodes=self.nodes)
        for u in self.nodes:
            for v in self.adj[u]:
                got = inbox[u].get(v)
                ctx.require(u, got is not None and got[0] == tau_claim[u],
                            f"{self.tag}: step count disagreement")
        self.tau = tau_claim[self.nodes[0]]
        w = self.widths(max(self.tau, 1))
        self.elements_a: dict[int, list[int]] = {u: [] for u in self.nodes}
        self.elements_b: dict[int, list[int]] = {u: [] for u in self.nodes}
        self.ids_a: dict[int, list[int]] = {u: [] for u in self.nodes}
        self.ids_b: dict[int, list[int]] = {u: [] for u in self.nodes}

        def enc_triple(v, a, t):
            return ((((v << w["addr"]) | a) << w["time"]) | t) << 2 | TAG_RW

        def enc_state(s, j):
            return ((s << w["time"]) | j) << 2 | TAG_SS

        init_state = prog.pack_state(0, [0, 0, 0])
        for u in self.nodes:
            nid = ids.get(u)
            if nid is None:
                continue  # pass-through member: no steps, no elements
            if not (1 <= nid <= self.n):
                ctx.require(u, False, f"{self.tag}: id out of range")
                continue
            tau = tau_claim[u]
            if tau < 1:
                ctx.require(u, False, f"{self.tag}: empty execution claimed")
                continue
            if self.ids_mode == "prover":
                self.ids_a[u].append((nid << 2) | TAG_ID)
                self.ids_b[u].append(((nid % self.n) + 1 << 2) | TAG_ID)
            elif self.ids_mode == "alpha":
                asucc = payloads[u].get(f"{self.tag}.asucc", 0)
                self.ids_a[u].append(
                    ((self.alpha[u] << self.id_bits) | nid) << 2 | TAG_ID)
                self.ids_b[u].append(
                    ((asucc << self.id_bits) | ((nid % self.n) + 1)) << 2 | TAG_ID)
            # init writes the node vouches for
            for addr, val in self.local_value[u].items():
                self.elements_b[u].append(enc_triple(val, addr, 0))
            for c in self.cells:
                if c.kind == "prover" and c.owner == u:
                    got = payloads[u].get(f"{self.tag}.w{c.addr}", 0)
                    self.elements_b[u].append(enc_triple(
                        got & ((1 << prog.cell_bits) - 1), c.addr, 0))
            for k, addr in enumerate(sorted(a for a in prog.scratch)):
                if k % self.n == nid - 1:
                    self.elements_b[u].append(enc_triple(0, addr, 0))
            # claimed steps
            recs = payloads[u].get(f"{self.tag}.steps", ())
            expect = self.steps_of(nid, tau)
            if not isinstance(recs, tuple) or len(recs) != len(expect):
                ctx.require(u, False, f"{self.tag}: wrong step allocation")
                continue
            ok = True
            for rec, j_exp in zip(recs, expect):
                if len(rec) != 6 or rec[0] != j_exp:
                    ok = False
                    break
                j, state, has_mem, v, a, t = rec
                pc, regs = prog.unpack_state(state)
                try:
                    needs_addr, _, regs2, wval, is_load, is_store, halted, outp = \
                        _exec_one(prog, pc, regs, v if has_mem else None)
                except RamError:
                    ok = False
                    break
                if (needs_addr is not None) != bool(has_mem):
                    ok = False
                    break
                if halted and j != tau:
                    ok = False
                    break
                if j == tau:
                    if not halted or outp != 1:
                        ok = False
                        break
                if has_mem:
                    if a != needs_addr or not (0 <= t < j):
                        ok = False
                        break
                    self.elements_a[u].append(enc_triple(v, a, t))
                    if is_load:
                        self.elements_b[u].append(enc_triple(v, a, j))
                    else:
                        self.elements_b[u].append(enc_triple(wval, a, j))
                # state chain
                self.elements_a[u].append(enc_state(state, j))
                if j == tau:
                    self.elements_b[u].append(enc_state(init_state, 1))
                else:
                    if has_mem and is_load:
                        _, nxt, regs2, _, _, _, _, _ = _exec_one(prog, pc, regs, v)
                    else:
                        needs2, nxt, regs2, _, _, _, _, _ = _exec_one(
                            prog, pc, regs, v if has_mem else None)
                    s_next = prog.pack_state(nxt, regs2)
                    self.elements_b[u].append(enc_state(s_next, j + 1))
            ctx.require(u, ok, f"{self.tag}: instruction check failed")
            finals = payloads[u].get(f"{self.tag}.finals", ())
            if isinstance(finals, tuple):
                for rec in finals:
                    if len(rec) == 3:
                        self.elements_a[u].append(enc_triple(*rec))

        self.se = SetEqualityCore(
            f"{self.tag}.se", self.nodes, self.adj, self.se_field(max(self.tau, 1)),
            self._pairs(),
            alpha_slack_bits=14 if self.merge_pairs else 0,
            contributors=self.contributors)

    def _pairs(self) -> dict[str, tuple[dict, dict]]:
        if self.merge_pairs:
            a = {u: self.elements_a[u] + self.ids_a[u] for u in self.nodes}
            b = {u: self.elements_b[u] + self.ids_b[u] for u in self.nodes}
            return {"x": (a, b)}
        pairs = {"rw+ss": (self.elements_a, self.elements_b)}
        if self.ids_mode != "derived":
            pairs["ids"] = (self.ids_a, self.ids_b)
        return pairs

    # -- phase plumbing ------------------------------------------------------

    def se_coin_bits(self, u: int) -> int:
        return self.se.coin_bits(u)

    def honest_proof_fields(self, payloads: list[Payload], coin_values) -> None:
        self.se.attach_honest(payloads, coin_values)

    def verify_se(self, ctx: RunCtx, payloads: list[Payload], coin_values) -> None:
        self.se.verify(ctx, payloads, coin_values)


def run_single_job(ctx: RunCtx, job: CompilerJob,
                   extra_main: Optional[Callable] = None) -> None:
    """Drive one job through its M (main), A (coins), M (proof) phases."""

    def honest_main(env: ProverEnv) -> list[Payload]:
        payloads = [Payload() for _ in range(ctx.n)]
        if extra_main:
            extra_main(env, payloads)
        job.honest_main_fields(payloads)
        return payloads

    main = ctx.prover_phase(f"{job.tag}.main", honest_main)
    job.after_main(ctx, main)
    coins = ctx.coin_phase(f"{job.tag}.coins",
                           lambda view: job.se_coin_bits(view.node))

    def honest_proof(env: ProverEnv) -> list[Payload]:
        payloads = [Payload() for _ in range(ctx.n)]
        job.honest_proof_fields(payloads, env.coins[f"{job.tag}.coins"])
        return payloads

    proof = ctx.prover_phase(f"{job.tag}.proof", honest_proof)
    job.verify_se(ctx, proof, coins)


def run_jobs_shared_phases(ctx: RunCtx, jobs: list[CompilerJob],
                           prefix: str,
                           extra_coin_bits: Optional[Callable[[int], int]] = None,
                           extra_attach: Optional[Callable] = None,
                           extra_verify: Optional[Callable] = None) -> None:
    """Many jobs riding one A phase and one proof M phase (their main fields
    must already have been delivered and after_main run).

    Coin slicing is sparse: a node draws bits only for the jobs it sits in.
    Host protocols may piggyback extra coin bits (drawn first) and extra
    proof fields on the same two messages.
    """
    membership: dict[int, list[int]] = {u: [] for u in range(ctx.n)}
    for k, job in enumerate(jobs):
        for u in job.nodes:
            membership[u].append(k)
    extra_w = {u: (extra_coin_bits(u) if extra_coin_bits else 0)
               for u in range(ctx.n)}
    widths = {u: [extra_w[u]] + [jobs[k].se_coin_bits(u)
                                 for k in membership[u]]
              for u in range(ctx.n)}
    coins = ctx.coin_phase(f"{prefix}.coins",
                           lambda view: sum(widths[view.node]))

    def slice_coins(raw) -> tuple[dict[int, int], list[dict[int, int]]]:
        per_job: list[dict[int, int]] = [dict() for _ in jobs]
        extra_vals: dict[int, int] = {}
        for u in range(ctx.n):
            chunks = split_bits(raw[u], widths[u])
            extra_vals[u] = chunks[0]
            for pos, k in enumerate(membership[u]):
                per_job[k][u] = chunks[pos + 1]
        return extra_vals, per_job

    extra_vals, per_job_coins = slice_coins(coins)

    def honest_proof(env: ProverEnv) -> list[Payload]:
        payloads = [Payload() for _ in range(ctx.n)]
        if extra_attach is not None:
            extra_attach(env, payloads, extra_vals)
        for k, job in enumerate(jobs):
            job.honest_proof_fields(payloads, per_job_coins[k])
        return payloads

    by_tag = {job.tag: job for job in jobs}

    def billing(u: int, fname: str, bits: int) -> Optional[int]:
        job = by_tag.get(fname.split(".", 1)[0])
        return job.carrier_of(u) if job is not None else None

    proof = ctx.prover_phase(f"{prefix}.proof", honest_proof, billing=billing)
    if extra_verify is not None:
        extra_verify(proof, extra_vals)
    for k, job in enumerate(jobs):
        job.verify_se(ctx, proof, per_job_coins[k])


# -- top-level compiled protocols ---------------------------------------------


def compiled_np_protocol(graph: NetworkGraph, name: str,
                         make_job: Callable[[NetworkGraph], CompilerJob]
                         ) -> ProtocolSpec:
    """Prover-first inner protocol (NP-style): r+2 = 3 messages."""

    def run(ctx: RunCtx) -> None:
        for u in range(ctx.n):
            ctx.set_verdict(u, True)
        job = make_job(graph)
        run_single_job(ctx, job)

    return ProtocolSpec(name, "MAM", run)


def sum_check_job(graph: NetworkGraph, values: Sequence[int], target: int,
                  value_bits: Optional[int] = None,
                  tag: str = "cmp") -> CompilerJob:
    """Inner verifier: sum of per-node inputs equals the target."""
    n = graph.n
    vb = value_bits or bitlen(max(max(values), 1))
    prog = prog_sum_equals(n, target, vb)
    cells = [CellSpec(u, u, "local", values[u]) for u in range(n)]
    return CompilerJob(tag, range(n), graph_adj(graph), prog, cells,
                       ids_mode="prover")


def sum_check_protocol(graph: NetworkGraph, values: Sequence[int],
                       target: int) -> ProtocolSpec:
    return compiled_np_protocol(
        graph, "ram-sum", lambda g: sum_check_job(g, values, target))


# -- adversaries ---------------------------------------------------------------


def adv_state_tamper() -> ProverImpl:
    """Perturb the state of one mid-trace step; the state chain multiset
    comparison must notice."""
    def transform(tag, payloads, env):
        if not tag.endswith(".main"):
            return payloads
        out = [p.copy() for p in payloads]
        key = None
        candidates = []
        for u, p in enumerate(out):
            for k in p.fields:
                if k.endswith(".steps") and p.fields[k][0]:
                    candidates.append((u, k))
        if not candidates:
            return out
        u, key = candidates[env.rng.randrange(len(candidates))]
        recs, bits = out[u].fields[key]
        recs = list(recs)
        pick = env.rng.randrange(len(recs))
        j, state, has_mem, v, a, t = recs[pick]
        recs[pick] = (j, state ^ 1, has_mem, v, a, t)
        out[u].put(key, tuple(recs), bits)
        return out
    return ProverImpl("ram-state-tamper", transform, honest=False)


def adv_stale_read() -> ProverImpl:
    """Replay an overwritten (value, time) version on some read; values
    stay plausible so only the read/write multisets can differ."""
    def transform(tag, payloads, env):
        if not tag.endswith(".main"):
            return payloads
        out = [p.copy() for p in payloads]
        # reconstruct write history per address from the step stream
        allsteps = []
        where = {}
        for u, p in enumerate(out):
            for k in p.fields:
                if k.endswith(".steps"):
                    recs, bits = p.fields[k]
                    for pos, rec in enumerate(recs):
                        allsteps.append(rec)
                        where[rec[0]] = (u, k, pos)
        allsteps.sort(key=lambda r: r[0])
        versions: dict[int, list[tuple[int, int]]] = {}
        target = None
        for rec in allsteps:
            j, state, has_mem, v, a, t = rec
            if not has_mem:
                continue
            hist = versions.setdefault(a, [])
            if len(hist) >= 1 and (v, t) != hist[0] and target is None:
                prior = [h for h in hist if h[1] < j and (h[0], h[1]) != (v, t)]
                if prior:
                    target = (j, a, prior[-1])
            hist.append((v, j))
        if target is None:
            return out
        j, a_addr, (v_old, t_old) = target
        u, k, pos = where[j]
        recs, bits = out[u].fields[k]
        recs = list(recs)
        jj, state, has_mem, v, a, t = recs[pos]
        recs[pos] = (jj, state, has_mem, v_old, a, t_old)
        out[u].put(k, tuple(recs), bits)
        return out
    return ProverImpl("ram-stale-read", transform, honest=False)


RAM_ADVERSARIES = {
    "ram-state-tamper": adv_state_tamper,
    "ram-stale-read": adv_stale_read,
}
