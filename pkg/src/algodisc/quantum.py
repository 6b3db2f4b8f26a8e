"""Dense state-vector simulation of Grover search and the GroverGame environment.

Basis index ``x`` stores qubit ``j`` in bit ``j``.  The four gates act on
whole registers: ``H_ALL`` (Hadamard on every qubit), ``X_ALL`` (bitwise
complement), ``MCZ`` (phase flip of ``|1...1>``) and ``ORACLE w`` (phase flip
of ``|w>``).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .lang import Grammar, Language, Primitive, Vocabulary

GATES = ("H_ALL", "X_ALL", "MCZ", "ORACLE")
MIN_QUBITS, MAX_QUBITS = 2, 12
SUCCESS_TOL = 3e-2
ONE_QUBIT = {"H_ALL", "X_ALL"}


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int | None = None

    def __post_init__(self):
        if self.kind not in GATES:
            raise ValueError(f"unknown gate {self.kind!r}")
        if (self.kind == "ORACLE") != (self.target is not None):
            raise ValueError("ORACLE needs a target and only ORACLE takes one")

    def __str__(self) -> str:
        return f"ORACLE {self.target}" if self.kind == "ORACLE" else self.kind


def _check_n(n: int) -> None:
    if not MIN_QUBITS <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count must lie in [{MIN_QUBITS}, {MAX_QUBITS}], got {n}")


def basis_state(n: int, x: int = 0) -> np.ndarray:
    _check_n(n)
    a = np.zeros(2 ** n, dtype=complex)
    a[x] = 1.0
    return a


def uniform_state(n: int) -> np.ndarray:
    _check_n(n)
    return np.full(2 ** n, 2 ** (-n / 2), dtype=complex)


def qubits(a: np.ndarray) -> int:
    size = a.shape[-1]
    n = int(size).bit_length() - 1
    if 2 ** n != size:
        raise ValueError("amplitude vector length must be a power of two")
    return n


def hadamard_all(a: np.ndarray) -> np.ndarray:
    """n single-qubit butterflies along the last axis, O(n 2^n) per state."""
    n = qubits(a)
    out = a.astype(complex, copy=True)
    s = 1.0 / math.sqrt(2.0)
    for j in range(n):
        v = out.reshape(a.shape[:-1] + (-1, 2, 2 ** j))
        lo, hi = v[..., 0, :].copy(), v[..., 1, :].copy()
        v[..., 0, :] = (lo + hi) * s
        v[..., 1, :] = (lo - hi) * s
    return out


def apply_gate(a: np.ndarray, gate: Gate | str, target: int | None = None) -> np.ndarray:
    if isinstance(gate, str):
        gate = Gate(gate, target)
    N = a.shape[-1]
    if gate.kind == "H_ALL":
        return hadamard_all(a)
    if gate.kind == "X_ALL":
        return a[..., ::-1].copy()
    out = a.copy()
    idx = N - 1 if gate.kind == "MCZ" else gate.target
    if not 0 <= idx < N:
        raise ValueError(f"oracle target {idx} outside [0, {N})")
    out[..., idx] = -out[..., idx]
    return out


def run_circuit(a: np.ndarray, gates: Iterable[Gate]) -> np.ndarray:
    for g in gates:
        a = apply_gate(a, g)
    return a


def probabilities(a: np.ndarray) -> np.ndarray:
    return np.abs(a) ** 2


def success_probability(a: np.ndarray, w: int) -> float:
    return float(abs(a[w]) ** 2)


def states_equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    if a.shape != b.shape:
        raise ValueError("states have different sizes")
    ip = np.vdot(b, a)
    c = ip / abs(ip) if abs(ip) > 0 else 1.0
    return bool(np.linalg.norm(a - c * b) <= tol)


def hamming_signs(n: int) -> np.ndarray:
    """Diagonal of the operator ``|x> -> (-1)^|x| |x>``."""
    _check_n(n)
    x = np.arange(2 ** n)
    weight = np.zeros_like(x)
    for j in range(n):
        weight += (x >> j) & 1
    return np.where(weight % 2 == 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# Grover circuits


def grover_iterations(n: int) -> int:
    return math.ceil(math.pi / 4 * math.sqrt(2 ** n))


def standard_circuit(n: int, w: int, k: int | None = None) -> list[Gate]:
    k = grover_iterations(n) if k is None else k
    body = [Gate("ORACLE", w), Gate("H_ALL"), Gate("X_ALL"), Gate("MCZ"), Gate("X_ALL"), Gate("H_ALL")]
    return [Gate("H_ALL")] + body * k


def optimized_circuit(n: int, w: int, k: int | None = None) -> list[Gate]:
    k = grover_iterations(n) if k is None else k
    body = [Gate("ORACLE", w), Gate("H_ALL"), Gate("MCZ"), Gate("H_ALL")]
    return [Gate("X_ALL"), Gate("H_ALL")] + body * k


@dataclass(frozen=True)
class Tally:
    one_qubit_gates: int
    mcz: int
    oracle: int
    depth: int


def tally(n: int, gates: Sequence[Gate]) -> Tally:
    """One-qubit gates count n per register-wide layer; depth counts layers."""
    one = sum(n for g in gates if g.kind in ONE_QUBIT)
    return Tally(one, sum(g.kind == "MCZ" for g in gates), sum(g.kind == "ORACLE" for g in gates), len(gates))


def grover_standard(n: int, w: int, k: int | None = None) -> tuple[np.ndarray, Tally]:
    c = standard_circuit(n, w, k)
    return run_circuit(basis_state(n), c), tally(n, c)


def grover_optimized(n: int, w: int, k: int | None = None) -> tuple[np.ndarray, Tally]:
    c = optimized_circuit(n, w, k)
    return run_circuit(basis_state(n), c), tally(n, c)


def format_circuit(gates: Sequence[Gate]) -> str:
    return "".join(f"{g}\n" for g in gates)


def parse_circuit(text: str) -> list[Gate]:
    out = []
    for k, line in enumerate(text.splitlines()):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "ORACLE":
                if len(parts) != 2:
                    raise ValueError("ORACLE takes exactly one target")
                out.append(Gate("ORACLE", int(parts[1])))
            elif len(parts) == 1:
                out.append(Gate(parts[0]))
            else:
                raise ValueError(f"{parts[0]} takes no argument")
        except ValueError as e:
            raise ValueError(f"line {k + 1}: {e}") from None
    return out


TALLY_COLUMNS = ("n", "k", "one_qubit_gates_std", "one_qubit_gates_opt", "mcz_count", "depth_std", "depth_opt")


def tally_rows(ns: Iterable[int]) -> list[dict]:
    rows = []
    for n in ns:
        k = grover_iterations(n)
        s, o = tally(n, standard_circuit(n, 0, k)), tally(n, optimized_circuit(n, 0, k))
        rows.append({"n": n, "k": k, "one_qubit_gates_std": s.one_qubit_gates,
                     "one_qubit_gates_opt": o.one_qubit_gates, "mcz_count": s.mcz,
                     "depth_std": s.depth, "depth_opt": o.depth})
    return rows


def format_tally(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, TALLY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# GroverGame


def gate_cap(n: int) -> int:
    """Gates per optimized iteration times the iteration bound, plus 2n for preparation."""
    return 4 * grover_iterations(n) + 2 * n


def game_reward(success: bool, length: int, cap: int, achieved: int, N: int) -> float:
    if success:
        return 1.0 - length / cap
    return -1.0 + achieved / N


def finds_target(n: int, gates: Sequence[str], w: int, tol: float = SUCCESS_TOL) -> bool:
    """Whether playing ``gates`` against hidden target ``w`` succeeds at some step."""
    a = basis_state(n)
    for g in gates:
        a = apply_gate(a, g, w if g == "ORACLE" else None)
        if success_probability(a, w) >= 1.0 - tol:
            return True
    return False


def targets_achieved(n: int, gates: Sequence[str], permutation: Sequence[int] | None = None,
                     tol: float = SUCCESS_TOL) -> int:
    targets = range(2 ** n) if permutation is None else permutation
    return sum(finds_target(n, gates, int(w), tol) for w in targets)


class GameOver(RuntimeError):
    pass


@dataclass(frozen=True)
class GroverGame:
    n: int
    target: int
    permutation: tuple[int, ...]
    state: np.ndarray = field(compare=False)
    gates: tuple[str, ...] = ()
    cap: int = 0
    tol: float = SUCCESS_TOL
    done: bool = False

    @classmethod
    def new(cls, n: int, rng: np.random.Generator, cap: int | None = None) -> "GroverGame":
        _check_n(n)
        perm = tuple(int(x) for x in rng.permutation(2 ** n))
        return cls(n, perm[0], perm, basis_state(n), (), gate_cap(n) if cap is None else cap)

    @property
    def N(self) -> int:
        return 2 ** self.n

    def step(self, gate: str) -> tuple["GroverGame", bool, float | None]:
        if self.done:
            raise GameOver("the game is over")
        if gate not in GATES:
            raise ValueError(f"unknown gate {gate!r}")
        a = apply_gate(self.state, gate, self.target if gate == "ORACLE" else None)
        gates = self.gates + (gate,)
        if success_probability(a, self.target) >= 1.0 - self.tol:
            return replace(self, state=a, gates=gates, done=True), True, game_reward(True, len(gates), self.cap, 0, self.N)
        if len(gates) >= self.cap:
            hit = targets_achieved(self.n, gates, self.permutation, self.tol)
            return replace(self, state=a, gates=gates, done=True), True, game_reward(False, len(gates), self.cap, hit, self.N)
        return replace(self, state=a, gates=gates), False, None


# ---------------------------------------------------------------------------
# token language and search domain


@dataclass(frozen=True)
class QState:
    """One state vector per candidate target (rows follow the problem's permutation)."""

    amps: np.ndarray
    gates: int = 0


@dataclass(frozen=True)
class GroverProblem:
    n: int
    target: int
    permutation: tuple[int, ...]
    name: str = "grover"


def _gate_prim(name):
    def fn(s: QState, ctx):
        if name == "ORACLE":
            out = s.amps.copy()
            rows = np.arange(out.shape[0])
            out[rows, list(ctx.problem.permutation)] *= -1
        else:
            out = apply_gate(s.amps, name)
        return QState(out, s.gates + 1)
    return Primitive(name, fn, (("sv", "sv"),), 1)


def _qloss(problem: GroverProblem, s: QState, kind: str) -> float | None:
    """Failure probability against the least favourable hidden target."""
    if s.gates == 0:
        return None
    p = np.abs(s.amps[np.arange(s.amps.shape[0]), list(problem.permutation)]) ** 2
    return float(1.0 - p.min())


def quantum_language() -> Language:
    prims = {g: _gate_prim(g) for g in GATES}
    return Language("grover", {"sv": None}, "sv", prims, {}, _qloss)


def expand_program(vocab: Vocabulary, program: Sequence[str]) -> list[str]:
    """Primitive gate names of a (possibly fused) program."""
    out: list[str] = []

    def walk(tid):
        d = vocab[tid].definition
        if d[0] == "prim":
            out.append(d[1])
        else:
            walk(d[1])
            walk(d[2])

    for tid in program:
        walk(tid)
    return out


@dataclass
class QuantumDomain:
    """GroverGame as a search domain.

    The target stays hidden: a chain is scored against every target of the
    run's permutation at once, so it only succeeds if it would find whichever
    one was drawn.  Failed chains earn partial credit per target they find.
    """

    vocab: Vocabulary
    sizes: Sequence[int] = (2,)
    name: str = "grover"
    hide_loss: bool = True
    tol: float = SUCCESS_TOL
    grammar: Grammar = field(init=False)

    def __post_init__(self):
        for n in self.sizes:
            _check_n(n)
        self.grammar = Grammar(self.vocab)

    def sample_problem(self, rng: np.random.Generator) -> GroverProblem:
        n = int(rng.choice(list(self.sizes)))
        perm = tuple(int(x) for x in rng.permutation(2 ** n))
        return GroverProblem(n, perm[0], perm, f"grover-n{n}-w{perm[0]}")

    def initial_states(self, problem, rng, count):
        start = np.tile(basis_state(problem.n), (len(problem.permutation), 1))
        return [QState(start) for _ in range(count)]

    def size(self, problem) -> int:
        return problem.n

    def loss_scale(self, problem) -> float:
        return 1.0

    def reward(self, problem: GroverProblem, loss: float, program) -> float:
        gates = expand_program(self.vocab, program)
        cap = gate_cap(problem.n)
        if loss <= self.tol:
            return game_reward(True, len(gates), cap, 0, 2 ** problem.n)
        hit = targets_achieved(problem.n, gates, problem.permutation, self.tol)
        return game_reward(False, len(gates), cap, hit, 2 ** problem.n)

    def is_solved(self, problem, loss: float) -> bool:
        return loss <= self.tol

    def with_vocab(self, vocab: Vocabulary) -> "QuantumDomain":
        return QuantumDomain(vocab, self.sizes, self.name, self.hide_loss, self.tol)

    def max_actions(self, problem) -> int:
        return gate_cap(problem.n)


def make_quantum_domain(sizes: Sequence[int] = (2,)) -> QuantumDomain:
    return QuantumDomain(Vocabulary.from_language(quantum_language(), with_stop=False), tuple(sizes))
