"""QAP instances, the objective and its relaxation, generators and QAPLIB I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("generator", "brute-force", "branch-and-bound", "external", "baseline")


@dataclass(frozen=True)
class QapInstance:
    """Flow ``F``, distance ``D`` and linear cost ``C`` matrices.

    ``known_optimum`` carries where it came from: ``generator`` (asserted by a
    construction), ``brute-force`` (certified by enumeration, n <= 10),
    ``external`` (published) or ``baseline`` (best of heuristic runs).
    """

    F: np.ndarray
    D: np.ndarray
    C: np.ndarray
    known_optimum: float | None = None
    provenance: str | None = None
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mats = []
        for m in (self.F, self.D, self.C):
            a = np.array(m, dtype=float)
            a.setflags(write=False)
            mats.append(a)
        F, D, C = mats
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "C", C)
        n = F.shape[0]
        if n < 2 or any(m.shape != (n, n) for m in mats):
            raise ValueError(f"F, D, C must be square of equal size n >= 2, got {[m.shape for m in mats]}")
        if not all(np.isfinite(m).all() for m in mats):
            raise ValueError("instance matrices must be finite")
        if self.known_optimum is not None:
            if self.provenance not in PROVENANCES:
                raise ValueError(f"known_optimum needs a provenance in {PROVENANCES}")
            if self.provenance == "brute-force" and n > 10:
                raise ValueError("brute-force certificates are limited to n <= 10")

    @property
    def n(self) -> int:
        return self.F.shape[0]

    def with_optimum(self, value: float, provenance: str) -> "QapInstance":
        return QapInstance(self.F, self.D, self.C, float(value), provenance, self.name, dict(self.meta))

    def with_linear(self, C: np.ndarray) -> "QapInstance":
        return QapInstance(self.F, self.D, C, None, None, self.name, dict(self.meta))

    # the execution engine asks the problem whether a state has a given kind
    def to_json(self) -> str:
        return json.dumps({
            "format": "algodisc-qap-instance", "version": 1, "name": self.name, "n": self.n,
            "F": self.F.tolist(), "D": self.D.tolist(), "C": self.C.tolist(),
            "known_optimum": self.known_optimum, "provenance": self.provenance,
        })

    @classmethod
    def from_json(cls, text: str) -> "QapInstance":
        doc = json.loads(text)
        if doc.get("format") != "algodisc-qap-instance":
            raise ValueError("not a serialized QAP instance")
        return cls(np.array(doc["F"]), np.array(doc["D"]), np.array(doc["C"]),
                   doc.get("known_optimum"), doc.get("provenance"), doc.get("name", ""))


# ---------------------------------------------------------------------------
# permutations and doubly stochastic matrices


def perm_matrix(perm) -> np.ndarray:
    perm = np.asarray(perm)
    P = np.zeros((perm.size, perm.size))
    P[np.arange(perm.size), perm] = 1.0
    return P


def matrix_to_perm(P: np.ndarray) -> np.ndarray:
    """Mapping of a 0/1 permutation matrix; raises if ``P`` is not one."""
    P = np.asarray(P)
    perm = P.argmax(axis=1)
    if not (is_permutation(perm, P.shape[0]) and np.array_equal(P, perm_matrix(perm))):
        raise ValueError("matrix is not a permutation matrix")
    return perm


def is_permutation(perm, n: int | None = None) -> bool:
    perm = np.asarray(perm)
    n = perm.size if n is None else n
    return perm.ndim == 1 and perm.size == n and np.array_equal(np.sort(perm), np.arange(n))


def is_permutation_matrix(P: np.ndarray) -> bool:
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    if not np.all((P == 0) | (P == 1)):
        return False
    return bool(np.all(P.sum(0) == 1) and np.all(P.sum(1) == 1))


def is_doubly_stochastic(P: np.ndarray, tol: float = 1e-9) -> bool:
    P = np.asarray(P)
    return bool(P.ndim == 2 and P.shape[0] == P.shape[1]
                and P.min() >= -tol and P.max() <= 1 + tol
                and np.allclose(P.sum(0), 1, rtol=0, atol=tol)
                and np.allclose(P.sum(1), 1, rtol=0, atol=tol))


def random_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def swap(perm: np.ndarray, i: int, j: int) -> np.ndarray:
    y = perm.copy()
    y[i], y[j] = perm[j], perm[i]
    return y


def reverse(perm: np.ndarray, i: int, j: int) -> np.ndarray:
    """Path reversal: ``y[k] = x[j + i - k]`` for ``i <= k <= j``."""
    y = perm.copy()
    y[i:j + 1] = perm[i:j + 1][::-1]
    return y


# ---------------------------------------------------------------------------
# objective


def qap_loss(inst: QapInstance, P) -> float:
    """``Tr[F P D^T P^T + C P^T]`` for a mapping array or any n x n matrix."""
    P = np.asarray(P)
    if P.ndim == 1:
        if P.size != inst.n:
            raise ValueError(f"permutation of length {P.size} for n={inst.n}")
        return float((inst.F * inst.D[np.ix_(P, P)]).sum() + inst.C[np.arange(inst.n), P].sum())
    if P.shape != (inst.n, inst.n):
        raise ValueError(f"matrix shape {P.shape} for n={inst.n}")
    return float((inst.F * (P @ inst.D @ P.T)).sum() + (inst.C * P).sum())


def qap_gradient(inst: QapInstance, P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (inst.n, inst.n):
        raise ValueError(f"matrix shape {P.shape} for n={inst.n}")
    F, D = inst.F, inst.D
    return F @ P @ D.T + F.T @ P @ D + inst.C


def loss_batch(inst: QapInstance, perms: np.ndarray) -> np.ndarray:
    """Objective of every row of an (m, n) array of mappings."""
    perms = np.asarray(perms)
    Dp = inst.D[perms[:, :, None], perms[:, None, :]]
    quad = np.einsum("ij,mij->m", inst.F, Dp)
    lin = inst.C[np.arange(inst.n), perms].sum(axis=1)
    return quad + lin


# ---------------------------------------------------------------------------
# generators


def _gen_rng(kind: str, n: int, seed: int) -> np.random.Generator:
    tag = {"cqap": 1, "pqap": 2}[kind]
    return np.random.default_rng([tag, int(n), int(seed)])


def _relabel(F, D, C, rng):
    pf, pl = rng.permutation(F.shape[0]), rng.permutation(F.shape[0])
    return F[np.ix_(pf, pf)], D[np.ix_(pl, pl)], C[np.ix_(pf, pl)]


def _manhattan(points: np.ndarray) -> np.ndarray:
    return np.abs(points[:, None, :] - points[None, :, :]).sum(-1).astype(float)


def generate_cqap(n: int, seed: int) -> QapInstance:
    """Composite instance: dense flow blocks over clustered locations.

    Facilities are split into groups of 2-4 with strong intra-group flows and
    sparse weak flows between groups; locations form clusters of matching
    sizes on a grid.  Cluster spread and inter-group density vary with the
    seed.  All matrices are integer valued, F and D symmetric with zero
    diagonal, C = 0.
    """
    if n < 4:
        raise ValueError("CQAP instances need n >= 4")
    rng = _gen_rng("cqap", n, seed)
    sizes = []
    while sum(sizes) < n:
        sizes.append(int(min(rng.integers(2, 5), n - sum(sizes))))
    if sizes[-1] == 1:
        sizes[-2] += 1
        sizes.pop()
    spread = int(rng.integers(1, 4))
    density = float(rng.uniform(0.1, 0.5))
    side = int(np.ceil(np.sqrt(len(sizes))))
    gap = 3 * spread + 4
    points, group = [], []
    for g, s in enumerate(sizes):
        centre = np.array([g % side, g // side]) * gap
        taken = set()
        while len(taken) < s:
            off = tuple(rng.integers(-spread, spread + 1, size=2))
            if off not in taken:
                taken.add(off)
        points.extend(centre + np.array(sorted(taken)))
        group.extend([g] * s)
    D = _manhattan(np.array(points))
    group = np.array(group)
    same = group[:, None] == group[None, :]
    strong = rng.integers(5, 21, size=(n, n))
    weak = rng.integers(1, 4, size=(n, n)) * (rng.random((n, n)) < density)
    F = np.where(same, strong, weak).astype(float)
    F = np.triu(F, 1)
    F = F + F.T
    C = np.zeros((n, n))
    F, D, C = _relabel(F, D, C, rng)
    return QapInstance(F, D, C, name=f"cqap-n{n}-s{seed}", meta={"generator": "cqap", "seed": seed})


def generate_pqap(n: int, seed: int) -> QapInstance:
    """Instance with a certified optimum from a rearrangement construction.

    Distances are rectilinear between random grid points and every flow is a
    strictly decreasing function of the corresponding distance, so each
    facility's flows are oppositely ordered to its own location's distances.
    The identity then attains the row-wise minimal scalar products that make
    up the Gilmore-Lawler bound; a nonnegative linear term lifts every other
    entry of the bound's assignment matrix to at least the diagonal, which
    makes the bound tight and the identity optimal.  Facilities and locations
    are relabelled afterwards.
    """
    if n < 4:
        raise ValueError("PQAP instances need n >= 4")
    rng = _gen_rng("pqap", n, seed)
    side = int(np.ceil(np.sqrt(n))) + 2
    cells = rng.choice(side * side, size=n, replace=False)
    D = _manhattan(np.stack([cells % side, cells // side], axis=1))
    values = np.unique(D[~np.eye(n, dtype=bool)])
    steps = rng.integers(1, 6, size=values.size)
    flows = np.cumsum(steps[::-1])[::-1] - steps[-1]  # decreasing, largest distance -> 0
    F = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    F[off] = flows[np.searchsorted(values, D[off])]
    row_bound = _row_bounds(F, D)
    C = np.maximum(0.0, np.diag(row_bound)[:, None] - row_bound)
    np.fill_diagonal(C, 0.0)
    optimum = float((F * D).sum())
    F, D, C = _relabel(F, D, C, rng)
    return QapInstance(F, D, C, optimum, "generator", name=f"pqap-n{n}-s{seed}",
                       meta={"generator": "pqap", "seed": seed})


def _row_bounds(F: np.ndarray, D: np.ndarray) -> np.ndarray:
    """``l[i, k]``: minimal scalar product of row i of F and row k of D, diagonals excluded."""
    n = F.shape[0]
    off = ~np.eye(n, dtype=bool)
    f = -np.sort(-F[off].reshape(n, n - 1), axis=1)
    d = np.sort(D[off].reshape(n, n - 1), axis=1)
    return f @ d.T + np.outer(np.diag(F), np.diag(D))


# ---------------------------------------------------------------------------
# QAPLIB


def parse_qaplib(text: str, name: str = "") -> QapInstance:
    """Read ``n`` followed by the n x n matrices A (flow) and B (distance)."""
    toks = text.split()
    if not toks:
        raise ValueError("empty QAPLIB text")
    vals = []
    for k, t in enumerate(toks):
        try:
            vals.append(float(t))
        except ValueError:
            raise ValueError(f"non-numeric token {t!r} at offset {k}") from None
    n = vals[0]
    if n != int(n) or n < 2:
        raise ValueError(f"invalid size {toks[0]!r} at offset 0")
    n = int(n)
    need = 1 + 2 * n * n
    if len(vals) != need:
        raise ValueError(f"expected {need} numbers for n={n} (1 + 2*{n}*{n}), found {len(vals)}; "
                         f"missing {need - len(vals)}" if len(vals) < need else
                         f"expected {need} numbers for n={n}, found {len(vals)} (extra {len(vals) - need})")
    A = np.array(vals[1:1 + n * n]).reshape(n, n)
    B = np.array(vals[1 + n * n:]).reshape(n, n)
    return QapInstance(A, B, np.zeros((n, n)), name=name)


def write_qaplib(inst: QapInstance) -> str:
    if np.any(inst.C != 0):
        raise ValueError("QAPLIB layout has no linear term")

    def fmt(M):
        return "\n".join(" ".join(_num(x) for x in row) for row in M)

    return f"{inst.n}\n\n{fmt(inst.F)}\n\n{fmt(inst.D)}\n"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def parse_qaplib_solution(text: str) -> tuple[int, float, np.ndarray]:
    """QAPLIB ``.sln`` layout: ``n value`` then the 1-based permutation."""
    toks = text.split()
    n, value = int(toks[0]), float(toks[1])
    perm = np.array([int(t) - 1 for t in toks[2:2 + n]])
    if not is_permutation(perm, n):
        raise ValueError("solution is not a permutation")
    return n, value, perm
