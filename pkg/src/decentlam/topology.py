"""Network topologies, Metropolis-Hastings mixing matrices and their spectra.

Weight matrices are dense ``n x n`` numpy arrays wrapped in
:class:`WeightMatrix`, which lazily computes the symmetric eigendecomposition
with a cyclic Jacobi sweep (see :func:`jacobi_eigh`).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import DisconnectedGraph, InvalidNodeCount, NotPositiveDefinite

__all__ = [
    "TopologyKind",
    "Graph",
    "WeightMatrix",
    "ValidationReport",
    "build_topology",
    "metropolis_weights",
    "spectral_rho",
    "validate_weight_matrix",
    "matrix_sqrt",
    "jacobi_eigh",
    "weight_provider",
    "mixing_at",
]


class TopologyKind(str, enum.Enum):
    RING = "ring"
    MESH = "mesh"
    SYM_EXP = "sym-exp"
    BIPARTITE = "bipartite"
    FULL = "full"

    @classmethod
    def parse(cls, value: "str | TopologyKind") -> "TopologyKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "ring": cls.RING,
            "mesh": cls.MESH,
            "grid": cls.MESH,
            "sym-exp": cls.SYM_EXP,
            "symexp": cls.SYM_EXP,
            "exponential": cls.SYM_EXP,
            "symmetric-exponential": cls.SYM_EXP,
            "bipartite": cls.BIPARTITE,
            "bipartite-random-match": cls.BIPARTITE,
            "full": cls.FULL,
            "complete": cls.FULL,
            "fully-connected": cls.FULL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown topology kind {value!r}") from None


_MIN_NODES = {
    TopologyKind.RING: 2,
    TopologyKind.MESH: 4,
    TopologyKind.SYM_EXP: 2,
    TopologyKind.BIPARTITE: 2,
    TopologyKind.FULL: 2,
}


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``; edges stored as ``(i, j)`` with ``i < j``."""

    n: int
    edges: frozenset
    kind: TopologyKind
    time_varying: bool = False

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


def _ring_edges(n):
    return {_edge(i, (i + 1) % n) for i in range(n) if i != (i + 1) % n}


def _mesh_edges(n):
    # r x c grid filled row-major, last row possibly short, 4-neighbourhood
    rows = math.isqrt(n)
    cols = -(-n // rows)
    edges = set()
    for i in range(n):
        if (i % cols) + 1 < cols and i + 1 < n:
            edges.add(_edge(i, i + 1))
        if i + cols < n:
            edges.add(_edge(i, i + cols))
    return edges


def _sym_exp_edges(n):
    edges = set()
    hops = int(math.floor(math.log2(n - 1))) if n > 2 else 0
    for i in range(n):
        for j in range(hops + 1):
            k = (i + 2**j) % n
            if k != i:
                edges.add(_edge(i, k))
    return edges


def _full_edges(n):
    return {(i, j) for i in range(n) for j in range(i + 1, n)}


def _matching_edges(n, seed, iteration):
    from .problems import stream  # local import avoids a module cycle

    perm = stream(seed, "topology", 0, iteration).permutation(n)
    return {_edge(int(perm[2 * t]), int(perm[2 * t + 1])) for t in range(n // 2)}


def build_topology(
    kind: "str | TopologyKind", n: int, seed: int = 0, iteration: int = 0
) -> Graph:
    """Construct the communication graph of the requested kind.

    ``seed`` and ``iteration`` only matter for the bipartite random match,
    which draws a fresh random pairing for every ``(seed, iteration)``.
    """
    kind = TopologyKind.parse(kind)
    if n < _MIN_NODES[kind]:
        raise InvalidNodeCount(f"{kind.value} topology needs n >= {_MIN_NODES[kind]}, got {n}")
    if kind is TopologyKind.RING:
        edges = _ring_edges(n)
    elif kind is TopologyKind.MESH:
        edges = _mesh_edges(n)
    elif kind is TopologyKind.SYM_EXP:
        edges = _sym_exp_edges(n)
    elif kind is TopologyKind.FULL:
        edges = _full_edges(n)
    else:
        edges = _matching_edges(n, seed, iteration)
    return Graph(n=n, edges=frozenset(edges), kind=kind, time_varying=kind is TopologyKind.BIPARTITE)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 64):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * ||a||_F``. Returns ``(eigenvalues, eigenvectors)`` with the
    eigenvalues sorted in descending order and eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh expects a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 0 or scale == 0.0:
        return np.zeros(n), v
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if math.sqrt(np.sum(a[off_mask] ** 2)) < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi eigendecomposition did not converge")
    evals = np.diag(a).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], v[:, order]


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric doubly-stochastic mixing matrix with lazily computed spectrum."""

    w: np.ndarray
    graph: Graph | None = field(default=None, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weight matrix must be square")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @cached_property
    def _eigh(self):
        evals, evecs = jacobi_eigh(self.w)
        # eigenvalues below the attainable accuracy of the sweep are exact zeros
        floor = 4.0 * self.n * np.finfo(float).eps * max(1.0, float(np.abs(evals).max()))
        evals = np.where(np.abs(evals) <= floor, 0.0, evals)
        return evals, evecs

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigh[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigh[1]

    @property
    def rho(self) -> float:
        return spectral_rho(self)


def metropolis_weights(g: Graph) -> WeightMatrix:
    """Metropolis-Hastings weights: ``1 / (1 + max(deg_i, deg_j))`` on edges, self weight by deficiency."""
    if not g.time_varying and not g.is_connected():
        raise DisconnectedGraph(f"{g.kind.value} graph on {g.n} nodes is not connected")
    deg = g.degrees()
    w = np.zeros((g.n, g.n))
    for i, j in sorted(g.edges):
        wij = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, j] = wij
        w[j, i] = wij
    for i in range(g.n):
        # ascending neighbour order keeps the sum reproducible
        w[i, i] = 1.0 - math.fsum(w[i, j] for j in range(g.n) if j != i)
    return WeightMatrix(w, graph=g)


def spectral_rho(w: "WeightMatrix | np.ndarray") -> float:
    """Return ``max(|lambda_2|, |lambda_n|)`` of a symmetric mixing matrix."""
    if not isinstance(w, WeightMatrix):
        w = WeightMatrix(w)
    evals = w.eigenvalues
    if len(evals) < 2:
        return 0.0
    return float(max(abs(evals[1]), abs(evals[-1])))


@dataclass
class ValidationReport:
    checks: dict  # name -> (passed, max violation)
    tol: float

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def __str__(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'} {name} (max violation {viol:.3e})"
                 for name, (ok, viol) in self.checks.items()]
        return "\n".join(lines)


def validate_weight_matrix(w: "WeightMatrix | np.ndarray", tol: float = 1e-12) -> ValidationReport:
    """Check symmetry, stochasticity, sparsity pattern and the spectral bounds of ``w``.

    The sparsity check runs only when ``w`` carries the graph it was built from.
    """
    wm = w if isinstance(w, WeightMatrix) else WeightMatrix(w)
    a = wm.w
    n = wm.n
    checks = {}
    sym = float(np.max(np.abs(a - a.T))) if n else 0.0
    checks["symmetric"] = (sym <= tol, sym)
    rows = float(np.max(np.abs(a.sum(axis=1) - 1.0))) if n else 0.0
    checks["row_sums"] = (rows <= tol, rows)
    cols = float(np.max(np.abs(a.sum(axis=0) - 1.0))) if n else 0.0
    checks["column_sums"] = (cols <= tol, cols)
    neg = float(max(0.0, -a.min())) if n else 0.0
    checks["nonnegative"] = (neg <= tol, neg)
    if wm.graph is not None:
        pattern = wm.graph.adjacency() | np.eye(n, dtype=bool)
        # isolated nodes of a matching keep a positive self weight as well
        wrong_zero = float(np.max(np.where(pattern, (a <= 0).astype(float), 0.0)))
        stray = float(np.max(np.where(pattern, 0.0, np.abs(a))))
        checks["sparsity"] = (wrong_zero == 0.0 and stray == 0.0, max(wrong_zero, stray))
    if sym <= 1e-8:
        evals = wm.eigenvalues
        top = abs(evals[0] - 1.0)
        checks["lambda_1"] = (top <= max(tol, 1e-10), top)
        spread = float(max(0.0, np.abs(evals).max() - 1.0))
        checks["eigen_bound"] = (spread <= max(tol, 1e-10), spread)
    return ValidationReport(checks=checks, tol=tol)


def matrix_sqrt(w: "WeightMatrix | np.ndarray", tol_pd: float = 1e-10) -> np.ndarray:
    """Symmetric square root ``U diag(sqrt(lambda)) U^T`` of a positive-definite mixing matrix.

    Pass a negative ``tol_pd`` to accept positive-semidefinite input such as
    the exact averaging projector; eigenvalues are clipped at zero.
    """
    wm = w if isinstance(w, WeightMatrix) else WeightMatrix(w)
    evals, evecs = wm._eigh
    if evals[-1] <= tol_pd:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {evals[-1]:.3e} <= {tol_pd:.1e}; W^(1/2) unavailable"
        )
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return 0.5 * (root + root.T)


WeightSource = Union[WeightMatrix, Callable[[int], WeightMatrix]]


def weight_provider(kind: "str | TopologyKind", n: int, seed: int = 0) -> WeightSource:
    """Mixing matrices for a topology: a fixed :class:`WeightMatrix`, or ``k -> W_k`` if time-varying."""
    kind = TopologyKind.parse(kind)
    if kind is not TopologyKind.BIPARTITE:
        return metropolis_weights(build_topology(kind, n, seed))

    def provider(k: int) -> WeightMatrix:
        return metropolis_weights(build_topology(kind, n, seed, iteration=k))

    provider.time_varying = True
    return provider


def mixing_at(w: WeightSource, k: int) -> np.ndarray:
    """Dense mixing matrix in force at iteration ``k``."""
    if isinstance(w, WeightMatrix):
        return w.w
    if isinstance(w, np.ndarray):
        return w
    return w(k).w
