"""Distributed least-squares problems and their gradient oracles.

Node ``i`` holds ``f_i(x) = 0.5 * ||A_i x - b_i||^2``; the global objective is
the node average. All randomness comes from counter-based Philox streams keyed
by ``(seed, purpose, node, iteration)`` so any draw can be reproduced without
replaying the ones before it.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import BadBatchSize, DimensionMismatch, SingularNormalEquations

__all__ = [
    "GradMode",
    "Problem",
    "GradientSample",
    "stream",
    "generate_regression",
    "full_gradient",
    "stacked_full_gradient",
    "stochastic_gradient",
    "stacked_gradient",
    "heterogeneity_metrics",
    "save_problem",
    "load_problem",
]

_PURPOSES = {
    "design": 1,
    "reference": 2,
    "shift": 3,
    "noise": 4,
    "grad-noise": 5,
    "minibatch": 6,
    "topology": 7,
}

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: str, node: int = 0, iteration: int = 0) -> np.random.Generator:
    """Independent generator for one ``(seed, purpose, node, iteration)`` key.

    The key selects a Philox counter block; the low counter word is left at
    zero so a single draw can consume up to 2**64 blocks without touching a
    neighbouring key.
    """
    counter = [0, _PURPOSES[purpose], node & _MASK64, iteration & _MASK64]
    key = [seed & _MASK64, (seed >> 64) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class GradMode(str, enum.Enum):
    FULL = "full"
    ADDITIVE = "additive"
    MINIBATCH = "minibatch"

    @classmethod
    def parse(cls, value: "str | GradMode") -> "GradMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "full": cls.FULL,
            "full-batch": cls.FULL,
            "fullbatch": cls.FULL,
            "additive": cls.ADDITIVE,
            "additive-noise": cls.ADDITIVE,
            "additivenoise": cls.ADDITIVE,
            "minibatch": cls.MINIBATCH,
            "mini-batch": cls.MINIBATCH,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown gradient mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class Problem:
    """Per-node least-squares data plus derived constants.

    ``A`` has shape ``(n, m, d)`` and ``b`` shape ``(n, m)``. ``x_star`` is the
    minimiser of the average objective, ``b_sq`` the heterogeneity
    ``(1/n) sum ||grad f_i(x_star)||^2``, ``L`` the largest per-node curvature
    and ``mu`` the smallest curvature of the average objective.
    """

    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    b_sq: float
    L: float
    mu: float
    sigma_sq: float = 0.0
    hetero: float | None = None
    noise_mag: float | None = None
    seed: int | None = None
    _AtA: np.ndarray = field(default=None, repr=False)
    _Atb: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        return self.A.shape[2]

    @classmethod
    def from_data(
        cls,
        A: Sequence[np.ndarray] | np.ndarray,
        b: Sequence[np.ndarray] | np.ndarray,
        sigma_sq: float = 0.0,
        *,
        hetero: float | None = None,
        noise_mag: float | None = None,
        seed: int | None = None,
    ) -> "Problem":
        A = np.array(A, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        if A.ndim == 2:
            A = A[:, :, None]
        if A.ndim != 3 or b.shape != A.shape[:2]:
            raise DimensionMismatch(f"A {A.shape} and b {b.shape} are not compatible")
        n, m, d = A.shape
        if m < d:
            warnings.warn(f"rows per node m={m} < dimension d={d}; local problems are underdetermined")
        AtA = np.einsum("imd,ime->ide", A, A)
        Atb = np.einsum("imd,im->id", A, b)
        hess = AtA.sum(axis=0)
        spectrum = np.linalg.eigvalsh(hess)
        if spectrum[0] <= 0 or spectrum[-1] / spectrum[0] > 1e12:
            raise SingularNormalEquations(
                f"normal equations are singular or ill-conditioned (eigenvalues {spectrum[0]:.3e}..{spectrum[-1]:.3e})"
            )
        x_star = scipy.linalg.cho_solve(scipy.linalg.cho_factor(hess), Atb.sum(axis=0))
        local = AtA @ x_star - Atb
        b_sq = float(np.mean(np.sum(local**2, axis=1)))
        L = float(max(np.linalg.eigvalsh(AtA[i])[-1] for i in range(n)))
        mu = float(spectrum[0] / n)
        for arr in (A, b, x_star, AtA, Atb):
            arr.setflags(write=False)
        return cls(
            A=A, b=b, x_star=x_star, b_sq=b_sq, L=L, mu=mu, sigma_sq=float(sigma_sq),
            hetero=hetero, noise_mag=noise_mag, seed=seed, _AtA=AtA, _Atb=Atb,
        )

    def loss(self, x: np.ndarray) -> float:
        r = self.A @ x - self.b
        return float(0.5 * np.mean(np.sum(r**2, axis=1)))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean(self._AtA @ x - self._Atb, axis=0)


def generate_regression(
    n: int,
    d: int,
    m: int,
    hetero: float = 0.01,
    noise_mag: float = 0.01,
    seed: int = 0,
    sigma_sq: float = 0.0,
) -> Problem:
    """Random regression instance ``b_i = A_i (x_ref + hetero * u_i) + noise_mag * s_i``.

    The shifts ``u_i`` are centred across nodes so the global minimiser stays
    close to the shared reference solution.
    """
    if n < 1 or d < 1 or m < 1:
        raise DimensionMismatch("n, d and m must all be positive")
    if hetero < 0 or noise_mag < 0 or sigma_sq < 0:
        raise ValueError("hetero, noise_mag and sigma_sq must be non-negative")
    A = np.stack([stream(seed, "design", i).standard_normal((m, d)) for i in range(n)])
    x_ref = stream(seed, "reference").standard_normal(d)
    shifts = np.stack([stream(seed, "shift", i).standard_normal(d) for i in range(n)])
    shifts -= shifts.mean(axis=0)
    noise = np.stack([stream(seed, "noise", i).standard_normal(m) for i in range(n)])
    b = np.einsum("imd,id->im", A, x_ref + hetero * shifts) + noise_mag * noise
    return Problem.from_data(A, b, sigma_sq, hetero=hetero, noise_mag=noise_mag, seed=seed)


def _check_node(p: Problem, node: int, x: np.ndarray) -> np.ndarray:
    if not 0 <= node < p.n:
        raise IndexError(f"node {node} outside 0..{p.n - 1}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d,):
        raise DimensionMismatch(f"expected a vector of length {p.d}, got shape {x.shape}")
    return x


def full_gradient(p: Problem, node: int, x: np.ndarray) -> np.ndarray:
    """Exact local gradient ``A_i^T (A_i x - b_i)``."""
    x = _check_node(p, node, x)
    a = p.A[node]
    return a.T @ (a @ x - p.b[node])


def stacked_full_gradient(p: Problem, X: np.ndarray) -> np.ndarray:
    """Row ``i`` is ``full_gradient(p, i, X[i])``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (p.n, p.d):
        raise DimensionMismatch(f"expected shape {(p.n, p.d)}, got {X.shape}")
    return np.stack([full_gradient(p, i, X[i]) for i in range(p.n)])


@dataclass(frozen=True)
class GradientSample:
    node: int
    value: np.ndarray
    mode: GradMode
    batch_size: int | None = None


def stochastic_gradient(
    p: Problem,
    node: int,
    x: np.ndarray,
    mode: "str | GradMode" = GradMode.ADDITIVE,
    batch_size: int = 1,
    seed: int = 0,
    iteration: int = 0,
) -> GradientSample:
    """Draw one gradient sample for ``node`` at ``x``.

    Additive mode returns the exact gradient plus isotropic Gaussian noise with
    ``E||z||^2 = sigma_sq / batch_size``. Minibatch mode rescales the gradient
    of a uniformly drawn row subset by ``m / batch_size``.
    """
    mode = GradMode.parse(mode)
    x = _check_node(p, node, x)
    if mode is GradMode.FULL:
        return GradientSample(node, full_gradient(p, node, x), mode)
    if batch_size < 1 or (mode is GradMode.MINIBATCH and batch_size > p.m):
        raise BadBatchSize(f"batch_size {batch_size} outside 1..{p.m}")
    if mode is GradMode.ADDITIVE:
        g = full_gradient(p, node, x)
        if p.sigma_sq > 0:
            scale = math.sqrt(p.sigma_sq / (batch_size * p.d))
            g = g + scale * stream(seed, "grad-noise", node, iteration).standard_normal(p.d)
        return GradientSample(node, g, mode, batch_size)
    rows = np.sort(stream(seed, "minibatch", node, iteration).choice(p.m, size=batch_size, replace=False))
    a = p.A[node][rows]
    g = a.T @ (a @ x - p.b[node][rows])
    if batch_size != p.m:
        g = g * (p.m / batch_size)
    return GradientSample(node, g, mode, batch_size)


def stacked_gradient(
    p: Problem,
    X: np.ndarray,
    mode: "str | GradMode" = GradMode.FULL,
    batch_size: int = 1,
    seed: int = 0,
    iteration: int = 0,
) -> np.ndarray:
    """Stack per-node gradient draws for iteration ``iteration`` into an ``n x d`` matrix."""
    mode = GradMode.parse(mode)
    if mode is GradMode.FULL:
        return stacked_full_gradient(p, X)
    return np.stack(
        [stochastic_gradient(p, i, X[i], mode, batch_size, seed, iteration).value for i in range(p.n)]
    )


def heterogeneity_metrics(p: Problem, x: np.ndarray) -> tuple[float, float]:
    """Return ``(b^2 at x_star, b_hat^2 at x)``."""
    x = np.asarray(x, dtype=np.float64)
    at_star = p._AtA @ p.x_star - p._Atb
    b_sq = float(np.mean(np.sum(at_star**2, axis=1)))
    local = p._AtA @ x - p._Atb
    dev = local - local.mean(axis=0)
    return b_sq, float(np.mean(np.sum(dev**2, axis=1)))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def save_problem(p: Problem, path: "str | Path") -> None:
    """Write the instance as decimal text (17 significant digits, round-trips exactly)."""
    lines = ["# decentlam problem v1"]
    header = dict(n=p.n, d=p.d, m=p.m, hetero=p.hetero, noise_mag=p.noise_mag,
                  sigma_sq=p.sigma_sq, seed=p.seed)
    lines += [f"{k}={_fmt(v)}" for k, v in header.items()]
    for i in range(p.n):
        lines.append(f"A {i}")
        lines += [" ".join(_fmt(v) for v in row) for row in p.A[i]]
        lines.append(f"b {i}")
        lines.append(" ".join(_fmt(v) for v in p.b[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_problem(path: "str | Path") -> Problem:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    it = iter(line for line in text if line and not line.startswith("#"))
    header = {}
    for key in ("n", "d", "m", "hetero", "noise_mag", "sigma_sq", "seed"):
        name, _, value = next(it).partition("=")
        if name.strip() != key:
            raise ValueError(f"expected header field {key!r}, found {name!r}")
        header[key] = None if value == "none" else value
    n, d, m = (int(header[k]) for k in ("n", "d", "m"))
    A = np.empty((n, m, d))
    b = np.empty((n, m))
    for i in range(n):
        if next(it) != f"A {i}":
            raise ValueError(f"missing block 'A {i}'")
        for r in range(m):
            A[i, r] = [float(v) for v in next(it).split()]
        if next(it) != f"b {i}":
            raise ValueError(f"missing block 'b {i}'")
        b[i] = [float(v) for v in next(it).split()]
    opt = lambda k, f: None if header[k] is None else f(header[k])  # noqa: E731
    return Problem.from_data(
        A, b, float(header["sigma_sq"]),
        hetero=opt("hetero", float), noise_mag=opt("noise_mag", float), seed=opt("seed", int),
    )
