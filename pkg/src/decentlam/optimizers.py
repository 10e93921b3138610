"""Single-step transition functions for the decentralized momentum SGD family.

Every stepper takes the stacked node state, the problem, the mixing matrix (or
a ``k -> W_k`` provider), a :class:`GradientSpec` and a seed, and returns a new
state advanced by exactly one iteration. Node ``i`` at iteration ``k`` always
draws its gradient with key ``(seed, i, k)`` so different algorithms see the
same noise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InvalidSchedule
from .problems import GradMode, stacked_gradient
from .topology import WeightMatrix, matrix_sqrt, mixing_at

__all__ = [
    "GradientSpec",
    "OptimizerState",
    "SDomainState",
    "init_state",
    "init_sdomain_state",
    "step_psgd_momentum",
    "step_dsgd",
    "step_awc_dsgd",
    "step_dmsgd",
    "step_dmsgd_reformulated",
    "step_decentlam",
    "step_decentlam_reformulated",
    "step_decentlam_sdomain",
    "step_da_dmsgd",
    "step_awc_dmsgd",
    "STEPPERS",
    "ScheduleKind",
    "make_schedule",
]


@dataclass(frozen=True)
class GradientSpec:
    mode: GradMode = GradMode.FULL
    batch_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", GradMode.parse(self.mode))


FULL_BATCH = GradientSpec()


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Stacked node models ``x`` and momenta ``m`` (both ``n x d``) at iteration ``k``.

    ``x_prev`` holds ``x`` of iteration ``k - 1`` for the reformulated steppers.
    """

    x: np.ndarray
    m: np.ndarray
    x_prev: np.ndarray
    k: int
    gamma: float
    beta: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"learning rate must be positive, got {self.gamma}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"momentum must satisfy 0 <= beta < 1, got {self.beta}")


def init_state(x0: np.ndarray, gamma: float, beta: float = 0.0) -> OptimizerState:
    x0 = np.array(x0, dtype=np.float64)
    return OptimizerState(x=x0, m=np.zeros_like(x0), x_prev=x0, k=0, gamma=gamma, beta=beta)


@dataclass(frozen=True, eq=False)
class SDomainState:
    """DecentLaM iterate in the ``x = W^{1/2} s`` coordinates."""

    s: np.ndarray
    m_s: np.ndarray
    w_half: np.ndarray
    k: int
    gamma: float
    beta: float

    @property
    def x(self) -> np.ndarray:
        return self.w_half @ self.s


def init_sdomain_state(x0: np.ndarray, w: WeightMatrix, gamma: float, beta: float = 0.0) -> SDomainState:
    """Map ``x0`` to ``s0 = W^{-1/2} x0``; raises ``NotPositiveDefinite`` when ``W`` is not."""
    w_half = matrix_sqrt(w)
    s0 = np.linalg.solve(w_half, np.asarray(x0, dtype=np.float64))
    return SDomainState(s=s0, m_s=np.zeros_like(s0), w_half=w_half, k=0, gamma=gamma, beta=beta)


def _grads(problem, x, spec, seed, k):
    return stacked_gradient(problem, x, spec.mode, spec.batch_size, seed, k)


def _advance(state, x, m, **extra):
    return replace(state, x=x, m=m, x_prev=state.x, k=state.k + 1, **extra)


def step_psgd_momentum(state, problem, w=None, spec=FULL_BATCH, seed=0):
    """Parallel momentum SGD: every node applies the globally averaged gradient.

    ``w`` is ignored; it is accepted so all steppers share one signature.
    """
    n = state.x.shape[0]
    shared = state.x.mean(axis=0)
    tiled = np.broadcast_to(shared, state.x.shape)
    g = _grads(problem, tiled, spec, seed, state.k).mean(axis=0)
    m = state.beta * state.m.mean(axis=0) + g
    x = shared - state.gamma * m
    return _advance(state, np.tile(x, (n, 1)), np.tile(m, (n, 1)))


def step_dsgd(state, problem, w, spec=FULL_BATCH, seed=0):
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    return _advance(state, W @ (state.x - state.gamma * g), state.m)


def step_awc_dsgd(state, problem, w, spec=FULL_BATCH, seed=0):
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    return _advance(state, W @ state.x - state.gamma * g, state.m)


def step_dmsgd(state, problem, w, spec=FULL_BATCH, seed=0):
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    m = state.beta * state.m + g
    return _advance(state, W @ (state.x - state.gamma * m), m)


def step_dmsgd_reformulated(state, problem, w, spec=FULL_BATCH, seed=0):
    """DmSGD as ``x+ = W(x - gamma g) + beta (x - W x_prev)``.

    The first step has no history and reproduces the momentum-form step
    exactly (a plain DSGD step, since ``m = 0``). Momentum is not tracked.
    """
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    x = W @ (state.x - state.gamma * g)
    if state.k > 0:
        x = x + state.beta * (state.x - W @ state.x_prev)
    return _advance(state, x, state.m)


def step_decentlam(state, problem, w, spec=FULL_BATCH, seed=0):
    """DecentLaM: momentum on the corrected gradient ``(x - W(x - gamma g)) / gamma``."""
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    g_tilde = (state.x - W @ (state.x - state.gamma * g)) / state.gamma
    m = state.beta * state.m + g_tilde
    return _advance(state, state.x - state.gamma * m, m)


def step_decentlam_reformulated(state, problem, w, spec=FULL_BATCH, seed=0):
    """DecentLaM as ``x+ = W(x - gamma g) + beta (x - x_prev)``; requires a constant ``gamma``."""
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    x = W @ (state.x - state.gamma * g) + state.beta * (state.x - state.x_prev)
    return _advance(state, x, state.m)


def step_decentlam_sdomain(state: SDomainState, problem, w, spec=FULL_BATCH, seed=0) -> SDomainState:
    """Heavy-ball step on ``f(W^{1/2} s) + ||s||^2_{I-W} / (2 gamma)``."""
    W = mixing_at(w, state.k)
    x = state.w_half @ state.s
    g = _grads(problem, x, spec, seed, state.k)
    g_s = state.w_half @ g + (state.s - W @ state.s) / state.gamma
    m_s = state.beta * state.m_s + g_s
    return replace(state, s=state.s - state.gamma * m_s, m_s=m_s, k=state.k + 1)


def step_da_dmsgd(state, problem, w, spec=FULL_BATCH, seed=0):
    """DmSGD with the momentum buffer partially averaged right after its update."""
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    m = W @ (state.beta * state.m + g)
    return _advance(state, W @ (state.x - state.gamma * m), m)


def step_awc_dmsgd(state, problem, w, spec=FULL_BATCH, seed=0):
    """Adapt-with-combine DmSGD: ``x+ = W x - gamma m+``."""
    W = mixing_at(w, state.k)
    g = _grads(problem, state.x, spec, seed, state.k)
    m = state.beta * state.m + g
    return _advance(state, W @ state.x - state.gamma * m, m)


STEPPERS: dict[str, Callable] = {
    "psgd": step_psgd_momentum,
    "dsgd": step_dsgd,
    "awc_dsgd": step_awc_dsgd,
    "dmsgd": step_dmsgd,
    "dmsgd_reform": step_dmsgd_reformulated,
    "decentlam": step_decentlam,
    "decentlam_reform": step_decentlam_reformulated,
    "da_dmsgd": step_da_dmsgd,
    "awc_dmsgd": step_awc_dmsgd,
}


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    INVERSE_TIME = "inverse_time"
    STEP_DECAY = "step_decay"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"constant": cls.CONSTANT, "inverse_time": cls.INVERSE_TIME, "inversetime": cls.INVERSE_TIME,
                   "step_decay": cls.STEP_DECAY, "stepdecay": cls.STEP_DECAY}
        try:
            return aliases[key]
        except KeyError:
            raise InvalidSchedule(f"unknown schedule kind {value!r}") from None


def make_schedule(kind, gamma0: float, k0: float = 1.0, factor: float = 0.1, period: int = 1):
    """Learning-rate schedule ``k -> gamma_k``.

    constant: ``gamma0``; inverse_time: ``gamma0 / (1 + k / k0)``;
    step_decay: ``gamma0 * factor ** (k // period)``.
    """
    kind = ScheduleKind.parse(kind)
    if not gamma0 > 0:
        raise InvalidSchedule(f"gamma0 must be positive, got {gamma0}")
    if kind is ScheduleKind.CONSTANT:
        return lambda k: gamma0
    if kind is ScheduleKind.INVERSE_TIME:
        if not k0 > 0:
            raise InvalidSchedule(f"k0 must be positive, got {k0}")
        return lambda k: gamma0 / (1.0 + k / k0)
    if not 0 < factor < 1:
        raise InvalidSchedule(f"decay factor must lie in (0, 1), got {factor}")
    if int(period) < 1:
        raise InvalidSchedule(f"period must be >= 1, got {period}")
    period = int(period)
    return lambda k: gamma0 * factor ** (k // period)

