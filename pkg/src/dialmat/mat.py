"""Moment-based adversarial perturbation updates.

A perturbation delta lives in a model's latent space and is pushed *up* the
loss surface: Adam-style first/second moment estimates of the gradient give a
step direction, the step is rescaled to unit Frobenius norm, and the result
is projected back onto the Frobenius ball of radius ``eps_ball``.

All update functions are pure: they return a new ``PerturbationState`` and
leave their input untouched, so a reader never observes a half-applied step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np


class InvalidHyperParams(ValueError):
    pass


class NonFiniteGradient(ValueError):
    pass


@dataclass(frozen=True)
class MatHyperParams:
    rho1: float = 0.9
    rho2: float = 0.999
    eta: float = 1e-3
    eps_ball: float = 0.1
    eps_div: float = 1e-8
    step_norm_floor: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.rho1 < 1.0:
            raise InvalidHyperParams(f"rho1 must lie in [0, 1), got {self.rho1}")
        if not 0.0 <= self.rho2 < 1.0:
            raise InvalidHyperParams(f"rho2 must lie in [0, 1), got {self.rho2}")
        if not self.eta > 0:
            raise InvalidHyperParams(f"eta must be positive, got {self.eta}")
        if not self.eps_ball > 0:
            raise InvalidHyperParams(f"eps_ball must be positive, got {self.eps_ball}")
        if not self.eps_div > 0:
            raise InvalidHyperParams(f"eps_div must be positive, got {self.eps_div}")
        if not self.step_norm_floor >= 0:
            raise InvalidHyperParams(f"step_norm_floor must be >= 0, got {self.step_norm_floor}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class PerturbationState:
    delta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    hp: MatHyperParams = field(default_factory=MatHyperParams)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.delta.shape

    def arrays(self) -> dict[str, np.ndarray]:
        return {"delta": self.delta, "m": self.m, "v": self.v,
                "t": np.array(self.t, dtype=np.int64)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], hp: MatHyperParams) -> PerturbationState:
        return cls(delta=np.array(arrays["delta"], dtype=np.float64),
                   m=np.array(arrays["m"], dtype=np.float64),
                   v=np.array(arrays["v"], dtype=np.float64),
                   t=int(arrays["t"]), hp=hp)


def init_perturbation(shape, hp: MatHyperParams | None = None) -> PerturbationState:
    hp = MatHyperParams() if hp is None else hp
    if not isinstance(hp, MatHyperParams):
        raise InvalidHyperParams(f"expected MatHyperParams, got {type(hp).__name__}")
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"invalid perturbation shape {shape}")
    z = np.zeros(shape)
    return PerturbationState(delta=z, m=z.copy(), v=z.copy(), t=0, hp=hp)


def _check_shape(state: PerturbationState, arr: np.ndarray, what: str) -> None:
    if arr.shape != state.delta.shape:
        raise ValueError(f"{what} shape {arr.shape} does not match perturbation shape {state.delta.shape}")


def accumulate_moments(state: PerturbationState, grad) -> PerturbationState:
    g = np.asarray(grad, dtype=np.float64)
    _check_shape(state, g, "gradient")
    if not np.all(np.isfinite(g)):
        bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
        raise NonFiniteGradient(f"gradient has {bad} non-finite entries")
    hp = state.hp
    m = hp.rho1 * state.m + (1.0 - hp.rho1) * g
    with np.errstate(over="ignore"):
        v = hp.rho2 * state.v + (1.0 - hp.rho2) * (g * g)
    if not np.all(np.isfinite(v)):
        raise NonFiniteGradient("squared gradient overflows the second moment")
    return dataclasses.replace(state, m=m, v=v, t=state.t + 1)


def compute_step(state: PerturbationState) -> np.ndarray:
    """Bias-corrected moment step ``eta * m_hat / sqrt(v_hat + eps_div)``."""
    if state.t < 1:
        raise ValueError("compute_step needs at least one accumulated gradient (t >= 1)")
    hp = state.hp
    m_hat = state.m / (1.0 - hp.rho1 ** state.t)
    v_hat = state.v / (1.0 - hp.rho2 ** state.t)
    return hp.eta * m_hat / np.sqrt(v_hat + hp.eps_div)


def project_ball(x, radius: float) -> np.ndarray:
    """Nearest point to ``x`` with Frobenius norm at most ``radius``."""
    if not radius > 0:
        raise ValueError(f"projection radius must be positive, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.sum(x * x))
    if norm <= radius:
        return x.copy()
    return x * (radius / norm)


def apply_update(state: PerturbationState, step) -> PerturbationState:
    step = np.asarray(step, dtype=np.float64)
    _check_shape(state, step, "step")
    norm = np.sqrt(np.sum(step * step))
    if norm <= state.hp.step_norm_floor:
        return state
    delta = project_ball(state.delta + step / norm, state.hp.eps_ball)
    return dataclasses.replace(state, delta=delta)


def mat_step(state: PerturbationState, grad) -> PerturbationState:
    accumulated = accumulate_moments(state, grad)
    return apply_update(accumulated, compute_step(accumulated))
