"""SGD and Adam steppers plus width-scaled learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .gamma import GammaExp, GammaLike, as_gamma


@dataclass
class AdamState:
    """Per-parameter moment estimates. One state per trained matrix."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: np.ndarray, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **kwargs)


def _validate_grad(param: np.ndarray, grad: np.ndarray, op: str) -> None:
    if param.shape != grad.shape:
        raise ValueError(f"{op} shape mismatch: param {param.shape}, grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"{op} got a non-finite gradient")


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter.

    The state is advanced in place. Decoupled weight decay is applied when
    the state carries a nonzero decay (zero by default, where this reduces
    to plain Adam).
    """
    _validate_grad(param, grad, "adam_step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * np.square(grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    out = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay != 0.0:
        out = out - lr * state.weight_decay * param
    return out


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient descent: param - lr * grad."""
    _validate_grad(param, grad, "sgd_step")
    return param - lr * grad


def rational_pow(n: int, exponent: Fraction) -> float:
    """n ** (p/q) routed through sqrt for half-integer exponents.

    math.sqrt is correctly rounded, so common cases such as 4096**(-1/2)
    come out exact; general denominators fall back to float pow.
    """
    if n < 1:
        raise ValueError(f"base must be a positive width, got {n}")
    p, q = exponent.numerator, exponent.denominator
    if q == 1:
        return float(n) ** p
    if q == 2:
        return math.sqrt(n) ** p
    return float(n) ** (p / q)


@dataclass(frozen=True)
class LrSpec:
    """Width-scaled learning rate eta(n) = c * n**gamma_eta.

    lam is the ratio of the B-factor rate to the A-factor rate; the default
    1 is a uniform rate, larger values decouple the two factors.
    """

    c: float = 1.0
    gamma_eta: GammaExp = field(default_factory=lambda: as_gamma(Fraction(-1, 2)))
    lam: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"rate constant must be positive, got {self.c}")
        if self.lam <= 0:
            raise ValueError(f"rate ratio must be positive, got {self.lam}")


def realize_lr(spec: LrSpec, n: int) -> tuple[float, float]:
    """Concrete (eta_A, eta_B) at width n."""
    if n < 1:
        raise ValueError(f"width must be >= 1, got {n}")
    gamma = as_gamma(spec.gamma_eta)
    if gamma.is_neg_inf:
        raise ValueError("a zero learning rate cannot train the adapter")
    eta_a = spec.c * rational_pow(n, gamma.value)
    return eta_a, spec.lam * eta_a
