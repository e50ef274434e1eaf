"""Forward pass and error signals for a single-hidden-layer network.

Shapes follow the convention ``U: (m, n)``, ``W: (n,)`` for a scalar output
or ``W: (n, k)`` for ``k`` softmax outputs. Every derivative of a hidden unit
is expressed in terms of its own activation value ``phi``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ActivationKind(enum.Enum):
    TANH = "tanh"
    LOGISTIC = "logistic"

    def apply(self, z):
        if self is ActivationKind.TANH:
            return np.tanh(z)
        # split on sign so exp never overflows
        z = np.asarray(z, dtype=np.float64)
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    def derivative(self, phi):
        """d activation / d preactivation, written in terms of the activation value."""
        if self is ActivationKind.TANH:
            return 1.0 - phi * phi
        return phi * (1.0 - phi)

    @classmethod
    def parse(cls, value) -> "ActivationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


class Identity:
    """Linear hidden unit. Only used to sanity-check gradient code."""

    value = "identity"

    def apply(self, z):
        return np.array(z, dtype=np.float64, copy=True)

    def derivative(self, phi):
        return np.ones_like(phi)


def _check_vec(name, a, length=None):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {a.shape}")
    if length is not None and a.shape[0] != length:
        raise ValueError(f"{name} has length {a.shape[0]}, expected {length}")
    return a


def hidden_preactivations(x, U):
    x = _check_vec("x", x)
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != x.shape[0]:
        raise ValueError(f"U has shape {U.shape}, incompatible with input length {x.shape[0]}")
    return x @ U


def hidden_activations(x, U, kind=ActivationKind.TANH):
    return kind.apply(hidden_preactivations(x, U))


def predict_scalar(phi, W):
    phi = _check_vec("phi", phi)
    W = _check_vec("W", W, phi.shape[0])
    return float(phi @ W)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def predict_softmax(phi, W):
    phi = _check_vec("phi", phi)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != phi.shape[0]:
        raise ValueError(f"W has shape {W.shape}, expected ({phi.shape[0]}, k)")
    return softmax(phi @ W)


def activation_derivative(kind, phi_j, x_i):
    """Partial derivative of hidden unit j with respect to incoming weight u_ij."""
    return kind.derivative(phi_j) * x_i


def activation_jacobian(kind, phi, x):
    """All of ``activation_derivative`` at once, as an (m, n) matrix."""
    return np.outer(x, kind.derivative(phi))


def error_scalar(y_star, y):
    return float(y_star) - float(y)


def is_one_hot(target) -> bool:
    t = np.asarray(target)
    return t.ndim == 1 and np.all((t == 0) | (t == 1)) and t.sum() == 1


def error_softmax(target_onehot, y):
    target = np.asarray(target_onehot, dtype=np.float64)
    y = _check_vec("y", y, target.shape[0] if target.ndim == 1 else None)
    if not is_one_hot(target):
        raise ValueError("target must be a one-hot vector")
    return target - y


def one_hot(label: int, k: int) -> np.ndarray:
    t = np.zeros(k)
    t[label] = 1.0
    return t


def squared_error(delta) -> float:
    delta = np.asarray(delta, dtype=np.float64)
    return float(np.sum(delta * delta))


def cross_entropy(target_onehot, y) -> float:
    c = int(np.argmax(target_onehot))
    return float(-np.log(max(y[c], np.finfo(np.float64).tiny)))


@dataclass(frozen=True)
class NetShape:
    """Layer sizes of a one-hidden-layer net: m inputs, n hidden, k outputs."""

    m: int
    n: int
    k: int = 1

    def __post_init__(self):
        for name in ("m", "n", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    def __iter__(self):
        return iter((self.m, self.n, self.k))


INIT_SCHEMES = ("fan_in", "unit")


def init_weights(shape: NetShape, rng: np.random.Generator, scalar_output: bool | None = None,
                 scheme: str = "fan_in"):
    """Uniform init: on +-1/sqrt(fan_in) per layer (``fan_in``) or on +-1 (``unit``).

    ``W`` is a vector when the net has one linear output (``scalar_output``
    defaults to ``k == 1``), otherwise an (n, k) matrix.
    """
    m, n, k = shape
    if scalar_output is None:
        scalar_output = k == 1
    if scheme == "fan_in":
        bu, bw = 1.0 / np.sqrt(m), 1.0 / np.sqrt(n)
    elif scheme == "unit":
        bu = bw = 1.0
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    U = rng.uniform(-bu, bu, size=(m, n))
    W = rng.uniform(-bw, bw, size=(n,) if scalar_output else (n, k))
    return U, W
