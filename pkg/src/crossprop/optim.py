"""One-example update rules: crossprop, crossprop-approx and backprop baselines.

Every step reads only the parameters as they were when the example arrived
and commits all new values together, so the order in which individual
weights are visited never matters. Steps mutate the state passed in and
return ``(state, delta)`` with ``delta = target - prediction``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import ActivationKind, activation_jacobian, is_one_hot, softmax

LOSSES = ("squared", "cross_entropy")


class DivergenceError(FloatingPointError):
    """A step produced a non-finite parameter."""

    def __init__(self, step: int, optimizer: str = ""):
        self.step = step
        self.optimizer = optimizer
        who = f"{optimizer} " if optimizer else ""
        super().__init__(f"{who}diverged at example {step}: non-finite parameters")


def _commit(state, name, **arrays):
    for a in arrays.values():
        if not np.isfinite(a).all():
            raise DivergenceError(state.t, name)
    for k, a in arrays.items():
        setattr(state, k, a)
    state.t += 1


def _as_matrix(U):
    return np.array(U, dtype=np.float64)


@dataclass
class CrosspropState:
    """Scalar-output crossprop learner. ``H`` holds one trace per incoming weight."""

    U: np.ndarray
    W: np.ndarray
    alpha: float
    eta: float = 0.0
    H: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        self.U = _as_matrix(self.U)
        self.W = np.array(self.W, dtype=np.float64)
        if self.U.ndim != 2 or self.W.shape != (self.U.shape[1],):
            raise ValueError(f"need U (m, n) and W (n,), got {self.U.shape} and {self.W.shape}")
        if self.H is None:
            self.H = np.zeros_like(self.U)
        else:
            self.H = _as_matrix(self.H)
            if self.H.shape != self.U.shape:
                raise ValueError("H must have the shape of U")
        _check_rates(self.alpha, self.eta)


@dataclass
class CrosspropApproxState:
    """Multi-output crossprop-approx learner. ``H`` holds one trace per outgoing weight."""

    U: np.ndarray
    W: np.ndarray
    alpha: float
    eta: float = 0.0
    H: np.ndarray | None = None
    loss: str = "cross_entropy"
    t: int = 0

    def __post_init__(self):
        self.U = _as_matrix(self.U)
        self.W = _as_matrix(self.W)
        if self.U.ndim != 2 or self.W.ndim != 2 or self.W.shape[0] != self.U.shape[1]:
            raise ValueError(f"need U (m, n) and W (n, k), got {self.U.shape} and {self.W.shape}")
        if self.H is None:
            self.H = np.zeros_like(self.W)
        else:
            self.H = _as_matrix(self.H)
            if self.H.shape != self.W.shape:
                raise ValueError("H must have the shape of W")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        _check_rates(self.alpha, self.eta)


def _check_rates(alpha, eta):
    if not alpha >= 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")


def crossprop_step(state: CrosspropState, x, y_star, kind=ActivationKind.TANH):
    U, W, H = state.U, state.W, state.H
    a, eta = state.alpha, state.eta
    x = np.asarray(x, dtype=np.float64)
    phi = kind.apply(x @ U)
    delta = float(y_star) - float(phi @ W)
    D = activation_jacobian(kind, phi, x)  # D[i, j] = d phi_j / d u_ij

    U_new = U + a * delta * ((1.0 - eta) * phi * H + eta * W * D)
    H_new = H * (1.0 - a * (1.0 - eta) * phi * phi) + a * (delta - eta * W * phi) * D
    W_new = W + a * delta * phi
    _commit(state, "crossprop", U=U_new, W=W_new, H=H_new)
    return state, delta


def _outputs(phi, W, loss):
    z = phi @ W
    return softmax(z) if loss == "cross_entropy" else z


def crossprop_approx_step(state: CrosspropApproxState, x, target, kind=ActivationKind.TANH):
    U, W, H = state.U, state.W, state.H
    a, eta = state.alpha, state.eta
    x = np.asarray(x, dtype=np.float64)
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if state.loss == "cross_entropy" and not is_one_hot(target):
        raise ValueError("crossprop-approx with cross-entropy needs a one-hot target")
    if target.shape != (W.shape[1],):
        raise ValueError(f"target has shape {target.shape}, expected ({W.shape[1]},)")
    phi = kind.apply(x @ U)
    delta = target - _outputs(phi, W, state.loss)
    D = activation_jacobian(kind, phi, x)

    coef = (1.0 - eta) * phi * (H @ delta) + eta * (W @ delta)
    U_new = U + a * coef * D
    H_new = H * (1.0 - a * (1.0 - eta) * phi * phi)[:, None] + a * (delta - eta * W * phi[:, None])
    W_new = W + a * np.outer(phi, delta)
    _commit(state, "crossprop_approx", U=U_new, W=W_new, H=H_new)
    return state, delta


@dataclass
class BaselineState:
    """Backprop-family learner.

    ``W`` is a vector for a single linear output and an (n, k) matrix
    otherwise. ``method`` selects the accumulator rule applied to the raw
    gradient; buffers start at zero and are shaped like their parameter.
    """

    U: np.ndarray
    W: np.ndarray
    alpha: float
    method: str = "backprop"
    loss: str | None = None
    momentum: float = 0.9
    rho: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    buffers: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        self.U = _as_matrix(self.U)
        self.W = np.array(self.W, dtype=np.float64)
        if self.U.ndim != 2 or self.W.ndim not in (1, 2) or self.W.shape[0] != self.U.shape[1]:
            raise ValueError(f"incompatible U {self.U.shape} and W {self.W.shape}")
        if self.loss is None:
            self.loss = "squared" if self.W.ndim == 1 else "cross_entropy"
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.method not in BASELINES:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not self.buffers:
            for name in _BUFFERS[self.method]:
                self.buffers[name + "_U"] = np.zeros_like(self.U)
                self.buffers[name + "_W"] = np.zeros_like(self.W)


_BUFFERS = {"backprop": (), "momentum": ("v",), "rmsprop": ("s",), "adam": ("m", "v")}
BASELINES = tuple(_BUFFERS)


def gradients(U, W, x, target, kind=ActivationKind.TANH, loss=None):
    """Loss gradients w.r.t. U and W plus the error signal, at the given parameters.

    Squared loss is 0.5 * sum(delta**2) on linear outputs; cross-entropy sits
    on a softmax. In both cases d loss / d z = -delta.
    """
    W = np.asarray(W, dtype=np.float64)
    if loss is None:
        loss = "squared" if W.ndim == 1 else "cross_entropy"
    x = np.asarray(x, dtype=np.float64)
    phi = kind.apply(x @ U)
    if W.ndim == 1:
        if loss != "squared":
            raise ValueError("a vector W implies a single linear output with squared loss")
        delta = float(target) - float(phi @ W)
        back = W * delta
        gW = -delta * phi
    else:
        target = np.atleast_1d(np.asarray(target, dtype=np.float64))
        if target.shape != (W.shape[1],):
            raise ValueError(f"target has shape {target.shape}, expected ({W.shape[1]},)")
        if loss == "cross_entropy" and not is_one_hot(target):
            raise ValueError("cross-entropy needs a one-hot target")
        delta = target - _outputs(phi, W, loss)
        back = W @ delta
        gW = -np.outer(phi, delta)
    gU = -back * activation_jacobian(kind, phi, x)
    return gU, gW, delta


def _baseline_step(state: BaselineState, x, target, kind, loss, method):
    gU, gW, delta = gradients(state.U, state.W, x, target, kind, loss or state.loss)
    a, b = state.alpha, state.buffers
    new = {}
    if method == "backprop":
        new["U"] = state.U - a * gU
        new["W"] = state.W - a * gW
    elif method == "momentum":
        mu = state.momentum
        vU = mu * b["v_U"] - a * gU
        vW = mu * b["v_W"] - a * gW
        new.update(U=state.U + vU, W=state.W + vW)
        bufs = {"v_U": vU, "v_W": vW}
    elif method == "rmsprop":
        rho, eps = state.rho, state.eps
        sU = rho * b["s_U"] + (1.0 - rho) * gU * gU
        sW = rho * b["s_W"] + (1.0 - rho) * gW * gW
        new["U"] = state.U - a * gU / (np.sqrt(sU) + eps)
        new["W"] = state.W - a * gW / (np.sqrt(sW) + eps)
        bufs = {"s_U": sU, "s_W": sW}
    elif method == "adam":
        b1, b2, eps = state.beta1, state.beta2, state.eps
        n = state.t + 1
        c1, c2 = 1.0 - b1**n, 1.0 - b2**n
        bufs = {}
        for p, g in (("U", gU), ("W", gW)):
            m = b1 * b["m_" + p] + (1.0 - b1) * g
            v = b2 * b["v_" + p] + (1.0 - b2) * g * g
            new[p] = getattr(state, p) - a * (m / c1) / (np.sqrt(v / c2) + eps)
            bufs["m_" + p], bufs["v_" + p] = m, v
    else:
        raise ValueError(f"unknown method {method!r}")
    _commit(state, method, **new)
    if method != "backprop":
        b.update(bufs)
    return state, delta


def backprop_step(state, x, target, kind=ActivationKind.TANH, loss=None):
    return _baseline_step(state, x, target, kind, loss, "backprop")


def momentum_step(state, x, target, kind=ActivationKind.TANH, loss=None):
    return _baseline_step(state, x, target, kind, loss, "momentum")


def rmsprop_step(state, x, target, kind=ActivationKind.TANH, loss=None):
    return _baseline_step(state, x, target, kind, loss, "rmsprop")


def adam_step(state, x, target, kind=ActivationKind.TANH, loss=None):
    return _baseline_step(state, x, target, kind, loss, "adam")


STEPS = {
    "crossprop": crossprop_step,
    "crossprop_approx": crossprop_approx_step,
    "backprop": backprop_step,
    "momentum": momentum_step,
    "rmsprop": rmsprop_step,
    "adam": adam_step,
}
OPTIMIZERS = tuple(STEPS)


def make_state(name, U, W, alpha, eta=0.0, loss=None, **hyper):
    """Build the state ``STEPS[name]`` expects from initial weights."""
    if name == "crossprop":
        W = np.asarray(W)
        if W.ndim == 2 and W.shape[1] == 1:
            W = W[:, 0]
        if W.ndim != 1:
            raise ValueError("crossprop handles a single output; use crossprop_approx for k > 1")
        return CrosspropState(U, W, alpha, eta)
    if name == "crossprop_approx":
        W = np.asarray(W)
        if W.ndim == 1:
            W = W[:, None]
        if loss is None:
            loss = "squared" if W.shape[1] == 1 else "cross_entropy"
        return CrosspropApproxState(U, W, alpha, eta, loss=loss)
    if name in BASELINES:
        return BaselineState(U, W, alpha, method=name, loss=loss, **hyper)
    raise ValueError(f"unknown optimizer {name!r}; expected one of {OPTIMIZERS}")
