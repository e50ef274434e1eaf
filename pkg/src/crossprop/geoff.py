"""GEOFF: a frozen random network of linear threshold units used as a teacher.

Inputs are uniform binary vectors; the target is a {-1, 0, +1} combination
of binary LTU features plus standard normal noise. Tasks in a continual
sequence share the feature layer and differ only in the output weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .seeding import stream


@dataclass(frozen=True)
class GeoffTarget:
    m: int
    n_star: int
    beta: float
    U_star: np.ndarray
    W_star: np.ndarray
    theta: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for a in (self.U_star, self.W_star, self.theta):
            a.setflags(write=False)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n_star": self.n_star,
            "beta": self.beta,
            "seed": self.seed,
            "U_star": self.U_star.astype(int).tolist(),
            "W_star": self.W_star.astype(int).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "GeoffTarget":
        U = np.asarray(d["U_star"], dtype=np.int8)
        W = np.asarray(d["W_star"], dtype=np.int8)
        if U.shape != (d["m"], d["n_star"]) or W.shape != (d["n_star"],):
            raise ValueError("U_star/W_star shapes disagree with m and n_star")
        if not np.isin(U, (-1, 1)).all() or not np.isin(W, (-1, 0, 1)).all():
            raise ValueError("target weights out of range")
        return cls(d["m"], d["n_star"], d["beta"], U, W, ltu_thresholds(U, d["beta"]), d.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "GeoffTarget":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y_star: float


def ltu_thresholds(U_star, beta):
    """theta_j = beta * m - S_j, where S_j counts the -1 weights feeding unit j.

    A unit can reach at most m - S_j, so beta sets the fraction of the
    attainable input that must be active before it fires.
    """
    U_star = np.asarray(U_star)
    m = U_star.shape[0]
    S = (U_star < 0).sum(axis=0)
    return beta * m - S.astype(np.float64)


def generate_target(m: int, n_star: int, beta: float, seed: int) -> GeoffTarget:
    if m < 1 or n_star < 1:
        raise ValueError("m and n_star must be positive")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    rng = stream(seed, "target")
    U = (2 * rng.integers(0, 2, size=(m, n_star)) - 1).astype(np.int8)
    W = rng.integers(-1, 2, size=n_star).astype(np.int8)
    return GeoffTarget(m, n_star, float(beta), U, W, ltu_thresholds(U, beta), seed)


def ltu_features(target: GeoffTarget, x) -> np.ndarray:
    """Binary LTU activations; accepts one input (m,) or a batch (N, m). Fires on ties."""
    x = np.asarray(x)
    if x.shape[-1] != target.m:
        raise ValueError(f"input has {x.shape[-1]} entries, target expects {target.m}")
    s = x.astype(np.int64) @ target.U_star.astype(np.int64)
    return (s >= target.theta).astype(np.float64)


def sample_examples(target: GeoffTarget, count: int, rng: np.random.Generator,
                    noise_rng: np.random.Generator | None = None, noise_std: float = 1.0):
    """Draw ``count`` examples as arrays ``X (count, m)`` and ``y (count,)``."""
    if noise_rng is None:
        noise_rng = rng
    X = rng.integers(0, 2, size=(count, target.m)).astype(np.float64)
    y = ltu_features(target, X) @ target.W_star.astype(np.float64)
    if noise_std:
        y = y + noise_std * noise_rng.standard_normal(count)
    return X, y


def sample_example(target: GeoffTarget, rng: np.random.Generator,
                   noise_rng: np.random.Generator | None = None,
                   noise_std: float = 1.0) -> LabeledExample:
    X, y = sample_examples(target, 1, rng, noise_rng, noise_std)
    return LabeledExample(X[0], float(y[0]))


def mutate_task(target: GeoffTarget, fraction: float, rng: np.random.Generator) -> GeoffTarget:
    """Redraw floor(fraction * n_star) distinct output weights; a redraw may repeat the old value."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    count = math.floor(fraction * target.n_star)
    idx = rng.choice(target.n_star, size=count, replace=False)
    W = target.W_star.copy()
    W[idx] = rng.integers(-1, 2, size=count)
    return replace(target, W_star=W)
