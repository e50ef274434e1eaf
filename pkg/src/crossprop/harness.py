"""Continual-learning runs: example streams, the training loop, metrics and result files.

A run is one (optimizer, seed) pair. Its example stream is built up front
from the seed alone, so every optimizer sees the same examples for a given
seed, and the learner only ever receives ``(x, target)`` pairs: task
switches are visible in the metrics labels and nowhere else.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import __version__
from .config import ExperimentConfig, OptimizerSpec
from .geoff import generate_target, mutate_task, sample_examples
from .mnist import load_mnist, shift_labels
from .net import NetShape, init_weights, softmax
from .optim import STEPS, DivergenceError, gradients, make_state
from .seeding import STREAMS, stream

METRICS_HEADER = ("seed", "example", "task", "error", "u_drift", "w_drift")
AGGREGATE_HEADER = ("bin", "mean_error", "stderr")


class MetricsRow(NamedTuple):
    seed: int
    example: int
    task: str
    error: float
    u_drift: float
    w_drift: float


@dataclass
class RunSummary:
    optimizer: str
    seed: int
    bin_width: int
    curve: np.ndarray
    final_u_drift: float
    final_w_drift: float
    diverged: bool = False
    diverged_at: int | None = None
    duration: float = 0.0

    @property
    def n_bins(self) -> int:
        return len(self.curve)


@dataclass
class RunResult:
    """Per-example metrics of one run, stored column-wise, plus its summary.

    ``u_drift[e]`` and ``w_drift[e]`` are measured on the weights that made
    the prediction for example ``e``, so both are zero at example 0; the
    drift after the last step is in the summary.
    """

    seed: int
    task: np.ndarray
    error: np.ndarray
    u_drift: np.ndarray
    w_drift: np.ndarray
    summary: RunSummary
    state: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.error)

    def rows(self, stride: int = 1) -> Iterator[MetricsRow]:
        for e in range(0, len(self.error), stride):
            yield MetricsRow(self.seed, e, str(self.task[e]), float(self.error[e]),
                             float(self.u_drift[e]), float(self.w_drift[e]))


@dataclass
class ExampleStream:
    X: np.ndarray
    targets: np.ndarray
    task: np.ndarray
    labels: np.ndarray | None = None


def drift_norm(current, initial) -> float:
    current, initial = np.asarray(current, dtype=np.float64), np.asarray(initial, dtype=np.float64)
    if current.shape != initial.shape:
        raise ValueError(f"shape mismatch: {current.shape} vs {initial.shape}")
    d = (current - initial).ravel()
    return float(np.sqrt(d @ d))


def bin_means(values, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    nb = math.ceil(len(values) / width)
    return np.array([values[b * width:(b + 1) * width].mean() for b in range(nb)])


@functools.lru_cache(maxsize=2)
def _cached_mnist(images, labels):
    return load_mnist(images, labels)


def load_data(config: ExperimentConfig):
    if config.problem != "mnist":
        return None
    if not (config.images and config.labels):
        raise FileNotFoundError("mnist runs need both 'images' and 'labels' paths")
    return _cached_mnist(str(config.images), str(config.labels))


def build_stream(config: ExperimentConfig, seed: int, data=None) -> ExampleStream:
    """All examples of a run, in presentation order."""
    if config.problem == "geoff":
        return _geoff_stream(config, seed)
    if data is None:
        data = load_data(config)
    return _mnist_stream(config, seed, data)


def _geoff_stream(config, seed):
    target = generate_target(config.m, config.target_n, config.beta, seed)
    Xs, ys, tasks = [], [], []
    for ti, (tid, count) in enumerate(config.tasks):
        if ti > 0:
            target = mutate_task(target, config.mutation, stream(seed, "mutation", ti))
        X, y = sample_examples(target, count, stream(seed, "inputs", ti),
                               stream(seed, "noise", ti), config.noise_std)
        Xs.append(X)
        ys.append(y)
        tasks += [tid] * count
    X = np.concatenate(Xs) if Xs else np.zeros((0, config.m))
    return ExampleStream(X, np.concatenate(ys), np.array(tasks, dtype=object))


def _mnist_stream(config, seed, data):
    images, labels = data
    idx, y, tasks = [], [], []
    for ti, ((tid, count), shift) in enumerate(zip(config.tasks, config.shifts)):
        if count > images.count:
            raise ValueError(f"task {tid} wants {count} examples, dataset has {images.count}")
        order = np.arange(count)
        if config.shuffle:
            order = stream(seed, "shuffle", ti).permutation(count)
        idx.append(order)
        y.append(shift_labels(labels, shift).labels[order])
        tasks += [tid] * count
    idx = np.concatenate(idx).astype(np.int64) if idx else np.zeros(0, np.int64)
    y = np.concatenate(y).astype(np.int64) if y else np.zeros(0, np.int64)
    X = images.data[idx] / 255.0
    targets = np.zeros((len(y), config.k))
    targets[np.arange(len(y)), y] = 1.0
    return ExampleStream(X, targets, np.array(tasks, dtype=object), y)


def init_state(config: ExperimentConfig, spec: OptimizerSpec, seed: int):
    shape = NetShape(config.m, config.n, config.k)
    U, W = init_weights(shape, stream(seed, "init"), scheme=config.init)
    return make_state(spec.name, U, W, config.alpha, eta=spec.eta, **(
        config.hyper if spec.name not in ("crossprop", "crossprop_approx") else {}))


def online_error(delta, target, loss: str) -> float:
    """Squared error, or cross-entropy recovered from delta (y_c = 1 - delta_c for a one-hot target)."""
    delta = np.asarray(delta)
    if loss == "squared":
        return float(np.sum(delta * delta))
    c = int(np.argmax(target))
    return float(-np.log(max(1.0 - delta[c], np.finfo(np.float64).tiny)))


def train_stream(state, step, kind, X, targets):
    """Step ``state`` through every example once.

    Returns per-example errors and pre-step drifts, the number of examples
    processed, and the ``DivergenceError`` that stopped the run, if any.
    """
    loss = getattr(state, "loss", "squared")
    total = len(X)
    err = np.zeros(total)
    ud = np.zeros(total)
    wd = np.zeros(total)
    U0, W0 = state.U.copy(), state.W.copy()
    failure = None
    done = 0
    for e in range(total):
        ud[e] = drift_norm(state.U, U0)
        wd[e] = drift_norm(state.W, W0)
        try:
            _, delta = step(state, X[e], targets[e], kind)
        except DivergenceError as exc:
            failure = exc
            break
        err[e] = online_error(delta, targets[e], loss)
        done = e + 1
    return err[:done], ud[:done], wd[:done], failure, U0, W0


def run_single(config: ExperimentConfig, spec: OptimizerSpec, seed: int, data=None,
               examples: ExampleStream | None = None, keep_state: bool = False) -> RunResult:
    start = time.perf_counter()
    if examples is None:
        examples = build_stream(config, seed, data)
    state = init_state(config, spec, seed)
    err, ud, wd, failure, U0, W0 = train_stream(
        state, STEPS[spec.name], config.kind, examples.X, examples.targets)
    summary = RunSummary(
        optimizer=spec.label,
        seed=seed,
        bin_width=config.bin_width,
        curve=bin_means(err, config.bin_width),
        final_u_drift=drift_norm(state.U, U0),
        final_w_drift=drift_norm(state.W, W0),
        diverged=failure is not None,
        diverged_at=None if failure is None else failure.step,
        duration=time.perf_counter() - start,
    )
    return RunResult(seed, examples.task[:len(err)], err, ud, wd, summary,
                     state if keep_state else None)


def _job(args):
    config, spec, seed = args
    return run_single(config, spec, seed)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict  # label -> list[RunResult], ordered by seed as listed in the config
    duration: float = 0.0

    @property
    def diverged(self) -> list[RunSummary]:
        return [r.summary for rs in self.runs.values() for r in rs if r.summary.diverged]

    def aggregate(self, label: str) -> "AggregateCurve":
        return aggregate_runs([r.summary for r in self.runs[label] if not r.summary.diverged])


def run_experiment(config: ExperimentConfig, data=None, parallel: int = 1) -> ExperimentResult:
    """Run every listed optimizer on every seed.

    Learner state persists across task boundaries and is never told about
    them. With ``parallel > 1`` runs go to worker processes (MNIST workers
    load the data from the configured paths); results are identical either way.
    """
    start = time.perf_counter()
    specs = config.optimizer_specs()
    if config.problem == "mnist" and data is None:
        data = load_data(config)
    jobs = [(spec, seed) for spec in specs for seed in config.seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_job, [(config, s, seed) for s, seed in jobs]))
    else:
        cache = {}
        results = []
        for spec, seed in jobs:
            if seed not in cache:
                cache.clear()
                cache[seed] = build_stream(config, seed, data)
            results.append(run_single(config, spec, seed, examples=cache[seed]))
    runs = {s.label: [] for s in specs}
    for (spec, _), res in zip(jobs, results):
        runs[spec.label].append(res)
    return ExperimentResult(config, runs, time.perf_counter() - start)


@dataclass
class AggregateCurve:
    mean: np.ndarray
    stderr: np.ndarray
    n_runs: int


def aggregate_runs(summaries) -> AggregateCurve:
    """Per-bin mean and standard error (sample std / sqrt(runs)) across runs."""
    summaries = list(summaries)
    if not summaries:
        return AggregateCurve(np.zeros(0), np.zeros(0), 0)
    structure = {(s.bin_width, s.n_bins) for s in summaries}
    if len(structure) != 1:
        raise ValueError(f"runs have different bin structures: {sorted(structure)}")
    curves = np.vstack([s.curve for s in summaries]) if summaries[0].n_bins else np.zeros((len(summaries), 0))
    mean = curves.mean(axis=0)
    if len(summaries) == 1:
        return AggregateCurve(mean, np.zeros_like(mean), 1)
    return AggregateCurve(mean, curves.std(axis=0, ddof=1) / np.sqrt(len(summaries)), len(summaries))


# --- verification utilities -------------------------------------------------

def loss_value(U, W, x, target, kind, loss) -> float:
    """Loss of one example, computed directly from the forward pass."""
    phi = kind.apply(np.asarray(x) @ U)
    z = phi @ W
    if loss == "squared":
        d = np.asarray(target) - z
        return 0.5 * float(np.sum(d * d))
    y = softmax(z)
    return -float(np.log(y[int(np.argmax(target))]))


def _random_problem(shape: NetShape, loss: str, rng):
    m, n, k = shape
    U = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    x = rng.normal(size=m)
    if loss == "squared" and k == 1:
        return U, rng.normal(size=n), x, float(rng.normal())
    W = rng.normal(0.0, 1.0, size=(n, k))
    if loss == "squared":
        return U, W, x, rng.normal(size=k)
    t = np.zeros(k)
    t[rng.integers(k)] = 1.0
    return U, W, x, t


def relative_error(a, b, floor: float = 1e-4):
    """Elementwise |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries absolute."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_gradients(U, W, x, target, kind, loss, epsilon=1e-5):
    def fd(P, f):
        G = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + epsilon
            up = f()
            P[idx] = old - epsilon
            down = f()
            P[idx] = old
            G[idx] = (up - down) / (2 * epsilon)
        return G

    U, W = U.copy(), np.array(W, dtype=np.float64)
    f = lambda: loss_value(U, W, x, target, kind, loss)  # noqa: E731
    return fd(U, f), fd(W, f)


def grad_check(shape: NetShape, kind, loss: str = "squared", epsilon: float = 1e-5,
               seed: int = 0) -> float:
    """Max relative error between backprop's gradients and central finite differences.

    ``kind`` may be any object with ``apply`` and ``derivative`` (e.g.
    ``net.Identity``), which is how a broken derivative can be injected.
    """
    rng = np.random.default_rng(seed)
    U, W, x, target = _random_problem(shape, loss, rng)
    gU, gW, _ = gradients(U, W, x, target, kind, loss)
    nU, nW = numeric_gradients(U, W, x, target, kind, loss, epsilon)
    return float(max(relative_error(gU, nU).max(), relative_error(gW, nW).max()))


class ScaledDerivative:
    """Wrap an activation and scale its derivative; used to prove grad checks can fail."""

    def __init__(self, kind, factor):
        self.kind, self.factor, self.value = kind, factor, f"{kind.value}*{factor:g}"

    def apply(self, z):
        return self.kind.apply(z)

    def derivative(self, phi):
        return self.factor * self.kind.derivative(phi)


def export_features(U, X, kind) -> np.ndarray:
    """Hidden activations, one row per example."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return kind.apply(X @ np.asarray(U, dtype=np.float64))


# --- files ------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def metrics_csv(run: RunResult, stride: int = 1) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in run.rows(stride):
        w.writerow((r.seed, r.example, r.task, _fmt(r.error), _fmt(r.u_drift), _fmt(r.w_drift)))
    return buf.getvalue()


def aggregate_csv(agg: AggregateCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for b, (m, s) in enumerate(zip(agg.mean, agg.stderr)):
        w.writerow((b, _fmt(m), _fmt(s)))
    return buf.getvalue()


def features_csv(F: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"h{j}" for j in range(F.shape[1])])
    for row in F:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_features(path, F: np.ndarray, labels=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, features_csv(F))
    if labels is not None:
        text = "label\n" + "".join(f"{int(v)}\n" for v in labels)
        _atomic_write(path.with_name(path.stem + "_labels.csv"), text)


def metadata(result: ExperimentResult) -> dict:
    cfg = result.config
    return {
        "version": __version__,
        "config": cfg.to_text(),
        "bin_width": cfg.bin_width,
        "stride": cfg.stride,
        "shuffle": cfg.shuffle if cfg.problem == "mnist" else None,
        "drift_reference": "initial weights; row e holds the drift before example e is learned",
        "error": "squared error (target - prediction)**2" if cfg.problem == "geoff" else "cross-entropy",
        "seed_streams": {"derivation": "numpy SeedSequence(seed, spawn_key=(stream, task))",
                         "streams": STREAMS},
        "duration": result.duration,
        "runs": {
            label: [{"seed": r.seed,
                     "examples": len(r),
                     "final_u_drift": r.summary.final_u_drift,
                     "final_w_drift": r.summary.final_w_drift,
                     "diverged": r.summary.diverged,
                     "diverged_at": r.summary.diverged_at,
                     "duration": r.summary.duration} for r in runs]
            for label, runs in result.runs.items()
        },
    }


def write_results(result: ExperimentResult, out_dir) -> list[Path]:
    """One metrics CSV per run and one aggregate CSV per optimizer, then metadata.json.

    Every file goes through a temporary name and a rename, so a reader
    never sees a half-written CSV.
    """
    out = Path(out_dir)
    written = []
    for label, runs in result.runs.items():
        d = out / label
        d.mkdir(parents=True, exist_ok=True)
        for run in runs:
            p = d / f"seed_{run.seed}.csv"
            _atomic_write(p, metrics_csv(run, result.config.stride))
            written.append(p)
        p = d / "aggregate.csv"
        _atomic_write(p, aggregate_csv(result.aggregate(label)))
        written.append(p)
    p = out / "metadata.json"
    _atomic_write(p, json.dumps(metadata(result), indent=2) + "\n")
    written.append(p)
    return written
