"""Small softmax classifier trained by backpropagating an evolved loss.

This stands in for the expensive image-classifier surrogate: a ReLU MLP on
a synthetic or user-supplied dataset. The gradient at the softmax output is
``loss_gradient(graph, y, yhat)``; everything below it is ordinary backprop.

Two early-stop rules exist. ``proxy_screen`` trains a cheaper network and
rejects the loss if its final train accuracy is below ``proxy_threshold``.
``train`` stops a run whose train accuracy is below ``main_threshold`` at
``main_check_step`` but still reports the best validation accuracy seen.
Both thresholds only make sense above chance level 1/K.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from lossforge.data import Dataset
from lossforge.graph import LossGraph, loss_and_gradient

COMPLETED = "completed"
EARLY_STOP_MAIN = "early_stop_main"


@dataclass(frozen=True)
class NetworkSpec:
    hidden: tuple[int, ...] = (32, 32)


@dataclass
class NetworkState:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkState":
        return NetworkState([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_network(spec: NetworkSpec, n_in: int, n_out: int, seed: int) -> NetworkState:
    """He-normal hidden layers; the output layer starts at zero (uniform softmax)."""
    rng = np.random.default_rng([seed, 0])
    sizes = (n_in, *spec.hidden)
    weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in spec.hidden]
    weights.append(np.zeros((sizes[-1], n_out)))
    biases.append(np.zeros(n_out))
    return NetworkState(weights, biases)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(net: NetworkState, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    return softmax(h @ net.weights[-1] + net.biases[-1]), acts


def forward(net: NetworkState, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"expected input width {net.weights[0].shape[0]}, got shape {batch.shape}")
    return _forward(net, batch)[0]


def loss_and_param_grads(net: NetworkState, x: np.ndarray, y: np.ndarray,
                         graph: LossGraph) -> tuple[float, list[np.ndarray]]:
    """Loss of the batch and its gradient for every weight and bias (``params`` order)."""
    probs, acts = _forward(net, x)
    value, dp = loss_and_gradient(graph, y, probs)
    # softmax Jacobian-vector product
    dz = probs * (dp - np.sum(dp * probs, axis=1, keepdims=True))
    grads: list[np.ndarray] = []
    for layer in range(len(net.weights) - 1, -1, -1):
        a = acts[layer]
        grads.append(dz.sum(axis=0))
        grads.append(a.T @ dz)
        if layer:
            dz = (dz @ net.weights[layer].T) * (a > 0)
    grads.reverse()
    return value, grads


def accuracy(net: NetworkState, x: np.ndarray, y: np.ndarray) -> float:
    probs = _forward(net, x)[0]
    return float(np.mean(probs.argmax(axis=1) == y.argmax(axis=1)))


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 0.5
    warmup_fraction: float = 0.1
    optimizer: str = "sgd"          # "sgd" (momentum) or "adam"
    momentum: float = 0.9
    seed: int = 0
    eval_interval: int = 50
    hidden: tuple[int, ...] = (32, 32)
    proxy_hidden: tuple[int, ...] = (8,)
    proxy_steps: int = 300
    proxy_threshold: float = 0.37
    main_threshold: float = 0.25
    main_check_step: Optional[int] = None   # default: 3/8 of steps

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.proxy_hidden = tuple(self.proxy_hidden)
        if not (0 < self.proxy_threshold < 1 and 0 < self.main_threshold < 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.steps < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("steps, batch_size and eval_interval must be positive")
        if self.main_check_step is not None and not 0 < self.main_check_step < self.steps:
            raise ValueError("main_check_step must lie strictly between 0 and steps")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def check_step(self) -> int:
        if self.main_check_step is not None:
            return self.main_check_step
        return max(1, (3 * self.steps) // 8)


def learning_rate(step: int, total: int, peak: float, warmup_fraction: float) -> float:
    """Linear warmup from 0 to ``peak``, then cosine decay reaching 0 at ``total``."""
    warmup = int(round(warmup_fraction * total))
    if warmup and step <= warmup:
        return peak * step / warmup
    span = total - warmup
    if span <= 0:
        return 0.0
    progress = (step - warmup) / span
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainRun:
    best_val_acc: float
    steps: list[int] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    stop_reason: str = COMPLETED
    final_train_acc: float = 0.0
    wall_time: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_acc", "val_acc", "loss"])
            for row in zip(self.steps, self.train_acc, self.val_acc, self.loss):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: list[np.ndarray]):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params] if cfg.optimizer == "adam" else None
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        if self.v is None:
            for p, g, m in zip(params, grads, self.m):
                m *= self.cfg.momentum
                m += g
                p -= lr * m
            return
        b1, b2 = 0.9, 0.999
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + 1e-8)


def _finite(value: float, arrays: list[np.ndarray]) -> bool:
    # one reduction per array; any nan/inf makes the total non-finite
    return math.isfinite(value) and math.isfinite(sum(float(a.sum()) for a in arrays))


def _run(spec: NetworkSpec, dataset: Dataset, graph: LossGraph, cfg: TrainConfig,
         check: bool) -> tuple[TrainRun, NetworkState]:
    start = time.perf_counter()
    steps = cfg.steps
    x_tr, y_tr = dataset.train()
    x_va, y_va = dataset.val()
    net = init_network(spec, dataset.n_features, dataset.n_classes, cfg.seed)
    params = net.params
    opt = _Optimizer(cfg, params)
    rng = np.random.default_rng([cfg.seed, 1])
    run = TrainRun(best_val_acc=0.0)
    check_step = cfg.check_step if check else None

    def record(step: int) -> float:
        probs = _forward(net, x_tr)[0]
        tr = float(np.mean(probs.argmax(axis=1) == y_tr.argmax(axis=1)))
        with np.errstate(all="ignore"):
            value = loss_and_gradient(graph, y_tr, probs)[0]
        run.steps.append(step)
        run.train_acc.append(tr)
        run.val_acc.append(accuracy(net, x_va, y_va))
        run.loss.append(value)
        return tr

    train_acc = record(0)
    n = x_tr.shape[0]
    for step in range(1, steps + 1):
        idx = rng.integers(n, size=min(cfg.batch_size, n))
        with np.errstate(all="ignore"):
            value, grads = loss_and_param_grads(net, x_tr[idx], y_tr[idx], graph)
        if not _finite(value, grads):
            run.stop_reason = EARLY_STOP_MAIN
            break
        lr = learning_rate(step, steps, cfg.learning_rate, cfg.warmup_fraction)
        with np.errstate(all="ignore"):
            opt.step(params, grads, lr)
        if not _finite(0.0, params):
            run.stop_reason = EARLY_STOP_MAIN
            break
        if step % cfg.eval_interval == 0 or step == steps or step == check_step:
            train_acc = record(step)
        if step == check_step and train_acc < cfg.main_threshold:
            run.stop_reason = EARLY_STOP_MAIN
            break
    run.best_val_acc = max(run.val_acc)
    run.final_train_acc = run.train_acc[-1]
    run.wall_time = time.perf_counter() - start
    return run, net


def train(net_spec: NetworkSpec | None, dataset: Dataset, loss_graph: LossGraph,
          cfg: TrainConfig, steps: int | None = None) -> TrainRun:
    """Train from scratch; ``steps`` overrides ``cfg.steps`` (the schedule follows it)."""
    if steps is not None:
        check = cfg.main_check_step if cfg.main_check_step and cfg.main_check_step < steps else None
        cfg = replace(cfg, steps=steps, main_check_step=check)
    return _run(net_spec or NetworkSpec(cfg.hidden), dataset, loss_graph, cfg, check=True)[0]


def train_network(net_spec: NetworkSpec | None, dataset: Dataset, loss_graph: LossGraph,
                  cfg: TrainConfig) -> tuple[TrainRun, NetworkState]:
    return _run(net_spec or NetworkSpec(cfg.hidden), dataset, loss_graph, cfg, check=True)


def proxy_run(loss_graph: LossGraph, dataset: Dataset, cfg: TrainConfig) -> TrainRun:
    cfg = replace(cfg, steps=cfg.proxy_steps, main_check_step=None)
    return _run(NetworkSpec(cfg.proxy_hidden), dataset, loss_graph, cfg, check=False)[0]


def proxy_screen(loss_graph: LossGraph, dataset: Dataset, cfg: TrainConfig) -> bool:
    """Cheap first early-stop: pass iff final train accuracy >= ``proxy_threshold``."""
    return proxy_run(loss_graph, dataset, cfg).final_train_acc >= cfg.proxy_threshold


def make_fitness(dataset: Dataset, cfg: TrainConfig,
                 net_spec: NetworkSpec | None = None) -> Callable[[LossGraph], Optional[float]]:
    """Proxy screen, then full training; ``None`` marks a screened-out loss."""
    def fitness(graph: LossGraph) -> Optional[float]:
        if not proxy_screen(graph, dataset, cfg):
            return None
        return train(net_spec, dataset, graph, cfg).best_val_acc
    return fitness


def make_proxy_fitness(dataset: Dataset, cfg: TrainConfig) -> Callable[[LossGraph], Optional[float]]:
    """Cheap trainer for the initial population: proxy-network validation accuracy."""
    def fitness(graph: LossGraph) -> Optional[float]:
        run = proxy_run(graph, dataset, cfg)
        if run.final_train_acc < cfg.proxy_threshold:
            return None
        return run.best_val_acc
    return fitness
