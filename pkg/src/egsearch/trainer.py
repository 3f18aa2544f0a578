"""Joint optimization of network weights and architecture distributions.

Each search step alternates two substeps: sample per-edge binary codes and
update the op weights on a training batch, then resample and update the
per-edge logits on a validation batch.  The binary codes enter the forward
pass through their straight-through tensors, so one ordinary backward pass
per substep moves both kinds of parameters.

The temperature anneals linearly from tau_start to tau_end over the run.
After the search, the learned edge distributions are collapsed into one
concrete architecture code, which is retrained from scratch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .config import RunConfig
from .data import Dataset, make_dataset
from .ensemble import egs_sample, marginal_inclusion_oracle
from .gumbel import RngState
from .space import (
    OP_SET,
    ArchitectureCode,
    Cell,
    cell_forward,
    edge_list,
    make_cell,
    num_edges,
)

__all__ = [
    "Network",
    "SearchState",
    "SearchReport",
    "RetrainResult",
    "BaselineResult",
    "SearchDiverged",
    "build_dataset",
    "build_state",
    "compute_loss",
    "search_step",
    "run_search",
    "derive_architecture",
    "retrain",
    "random_search_baseline",
    "metrics_csv",
]


class SearchDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the sampling context."""


@dataclass
class Network:
    """Input projection + searched cell + linear classifier head."""

    cell: Cell
    w_in: ad.Tensor
    b_in: ad.Tensor
    w_out: ad.Tensor
    b_out: ad.Tensor

    def weights(self) -> list:
        return [self.w_in, self.b_in, *self.cell.weight_tensors(),
                self.w_out, self.b_out]

    def logits(self) -> list:
        return self.cell.edge_logits()


def make_network(in_dim, n_classes, cfg: RunConfig, init_rng) -> Network:
    cell = make_cell(
        n=cfg.nodes, dim=cfg.dim, lam=cfg.lam, init_rng=init_rng,
        output_rule=cfg.output_rule,
    )
    cell_out = cfg.dim if cfg.output_rule == "sum" else cfg.dim * (cfg.nodes - 1)
    return Network(
        cell=cell,
        w_in=ad.Tensor(init_rng.normal(0, 1, (in_dim, cfg.dim)) / np.sqrt(in_dim),
                       requires_grad=True),
        b_in=ad.Tensor(np.zeros(cfg.dim), requires_grad=True),
        w_out=ad.Tensor(init_rng.normal(0, 1, (cell_out, n_classes)) / np.sqrt(cell_out),
                        requires_grad=True),
        b_out=ad.Tensor(np.zeros(n_classes), requires_grad=True),
    )


@dataclass
class SearchState:
    cell: Cell
    network: Network
    tau: float
    M: int
    step: int
    rng: RngState
    schedule: dict  # tau_start, tau_end, total_steps, lr_w, momentum, lr_alpha
    velocities: dict = field(default_factory=dict)  # momentum buffers by tensor id
    histogram: dict = field(default_factory=dict)  # edge -> {code tuple: count}
    last_losses: tuple = (np.nan, np.nan)

    def weights(self) -> list:
        return self.network.weights()

    def arch_params(self) -> list:
        return self.network.logits()


@dataclass
class SearchReport:
    rows: list  # (step, train_loss, valid_loss, tau, wall_seconds) per epoch
    histogram: dict  # edge -> {code tuple: count}
    derived: ArchitectureCode
    sampling_events: int


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "parity":
        return make_dataset("parity", bits=cfg.dataset_bits, seed=cfg.seed)
    if cfg.dataset == "two_moons":
        return make_dataset(
            "two_moons", n=cfg.dataset_n, noise=cfg.dataset_noise, seed=cfg.seed
        )
    return make_dataset(
        "spirals", n=cfg.dataset_n, turns=cfg.dataset_turns,
        noise=cfg.dataset_noise, seed=cfg.seed,
    )


def _steps_per_epoch(n_train: int, batch_size: int) -> int:
    return max(1, (n_train + batch_size - 1) // batch_size)


def build_state(cfg: RunConfig, dataset: Dataset) -> SearchState:
    init_rng = np.random.default_rng(cfg.seed)
    network = make_network(dataset.features.shape[1], dataset.n_classes, cfg, init_rng)
    total = cfg.epochs * _steps_per_epoch(len(dataset.splits["train"]), cfg.batch_size)
    schedule = {
        "tau_start": cfg.tau_start,
        "tau_end": cfg.tau_end,
        "total_steps": total,
        "lr_w": cfg.lr_w,
        "momentum": cfg.momentum,
        "lr_alpha": cfg.lr_alpha,
    }
    return SearchState(
        cell=network.cell, network=network, tau=cfg.tau_start, M=cfg.M,
        step=0, rng=RngState(cfg.seed), schedule=schedule,
    )


def _tau_at(schedule: dict, step: int) -> float:
    total = schedule["total_steps"]
    if total <= 1:
        return schedule["tau_start"]
    frac = min(step, total - 1) / (total - 1)
    return schedule["tau_start"] + (schedule["tau_end"] - schedule["tau_start"]) * frac


def network_forward(network: Network, x: np.ndarray, samples: dict) -> ad.Tensor:
    h = ad.add(ad.matmul(ad.Tensor(x), network.w_in), network.b_in)
    out = cell_forward(network.cell, h, samples)
    return ad.add(ad.matmul(out, network.w_out), network.b_out)


def sample_edges(state: SearchState, use_hard: bool = True) -> dict:
    """One EGS draw per edge at the current temperature, recorded on tape."""
    samples = {}
    for e in edge_list(state.cell.n):
        p = state.cell.edges[e].probabilities()
        s = egs_sample(p, state.M, state.tau, state.rng)
        code = tuple(int(b) for b in s.hard.data)
        per_edge = state.histogram.setdefault(e, {})
        per_edge[code] = per_edge.get(code, 0) + 1
        samples[e] = s.hard if use_hard else s.soft
    return samples


def compute_loss(state: SearchState, batch, use_hard: bool = True):
    """Sample codes, run the network, return the batch cross-entropy."""
    x, y = batch
    samples = sample_edges(state, use_hard=use_hard)
    logits = network_forward(state.network, x, samples)
    loss = ad.cross_entropy_with_logits(logits, y)
    return loss, samples


def _check_finite(loss, state, samples, which):
    if np.isfinite(loss.data):
        return
    codes = {e: tuple(int(b) for b in ad.as_tensor(s).data) for e, s in samples.items()}
    raise SearchDiverged(
        f"non-finite {which} loss at step {state.step}, tau={state.tau:.4f}, "
        f"sampled codes {codes}"
    )


# resampling the architecture every step occasionally produces huge weight
# gradients; without this bound plain momentum at the default rates diverges
GRAD_CLIP_NORM = 5.0


def _sgd_momentum(tensors, grads, velocities, lr, momentum):
    # buffers decay every step; ops absent from the sampled graph see g=0
    total = 0.0
    for t in tensors:
        g = grads.get(t)
        if g is not None:
            total += float((g * g).sum())
    scale = 1.0 if total <= GRAD_CLIP_NORM**2 else GRAD_CLIP_NORM / np.sqrt(total)
    for t in tensors:
        g = grads.get(t)
        g = np.zeros_like(t.data) if g is None else g * scale
        v = velocities.get(id(t))
        v = momentum * v + g if v is not None else g
        velocities[id(t)] = v
        t.data = t.data - lr * v


def search_step(state: SearchState, train_batch, valid_batch) -> SearchState:
    """One alternating update: w on the train batch, logits on validation."""
    state.tau = _tau_at(state.schedule, state.step)

    with ad.Tape():
        train_loss, samples = compute_loss(state, train_batch)
        _check_finite(train_loss, state, samples, "training")
        grads = ad.backward(train_loss)
    _sgd_momentum(
        state.weights(), grads, state.velocities,
        state.schedule["lr_w"], state.schedule["momentum"],
    )

    with ad.Tape():
        valid_loss, samples = compute_loss(state, valid_batch)
        _check_finite(valid_loss, state, samples, "validation")
        grads = ad.backward(valid_loss)
    for logits in state.arch_params():
        g = grads.get(logits)
        if g is not None:
            logits.data = logits.data - state.schedule["lr_alpha"] * g

    state.last_losses = (float(train_loss.data), float(valid_loss.data))
    state.step += 1
    return state


def _batch_stream(idx, batch_size, rng):
    while True:
        order = rng.permutation(idx)
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            if len(chunk):
                yield chunk


def run_search(cfg: RunConfig, dataset: Dataset = None):
    """Full search: returns (SearchState, SearchReport)."""
    cfg.validate()
    dataset = dataset if dataset is not None else build_dataset(cfg)
    state = build_state(cfg, dataset)
    train_idx = dataset.splits["train"]
    valid_idx = dataset.splits["valid"]
    spe = _steps_per_epoch(len(train_idx), cfg.batch_size)
    batch_rng = np.random.default_rng(np.random.PCG64(cfg.seed).jumped(1))
    valid_stream = _batch_stream(valid_idx, cfg.batch_size,
                                 np.random.default_rng(np.random.PCG64(cfg.seed).jumped(2)))
    X, y = dataset.features, dataset.labels

    rows = []
    t0 = time.perf_counter()
    train_order = _batch_stream(train_idx, cfg.batch_size, batch_rng)
    for epoch in range(cfg.epochs):
        tl, vl = [], []
        for _ in range(spe):
            bi = next(train_order)
            vi = next(valid_stream)
            search_step(state, (X[bi], y[bi]), (X[vi], y[vi]))
            tl.append(state.last_losses[0])
            vl.append(state.last_losses[1])
        rows.append(
            (
                state.step,
                float(np.mean(tl)),
                float(np.mean(vl)),
                state.tau,
                time.perf_counter() - t0,
            )
        )
    derived = derive_architecture(state, cfg.derive_mode, draws=cfg.derive_draws)
    events = sum(sum(c.values()) for c in state.histogram.values())
    report = SearchReport(
        rows=rows, histogram=state.histogram, derived=derived,
        sampling_events=events,
    )
    return state, report


# ---------------------------------------------------------------------------
# derivation


def _edge_probability(state: SearchState, e) -> np.ndarray:
    return state.cell.edges[e].probabilities().data


def derive_architecture(state: SearchState, mode="mode-sample", draws=1000) -> ArchitectureCode:
    """Collapse the learned distributions into one binary code per edge."""
    if mode not in ("mode-sample", "max-marginal"):
        raise ValueError(f"unknown derive mode {mode!r}")
    k = len(state.cell.ops)
    keep = min(state.M, k)
    bits = np.zeros((num_edges(state.cell.n), k), dtype=np.uint8)
    rng = state.rng.clone()  # derivation must not disturb the search stream
    for row, e in enumerate(edge_list(state.cell.n)):
        p = _edge_probability(state, e)
        if mode == "mode-sample":
            with np.errstate(divide="ignore"):
                logp = np.log(p)
            codes = kernels.egs_hard_batch(logp, rng.uniform(draws * state.M * k), state.M)
            counts = {}
            for code in map(tuple, codes.tolist()):
                counts[code] = counts.get(code, 0) + 1
            # ties break toward the lexicographically larger tuple, which
            # prefers lower op indices
            best = max(counts.items(), key=lambda kv: (kv[1], kv[0]))[0]
            bits[row] = best
        else:
            marg = np.array(
                [marginal_inclusion_oracle(p, state.M, j) for j in range(k)]
            )
            chosen = marg >= 0.5
            if not np.any(chosen):
                chosen[int(np.argmax(p))] = True
            if chosen.sum() > keep:  # stay inside the reachable code set
                order = np.argsort(-p, kind="stable")
                keep_set = set(order[:keep].tolist())
                chosen = np.array([j in keep_set and chosen[j] for j in range(k)])
            bits[row] = chosen.astype(np.uint8)
    return ArchitectureCode(n=state.cell.n, K=k, bits=bits)


# ---------------------------------------------------------------------------
# retraining fixed architectures


@dataclass
class RetrainResult:
    code: ArchitectureCode
    train_acc: float
    valid_acc: float
    test_acc: float
    final_loss: float


def _constant_samples(code: ArchitectureCode) -> dict:
    rows = {e: r for r, e in enumerate(edge_list(code.n))}
    return {e: ad.Tensor(code.bits[rows[e]].astype(np.float64))
            for e in edge_list(code.n)}


def _accuracy(network, samples, x, y) -> float:
    logits = network_forward(network, x, samples)
    return float((np.argmax(logits.data, axis=1) == y).mean())


def retrain(code: ArchitectureCode, dataset: Dataset, cfg: RunConfig,
            epochs=None, seed_offset=1) -> RetrainResult:
    """Train fresh weights for a fixed code; report split accuracies."""
    if code.K != len(OP_SET) or code.n != cfg.nodes:
        raise ValueError(
            f"code dims (n={code.n}, K={code.K}) do not match config "
            f"(n={cfg.nodes}, K={len(OP_SET)})"
        )
    epochs = epochs if epochs is not None else cfg.retrain_epochs
    init_rng = np.random.default_rng(cfg.seed + seed_offset)
    network = make_network(dataset.features.shape[1], dataset.n_classes, cfg, init_rng)
    samples = _constant_samples(code)
    train_idx = dataset.splits["train"]
    X, y = dataset.features, dataset.labels
    stream = _batch_stream(
        train_idx, cfg.batch_size,
        np.random.default_rng(np.random.PCG64(cfg.seed + seed_offset).jumped(3)),
    )
    spe = _steps_per_epoch(len(train_idx), cfg.batch_size)
    velocities = {}
    loss_value = np.nan
    for _ in range(epochs * spe):
        bi = next(stream)
        with ad.Tape():
            logits = network_forward(network, X[bi], samples)
            loss = ad.cross_entropy_with_logits(logits, y[bi])
            if not np.isfinite(loss.data):
                raise SearchDiverged(f"non-finite retrain loss for code {code.bits}")
            grads = ad.backward(loss)
        _sgd_momentum(network.weights(), grads, velocities, cfg.lr_w, cfg.momentum)
        loss_value = float(loss.data)
    accs = {}
    for name in ("train", "valid", "test"):
        xs, ys = dataset.split(name)
        accs[name] = _accuracy(network, samples, xs, ys)
    return RetrainResult(
        code=code, train_acc=accs["train"], valid_acc=accs["valid"],
        test_acc=accs["test"], final_loss=loss_value,
    )


@dataclass
class BaselineResult:
    best: RetrainResult
    results: list  # RetrainResult per sampled code


def random_search_baseline(dataset: Dataset, cfg: RunConfig, budget=None) -> BaselineResult:
    """Best-of-budget uniformly sampled codes, each retrained briefly.

    The winner is picked by validation accuracy; test accuracy is reported
    for the winner only, keeping the comparison with the searched code fair.
    """
    budget = budget if budget is not None else cfg.baseline_budget
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    rng = np.random.default_rng(np.random.PCG64(cfg.seed).jumped(4))
    e, k = num_edges(cfg.nodes), len(OP_SET)
    results = []
    for trial in range(budget):
        bits = rng.integers(0, 2, size=(e, k), dtype=np.uint8)
        if not cfg.allow_empty_edges:
            for row in range(e):
                while not bits[row].any():
                    bits[row] = rng.integers(0, 2, size=k, dtype=np.uint8)
        code = ArchitectureCode(n=cfg.nodes, K=k, bits=bits)
        results.append(
            retrain(code, dataset, cfg, epochs=cfg.baseline_retrain_epochs,
                    seed_offset=100 + trial)
        )
    best = max(results, key=lambda r: r.valid_acc)
    return BaselineResult(best=best, results=results)


# ---------------------------------------------------------------------------
# reporting


def metrics_csv(report: SearchReport, include_wall: bool = True) -> str:
    cols = ["step", "train_loss", "valid_loss", "tau"]
    if include_wall:
        cols.append("wall_seconds")
    lines = [",".join(cols)]
    for step, tl, vl, tau, wall in report.rows:
        row = [str(step), repr(tl), repr(vl), repr(tau)]
        if include_wall:
            row.append(repr(wall))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
