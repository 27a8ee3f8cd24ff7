"""Policy-gradient training: REINFORCE with a baseline, Tsallis-entropy
regularization, mixed-size batch scheduling, and lock-step batched rollouts.

The entropy term enters the loss as a bonus (subtracted, so gradient ascent
on entropy) because it exists to keep sparse output distributions from
collapsing onto a few actions early; a config flag flips the sign for
ablation runs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from . import model as M
from . import tensor as T
from . import vrp

_TRAIN_SEED_BASE = 1_000_000_000_000
_EVAL_SEED_BASE = 2_000_000_000_000


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def schedule(i: int, M: int) -> int:
    """1-based subset index for batch i; cycles 1..M within an epoch."""
    if i < 0 or M < 1:
        raise ValueError(f"schedule needs i >= 0 and M >= 1, got i={i}, M={M}")
    return (i + 1) - (i // M) * M


@dataclass
class TrainConfig:
    sizes: list
    batch_size: int = 128
    batches_per_epoch: int = 250
    epochs: int = 10
    beta: float = 0.0
    beta_decay: bool = True          # linear decay of beta to 0 over all batches
    entropy_bonus: bool = True       # False flips the sign (ablation)
    activation: str = "softmax"      # preset: softmax | entmax-reg | entmax-both
    baseline: str = "greedy_rollout"  # greedy_rollout | ema
    normalize_cost: bool = False
    seed: int = 0
    lr: float = 1e-4
    eval_instances_per_size: int = 128

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("sizes must be non-empty")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.batches_per_epoch % len(self.sizes) != 0:
            raise ValueError(
                f"batches_per_epoch={self.batches_per_epoch} must divide evenly "
                f"across {len(self.sizes)} sizes so every size gets equal batches"
            )
        if self.activation not in M.ACTIVATION_PRESETS:
            raise ValueError(f"unknown activation preset {self.activation!r}")
        if self.baseline not in ("greedy_rollout", "ema"):
            raise ValueError(f"unknown baseline kind {self.baseline!r}")


class Adam:
    """Adam on named parameter Values (lr 1e-4, betas 0.9/0.999, eps 1e-8)."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(v.data) for name, v in self.named}
        self.v = {name: np.zeros_like(v.data) for name, v in self.named}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.named:
            if p.grad is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * p.grad
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * p.grad ** 2
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


class BaselineState:
    """Variance-reduction baseline b(s); never contributes gradients.

    greedy_rollout: frozen parameter snapshot decoded greedily on the batch.
    ema: per-size exponential moving average of sampled batch cost (decay 0.8).
    """

    def __init__(self, kind: str, params: M.ModelParams | None = None, decay: float = 0.8):
        self.kind = kind
        self.snapshot = params.copy() if kind == "greedy_rollout" else None
        self.decay = decay
        self.means: dict[int, float] = {}

    def values(self, instances) -> np.ndarray:
        if self.kind == "greedy_rollout":
            with T.no_grad():
                results = M.rollout_batch(self.snapshot, instances, mode="greedy",
                                          bn_mode="eval")
            return np.array([
                vrp.tour_cost(inst, r.tour) for inst, r in zip(instances, results)
            ])
        n = instances[0].n
        return np.full(len(instances), self.means.get(n, 0.0))

    def observe(self, size: int, mean_cost: float):
        if self.kind != "ema":
            return
        if size not in self.means:
            self.means[size] = mean_cost
        else:
            self.means[size] = self.decay * self.means[size] + (1 - self.decay) * mean_cost


def update_baseline(baseline: BaselineState, params: M.ModelParams,
                    eval_instances: list) -> BaselineState:
    """End-of-epoch baseline refresh.

    greedy_rollout: adopt the current parameters when they beat the snapshot
    on the held-out set under a one-sided paired t-test at p < 0.05.
    ema: nothing to do."""
    if baseline.kind != "greedy_rollout":
        return baseline
    current = greedy_costs(params, eval_instances)
    snap = greedy_costs(baseline.snapshot, eval_instances)
    diffs = current - snap
    if np.all(diffs == 0.0):
        return baseline
    if np.std(diffs) == 0.0:
        if diffs[0] < 0.0:
            baseline.snapshot = params.copy()
        return baseline
    p = scipy_stats.ttest_rel(current, snap, alternative="less").pvalue
    if np.isfinite(p) and p < 0.05:
        baseline.snapshot = params.copy()
    return baseline


def greedy_costs(params: M.ModelParams, instances, chunk: int = 256) -> np.ndarray:
    """Greedy rollout cost per instance; instances grouped by size internally."""
    costs = np.empty(len(instances))
    by_size: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_size.setdefault(inst.n, []).append(i)
    for n in sorted(by_size):
        idxs = by_size[n]
        for lo in range(0, len(idxs), chunk):
            part = idxs[lo:lo + chunk]
            with T.no_grad():
                results = M.rollout_batch(params, [instances[i] for i in part],
                                          mode="greedy", bn_mode="eval")
            for i, r in zip(part, results):
                costs[i] = vrp.tour_cost(instances[i], r.tour)
    return costs


def batched_rollout(params: M.ModelParams, instances: list,
                    rng: np.random.Generator, bn_mode: str = "train"):
    """Sampled lock-step rollouts for a same-size batch.

    Returns (tours, logprobs, entropies, results): canonical tours, one
    differentiable sum-logprob and sum-entropy scalar per instance, and the
    full per-instance results (traces, support stats)."""
    results = M.rollout_batch(params, instances, mode="sample", rng=rng,
                              bn_mode=bn_mode)
    tours = [r.tour for r in results]
    logps = [r.logp for r in results]
    ents = [r.entropy for r in results]
    return tours, logps, ents, results


@dataclass
class StepStats:
    mean_cost: float
    loss: float
    grad_norm: float
    support_frac: float


def reinforce_loss(logps, entropies, advantages, beta: float,
                   entropy_bonus: bool = True) -> T.Value:
    """mean(advantage * sum_logprob) - beta * mean(sum_entropy).

    Advantages are constants; only the log-probabilities and entropies carry
    gradients."""
    lp = T.stack_scalars(logps)
    loss = T.mean_all(T.mul(lp, T.Value(np.asarray(advantages))))
    if beta != 0.0:
        ent = T.mean_all(T.stack_scalars(entropies))
        sign = -beta if entropy_bonus else beta
        loss = T.add(loss, T.scale(ent, sign))
    return loss


def _grad_norms(params: M.ModelParams):
    per_group: dict[str, float] = {}
    total = 0.0
    for name, v in params.trainable():
        if v.grad is None:
            continue
        sq = float(np.sum(v.grad ** 2))
        total += sq
        group = name.split(".")[0]
        per_group[group] = per_group.get(group, 0.0) + sq
    return np.sqrt(total), {k: np.sqrt(s) for k, s in sorted(per_group.items())}


def reinforce_step(params: M.ModelParams, optimizer: Adam, instances: list,
                   cfg: TrainConfig, baseline: BaselineState, beta: float,
                   rng: np.random.Generator) -> StepStats:
    """One sampled batch, loss, backward, and optimizer update."""
    tours, logps, ents, results = batched_rollout(params, instances, rng)
    costs = np.array([vrp.tour_cost(inst, t) for inst, t in zip(instances, tours)])
    base = baseline.values(instances)
    if cfg.normalize_cost:
        s = float(instances[0].n)
        costs_used, base_used = costs / s, base / s
    else:
        costs_used, base_used = costs, base
    advantages = costs_used - base_used

    params.zero_grad()
    loss = reinforce_loss(logps, ents, advantages, beta, cfg.entropy_bonus)
    T.backward(loss)
    grad_norm, per_group = _grad_norms(params)
    if not (np.isfinite(loss.item()) and np.isfinite(grad_norm)):
        raise DivergenceError(
            f"non-finite loss {loss.item()} or gradient {grad_norm}; "
            f"per-group gradient norms: {per_group}"
        )
    optimizer.step()
    baseline.observe(instances[0].n, float(costs.mean()))

    fracs = [f for r in results for f in r.support_fracs]
    return StepStats(float(costs.mean()), loss.item(), float(grad_norm),
                     float(np.mean(fracs)))


@dataclass
class TrainResult:
    params: M.ModelParams
    baseline: BaselineState
    epoch_rows: list = field(default_factory=list)
    batch_sizes: list = field(default_factory=list)


LOG_COLUMNS = ["epoch", "size_mix", "mean_cost", "loss", "grad_norm",
               "support_frac", "wall_seconds"]


def train_instance_seed(root_seed: int, counter: int) -> int:
    return _TRAIN_SEED_BASE + (root_seed << 22) + counter


def eval_instance_seed(root_seed: int, counter: int) -> int:
    return _EVAL_SEED_BASE + (root_seed << 22) + counter


class Trainer:
    """Owns parameters, optimizer, baseline, and the batch schedule."""

    def __init__(self, cfg: TrainConfig, model_cfg: M.ModelConfig | None = None):
        self.cfg = cfg
        if model_cfg is None:
            model_cfg = M.ModelConfig.from_preset(cfg.activation)
        else:
            attn, out = M.ACTIVATION_PRESETS[cfg.activation]
            if (model_cfg.attn_activation, model_cfg.out_activation) != (attn, out):
                raise ValueError("model config activations disagree with preset")
        self.params = M.ModelParams(model_cfg, seed=cfg.seed)
        self.optimizer = Adam(self.params.trainable(), lr=cfg.lr)
        self.baseline = BaselineState(cfg.baseline, self.params)
        self._instance_counter = 0
        k = 0
        self.eval_sets = {}
        for n in cfg.sizes:
            insts = []
            for _ in range(cfg.eval_instances_per_size):
                insts.append(vrp.generate(n, eval_instance_seed(cfg.seed, k)))
                k += 1
            self.eval_sets[n] = insts

    def _next_batch(self, n: int) -> list:
        batch = []
        for _ in range(self.cfg.batch_size):
            seed = train_instance_seed(self.cfg.seed, self._instance_counter)
            self._instance_counter += 1
            batch.append(vrp.generate(n, seed))
        return batch

    def _beta_at(self, global_batch: int, total_batches: int) -> float:
        if not self.cfg.beta_decay or total_batches <= 1:
            return self.cfg.beta
        return self.cfg.beta * (1.0 - global_batch / total_batches)

    def train(self, log_path: str | None = None,
              checkpoint_dir: str | None = None,
              progress=None) -> TrainResult:
        cfg = self.cfg
        result = TrainResult(self.params, self.baseline)
        total_batches = cfg.epochs * cfg.batches_per_epoch
        writer = None
        log_fh = None
        if log_path is not None:
            log_fh = open(log_path, "w", newline="")
            writer = csv.writer(log_fh)
            writer.writerow(LOG_COLUMNS)

        global_batch = 0
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.time()
            ep_stats = []
            for i in range(cfg.batches_per_epoch):
                m = schedule(i, len(cfg.sizes))
                n = cfg.sizes[m - 1]
                result.batch_sizes.append(n)
                batch = self._next_batch(n)
                beta = self._beta_at(global_batch, total_batches)
                rng = np.random.default_rng([cfg.seed, 31337, global_batch])
                stats = reinforce_step(self.params, self.optimizer, batch, cfg,
                                       self.baseline, beta, rng)
                ep_stats.append(stats)
                global_batch += 1
                if progress is not None:
                    progress(epoch, i, stats)

            update_baseline(self.baseline, self.params,
                            [inst for n in cfg.sizes for inst in self.eval_sets[n]])
            row = {
                "epoch": epoch,
                "size_mix": "+".join(str(s) for s in cfg.sizes),
                "mean_cost": float(np.mean([s.mean_cost for s in ep_stats])),
                "loss": float(np.mean([s.loss for s in ep_stats])),
                "grad_norm": float(np.mean([s.grad_norm for s in ep_stats])),
                "support_frac": float(np.mean([s.support_frac for s in ep_stats])),
                "wall_seconds": time.time() - t0,
            }
            result.epoch_rows.append(row)
            if writer is not None:
                writer.writerow([
                    row["epoch"], row["size_mix"], f"{row['mean_cost']:.6f}",
                    f"{row['loss']:.6f}", f"{row['grad_norm']:.6f}",
                    f"{row['support_frac']:.6f}", f"{row['wall_seconds']:.3f}",
                ])
                log_fh.flush()
            if checkpoint_dir is not None:
                M.save_checkpoint(self.params, f"{checkpoint_dir}/epoch_{epoch:03d}.json")

        if log_fh is not None:
            log_fh.close()
        if checkpoint_dir is not None:
            M.save_checkpoint(self.params, f"{checkpoint_dir}/final.json")
        return result
