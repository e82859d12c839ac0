"""Supervised (MLE) and group-relative policy-gradient training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .decoding import DecodeRequest, sample
from .errors import DivergenceDetected, EvaluationFailed
from .folding import fold_summary
from .policy import Policy, sequence_log_probs
from .structure import Structure
from .thermo import EnergyParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardBreakdown:
    r_prob: float
    r_mfe: int
    r_umfe: int
    combined: float
    failed: bool = False


NEUTRAL_REWARD = RewardBreakdown(0.0, 0, 0, 0.0, failed=True)


def combine_reward(r_prob: float, r_mfe: int, r_umfe: int) -> float:
    return 0.5 * r_prob + 0.25 * r_mfe + 0.25 * r_umfe


def compute_reward(x: str, y: Structure, params: EnergyParams) -> RewardBreakdown:
    """Thermodynamic reward of design ``x`` for target ``y``.

    A failed evaluation yields the neutral reward 0 instead of an exception.
    """
    try:
        ev = fold_summary(x, y, params, with_pair_probs=False)
    except EvaluationFailed:
        return NEUTRAL_REWARD
    if not math.isfinite(ev.prob):
        return NEUTRAL_REWARD
    r_mfe, r_umfe = int(ev.is_mfe), int(ev.is_umfe)
    return RewardBreakdown(ev.prob, r_mfe, r_umfe, combine_reward(ev.prob, r_mfe, r_umfe))


@dataclass
class GroupStats:
    rewards: np.ndarray
    baseline: float
    sigma: float
    advantages: np.ndarray
    eps: float = 1e-8
    sequences: list = field(default_factory=list)


def group_stats(rewards, eps: float = 1e-8) -> GroupStats:
    r = np.asarray(rewards, dtype=float)
    b = float(r.mean())
    if np.all(r == r[0]):
        # exact zeros; float rounding in the mean must not leak a signal
        return GroupStats(r, b, 0.0, np.zeros_like(r), eps)
    sigma = float(r.std())
    return GroupStats(r, b, sigma, (r - b) / (sigma + eps), eps)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 32
    group_k: int = 8
    total_steps: int = 1000
    clip_norm: float = 1.0
    seed: int = 0
    adv_eps: float = 1e-8
    temperature: float = 1.0

    def __post_init__(self):
        if self.group_k < 2:
            raise ValueError("group_k must be at least 2")
        if min(self.lr, self.batch_size, self.total_steps, self.clip_norm) <= 0:
            raise ValueError("lr, batch_size, total_steps and clip_norm must be positive")


def rl_defaults(**overrides) -> TrainConfig:
    base = dict(lr=1e-5, group_k=8, total_steps=200)
    base.update(overrides)
    return TrainConfig(**base)


def make_optimizer(policy: Policy, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(policy.model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas),
                            eps=cfg.adam_eps)


def _apply(policy: Policy, loss: torch.Tensor, optimizer, cfg: TrainConfig, backup: dict):
    if not torch.isfinite(loss):
        policy.model.load_state_dict(backup)
        raise DivergenceDetected(f"non-finite loss {loss.item()}", checkpoint=policy)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(policy.model.parameters(), cfg.clip_norm)
    optimizer.step()


def _snapshot(policy: Policy) -> dict:
    return {k: v.clone() for k, v in policy.model.state_dict().items()}


# -- supervised learning --------------------------------------------------------------


def sl_loss(policy: Policy, batch) -> torch.Tensor:
    """Mean negative log-likelihood per record; ``batch`` holds (structure, sequence)."""
    return -sequence_log_probs(policy, batch, constrained=False).mean()


def train_sl(policy: Policy, records, cfg: TrainConfig, callback=None):
    """Mini-batch MLE on (structure, sequence) records.

    Returns a trained copy of ``policy`` and the per-step loss trace.
    """
    pairs = [(r.target, r.design) if hasattr(r, "design") else tuple(r) for r in records]
    if not pairs:
        raise ValueError("empty SL corpus")
    policy = policy.copy()
    policy.model.train()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(policy, cfg)
    trace = []
    order = rng.permutation(len(pairs))
    cursor = 0
    for step in range(cfg.total_steps):
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(len(pairs))
            cursor = 0
        idx = order[cursor: cursor + cfg.batch_size]
        cursor += cfg.batch_size
        backup = _snapshot(policy)
        loss = sl_loss(policy, [pairs[i] for i in idx])
        _apply(policy, loss, optimizer, cfg, backup)
        value = loss.item()
        trace.append((step, value))
        if callback is not None:
            callback(step, value)
    policy.model.eval()
    meta = policy.train_meta.setdefault("sl", {})
    meta.update(steps=cfg.total_steps, final_loss=trace[-1][1], config=asdict(cfg),
                loss_tail=[v for _, v in trace[-20:]])
    return policy, trace


# -- GRPO -------------------------------------------------------------------------------


def grpo_surrogate(policy: Policy, y: Structure, sequences, advantages,
                   temperature: float = 1.0) -> torch.Tensor:
    """-(1/K) sum_k A_k log p~(x_k | y) under the masked sampling distribution."""
    adv = torch.as_tensor(np.asarray(advantages, dtype=float))
    logp = sequence_log_probs(policy, [(y, x) for x in sequences], constrained=True,
                              temperature=temperature)
    return -(adv * logp).mean()


def grpo_step(policy: Policy, y: Structure, K: int, params: EnergyParams, cfg: TrainConfig,
              optimizer=None, step: int = 0) -> GroupStats:
    """Sample a group of ``K`` constrained designs for ``y`` and take one update.

    A group whose rewards are all equal carries no signal; its update is
    skipped so the parameters stay bit-identical.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if optimizer is None:
        optimizer = make_optimizer(policy, cfg)
    req = DecodeRequest(y, K, cfg.temperature, seed=_step_seed(cfg.seed, step))
    seqs = sample(policy, req).sequences
    rewards = [compute_reward(x, y, params).combined for x in seqs]
    stats = group_stats(rewards, cfg.adv_eps)
    stats.sequences = seqs
    if np.any(stats.advantages != 0):
        backup = _snapshot(policy)
        loss = grpo_surrogate(policy, y, seqs, stats.advantages, cfg.temperature)
        _apply(policy, loss, optimizer, cfg, backup)
    return stats


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0])


def train_rl(policy: Policy, rl_set, cfg: TrainConfig, params: EnergyParams, callback=None):
    """GRPO over shuffled passes of ``rl_set`` for ``cfg.total_steps`` group updates.

    Returns the checkpoint from the pass with the highest mean group reward
    and the per-step trace ``(step, structure, mean_reward)``.
    """
    structures = list(rl_set)
    if not structures:
        raise ValueError("empty RL structure set")
    policy = policy.copy()
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(policy, cfg)
    trace = []
    best_mean, best_state = -math.inf, _snapshot(policy)
    epoch_rewards = []
    order = []
    for step in range(cfg.total_steps):
        if not order:
            order = list(rng.permutation(len(structures)))
        y = structures[order.pop(0)]
        stats = grpo_step(policy, y, cfg.group_k, params, cfg, optimizer, step)
        mean_r = float(stats.rewards.mean())
        trace.append((step, y.text, mean_r))
        epoch_rewards.append(mean_r)
        if callback is not None:
            callback(step, y, stats)
        if not order or step == cfg.total_steps - 1:
            m = float(np.mean(epoch_rewards))
            log.info("rl pass ending at step %d: mean reward %.4f", step, m)
            if m > best_mean:
                best_mean, best_state = m, _snapshot(policy)
            epoch_rewards = []
    policy.model.load_state_dict(best_state)
    meta = policy.train_meta.setdefault("rl", {})
    meta.update(steps=cfg.total_steps, best_pass_mean_reward=best_mean, config=asdict(cfg))
    return policy, trace


def mean_group_reward(policy: Policy, structures, K: int, params: EnergyParams, seed: int,
                      temperature: float = 1.0) -> float:
    """Average reward of ``K`` constrained samples per structure, fixed sample streams."""
    totals = []
    for y in structures:
        seqs = sample(policy, DecodeRequest(y, K, temperature, seed)).sequences
        totals.append(np.mean([compute_reward(x, y, params).combined for x in seqs]))
    return float(np.mean(totals))
