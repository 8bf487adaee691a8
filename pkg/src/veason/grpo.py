"""Group-relative advantages and the KL-regularized surrogate objective.

Nothing here depends on a particular policy class. A policy only has to be
a ``torch.nn.Module`` exposing ``log_prob(obs, actions)``; if it also has
``exact_kl(obs, ref)`` the KL term is computed exactly, otherwise it is
estimated from the group's reference log-probabilities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import torch


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    beta: float = 5e-3
    learning_rate: float = 1e-6
    epsilon_std: float = 1e-6
    clip_range: float | None = None
    max_grad_norm: float = 1.0

    def validate(self) -> None:
        from .env import ConfigError

        if self.group_size < 2:
            raise ConfigError("grpo.group_size: must be >= 2")
        if not self.beta >= 0:
            raise ConfigError("grpo.beta: must be >= 0")
        if not self.learning_rate >= 0:
            raise ConfigError("grpo.learning_rate: must be >= 0")
        if not self.epsilon_std > 0:
            raise ConfigError("grpo.epsilon_std: must be > 0")
        if self.clip_range is not None and not self.clip_range > 0:
            raise ConfigError("grpo.clip_range: must be > 0 when set")
        if not self.max_grad_norm > 0:
            raise ConfigError("grpo.max_grad_norm: must be > 0")


def advantages(rewards: Sequence[float], epsilon_std: float = 1e-6) -> np.ndarray:
    """Z-score rewards within a group using the population standard deviation.

    A zero-variance group returns exact zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    # identical rewards can still leave rounding residue after centering
    if np.all(r == r[0]):
        return np.zeros_like(r)
    std = r.std()
    if std == 0.0:  # spread below what the variance can represent
        return np.zeros_like(r)
    return (r - r.mean()) / (std + epsilon_std)


@dataclass
class SampleGroup:
    prompt_id: str
    obs: Any
    actions: list
    rewards: np.ndarray
    logprob_old: np.ndarray
    advantages: np.ndarray | None = None
    logprob_ref: np.ndarray | None = None
    breakdowns: list = field(default_factory=list)
    response_lengths: np.ndarray | None = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.logprob_old = np.asarray(self.logprob_old, dtype=np.float64)
        g = len(self.actions)
        if g < 2 or len(self.rewards) != g or len(self.logprob_old) != g:
            raise ValueError(f"{self.prompt_id}: inconsistent group of size {g}")
        if not np.all(np.isfinite(self.logprob_old)):
            raise NumericalError(f"{self.prompt_id}: non-finite old log-probabilities")


def kl_estimate(logprob_new: torch.Tensor, logprob_ref: torch.Tensor) -> torch.Tensor:
    """Unbiased non-negative KL estimator averaged over samples from the policy."""
    d = logprob_ref - logprob_new
    return (torch.exp(d) - d - 1).mean()


def grpo_objective(
    logprob_new: torch.Tensor,
    logprob_old: torch.Tensor,
    adv: torch.Tensor,
    beta: float,
    kl: torch.Tensor | None = None,
    logprob_ref: torch.Tensor | None = None,
    clip_range: float | None = None,
    ids: Sequence[str] | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(objective, kl)`` for one group, to be maximized.

    ``objective = sum_i ratio_i * A_i - beta * KL``. Pass ``kl`` when it is
    known exactly; otherwise ``logprob_ref`` feeds the sample estimator.
    """
    logprob_old = torch.as_tensor(logprob_old, dtype=logprob_new.dtype)
    adv = torch.as_tensor(adv, dtype=logprob_new.dtype)
    ratio = torch.exp(logprob_new - logprob_old)
    bad = ~torch.isfinite(ratio)
    if bool(bad.any()):
        i = int(torch.nonzero(bad)[0])
        name = ids[i] if ids is not None else str(i)
        raise NumericalError(f"non-finite probability ratio for response {name}")
    surrogate = ratio * adv
    if clip_range is not None:
        clipped = torch.clamp(ratio, 1 - clip_range, 1 + clip_range) * adv
        surrogate = torch.minimum(surrogate, clipped)
    if kl is None:
        if logprob_ref is None:
            raise ValueError("either kl or logprob_ref is required")
        kl = kl_estimate(logprob_new, torch.as_tensor(logprob_ref, dtype=logprob_new.dtype))
    return surrogate.sum() - beta * kl, kl


def group_objective(policy, ref_policy, group: SampleGroup, cfg: GrpoConfig) -> tuple[torch.Tensor, torch.Tensor]:
    if group.advantages is None:
        group.advantages = advantages(group.rewards, cfg.epsilon_std)
    logp = policy.log_prob(group.obs, group.actions)
    ids = [f"{group.prompt_id}#{i}" for i in range(len(group.actions))]
    if hasattr(policy, "exact_kl"):
        kl = policy.exact_kl(group.obs, ref_policy)
        return grpo_objective(logp, group.logprob_old, group.advantages, cfg.beta, kl=kl,
                              clip_range=cfg.clip_range, ids=ids)
    if group.logprob_ref is None:
        with torch.no_grad():
            group.logprob_ref = ref_policy.log_prob(group.obs, group.actions).numpy()
    return grpo_objective(logp, group.logprob_old, group.advantages, cfg.beta,
                          logprob_ref=group.logprob_ref, clip_range=cfg.clip_range, ids=ids)


def batch_objective(policy, ref_policy, batch: Sequence[SampleGroup], cfg: GrpoConfig):
    """Mean group objective and mean KL over a batch."""
    objs, kls = zip(*(group_objective(policy, ref_policy, g, cfg) for g in batch))
    return torch.stack(objs).mean(), torch.stack(kls).mean()


@dataclass
class StepStats:
    step: int
    mean_reward: float
    mean_r_f: float
    mean_r_k: float
    mean_r_s: float
    mean_r_u: float
    kl: float
    grad_norm: float
    mean_response_actions: float

    FIELDS = ("step", "mean_reward", "mean_r_f", "mean_r_k", "mean_r_s", "mean_r_u",
              "kl", "grad_norm", "mean_response_actions")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def step(policy, ref_policy, batch: Sequence[SampleGroup], cfg: GrpoConfig, step_index: int = 0) -> StepStats:
    """One clipped gradient-ascent update on the batch objective."""
    if not batch:
        raise ValueError("batch must be nonempty")
    policy.zero_grad()
    objective, kl = batch_objective(policy, ref_policy, batch, cfg)
    objective.backward()
    params = [p for p in policy.parameters() if p.grad is not None]
    grad_norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    if not math.isfinite(grad_norm):
        raise NumericalError(f"non-finite gradient at step {step_index}")
    scale = min(1.0, cfg.max_grad_norm / grad_norm) if grad_norm > 0 else 0.0
    with torch.no_grad():
        for p in params:
            p.add_(p.grad, alpha=cfg.learning_rate * scale)
    for p in policy.parameters():
        if not bool(torch.isfinite(p).all()):
            raise NumericalError(f"non-finite parameters after step {step_index}")

    rewards = np.concatenate([g.rewards for g in batch])
    parts = np.array([[b.r_format, b.r_temporal, b.r_spatial, b.r_unified]
                      for g in batch for b in g.breakdowns]) if batch[0].breakdowns else np.full((1, 4), np.nan)
    lengths = np.concatenate([g.response_lengths for g in batch]) if batch[0].response_lengths is not None else np.array([np.nan])
    return StepStats(
        step=step_index,
        mean_reward=float(rewards.mean()),
        mean_r_f=float(parts[:, 0].mean()),
        mean_r_k=float(parts[:, 1].mean()),
        mean_r_s=float(parts[:, 2].mean()),
        mean_r_u=float(parts[:, 3].mean()),
        kl=float(kl.detach()),
        grad_norm=grad_norm,
        mean_response_actions=float(lengths.mean()),
    )
