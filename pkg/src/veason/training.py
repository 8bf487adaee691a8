"""GRPO training of the toy policy and greedy inference with a propagator."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import Sample
from .grpo import GrpoConfig, NumericalError, SampleGroup, StepStats, step
from .policy import ToyPolicy, action_box, action_response, observe_sample
from .response import serialize_response
from .rewards import MaskPropagator, RewardWeights, total_reward

log = logging.getLogger(__name__)

# named sub-streams of the run seed
STREAM_ORDER, STREAM_SAMPLE, STREAM_NOISE, STREAM_INFER = 2, 3, 4, 5


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 16
    epochs: int | None = None

    def validate(self) -> None:
        from .env import ConfigError

        if self.steps < 0:
            raise ConfigError("train.steps: must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size: must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("train.epochs: must be >= 0")

    def n_steps(self, n_samples: int) -> int:
        if self.epochs is None:
            return self.steps
        return -(-self.epochs * n_samples // self.batch_size)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


class RewardCache:
    """Memoizes scores of identical response texts on the same sample."""

    def __init__(self, weights: RewardWeights, propagator: MaskPropagator):
        self.weights = weights
        self.propagator = propagator
        self._cache = {}

    def __call__(self, sample: Sample, text: str):
        key = (sample.sample_id, text)
        hit = self._cache.get(key)
        if hit is None:
            hit = total_reward(text, sample.frames, self.weights, self.propagator)
            self._cache[key] = hit
        return hit


def rollout_group(policy: ToyPolicy, sample: Sample, group_size: int, score: RewardCache,
                  sample_rng: np.random.Generator, noise_rng: np.random.Generator) -> SampleGroup:
    obs = observe_sample(sample, policy.cfg, noise_rng)
    actions, logp = policy.sample(obs, group_size, sample_rng)
    breakdowns = [score(sample, serialize_response(action_response(a, obs, policy.cfg))) for a in actions]
    lengths = np.array([0.0 if a.size >= policy.cfg.n_sizes else 1.0 for a in actions])
    return SampleGroup(
        prompt_id=sample.sample_id,
        obs=obs,
        actions=actions,
        rewards=np.array([b.r_total for b in breakdowns]),
        logprob_old=logp,
        breakdowns=breakdowns,
        response_lengths=lengths,
    )


def train(
    samples: Sequence[Sample],
    policy: ToyPolicy,
    grpo_cfg: GrpoConfig,
    weights: RewardWeights,
    propagator: MaskPropagator,
    train_cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> tuple[ToyPolicy, list[StepStats]]:
    """Run GRPO on ``samples``; the reference policy is ``policy`` frozen at entry."""
    if not samples:
        raise ValueError("training set is empty")
    ref = policy.copy()
    for p in ref.parameters():
        p.requires_grad_(False)
    score = RewardCache(weights, propagator)
    n = len(samples)
    order: list[int] = []
    epoch = 0
    stats = []
    for k in range(train_cfg.n_steps(n)):
        batch_idx = []
        while len(batch_idx) < train_cfg.batch_size:
            if not order:
                order = _stream(seed, STREAM_ORDER, epoch).permutation(n).tolist()
                epoch += 1
            batch_idx.append(order.pop(0))
        batch = [
            rollout_group(policy, samples[i], grpo_cfg.group_size, score,
                          _stream(seed, STREAM_SAMPLE, k, j), _stream(seed, STREAM_NOISE, k, j))
            for j, i in enumerate(batch_idx)
        ]
        st = step(policy, ref, batch, grpo_cfg, step_index=k)
        stats.append(st)
        if k % 50 == 0:
            log.info("step %d reward %.3f kl %.4g", k, st.mean_reward, st.kl)
    return policy, stats


def stats_csv(stats: Sequence[StepStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(StepStats.FIELDS)
    for s in stats:
        w.writerow([s.step] + [repr(float(v)) for v in s.row()[1:]])
    return buf.getvalue()


def read_stats_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("curves CSV has no rows")
    missing = set(StepStats.FIELDS) - set(rows[0])
    if missing:
        raise ValueError(f"curves CSV is missing columns: {sorted(missing)}")
    out = []
    for r in rows:
        try:
            out.append({f: float(r[f]) for f in StepStats.FIELDS})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad curves row {r}: {exc}") from None
    return out


def infer(policy: ToyPolicy, samples: Sequence[Sample], propagator: MaskPropagator,
          seed: int = 0) -> dict[str, np.ndarray]:
    """Greedy decode, then propagate the keyframe box into a mask sequence."""
    preds = {}
    for i, sample in enumerate(samples):
        obs = observe_sample(sample, policy.cfg, _stream(seed, STREAM_INFER, i))
        action = policy.greedy(obs)
        preds[sample.sample_id] = propagate_action(policy, sample, action, obs, propagator)
    return preds


def propagate_action(policy, sample, action, obs, propagator) -> np.ndarray:
    box = action_box(action, policy.cfg, obs.width, obs.height)
    gt = sample.gt
    if box is None:
        return np.zeros_like(gt.merged)
    masks = np.asarray(propagator.propagate([box], sample.frames, action.keyframe), dtype=bool)
    if masks.shape != gt.merged.shape:
        raise NumericalError(f"{sample.sample_id}: propagator returned shape {masks.shape}")
    return masks


def mean_reward_of(policy: ToyPolicy, samples: Sequence[Sample], weights: RewardWeights,
                   propagator: MaskPropagator, seed: int = 0) -> float:
    """Expected total reward under the policy's exact action distribution is
    too costly; this is the greedy-decode reward averaged over samples."""
    score = RewardCache(weights, propagator)
    vals = []
    for i, sample in enumerate(samples):
        obs = observe_sample(sample, policy.cfg, _stream(seed, STREAM_INFER, i))
        a = policy.greedy(obs)
        vals.append(score(sample, serialize_response(action_response(a, obs, policy.cfg))).r_total)
    return float(np.mean(vals))
