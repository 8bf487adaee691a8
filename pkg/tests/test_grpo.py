import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import all_actions, gradient_check_case, random_observation, random_policy
from veason.grpo import (
    GrpoConfig, NumericalError, SampleGroup, advantages, batch_objective, grpo_objective,
    kl_estimate, step,
)
from veason.policy import PolicyConfig, ToyPolicy


class TestAdvantages:
    def test_example(self):
        a = advantages([1, 2, 3], epsilon_std=0.0)
        assert a == pytest.approx([-math.sqrt(1.5), 0.0, math.sqrt(1.5)], abs=1e-12)

    def test_zero_variance_exact_zeros(self):
        a = advantages([5, 5, 5])
        assert a.tolist() == [0.0, 0.0, 0.0]

    def test_errors(self):
        with pytest.raises(ValueError):
            advantages([1.0])
        with pytest.raises(ValueError):
            advantages([1.0, float("inf")])

    @settings(max_examples=300)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=16))
    def test_moments(self, rewards):
        a = advantages(rewards, 0.0)
        assert abs(a.mean()) <= 1e-9
        if len(set(rewards)) == 1 or np.std(rewards) == 0:
            assert a.tolist() == [0.0] * len(rewards)
        else:
            assert abs(a.std() - 1) <= 1e-9


class TestObjective:
    def test_single_response(self):
        lp = torch.zeros(1, dtype=torch.float64, requires_grad=True)
        obj, kl = grpo_objective(lp, torch.zeros(1), torch.ones(1), beta=0.0, kl=torch.tensor(0.3))
        assert float(obj.detach()) == 1.0

    def test_ratio_identity_at_sampling_point(self, rng):
        policy = random_policy(rng)
        obs = random_observation(rng)
        actions, logp_old = policy.sample(obs, 8, rng)
        adv = rng.standard_normal(8)
        logp = policy.log_prob(obs, actions)
        obj, _ = grpo_objective(logp, logp_old, adv, beta=0.0, kl=torch.tensor(0.0))
        assert float(obj.detach()) == pytest.approx(adv.sum(), abs=1e-12)
        obj.backward()
        pg = [p.grad.clone() for p in policy.parameters()]
        policy.zero_grad()
        (torch.as_tensor(adv) * policy.log_prob(obs, actions)).sum().backward()
        for a, b in zip(pg, policy.parameters()):
            assert torch.allclose(a, b.grad, atol=1e-12)

    def test_nonfinite_ratio_names_response(self):
        lp = torch.tensor([0.0, 800.0], dtype=torch.float64)
        with pytest.raises(NumericalError, match="g#1"):
            grpo_objective(lp, torch.zeros(2), torch.ones(2), 0.0, kl=torch.tensor(0.0), ids=["g#0", "g#1"])

    def test_clip_is_pessimistic(self):
        lp = torch.log(torch.tensor([1.5, 0.5], dtype=torch.float64))
        adv = torch.tensor([1.0, -1.0], dtype=torch.float64)
        obj, _ = grpo_objective(lp, torch.zeros(2), adv, 0.0, kl=torch.tensor(0.0), clip_range=0.2)
        assert float(obj) == pytest.approx(1.2 - 0.8, abs=1e-12)

    def test_needs_kl_source(self):
        with pytest.raises(ValueError):
            grpo_objective(torch.zeros(2), torch.zeros(2), torch.ones(2), 0.1)

    def test_kl_estimator(self, rng):
        lp = torch.as_tensor(rng.normal(size=50))
        assert float(kl_estimate(lp, lp)) == 0.0
        assert float(kl_estimate(lp, lp + torch.as_tensor(rng.normal(size=50)))) >= 0.0


class TestExactKl:
    def test_identical_policies(self, rng):
        p = random_policy(rng)
        obs = random_observation(rng)
        assert float(p.exact_kl(obs, p.copy()).detach()) == 0.0

    def test_matches_enumeration(self, rng):
        cfg = PolicyConfig(grid=3, size_fractions=(0.2, 0.5))
        for _ in range(5):
            p, r = random_policy(rng, 1.0, cfg), random_policy(rng, 1.0, cfg)
            obs = random_observation(rng, n_frames=4, grid=3)
            acts = all_actions(cfg, 4)
            lp = p.log_prob(obs, acts).detach().numpy()
            lr = r.log_prob(obs, acts).detach().numpy()
            assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)
            brute = float((np.exp(lp) * (lp - lr)).sum())
            assert float(p.exact_kl(obs, r).detach()) == pytest.approx(brute, abs=1e-10)


def flat_objective(policy, ref, group, cfg, flat):
    policy.set_flat_parameters(flat)
    with torch.no_grad():
        return float(batch_objective(policy, ref, [group], cfg)[0])


def finite_difference_agrees(seed, h=1e-5, rtol=1e-4):
    policy, ref, group, cfg = gradient_check_case(seed)
    theta = policy.flat_parameters().clone()
    policy.zero_grad()
    batch_objective(policy, ref, [group], cfg)[0].backward()
    auto = torch.cat([p.grad.reshape(-1) for p in policy.parameters()]).numpy()
    fd = np.empty_like(auto)
    for i in range(len(theta)):
        e = torch.zeros_like(theta)
        e[i] = h
        fd[i] = (flat_objective(policy, ref, group, cfg, theta + e)
                 - flat_objective(policy, ref, group, cfg, theta - e)) / (2 * h)
    policy.set_flat_parameters(theta)
    scale = max(np.abs(fd).max(), 1e-8)
    return bool(np.all(np.abs(auto - fd) <= rtol * scale)), float(np.abs(auto - fd).max() / scale)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_gradient_matches_finite_differences(seed):
    ok, err = finite_difference_agrees(seed)
    assert ok, err


class TestStep:
    def _group(self, rng, policy, obs, rewards):
        actions, lp = policy.sample(obs, len(rewards), rng)
        return SampleGroup("p", obs, actions, rewards, lp)

    def test_zero_advantages_and_beta_leave_parameters(self, rng):
        policy = random_policy(rng)
        ref = policy.copy()
        obs = random_observation(rng)
        before = policy.flat_parameters().clone()
        st_ = step(policy, ref, [self._group(rng, policy, obs, np.full(8, 2.0))], GrpoConfig(beta=0.0, learning_rate=1.0))
        assert torch.equal(before, policy.flat_parameters())
        assert st_.grad_norm == 0.0

    def test_stats_and_clipped_update(self, rng):
        policy = random_policy(rng)
        ref = random_policy(rng)
        obs = random_observation(rng)
        batch = [self._group(rng, policy, obs, rng.uniform(0, 4, 8)) for _ in range(3)]
        before = policy.flat_parameters().clone()
        st_ = step(policy, ref, batch, GrpoConfig(learning_rate=0.5, beta=0.1))
        assert st_.mean_reward == pytest.approx(np.concatenate([g.rewards for g in batch]).mean(), abs=1e-12)
        assert st_.kl >= -1e-9
        moved = float(torch.linalg.norm(policy.flat_parameters() - before))
        assert moved <= 0.5 * 1.0 + 1e-12
        assert moved == pytest.approx(0.5 * min(1.0, st_.grad_norm), rel=1e-9)

    def test_empty_batch(self):
        p = ToyPolicy()
        with pytest.raises(ValueError):
            step(p, p.copy(), [], GrpoConfig())


def test_config_validation_names_field():
    from veason.env import ConfigError

    for kwargs, field in [({"group_size": 1}, "group_size"), ({"beta": -1}, "beta"),
                          ({"epsilon_std": 0}, "epsilon_std"), ({"clip_range": 0}, "clip_range")]:
        with pytest.raises(ConfigError, match=field):
            GrpoConfig(**kwargs).validate()
