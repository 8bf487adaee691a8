"""Generators shared by several test modules."""
import numpy as np

from veason.geometry import BoundingBox
from veason.response import TAGS, StructuredResponse

_ALPHABET = list("abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?<>/{}[]\"'\\\n\té漢🙂-_=+")


def random_think(rng: np.random.Generator, max_len: int = 60) -> str:
    while True:
        n = int(rng.integers(0, max_len))
        text = "".join(rng.choice(_ALPHABET, size=n)) if n else ""
        if not any(t in text for t in TAGS):
            return text


def random_number(rng: np.random.Generator, hi: float = 100.0) -> float:
    kind = rng.integers(3)
    if kind == 0:
        return float(rng.integers(0, int(hi)))
    if kind == 1:
        return round(float(rng.uniform(0, hi)), 2)
    return float(rng.uniform(0, hi))


def random_box(rng: np.random.Generator) -> BoundingBox:
    a, b = sorted(random_number(rng) for _ in range(2))
    c, d = sorted(random_number(rng) for _ in range(2))
    return BoundingBox(a, c, b, d)


def random_response(rng: np.random.Generator) -> StructuredResponse:
    boxes = tuple(random_box(rng) for _ in range(int(rng.integers(0, 4))))
    return StructuredResponse(random_think(rng), random_number(rng, 30.0), boxes)


def random_observation(rng: np.random.Generator, n_frames: int = 8, grid: int = 8):
    from veason.policy import Observation

    key = rng.random((n_frames, 3))
    frame = np.column_stack([
        rng.uniform(-grid / 2, grid / 2, (n_frames, 4)),
        np.full(n_frames, float(rng.random() < 0.8)),
        np.ones(n_frames),
    ])
    return Observation(key, frame, tuple(float(i) for i in range(n_frames)), 64, 64)


def random_policy(rng: np.random.Generator, scale: float = 0.5, cfg=None):
    import torch

    from veason.policy import PolicyConfig, ToyPolicy

    policy = ToyPolicy(cfg or PolicyConfig())
    n = policy.flat_parameters().numel()
    policy.set_flat_parameters(torch.as_tensor(scale * rng.standard_normal(n)))
    return policy


def all_actions(cfg, n_frames):
    from veason.policy import Action

    out = []
    for t in range(n_frames):
        for s in range(cfg.n_sizes):
            for c in range(cfg.grid * cfg.grid):
                out.append(Action(t, s, c))
        out.append(Action(t, cfg.n_sizes, 0))
    return out


def gradient_check_case(seed: int):
    """A random (policy, reference, group, config) for finite-difference checks.

    Seeds 0 and 1 pin beta to 0 and 1; the rest draw beta log-uniformly.
    """
    from veason.grpo import GrpoConfig, SampleGroup, advantages

    rng = np.random.default_rng([99, seed])
    obs = random_observation(rng, n_frames=int(rng.integers(2, 9)))
    old = random_policy(rng, 0.5)
    policy = random_policy(rng, 0.5)
    ref = random_policy(rng, 0.5)
    g = int(rng.integers(2, 17))
    actions, logp_old = old.sample(obs, g, rng)
    rewards = rng.uniform(0, 4, g)
    beta = 0.0 if seed == 0 else 1.0 if seed == 1 else float(10 ** rng.uniform(-3, 0.5))
    cfg = GrpoConfig(group_size=g, beta=beta)
    group = SampleGroup(f"case{seed}", obs, actions, rewards, logp_old, advantages(rewards))
    return policy, ref, group, cfg


# criterion number -> (passed, one-line detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


def report_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail
