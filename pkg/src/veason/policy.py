"""A tractable stand-in for the vision-language policy.

The policy factorizes an answer into three categorical heads: keyframe,
box size (or "no box"), and box-center cell on a ``grid x grid`` lattice.
Observations are per-frame estimates of the referred target (area, centre,
extent, presence) read off noisy per-object features. The keyframe head
scores frames with one shared weight vector; the size and centre heads map
the chosen frame's estimates to option logits through weight matrices, so
localization has to be learned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import BoundingBox
from .response import StructuredResponse

DTYPE = torch.float64

KEY_FEATURES = 3
# per-frame target estimate: cx, cy, w, h (grid cells, centred on the frame), presence, 1
FRAME_FEATURES = 6

THINK_STUB = (
    "Scan the sampled frames for the described object, pick the frame where it "
    "is most visible, then localize it there."
)


@dataclass(frozen=True)
class PolicyConfig:
    grid: int = 8
    size_fractions: tuple[float, ...] = (0.1, 0.2, 0.35, 0.5)
    max_objects: int = 3
    temperature: float = 1.0
    noise: float = 0.1
    init_scale: float = 0.0

    def validate(self) -> None:
        from .env import ConfigError

        if self.grid < 1:
            raise ConfigError("policy.grid: must be >= 1")
        if not self.size_fractions or not all(0 < f <= 1 for f in self.size_fractions):
            raise ConfigError("policy.size_fractions: must be a nonempty list in (0, 1]")
        if self.max_objects < 1:
            raise ConfigError("policy.max_objects: must be >= 1")
        if self.temperature < 0:
            raise ConfigError("policy.temperature: must be >= 0")
        if self.noise < 0:
            raise ConfigError("policy.noise: must be >= 0")
        if self.init_scale < 0:
            raise ConfigError("policy.init_scale: must be >= 0")

    @property
    def n_sizes(self) -> int:
        return len(self.size_fractions)

    @property
    def n_actions(self) -> int:
        """Number of distinct box-emitting actions per frame."""
        return self.grid * self.grid * self.n_sizes


@dataclass
class Observation:
    key: np.ndarray      # (T, KEY_FEATURES) keyframe scoring features
    frame: np.ndarray    # (T, FRAME_FEATURES) target estimate per frame
    sampled_times: tuple[float, ...] = field(default=())
    width: int = 64
    height: int = 64


@dataclass(frozen=True)
class Action:
    keyframe: int
    size: int  # index into size_fractions; len(size_fractions) means "no box"
    cell: int  # row * grid + col; ignored without a box


def option_features(raw: np.ndarray, cfg: PolicyConfig, sampled_times, width: int, height: int) -> Observation:
    """Reduce ``(T, slots, 8)`` slot features to per-frame target estimates."""
    area = np.clip(raw[..., 0], 0.0, None)
    match = np.clip(raw[..., 7].mean(axis=0), 0.0, 1.0)  # (slots,)
    presence = float(match.max()) if match.size else 0.0

    target_area = area @ match  # (T,)
    peak = max(float(target_area.max()), 1e-6)
    ratio = target_area / peak
    key = np.stack([ratio, ratio ** 2, target_area], axis=1)

    weight = area * match[None, :]
    norm = weight.sum(axis=1, keepdims=True)
    weight = np.where(norm > 1e-9, weight / np.maximum(norm, 1e-9), 0.0)
    est = np.einsum("ts,tsf->tf", weight, raw[..., 1:5])  # cx, cy, w, h in cells
    half = cfg.grid / 2
    frame = np.column_stack([
        est[:, 0] - half,
        est[:, 1] - half,
        presence * est[:, 2] - half,
        presence * est[:, 3] - half,
        np.full(len(est), presence),
        np.ones(len(est)),
    ])
    return Observation(key, frame, tuple(sampled_times), width, height)


def observe_sample(sample, cfg: PolicyConfig, rng: np.random.Generator | None = None,
                   noise: float | None = None) -> Observation:
    from .env import observe

    noise = cfg.noise if noise is None else noise
    raw = observe(sample, cfg.max_objects, cfg.grid, noise, rng)
    return option_features(raw, cfg, sample.sampled_times, sample.video.width, sample.video.height)


def action_box(action: Action, cfg: PolicyConfig, width: int, height: int) -> BoundingBox | None:
    if action.size >= cfg.n_sizes:
        return None
    row, col = divmod(action.cell, cfg.grid)
    cx = (col + 0.5) * width / cfg.grid
    cy = (row + 0.5) * height / cfg.grid
    half = cfg.size_fractions[action.size] * min(width, height) / 2
    return BoundingBox(
        round(max(cx - half, 0.0), 3),
        round(max(cy - half, 0.0), 3),
        round(min(cx + half, float(width)), 3),
        round(min(cy + half, float(height)), 3),
    )


def action_response(action: Action, obs: Observation, cfg: PolicyConfig) -> StructuredResponse:
    box = action_box(action, cfg, obs.width, obs.height)
    return StructuredResponse(
        THINK_STUB,
        float(obs.sampled_times[action.keyframe]),
        (box,) if box is not None else (),
    )


class ToyPolicy(torch.nn.Module):
    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(seed)
        s = cfg.init_scale
        k = cfg.grid

        def init(*shape):
            return torch.nn.Parameter(s * torch.randn(*shape, generator=g, dtype=DTYPE))

        self.theta_key = init(KEY_FEATURES)
        self.w_col = init(k, 2)          # on (cx, 1)
        self.w_row = init(k, 2)          # on (cy, 1)
        self.w_size = init(cfg.n_sizes + 1, 4)  # on (w, h, presence, 1)

    # -- distributions -----------------------------------------------------

    def head_log_probs(self, obs: Observation):
        """Log-probabilities of each head: key (T,), size (T, S+1), center (T, K^2)."""
        temp = self.cfg.temperature if self.cfg.temperature > 0 else 1.0
        frame = torch.as_tensor(obs.frame, dtype=DTYPE)
        key = torch.as_tensor(obs.key, dtype=DTYPE) @ self.theta_key
        col = frame[:, [0, 5]] @ self.w_col.T
        row = frame[:, [1, 5]] @ self.w_row.T
        center = (row[:, :, None] + col[:, None, :]).reshape(len(frame), -1)
        size = frame[:, 2:] @ self.w_size.T
        return (
            torch.log_softmax(key / temp, dim=-1),
            torch.log_softmax(size / temp, dim=-1),
            torch.log_softmax(center / temp, dim=-1),
        )

    def log_prob(self, obs: Observation, actions: list[Action]) -> torch.Tensor:
        lk, ls, lc = self.head_log_probs(obs)
        return self._log_prob_from_heads(lk, ls, lc, actions)

    def _log_prob_from_heads(self, lk, ls, lc, actions):
        t = torch.tensor([a.keyframe for a in actions])
        s = torch.tensor([a.size for a in actions])
        c = torch.tensor([a.cell for a in actions])
        has_box = (s < self.cfg.n_sizes).to(DTYPE)
        return lk[t] + ls[t, s] + has_box * lc[t, c]

    def exact_kl(self, obs: Observation, ref: "ToyPolicy") -> torch.Tensor:
        """KL(self || ref) over the full joint action distribution."""
        lk, ls, lc = self.head_log_probs(obs)
        with torch.no_grad():
            rk, rs, rc = ref.head_log_probs(obs)
        pk, ps, pc = lk.exp(), ls.exp(), lc.exp()
        kl_key = (pk * (lk - rk)).sum()
        kl_size = (ps * (ls - rs)).sum(dim=-1)               # (T,)
        kl_center = (pc * (lc - rc)).sum(dim=-1)             # (T,)
        p_box = 1.0 - ps[:, -1]
        return kl_key + (pk * (kl_size + p_box * kl_center)).sum()

    # -- sampling ----------------------------------------------------------

    @torch.no_grad()
    def sample(self, obs: Observation, n: int, rng: np.random.Generator) -> tuple[list[Action], np.ndarray]:
        lk, ls, lc = (x.numpy() for x in self.head_log_probs(obs))
        actions = []
        for _ in range(n):
            if self.cfg.temperature == 0:
                t = int(np.argmax(lk))
                s = int(np.argmax(ls[t]))
                c = int(np.argmax(lc[t]))
            else:
                t = _draw(np.exp(lk), rng)
                s = _draw(np.exp(ls[t]), rng)
                c = _draw(np.exp(lc[t]), rng)
            if s == self.cfg.n_sizes:
                c = 0
            actions.append(Action(t, s, c))
        logp = self._log_prob_from_heads(*(torch.as_tensor(x) for x in (lk, ls, lc)), actions).numpy()
        return actions, logp

    def greedy(self, obs: Observation) -> Action:
        with torch.no_grad():
            lk, ls, lc = (x.numpy() for x in self.head_log_probs(obs))
        t = int(np.argmax(lk))
        s = int(np.argmax(ls[t]))
        c = int(np.argmax(lc[t])) if s < self.cfg.n_sizes else 0
        return Action(t, s, c)

    # -- parameters --------------------------------------------------------

    def flat_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def set_flat_parameters(self, flat) -> None:
        flat = torch.as_tensor(flat, dtype=DTYPE)
        i = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(flat[i:i + n].reshape(p.shape))
                i += n

    def state_json(self) -> dict:
        return {
            "config": {
                "grid": self.cfg.grid,
                "size_fractions": list(self.cfg.size_fractions),
                "max_objects": self.cfg.max_objects,
                "temperature": self.cfg.temperature,
                "noise": self.cfg.noise,
                "init_scale": self.cfg.init_scale,
            },
            "params": {name: p.detach().tolist() for name, p in self.named_parameters()},
        }

    @classmethod
    def from_state_json(cls, d: dict) -> "ToyPolicy":
        c = dict(d["config"])
        c["size_fractions"] = tuple(c["size_fractions"])
        policy = cls(PolicyConfig(**c))
        with torch.no_grad():
            for name, p in policy.named_parameters():
                if name not in d["params"]:
                    raise ValueError(f"checkpoint is missing parameter {name}")
                value = torch.tensor(d["params"][name], dtype=DTYPE)
                if value.shape != p.shape:
                    raise ValueError(f"checkpoint parameter {name} has shape {tuple(value.shape)}")
                p.copy_(value)
        return policy

    def copy(self) -> "ToyPolicy":
        other = ToyPolicy(self.cfg)
        other.load_state_dict(self.state_dict())
        return other


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(p) - 1))
