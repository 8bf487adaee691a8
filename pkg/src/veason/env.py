"""Deterministic synthetic videos of moving shapes with occluding bars.

Every video is a pure function of its parameters, so a manifest only has to
store the parameters plus the RLE ground truth; frames and instance label
maps are re-rasterized on demand.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, RleMask, box_to_mask, rle_decode, rle_encode, tight_box
from .rewards import GroundTruthSample, SceneFrames

PALETTE = ("red", "green", "blue", "yellow", "purple", "orange", "white", "cyan")
SHAPES = ("rectangle", "ellipse")
SELECTORS = ("color", "largest", "fastest", "leftmost", "none")


@dataclass(frozen=True)
class EnvConfig:
    width: int = 64
    height: int = 64
    n_frames: int = 8
    stride: float = 1.0
    min_objects: int = 2
    max_objects: int = 3
    size_range: tuple[float, float] = (0.28, 0.42)
    aspect_range: tuple[float, float] = (0.85, 1.18)
    max_speed: float = 6.0
    occluder_prob: float = 0.5
    occluder_width: tuple[int, int] = (3, 7)
    n_colors: int = 6
    duplicate_color_prob: float = 0.05

    def validate(self) -> None:
        _require(self.width > 0 and self.height > 0, "env.width/env.height", "must be positive")
        _require(self.n_frames >= 1, "env.n_frames", "must be >= 1")
        _require(self.stride > 0, "env.stride", "must be positive")
        _require(1 <= self.min_objects <= self.max_objects, "env.min_objects", "must satisfy 1 <= min_objects <= max_objects")
        _require(0 < self.size_range[0] <= self.size_range[1] < 1, "env.size_range", "must be 0 < lo <= hi < 1")
        _require(0 < self.aspect_range[0] <= self.aspect_range[1], "env.aspect_range", "must be positive and ordered")
        _require(self.max_speed >= 0, "env.max_speed", "must be >= 0")
        _require(0 <= self.occluder_prob <= 1, "env.occluder_prob", "must lie in [0, 1]")
        _require(self.max_objects < self.n_colors <= len(PALETTE), "env.n_colors",
                 f"must exceed max_objects and be <= {len(PALETTE)}")
        _require(0 <= self.duplicate_color_prob <= 1, "env.duplicate_color_prob", "must lie in [0, 1]")

    @property
    def sampled_times(self) -> tuple[float, ...]:
        return tuple(round(i * self.stride, 6) for i in range(self.n_frames))


class ConfigError(ValueError):
    pass


def _require(ok: bool, name: str, msg: str) -> None:
    if not ok:
        raise ConfigError(f"{name}: {msg}")


@dataclass(frozen=True)
class ObjectTrack:
    object_id: int
    shape: str
    color_id: int
    width: float
    height: float
    x0: float
    y0: float
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def center(self, t: float, frame_w: int, frame_h: int) -> tuple[float, float]:
        return (
            _reflect(self.x0 + self.vx * t, self.width / 2, frame_w - self.width / 2),
            _reflect(self.y0 + self.vy * t, self.height / 2, frame_h - self.height / 2),
        )

    def raster(self, t: float, frame_w: int, frame_h: int) -> np.ndarray:
        cx, cy = self.center(t, frame_w, frame_h)
        hw, hh = self.width / 2, self.height / 2
        if self.shape == "rectangle":
            return box_to_mask(BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh), frame_w, frame_h)
        ys, xs = np.mgrid[0:frame_h, 0:frame_w]
        return ((xs + 0.5 - cx) / hw) ** 2 + ((ys + 0.5 - cy) / hh) ** 2 <= 1.0


def _reflect(x: float, lo: float, hi: float) -> float:
    """Fold ``x`` into [lo, hi] as if bouncing off both walls."""
    span = hi - lo
    if span <= 0:
        return (lo + hi) / 2
    y = (x - lo) % (2 * span)
    return lo + (2 * span - y if y > span else y)


@dataclass(frozen=True)
class Occluder:
    orientation: str  # "vertical" or "horizontal"
    offset: int
    thickness: int

    def raster(self, frame_w: int, frame_h: int) -> np.ndarray:
        m = np.zeros((frame_h, frame_w), dtype=bool)
        if self.orientation == "vertical":
            m[:, self.offset:self.offset + self.thickness] = True
        else:
            m[self.offset:self.offset + self.thickness, :] = True
        return m


@dataclass(frozen=True)
class SyntheticVideo:
    video_id: str
    width: int
    height: int
    sampled_times: tuple[float, ...]
    objects: tuple[ObjectTrack, ...]
    occluders: tuple[Occluder, ...] = ()

    def label_maps(self) -> np.ndarray:
        """``(T, H, W)`` int array; object ``i`` is drawn as label ``i + 1``.

        Later objects are drawn on top of earlier ones, occluders on top of all.
        """
        out = np.zeros((len(self.sampled_times), self.height, self.width), dtype=np.int16)
        occ = np.zeros((self.height, self.width), dtype=bool)
        for o in self.occluders:
            occ |= o.raster(self.width, self.height)
        for t_idx, t in enumerate(self.sampled_times):
            frame = out[t_idx]
            for i, obj in enumerate(self.objects):
                frame[obj.raster(t, self.width, self.height)] = i + 1
            frame[occ] = 0
        return out

    def to_json(self) -> dict:
        d = asdict(self)
        d["sampled_times"] = list(self.sampled_times)
        d["objects"] = [asdict(o) for o in self.objects]
        d["occluders"] = [asdict(o) for o in self.occluders]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticVideo":
        return cls(
            video_id=d["video_id"],
            width=int(d["width"]),
            height=int(d["height"]),
            sampled_times=tuple(float(t) for t in d["sampled_times"]),
            objects=tuple(ObjectTrack(**o) for o in d["objects"]),
            occluders=tuple(Occluder(**o) for o in d["occluders"]),
        )


@dataclass(frozen=True)
class Query:
    selector: str
    color_id: int | None = None
    expression_text: str = ""

    @property
    def subset(self) -> str:
        if self.selector == "none":
            return "negative"
        return "referring" if self.selector == "color" else "reasoning"

    def select(self, video: SyntheticVideo) -> list[int]:
        """Indices of the referred objects."""
        objs = video.objects
        if self.selector == "color":
            return [i for i, o in enumerate(objs) if o.color_id == self.color_id]
        if self.selector == "none":
            return []
        if self.selector == "largest":
            key = [o.width * o.height for o in objs]
        elif self.selector == "fastest":
            key = [o.speed for o in objs]
        elif self.selector == "leftmost":
            key = [-_mean_x(o, video) for o in objs]
        else:
            raise ValueError(f"unknown selector {self.selector!r}")
        return [int(np.argmax(key))]

    def to_json(self) -> dict:
        return {"selector": self.selector, "color_id": self.color_id,
                "text": self.expression_text, "subset": self.subset}

    @classmethod
    def from_json(cls, d: dict) -> "Query":
        return cls(d["selector"], d.get("color_id"), d.get("text", ""))


def _mean_x(o: ObjectTrack, video: SyntheticVideo) -> float:
    return float(np.mean([o.center(t, video.width, video.height)[0] for t in video.sampled_times]))


def render_query(selector: str, color_id: int | None = None) -> str:
    if selector in ("color", "none"):
        return f"Which object is painted {PALETTE[color_id]}?"
    return {
        "largest": "Which object takes up the most room in the scene?",
        "fastest": "Which object is moving the fastest?",
        "leftmost": "Which object keeps furthest to the left over the clip?",
    }[selector]


@dataclass
class Sample:
    sample_id: str
    split: str
    video: SyntheticVideo
    query: Query
    object_indices: tuple[int, ...]
    gt: GroundTruthSample

    @property
    def sampled_times(self) -> tuple[float, ...]:
        return self.video.sampled_times

    @property
    def is_negative(self) -> bool:
        return self.query.selector == "none"

    @cached_property
    def label_maps(self) -> np.ndarray:
        return self.video.label_maps()

    @cached_property
    def frames(self) -> SceneFrames:
        return SceneFrames(self.gt, self.label_maps)

    def to_json(self) -> dict:
        frames = []
        for t in range(self.gt.n_frames):
            frames.append({
                "masks": [rle_encode(self.gt.masks[t, o]).to_json() for o in range(self.gt.n_objects)],
                "boxes": [b.as_list() if b is not None else None for b in self.gt.boxes[t]],
            })
        return {
            "sample_id": self.sample_id,
            "split": self.split,
            "video": self.video.to_json(),
            "query": self.query.to_json(),
            "sampled_times": list(self.sampled_times),
            "gt": {"object_indices": list(self.object_indices), "frames": frames},
        }

    @classmethod
    def from_json(cls, d: dict) -> "Sample":
        video = SyntheticVideo.from_json(d["video"])
        gt_d = d["gt"]
        times = tuple(float(t) for t in d["sampled_times"])
        n_obj = len(gt_d["object_indices"])
        masks = np.zeros((len(times), n_obj, video.height, video.width), dtype=bool)
        boxes = []
        for t, fr in enumerate(gt_d["frames"]):
            for o, rle in enumerate(fr["masks"]):
                masks[t, o] = rle_decode(RleMask.from_json(rle))
            boxes.append([BoundingBox(*b) if b is not None else None for b in fr["boxes"]])
        if len(gt_d["frames"]) != len(times):
            raise ValueError(f"{d['sample_id']}: GT frame count does not match sampled_times")
        gt = GroundTruthSample(times, masks, boxes)
        return cls(d["sample_id"], d.get("split", "train"), video, Query.from_json(d["query"]),
                   tuple(gt_d["object_indices"]), gt)


@dataclass
class Manifest:
    seed: int
    config: dict
    samples: list[Sample] = field(default_factory=list)

    def split(self, name: str | None) -> list[Sample]:
        if name in (None, "all"):
            return list(self.samples)
        return [s for s in self.samples if s.split == name]

    def by_id(self) -> dict[str, Sample]:
        return {s.sample_id: s for s in self.samples}

    def to_json(self) -> dict:
        return {"seed": self.seed, "config": self.config, "samples": [s.to_json() for s in self.samples]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        d = json.loads(Path(path).read_text())
        return cls(d["seed"], d["config"], [Sample.from_json(s) for s in d["samples"]])


def _draw_video(rng: np.random.Generator, cfg: EnvConfig, video_id: str) -> SyntheticVideo:
    side = min(cfg.width, cfg.height)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    colors = rng.choice(cfg.n_colors, size=n_obj, replace=False).tolist()
    if n_obj > 1 and rng.random() < cfg.duplicate_color_prob:
        colors[1] = colors[0]
    objects = []
    for i in range(n_obj):
        size = rng.uniform(*cfg.size_range) * side
        aspect = rng.uniform(*cfg.aspect_range)
        w = round(size * math.sqrt(aspect), 3)
        h = round(size / math.sqrt(aspect), 3)
        angle = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(0, cfg.max_speed)
        objects.append(ObjectTrack(
            object_id=i,
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color_id=int(colors[i]),
            width=w,
            height=h,
            x0=round(rng.uniform(w / 2, cfg.width - w / 2), 3),
            y0=round(rng.uniform(h / 2, cfg.height - h / 2), 3),
            vx=round(speed * math.cos(angle), 3),
            vy=round(speed * math.sin(angle), 3),
        ))
    occluders = []
    if rng.random() < cfg.occluder_prob:
        vertical = bool(rng.random() < 0.5)
        thick = int(rng.integers(cfg.occluder_width[0], cfg.occluder_width[1] + 1))
        extent = cfg.width if vertical else cfg.height
        occluders.append(Occluder("vertical" if vertical else "horizontal",
                                  int(rng.integers(0, extent - thick + 1)), thick))
    return SyntheticVideo(video_id, cfg.width, cfg.height, cfg.sampled_times,
                          tuple(objects), tuple(occluders))


def _every_object_seen_whole(video: SyntheticVideo, labels: np.ndarray) -> bool:
    for i, obj in enumerate(video.objects):
        seen = False
        for t_idx, t in enumerate(video.sampled_times):
            full = np.count_nonzero(obj.raster(t, video.width, video.height))
            if full and np.count_nonzero(labels[t_idx] == i + 1) == full:
                seen = True
                break
        if not seen:
            return False
    return True


def _unique_max(values, margin: float) -> bool:
    s = sorted(values, reverse=True)
    return len(s) == 1 or s[0] - s[1] >= margin


def _draw_query(rng: np.random.Generator, cfg: EnvConfig, video: SyntheticVideo, negative: bool) -> Query:
    if negative:
        present = {o.color_id for o in video.objects}
        absent = [c for c in range(cfg.n_colors) if c not in present]
        c = int(absent[int(rng.integers(len(absent)))])
        return Query("none", c, render_query("none", c))
    selector = SELECTORS[int(rng.integers(4))]
    objs = video.objects
    side = min(cfg.width, cfg.height)
    ok = {
        "color": True,
        "largest": _unique_max([o.width * o.height for o in objs], 0.15 * max(o.width * o.height for o in objs)),
        "fastest": _unique_max([o.speed for o in objs], 1.0),
        "leftmost": _unique_max([-_mean_x(o, video) for o in objs], 0.08 * side),
    }[selector]
    if not ok:
        selector = "color"
    if selector == "color":
        c = objs[int(rng.integers(len(objs)))].color_id
        return Query("color", c, render_query("color", c))
    return Query(selector, None, render_query(selector))


def build_sample(sample_id: str, split: str, video: SyntheticVideo, query: Query) -> Sample:
    labels = video.label_maps()
    idx = tuple(query.select(video))
    masks = np.zeros((len(video.sampled_times), len(idx), video.height, video.width), dtype=bool)
    for k, i in enumerate(idx):
        masks[:, k] = labels == i + 1
    gt = GroundTruthSample(video.sampled_times, masks)
    sample = Sample(sample_id, split, video, query, idx, gt)
    sample.__dict__["label_maps"] = labels
    return sample


def generate_dataset(seed: int, n_videos: int, negative_fraction: float,
                     cfg: EnvConfig = EnvConfig(), n_holdout: int = 0) -> Manifest:
    """Generate ``n_videos`` training samples plus ``n_holdout`` test samples.

    Each split receives exactly ``round(negative_fraction * n)`` negatives.
    Every sample draws from its own counter-keyed stream, so a sample does
    not depend on how many others are generated.
    """
    _require(n_videos >= 1, "n_videos", "must be >= 1")
    _require(n_holdout >= 0, "n_holdout", "must be >= 0")
    _require(0.0 <= negative_fraction <= 1.0, "negative_fraction", "must lie in [0, 1]")
    cfg.validate()
    samples = []
    offset = 0
    for split, count in (("train", n_videos), ("test", n_holdout)):
        n_neg = int(round(negative_fraction * count))
        split_rng = np.random.default_rng([seed, 0, 1 if split == "test" else 0])
        negatives = set(split_rng.permutation(count)[:n_neg].tolist())
        for k in range(count):
            idx = offset + k
            rng = np.random.default_rng([seed, 1, idx])
            vid = f"v{idx:05d}"
            for _ in range(200):
                video = _draw_video(rng, cfg, vid)
                labels = video.label_maps()
                if _every_object_seen_whole(video, labels):
                    break
            else:
                raise RuntimeError(f"could not draw a valid scene for {vid}")
            query = _draw_query(rng, cfg, video, k in negatives)
            samples.append(build_sample(f"s{idx:05d}", split, video, query))
        offset += count
    config = {"env": _jsonable(asdict(cfg)), "n_videos": n_videos, "n_holdout": n_holdout,
              "negative_fraction": negative_fraction}
    return Manifest(seed, config, samples)


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

SLOT_FEATURES = ("area", "cx", "cy", "w", "h", "vx", "vy", "match")


def observe(sample: Sample, max_objects: int, grid: int, noise: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Noisy per-frame, per-object features of shape ``(T, max_objects, 8)``.

    Positions, sizes and velocities are in grid-cell units, area in tenths
    of the frame, ``match`` is 1 for referred objects. Unused slots are zero.
    """
    video = sample.video
    labels = sample.label_maps
    n_frames = len(video.sampled_times)
    cell_x = video.width / grid
    cell_y = video.height / grid
    feats = np.zeros((n_frames, max_objects, len(SLOT_FEATURES)))
    referred = set(sample.object_indices)
    total = video.width * video.height
    for i, obj in enumerate(video.objects[:max_objects]):
        for t_idx, t in enumerate(video.sampled_times):
            vis = labels[t_idx] == i + 1
            box = tight_box(vis)
            row = feats[t_idx, i]
            row[7] = 1.0 if i in referred else 0.0
            (cx, cy) = obj.center(t, video.width, video.height)
            (nx, ny) = obj.center(t + 1e-3, video.width, video.height)
            row[5] = (nx - cx) / 1e-3 / cell_x
            row[6] = (ny - cy) / 1e-3 / cell_y
            if box is None:
                continue
            row[0] = 10.0 * np.count_nonzero(vis) / total
            row[1] = (box.x1 + box.x2) / 2 / cell_x
            row[2] = (box.y1 + box.y2) / 2 / cell_y
            row[3] = (box.x2 - box.x1) / cell_x
            row[4] = (box.y2 - box.y1) / cell_y
    if noise > 0:
        if rng is None:
            raise ValueError("a noise generator is required when noise > 0")
        feats = feats + rng.normal(0.0, noise, size=feats.shape)
    return feats
