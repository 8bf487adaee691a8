"""Command-line entry point: ``veason <command> --config <path> [options]``.

Commands write into ``--out`` (default: ``paths.out`` from the config):

    gen     manifest.json
    cot     cot.jsonl
    score   scores.jsonl
    train   checkpoint.json, curves.csv
    infer   predictions.jsonl
    eval    report.json, report.txt
    report  curves.svg

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cotgen import CotError, build_records, records_jsonl
from .env import ConfigError, EnvConfig, Manifest, generate_dataset
from .evalmetrics import evaluate, read_predictions, write_predictions
from .grpo import GrpoConfig, NumericalError
from .policy import PolicyConfig, ToyPolicy
from .rewards import PROPAGATORS, RewardWeights, make_propagator, total_reward
from .training import TrainConfig, infer, read_stats_csv, stats_csv, train

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("veason")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
SPLITS = ("train", "test", "all")

# GrpoConfig keeps the 1e-6 step used for billion-parameter models; the toy
# policy has a few dozen weights and needs a much larger step to move in 300 updates.
TOY_LEARNING_RATE = 0.1


@dataclass(frozen=True)
class DataConfig:
    n_videos: int = 200
    n_holdout: int = 50
    negative_fraction: float = 0.1


@dataclass(frozen=True)
class EvalConfig:
    split: str = "test"
    boundary_tolerance: int | None = None


@dataclass(frozen=True)
class PathsConfig:
    out: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    propagator: str = "labelmap"
    data: DataConfig = field(default_factory=DataConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    grpo: GrpoConfig = field(default_factory=lambda: GrpoConfig(learning_rate=TOY_LEARNING_RATE))
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        if self.propagator not in PROPAGATORS:
            raise ConfigError(f"propagator: must be one of {sorted(PROPAGATORS)}")
        d = self.data
        if d.n_videos < 1:
            raise ConfigError("data.n_videos: must be >= 1")
        if d.n_holdout < 0:
            raise ConfigError("data.n_holdout: must be >= 0")
        if not 0 <= d.negative_fraction <= 1:
            raise ConfigError("data.negative_fraction: must lie in [0, 1]")
        self.env.validate()
        self.policy.validate()
        if self.policy.max_objects < self.env.max_objects:
            raise ConfigError("policy.max_objects: must be >= env.max_objects")
        self.grpo.validate()
        self.train.validate()
        if self.eval.split not in SPLITS:
            raise ConfigError(f"eval.split: must be one of {SPLITS}")
        tol = self.eval.boundary_tolerance
        if tol is not None and tol < 0:
            raise ConfigError("eval.boundary_tolerance: must be >= 0")


_SECTIONS = {
    "data": DataConfig, "env": EnvConfig, "policy": PolicyConfig, "rewards": RewardWeights,
    "grpo": GrpoConfig, "train": TrainConfig, "eval": EvalConfig, "paths": PathsConfig,
}
_SCALARS = ("seed", "propagator")


def _coerce(name: str, value: Any, default: Any) -> Any:
    """Check a config value against the type of its default."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:  # optional numeric fields default to None
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
    if not ok:
        raise ConfigError(f"{name}: bad value {value!r}")
    return value


def _build_section(section: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: must be a table")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        kwargs[key] = _coerce(f"{section}.{key}", value, getattr(defaults, key))
    try:
        return dataclasses.replace(defaults, **kwargs)
    except ValueError as exc:  # RewardWeights validates on construction
        raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a table")
    base = RunConfig()
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            base_section = getattr(base, key)
            section = _build_section(key, _SECTIONS[key], value)
            if key == "grpo" and "learning_rate" not in value:
                section = dataclasses.replace(section, learning_rate=base_section.learning_rate)
            kwargs[key] = section
        elif key in _SCALARS:
            kwargs[key] = _coerce(key, value, getattr(base, key))
        else:
            raise ConfigError(f"{key}: unknown field")
    cfg = dataclasses.replace(base, **kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        elif path.suffix.lower() == ".toml":
            raw = tomllib.loads(text)
        else:
            raise ConfigError(f"config: unsupported extension {path.suffix!r}; use .toml or .json")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def cmd_gen(cfg: RunConfig, out_dir) -> Path:
    m = generate_dataset(cfg.seed, cfg.data.n_videos, cfg.data.negative_fraction,
                         cfg.env, n_holdout=cfg.data.n_holdout)
    return _write(Path(out_dir) / "manifest.json", m.dumps() + "\n")


def cmd_cot(cfg: RunConfig, manifest: Manifest, out_dir) -> Path:
    records = build_records(manifest.samples, cfg.seed)
    return _write(Path(out_dir) / "cot.jsonl", records_jsonl(records))


def read_responses(path) -> list[tuple[str, str]]:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{n}: not JSON: {exc}") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("sample_id"), str) \
                or not isinstance(obj.get("response"), str):
            raise ConfigError(f"{path}:{n}: expected {{\"sample_id\": str, \"response\": str}}")
        rows.append((obj["sample_id"], obj["response"]))
    return rows


def cmd_score(cfg: RunConfig, manifest: Manifest, responses_path, out_dir) -> Path:
    rows = read_responses(responses_path)
    by_id = manifest.by_id()
    unknown = sorted({sid for sid, _ in rows if sid not in by_id})
    if unknown:
        raise ConfigError(f"responses reference unknown sample ids: {unknown}")
    prop = make_propagator(cfg.propagator)
    lines = []
    for sid, text in rows:
        b = total_reward(text, by_id[sid].frames, cfg.rewards, prop)
        lines.append(json.dumps(b.to_json(sid), sort_keys=True))
    return _write(Path(out_dir) / "scores.jsonl", "".join(line + "\n" for line in lines))


def fresh_policy(cfg: RunConfig) -> ToyPolicy:
    return ToyPolicy(cfg.policy, seed=cfg.seed)


def cmd_train(cfg: RunConfig, manifest: Manifest, out_dir) -> tuple[Path, Path]:
    samples = manifest.split("train")
    if not samples:
        raise ConfigError("manifest: no training samples")
    policy, stats = train(samples, fresh_policy(cfg), cfg.grpo, cfg.rewards,
                          make_propagator(cfg.propagator), cfg.train, seed=cfg.seed)
    out = Path(out_dir)
    ckpt = _write(out / "checkpoint.json", json.dumps(policy.state_json(), sort_keys=True, indent=1) + "\n")
    curves = _write(out / "curves.csv", stats_csv(stats))
    return ckpt, curves


def load_checkpoint(path) -> ToyPolicy:
    try:
        return ToyPolicy.from_state_json(json.loads(Path(path).read_text()))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint: {exc}") from None


def cmd_infer(cfg: RunConfig, manifest: Manifest, policy: ToyPolicy, out_dir) -> Path:
    preds = infer(policy, manifest.split(cfg.eval.split), make_propagator(cfg.propagator), seed=cfg.seed)
    path = Path(out_dir) / "predictions.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(path, preds)
    return path


def cmd_eval(cfg: RunConfig, manifest: Manifest, predictions_path, out_dir):
    preds = read_predictions(predictions_path)
    report = evaluate(manifest.split(cfg.eval.split), preds, cfg.eval.boundary_tolerance)
    out = Path(out_dir)
    _write(out / "report.json", json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    _write(out / "report.txt", report.render())
    return report


def cmd_report(curves_path, out_dir) -> Path:
    from .plots import plot_curves

    rows = read_stats_csv(Path(curves_path).read_text())
    path = Path(out_dir) / "curves.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    plot_curves(rows, path)
    return path


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

COMMANDS = ("gen", "cot", "score", "train", "eval", "infer", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="veason", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML or JSON run config")
    p.add_argument("--out", help="output directory (default: paths.out)")
    p.add_argument("--manifest", help="dataset manifest (default: <out>/manifest.json)")
    p.add_argument("--responses", help="responses JSONL for score")
    p.add_argument("--checkpoint", help="policy checkpoint (default: <out>/checkpoint.json)")
    p.add_argument("--predictions", help="predictions JSONL (default: <out>/predictions.jsonl)")
    p.add_argument("--curves", help="curves CSV for report (default: <out>/curves.csv)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.paths.out)
    manifest_path = Path(args.manifest) if args.manifest else out / "manifest.json"

    def manifest() -> Manifest:
        try:
            return Manifest.load(manifest_path)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{manifest_path}: malformed manifest: {exc}") from None

    if args.command == "gen":
        print(cmd_gen(cfg, out))
    elif args.command == "cot":
        print(cmd_cot(cfg, manifest(), out))
    elif args.command == "score":
        if not args.responses:
            raise ConfigError("--responses: required for score")
        print(cmd_score(cfg, manifest(), args.responses, out))
    elif args.command == "train":
        for path in cmd_train(cfg, manifest(), out):
            print(path)
    elif args.command == "infer":
        ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
        print(cmd_infer(cfg, manifest(), load_checkpoint(ckpt), out))
    elif args.command == "eval":
        preds = Path(args.predictions) if args.predictions else out / "predictions.jsonl"
        sys.stdout.write(cmd_eval(cfg, manifest(), preds, out).render())
    elif args.command == "report":
        curves = Path(args.curves) if args.curves else out / "curves.csv"
        print(cmd_report(curves, out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, CotError, IndexError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
