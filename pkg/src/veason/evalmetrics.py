"""Sequence-level segmentation metrics: J, F, J&F and robustness R."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import RleMask, boundary_fscore, mask_iou, rle_decode, rle_encode

SUBSETS = ("referring", "reasoning", "overall")

R_DISCLAIMER = (
    "R = 100 x mean over negative samples of (1 if every predicted frame is empty, "
    "else 1 - predicted foreground fraction); a local definition, not comparable "
    "to published robustness scores."
)


class EvalError(ValueError):
    pass


def _check_sequences(pred: np.ndarray, gt: np.ndarray) -> None:
    if len(pred) != len(gt):
        raise EvalError(f"sequence length mismatch: {len(pred)} vs {len(gt)}")


def region_similarity(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> float:
    _check_sequences(pred, gt)
    return float(np.mean([mask_iou(p, g) for p, g in zip(pred, gt)]))


def contour_accuracy(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], tol: int | None = None) -> float:
    _check_sequences(pred, gt)
    return float(np.mean([boundary_fscore(p, g, tol) for p, g in zip(pred, gt)]))


def robustness_score(pred: Sequence[np.ndarray]) -> float:
    """Per-negative-sample score in [0, 1]."""
    pred = np.asarray(pred, dtype=bool)
    fg = np.count_nonzero(pred)
    if fg == 0:
        return 1.0
    return 1.0 - fg / pred.size


def robustness(preds_on_negatives: Sequence[Sequence[np.ndarray]]) -> float | None:
    """Percentage; None when there are no negative samples."""
    if len(preds_on_negatives) == 0:
        return None
    return 100.0 * float(np.mean([robustness_score(p) for p in preds_on_negatives]))


@dataclass
class SampleScore:
    sample_id: str
    subset: str
    j: float
    f: float

    @property
    def jf(self) -> float:
        return (self.j + self.f) / 2


@dataclass
class EvalReport:
    per_sample: list[SampleScore] = field(default_factory=list)
    aggregates: dict[str, dict[str, float]] = field(default_factory=dict)
    robustness_r: float | None = None

    def to_json(self) -> dict:
        return {
            "note": R_DISCLAIMER,
            "aggregates": self.aggregates,
            "robustness_r": self.robustness_r,
            "per_sample": [
                {"sample_id": s.sample_id, "subset": s.subset,
                 "j": 100 * s.j, "f": 100 * s.f, "jf": 100 * s.jf}
                for s in self.per_sample
            ],
        }

    def render(self) -> str:
        lines = [f"# {R_DISCLAIMER}", f"{'subset':<10} {'J':>6} {'F':>6} {'J&F':>6}"]
        for name in SUBSETS:
            agg = self.aggregates.get(name)
            if agg is None:
                lines.append(f"{name:<10} {'-':>6} {'-':>6} {'-':>6}")
            else:
                lines.append(f"{name:<10} {agg['j']:6.1f} {agg['f']:6.1f} {agg['jf']:6.1f}")
        r = "-" if self.robustness_r is None else f"{self.robustness_r:.1f}"
        lines.append(f"{'R':<10} {r:>6}")
        return "\n".join(lines) + "\n"


def evaluate(samples, predictions: Mapping[str, np.ndarray], tol: int | None = None) -> EvalReport:
    """Score predicted ``(T, H, W)`` mask sequences against each sample's merged GT.

    Positive samples feed J/F/J&F per subset; negatives feed R. A missing
    prediction scores zero on a positive sample and counts as an empty
    prediction on a negative one.
    """
    known = {s.sample_id for s in samples}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise EvalError(f"predictions reference unknown sample ids: {unknown[:10]}")
    report = EvalReport()
    negatives = []
    for s in samples:
        gt = s.gt.merged
        pred = predictions.get(s.sample_id)
        if pred is not None and np.shape(pred) != gt.shape:
            raise EvalError(f"{s.sample_id}: prediction shape {np.shape(pred)} != {gt.shape}")
        if s.query.subset == "negative":
            negatives.append(np.zeros_like(gt) if pred is None else pred)
            continue
        if pred is None:
            report.per_sample.append(SampleScore(s.sample_id, s.query.subset, 0.0, 0.0))
        else:
            report.per_sample.append(SampleScore(
                s.sample_id, s.query.subset, region_similarity(pred, gt), contour_accuracy(pred, gt, tol)))
    for name in SUBSETS:
        rows = [r for r in report.per_sample if name == "overall" or r.subset == name]
        if rows:
            j = 100 * float(np.mean([r.j for r in rows]))
            f = 100 * float(np.mean([r.f for r in rows]))
            report.aggregates[name] = {"j": j, "f": f, "jf": (j + f) / 2, "n": len(rows)}
    report.robustness_r = robustness(negatives)
    return report


def write_predictions(path, predictions: Mapping[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        for sid in sorted(predictions):
            masks = [rle_encode(m).to_json() for m in predictions[sid]]
            fh.write(json.dumps({"sample_id": sid, "masks": masks}, separators=(",", ":")) + "\n")


def read_predictions(path) -> dict[str, np.ndarray]:
    preds = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sid = obj["sample_id"]
            masks = [rle_decode(RleMask.from_json(m)) for m in obj["masks"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise EvalError(f"{path}:{n}: bad prediction line: {exc}") from None
        if sid in preds:
            raise EvalError(f"{path}:{n}: duplicate sample id {sid}")
        preds[sid] = np.stack(masks) if masks else np.zeros((0, 0, 0), dtype=bool)
    return preds
