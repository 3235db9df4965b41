"""Evaluation metrics over graded samples.

WA     mean r_a where target and prediction are both CONTINUE
WA-GH  share of those with r_a == 1
WC     mean r_s over target-CONTINUE samples
WS     mean r_s over target-STOP samples
AA     mean r_s over all samples
FC     mean omega over all samples
TR     mean total reward over all samples

A metric whose denominator is zero is reported as ``None`` (undefined).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .hindsight import HindsightTarget, StopLabel
from .reward import RewardBreakdown

METRIC_NAMES = ("wa", "wa_gh", "wc", "ws", "aa", "fc", "tr")


@dataclass(frozen=True)
class GradedSample:
    target_label: StopLabel
    breakdown: RewardBreakdown
    predicted: StopLabel
    target: HindsightTarget | None = None

    @classmethod
    def of(cls, target: HindsightTarget, breakdown: RewardBreakdown, predicted: StopLabel):
        return cls(target.stop_label, breakdown, StopLabel(predicted), target)

    def to_record(self) -> dict[str, Any]:
        rec = self.breakdown.to_record()
        rec.update(target_label=self.target_label.value, predicted=self.predicted.value)
        if self.target is not None:
            rec.update(trajectory_id=self.target.trajectory_id, turn_index=self.target.turn_index)
        return rec

    @classmethod
    def from_record(cls, d: dict[str, Any]) -> "GradedSample":
        return cls(StopLabel(d["target_label"]), RewardBreakdown.from_record(d), StopLabel(d["predicted"]))


@dataclass(frozen=True)
class MetricsReport:
    wa: float | None
    wa_gh: float | None
    wc: float | None
    ws: float | None
    aa: float | None
    fc: float | None
    tr: float | None
    counts: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": {m: getattr(self, m) for m in METRIC_NAMES},
            "counts": dict(self.counts),
        }

    def table(self) -> str:
        rows = [("metric", "value", "n")]
        for m in METRIC_NAMES:
            v = getattr(self, m)
            rows.append((m.upper().replace("_", "-"), "undefined" if v is None else f"{v:.4f}", str(self.counts[m])))
        w = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join(f"{a:<{w[0]}}  {b:>{w[1]}}  {c:>{w[2]}}" for a, b, c in rows)


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def compute(samples: Iterable[GradedSample], wa_on_predicted_continue: bool = True) -> MetricsReport:
    """Compute the metric suite.

    ``wa_on_predicted_continue=False`` computes WA and WA-GH over every
    target-CONTINUE sample instead of only the correctly continued ones.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    cont = [s for s in samples if s.target_label is StopLabel.CONTINUE]
    stop = [s for s in samples if s.target_label is StopLabel.STOP]
    wa_pool = (
        [s for s in cont if s.predicted is StopLabel.CONTINUE] if wa_on_predicted_continue else cont
    )
    ra = [s.breakdown.r_a for s in wa_pool]
    values = {
        "wa": _mean(ra),
        "wa_gh": _mean([1.0 if r == 1.0 else 0.0 for r in ra]),
        "wc": _mean([s.breakdown.r_s for s in cont]),
        "ws": _mean([s.breakdown.r_s for s in stop]),
        "aa": _mean([s.breakdown.r_s for s in samples]),
        "fc": _mean([s.breakdown.omega for s in samples]),
        "tr": _mean([s.breakdown.total for s in samples]),
    }
    n = len(samples)
    counts = {"wa": len(ra), "wa_gh": len(ra), "wc": len(cont), "ws": len(stop), "aa": n, "fc": n, "tr": n}
    return MetricsReport(counts=counts, **values)
