"""Localization-rate tables at (position, rotation) error thresholds."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .geometry import Pose, PoseError, pose_error
from .verification import oracle_select

ORACLE = "Oracle"


@dataclass(frozen=True)
class ThresholdPair:
    max_pos_m: float
    max_rot_deg: float

    def __post_init__(self):
        if not (self.max_pos_m > 0 and self.max_rot_deg > 0):
            raise ValueError("thresholds must be positive")

    def accepts(self, e: PoseError) -> bool:
        return e.position_m <= self.max_pos_m and e.rotation_deg <= self.max_rot_deg

    @property
    def label(self) -> str:
        return f"{self.max_pos_m:g}m,{self.max_rot_deg:g}deg"


DEFAULT_THRESHOLDS = (ThresholdPair(0.25, 5), ThresholdPair(0.5, 5), ThresholdPair(1.0, 10), ThresholdPair(2.0, 10))


def parse_thresholds(text: str) -> List[ThresholdPair]:
    """``"0.25,5;0.5,5"`` -> threshold pairs."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pos, rot = part.split(",")
        out.append(ThresholdPair(float(pos), float(rot)))
    if not out:
        raise ValueError("no thresholds given")
    return out


def fmt6(x: float) -> str:
    return f"{x:.6g}"


@dataclass
class EvalReport:
    thresholds: Tuple[ThresholdPair, ...]
    percentages: Dict[str, List[float]]          # method -> one value per threshold
    n_queries: int
    errors: Dict[str, Dict[str, Optional[PoseError]]] = field(default_factory=dict)

    @property
    def methods(self) -> List[str]:
        return list(self.percentages)

    def row(self, method: str) -> List[float]:
        return self.percentages[method]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("method,thr_pos,thr_rot,percent\n")
        for m, vals in self.percentages.items():
            for t, v in zip(self.thresholds, vals):
                buf.write(f"{m},{fmt6(t.max_pos_m)},{fmt6(t.max_rot_deg)},{fmt6(v)}\n")
        return buf.getvalue()

    def to_table(self) -> str:
        """Plain-text table: one row per method, one column per threshold pair."""
        heads = [f"{fmt6(t.max_pos_m)}m, {fmt6(t.max_rot_deg)}deg" for t in self.thresholds]
        name_w = max([len("Method")] + [len(m) for m in self.percentages])
        col_w = max(len(h) for h in heads)
        lines = ["Method".ljust(name_w) + "  " + "  ".join(h.rjust(col_w) for h in heads)]
        for m, vals in self.percentages.items():
            lines.append(m.ljust(name_w) + "  " + "  ".join(f"{v:.1f}".rjust(col_w) for v in vals))
        lines.append(f"({self.n_queries} queries)")
        return "\n".join(lines) + "\n"


def _rates(errs: Sequence[Optional[PoseError]], thresholds: Sequence[ThresholdPair]) -> List[float]:
    n = len(errs)
    if n == 0:
        return [0.0 for _ in thresholds]
    return [100.0 * sum(1 for e in errs if e is not None and t.accepts(e)) / n for t in thresholds]


def evaluate(selected: Mapping[str, Optional[Pose]], gt: Mapping[str, Pose],
             thresholds: Sequence[ThresholdPair] = DEFAULT_THRESHOLDS, method: str = "method") -> EvalReport:
    """Share of queries whose selected pose is within each threshold pair (bounds inclusive).

    A query mapped to ``None`` counts as a failure everywhere.
    """
    missing = [q for q in selected if q not in gt]
    if missing:
        raise KeyError(f"no ground truth for queries: {sorted(missing)[:5]}")
    errs = {q: (pose_error(p, gt[q]) if p is not None else None) for q, p in sorted(selected.items())}
    return EvalReport(tuple(thresholds), {method: _rates(list(errs.values()), thresholds)}, len(errs),
                      {method: errs})


def compare_with_oracle(per_method: Mapping[str, Mapping[str, Optional[Pose]]], gt: Mapping[str, Pose],
                        thresholds: Sequence[ThresholdPair] = DEFAULT_THRESHOLDS,
                        include_oracle: bool = True) -> EvalReport:
    """Table with one row per method and, last, the oracle over the methods' choices.

    The oracle localizes a query at a threshold whenever at least one method
    does, so it bounds every combination of the methods from above. Its
    per-query errors are those of the position-first ``oracle_select`` pick.
    """
    if not per_method:
        raise ValueError("need at least one method")
    queries = sorted(set().union(*[set(s) for s in per_method.values()]))
    pct, errs = {}, {}
    for m, sel in per_method.items():
        full = {q: sel.get(q) for q in queries}
        r = evaluate(full, gt, thresholds, m)
        pct[m] = r.percentages[m]
        errs[m] = r.errors[m]
    if include_oracle:
        pct[ORACLE] = _oracle_rates(errs, queries, thresholds)
        errs[ORACLE] = {q: (pose_error(p, gt[q]) if p is not None else None)
                        for q, p in oracle_selections(per_method, gt).items()}
    return EvalReport(tuple(thresholds), pct, len(queries), errs)


def oracle_selections(per_method: Mapping[str, Mapping[str, Optional[Pose]]],
                      gt: Mapping[str, Pose]) -> Dict[str, Optional[Pose]]:
    """Per query, the methods' choice nearest the ground truth (position first)."""
    queries = sorted(set().union(*[set(s) for s in per_method.values()]))
    out = {}
    for q in queries:
        choices = [sel[q] for sel in per_method.values() if sel.get(q) is not None]
        out[q] = oracle_select(choices, gt[q]) if choices else None
    return out


def _oracle_rates(errs: Mapping[str, Mapping[str, Optional[PoseError]]], queries: Sequence[str],
                  thresholds: Sequence[ThresholdPair]) -> List[float]:
    # A query is localized at a threshold if any method's choice is. The single
    # position-first pick can miss a threshold that another choice meets (closer
    # but more rotated), so it is not used for the percentages.
    n = len(queries)
    if n == 0:
        return [0.0 for _ in thresholds]
    out = []
    for t in thresholds:
        hits = sum(1 for q in queries
                   if any(e.get(q) is not None and t.accepts(e[q]) for e in errs.values()))
        out.append(100.0 * hits / n)
    return out
