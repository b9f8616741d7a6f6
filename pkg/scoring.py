"""
Verdicts for experiment reports and their text breakdown.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

PASSING_VERDICTS = ("pass", "expected-fail")
ALL_VERDICTS = ("pass", "fail", "expected-fail", "unexpected-pass", "hypothesis-violation")


@dataclass
class ExperimentReport:
    """Result of one lsc, relaxation or Jensen experiment"""
    kind: str
    name: str = ""
    js: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    limit_value: float = float("nan")
    gap: float = float("nan")
    verdict: str = "fail"
    tol: float = 0.0
    series: Dict[str, List[Any]] = field(default_factory=dict)
    breakdown: List[Dict[str, Any]] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict in PASSING_VERDICTS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "name": self.name,
            "verdict": self.verdict,
            "passed": self.passed,
            "gap": self.gap,
            "tol": self.tol,
            "limit_value": self.limit_value,
            "js": self.js,
            "values": self.values,
            "series": self.series,
            "breakdown": self.breakdown,
            "details": self.details,
            "config": self.config,
        }


def score_lsc(gap: float, tol: float, expect: str = "pass") -> str:
    """
    Verdict of a lower-semicontinuity run.

    Args:
        gap: liminf estimate minus F[limit]
        tol: allowed negative gap
        expect: "pass" for quasiconvex integrands, "fail" for cases built to break lsc

    Returns:
        pass, fail, expected-fail or unexpected-pass
    """
    holds = gap >= -tol
    if expect == "fail":
        return "unexpected-pass" if holds else "expected-fail"
    return "pass" if holds else "fail"


def score_relaxation(achieved: float, target: float, tol_rel: float) -> str:
    return "pass" if abs(achieved - target) <= tol_rel * (1.0 + abs(target)) else "fail"


def score_jensen(lhs: List[float], rhs: List[float], tol: float, hypotheses_ok: bool = True) -> str:
    if not hypotheses_ok:
        return "hypothesis-violation"
    return "pass" if all(l <= r + tol for l, r in zip(lhs, rhs)) else "fail"


def liminf_estimate(values: List[float]) -> float:
    """Minimum over the final third of the list."""
    if not values:
        return float("nan")
    tail = values[-max(1, int(np.ceil(len(values) / 3))):]
    return float(min(tail))


def rank_restarts(summary: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    Rank envelope restarts by final objective (lowest first).

    Args:
        summary: restarts_summary of an EnvelopeResult

    Returns:
        Sorted copy, ties broken by start index
    """
    return sorted(summary, key=lambda r: (r["final"], r["index"]))


def get_top_n_restarts(summary: List[Dict[str, Any]], n: int = 3) -> List[Dict[str, Any]]:
    return rank_restarts(summary)[:n]


def exit_status(report: Optional[ExperimentReport]) -> int:
    if report is None:
        return 0
    return 0 if report.passed else 1


def format_report_breakdown(report: ExperimentReport) -> str:
    """Format the report breakdown as a readable string"""
    lines = []
    lines.append(f"{report.kind} experiment {report.name!r}: {report.verdict.upper()} "
                 f"(gap {report.gap:.6g}, tol {report.tol:.3g})")
    lines.append(f"Limit value: {report.limit_value:.10g}")
    lines.append("")
    lines.append("Breakdown:")
    lines.append("-" * 50)

    for item in report.breakdown:
        status = "✓" if item.get("ok", True) else "✗"
        label = item.get("label", "")
        rest = ", ".join(f"{k}={_short(v)}" for k, v in item.items() if k not in ("label", "ok"))
        lines.append(f"  {status} {label}: {rest}")

    return "\n".join(lines)


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)
