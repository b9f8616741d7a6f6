import sys

from scoring import ExperimentReport, format_report_breakdown, rank_restarts


def show_report_header(report: ExperimentReport, out=sys.stderr):
    print("\n" + "="*100, file=out)
    print(f"{report.kind.upper()} EXPERIMENT {report.name}".center(100), file=out)
    print("="*100, file=out)
    print(format_report_breakdown(report), file=out)


def show_series(report: ExperimentReport, out=sys.stderr):
    print("\n" + "="*100, file=out)
    print("SERIES", file=out)
    print("-" * 100, file=out)

    columns = list(report.series)
    if not columns:
        print("  (none)", file=out)
        return
    print("  " + " │ ".join(f"{c:>14}" for c in columns), file=out)
    for row in zip(*(report.series[c] for c in columns)):
        cells = [f"{v:>14.8g}" if isinstance(v, float) else f"{str(v):>14}" for v in row]
        print("  " + " │ ".join(cells), file=out)


def show_value_bars(report: ExperimentReport, out=sys.stderr):
    """Bars of F_j relative to the limit value, the way a gap shows up at a glance."""
    print("\n" + "="*100, file=out)
    print("VALUES AGAINST LIMIT", file=out)
    print("-" * 100, file=out)

    scale = max([abs(v) for v in report.values] + [abs(report.limit_value), 1e-300])
    for j, value in zip(report.js, report.values):
        filled = int(round(10 * abs(value) / scale))
        bar = "█" * filled + "░" * (10 - filled)
        marker = "≥" if value >= report.limit_value - report.tol else "<"
        print(f"  j={str(j):<8} {bar} {value:.8g} {marker} {report.limit_value:.8g}", file=out)


def show_restarts(summary, out=sys.stderr):
    print("\n" + "="*100, file=out)
    print("ENVELOPE RESTARTS (best first)", file=out)
    print("-" * 100, file=out)

    for r in rank_restarts(summary):
        extra = f"xi={r['xi']} eps={r['eps']:.3g}" if r["kind"] == "laminate" else ""
        print(f"  #{r['index']:<3} {r['kind']:<9} │ {r['initial']:>14.8g} → {r['final']:>14.8g} │ "
              f"{r['iterations']:>4} it │ {extra}", file=out)


def visualize_report(report: ExperimentReport, out=sys.stderr):
    show_report_header(report, out)
    show_series(report, out)
    if report.kind == "lsc":
        show_value_bars(report, out)
