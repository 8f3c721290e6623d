"""Optimality-gap certificate and the aggregate g(t) statistic."""
from __future__ import annotations

import numpy as np

DELTA = 1e-10


def relative_gap(upper: float, lower: float, delta: float = DELTA) -> float:
    """|upper - lower| / max(delta, |upper|); 1 when no incumbent exists."""
    if not np.isfinite(upper):
        return 1.0
    return abs(upper - lower) / max(delta, abs(upper))


def g_statistic(results, t: float) -> float:
    """Mean of (1 - gap_i) over the instances that finished by time ``t``.

    ``results`` is a sequence of (t_i, gap_i); the mean divides by the total
    number of instances, so unfinished ones count as zero.
    """
    results = list(results)
    if not results:
        raise ValueError("g_statistic needs at least one result")
    return sum(1.0 - s for ti, s in results if ti <= t) / len(results)


def solved_fraction(results, t: float) -> float:
    """Fraction of instances with gap exactly 0 by time ``t``."""
    results = list(results)
    if not results:
        raise ValueError("solved_fraction needs at least one result")
    return sum(1 for ti, s in results if ti <= t and s == 0) / len(results)


class LogAuditError(AssertionError):
    pass


def audit_log(entries) -> None:
    """Check that lower bounds never decrease and upper bounds never increase."""
    prev_lo, prev_up = -np.inf, np.inf
    for k, e in enumerate(entries):
        lo, up = e["lower"], e["upper"]
        if lo < prev_lo:
            raise LogAuditError(f"line {k}: lower bound decreased {prev_lo!r} -> {lo!r}")
        if up > prev_up:
            raise LogAuditError(f"line {k}: upper bound increased {prev_up!r} -> {up!r}")
        prev_lo, prev_up = lo, up


def format_log_line(e: dict) -> str:
    return (f"t={e['time']:.3f}s upper={e['upper']:.9g} lower={e['lower']:.9g} "
            f"gap={e['gap']:.3e} nodes={e['nodes']}")


def parse_log_line(line: str) -> dict:
    out = {}
    for tok in line.split():
        k, v = tok.split("=")
        out[{"t": "time"}.get(k, k)] = float(v.rstrip("s")) if k != "nodes" else int(v)
    return out
