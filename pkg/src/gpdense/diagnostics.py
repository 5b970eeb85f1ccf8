"""Chain and fit diagnostics: autocorrelation, ESS, comparison tables."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def autocorrelation(series, max_lag):
    """Biased autocorrelation estimator, normalized to 1 at lag 0."""
    series = np.asarray(series, dtype=float)
    n = series.size
    if n <= max_lag:
        raise ValueError("series must be longer than max_lag")
    centered = series - series.mean()
    var = float(centered @ centered) / n
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if var < 1e-300:
        out[1:] = 0.0  # constant series: defined as zero beyond lag 0
        return out
    for lag in range(1, max_lag + 1):
        out[lag] = float(centered[:-lag] @ centered[lag:]) / (n * var)
    return out


def effective_sample_size(series):
    """ESS via initial-positive-sequence truncation of the autocorrelation."""
    series = np.asarray(series, dtype=float)
    n = series.size
    max_lag = min(n - 1, 1000)
    acf = autocorrelation(series, max_lag)
    total = 0.0
    for lag in range(1, max_lag + 1):
        if acf[lag] <= 0:
            break
        total += acf[lag]
    return n / (1.0 + 2.0 * total)


@dataclass
class TraceReport:
    name: str
    values: np.ndarray
    runtime_seconds: float = 0.0

    def autocorrelation(self, max_lag):
        return autocorrelation(self.values, max_lag)

    def ess(self):
        return effective_sample_size(self.values)


@dataclass
class MethodResult:
    method: str
    log_test_likelihood: Optional[float]
    runtime_seconds: float
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def compare_report(results):
    """Machine-readable comparison table from per-method results."""
    if not results:
        raise ValueError("need at least one method result")
    rows = []
    for r in results:
        row = {
            "method": r.method,
            "log_test_likelihood": r.log_test_likelihood,
            "runtime_seconds": r.runtime_seconds,
            "flags": list(r.flags),
        }
        row.update(r.extra)
        rows.append(row)
    return {"rows": rows}


def format_table(report):
    """Plain-text rendering of a comparison report."""
    rows = report["rows"]
    header = f"{'method':<10} {'l_test':>12} {'runtime_s':>10} flags"
    lines = [header, "-" * len(header)]
    for row in rows:
        lt = row["log_test_likelihood"]
        lt_str = f"{lt:.2f}" if lt is not None else "failed"
        flags = ",".join(row["flags"]) if row["flags"] else "-"
        lines.append(
            f"{row['method']:<10} {lt_str:>12} "
            f"{row['runtime_seconds']:>10.2f} {flags}"
        )
    return "\n".join(lines)
