"""Performance indicators for simulation benchmarks and their aggregation."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Sequence

import numpy as np

__all__ = [
    "BenchRecord",
    "estimation_error",
    "tnr",
    "prediction_mse",
    "aggregate",
    "write_records",
    "read_records",
    "write_aggregate",
    "METRICS",
]

METRICS = ("estimation_error", "tnr", "prediction_mse", "wall_time")


@dataclass(frozen=True)
class BenchRecord:
    scenario: str
    method: str
    replication: int
    estimation_error: float
    tnr: float
    prediction_mse: float
    wall_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tnr <= 1.0:
            raise ValueError(f"tnr must lie in [0, 1], got {self.tnr}")
        if self.estimation_error < 0 or self.prediction_mse < 0:
            raise ValueError("errors must be nonnegative")


def estimation_error(B_true, B_hat) -> float:
    """Relative Frobenius error ``||B - B_hat||_F / ||B||_F``."""
    B_true = np.asarray(B_true, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    if B_true.shape != B_hat.shape:
        raise ValueError(f"shape mismatch {B_true.shape} vs {B_hat.shape}")
    denom = np.linalg.norm(B_true)
    if denom == 0:
        raise ValueError("B_true has zero Frobenius norm")
    return float(np.linalg.norm(B_true - B_hat) / denom)


def tnr(B_true, B_hat, has_intercept: bool = True) -> float:
    """Share of truly-zero coefficients estimated as exactly 0.0.

    With ``has_intercept`` the first row (intercepts, never penalized) is
    left out of both counts. The zero test is exact: 1e-9 is not zero.
    """
    B_true = np.asarray(B_true, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    if B_true.shape != B_hat.shape:
        raise ValueError(f"shape mismatch {B_true.shape} vs {B_hat.shape}")
    if has_intercept:
        B_true, B_hat = B_true[1:], B_hat[1:]
    negatives = B_true == 0.0
    n_neg = int(negatives.sum())
    if n_neg == 0:
        raise ValueError("B_true has no zero coefficient; TNR is undefined")
    return float(np.sum(negatives & (B_hat == 0.0)) / n_neg)


def prediction_mse(Y, Y_hat) -> float:
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    return float(np.mean((Y - Y_hat) ** 2))


def aggregate(records: Iterable[BenchRecord]) -> List[Dict[str, object]]:
    """One row per (scenario, method), sorted, with count, mean, median,
    and 25%/75% quantiles of every metric."""
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    groups: Dict[tuple, List[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.scenario, r.method), []).append(r)
    rows = []
    for (scenario, method) in sorted(groups):
        grp = groups[(scenario, method)]
        row: Dict[str, object] = {"scenario": scenario, "method": method, "count": len(grp)}
        for m in METRICS:
            v = np.array([getattr(r, m) for r in grp], dtype=float)
            row[f"{m}_mean"] = float(np.mean(v))
            row[f"{m}_median"] = float(np.median(v))
            row[f"{m}_q25"] = float(np.quantile(v, 0.25))
            row[f"{m}_q75"] = float(np.quantile(v, 0.75))
        rows.append(row)
    return rows


def write_records(path, records: Sequence[BenchRecord]) -> None:
    names = [f.name for f in fields(BenchRecord)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(r).items()})


def read_records(path) -> List[BenchRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(
                scenario=row["scenario"], method=row["method"],
                replication=int(row["replication"]),
                estimation_error=float(row["estimation_error"]), tnr=float(row["tnr"]),
                prediction_mse=float(row["prediction_mse"]),
                wall_time=float(row.get("wall_time") or 0.0),
            ))
    return out


def write_aggregate(path, rows: Sequence[Dict[str, object]]) -> None:
    if not rows:
        raise ValueError("no rows")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
