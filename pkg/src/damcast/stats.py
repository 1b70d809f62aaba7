"""Pearson correlation, lagged cross-correlation, and Fisher z-based
significance testing.

The lag convention: lagged_corr(x, y, k) correlates today's x with y
observed k days later, so a rising profile over k means x leads y.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

LAG_VARIABLES = ("close", "news", "media", "open", "high", "low", "volumefrom")


@dataclass(frozen=True)
class LagCorrResult:
    lag_days: int
    r: float
    n_effective: int
    z: float | None  # Fisher score, undefined at |r| == 1
    p_two_sided: float | None


def pearson_r(x, y) -> float:
    """Sample correlation coefficient, clamped to [-1, 1] against rounding."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise DataError(f"pearson_r needs equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DataError(f"pearson_r needs at least 2 points, got {len(x)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("pearson_r is undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def lagged_corr(x, y, lag: int) -> LagCorrResult:
    """Correlation of x[:-lag] with y[lag:]; lag 0 is plain pearson_r."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lag < 0:
        raise DataError(f"lag must be >= 0, got {lag}")
    n = min(len(x), len(y))
    if lag >= n:
        raise DataError(f"lag {lag} leaves no overlap for series of length {n}")
    xs = x[: n - lag] if lag else x[:n]
    ys = y[lag:n]
    r = pearson_r(xs, ys)
    z = fisher_z(r) if abs(r) < 1.0 else None
    return LagCorrResult(lag_days=lag, r=r, n_effective=n - lag, z=z, p_two_sided=None)


def fisher_z(r: float) -> float:
    """Variance-stabilizing transform z = atanh(r) = 0.5 ln((1+r)/(1-r))."""
    r = float(r)
    if not -1.0 < r < 1.0:
        raise DataError(f"fisher_z needs |r| < 1, got {r}")
    return 0.5 * math.log((1.0 + r) / (1.0 - r))


def _std_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def fisher_p(r: float, n: int) -> float:
    """Two-sided p for H0: rho = 0, via z*sqrt(n-3) against a standard normal."""
    if n < 4:
        raise DataError(f"fisher test needs n >= 4, got {n}")
    z_stat = fisher_z(r) * math.sqrt(n - 3)
    return 2.0 * (1.0 - _std_normal_cdf(abs(z_stat)))


def tested(result: LagCorrResult) -> LagCorrResult:
    """Attach the two-sided Fisher p-value to a lag correlation."""
    if result.z is None or result.n_effective < 4:
        return result
    return LagCorrResult(
        lag_days=result.lag_days,
        r=result.r,
        n_effective=result.n_effective,
        z=result.z,
        p_two_sided=fisher_p(result.r, result.n_effective),
    )


# --------------------------------------------------------------------------
# all-pairs lag matrices over a prepared ModalSeries
# --------------------------------------------------------------------------


def _series_variables(ms) -> dict[str, np.ndarray]:
    # duck-typed ModalSeries: fin columns are open/high/low/volumefrom
    return {
        "close": ms.target,
        "news": ms.sent[:, 0],
        "media": ms.sent[:, 1],
        "open": ms.fin[:, 0],
        "high": ms.fin[:, 1],
        "low": ms.fin[:, 2],
        "volumefrom": ms.fin[:, 3],
    }


def lag_matrix(ms, lags: list[int]) -> dict[int, dict[tuple[str, str], LagCorrResult]]:
    """All-pairs lagged correlations for each requested lag.

    Pair (a, b) correlates today's a against b `lag` days later.
    Constant columns yield no entry for their pairs.
    """
    variables = _series_variables(ms)
    t = len(ms.target)
    out: dict[int, dict[tuple[str, str], LagCorrResult]] = {}
    for lag in lags:
        if lag >= t:
            raise DataError(f"lag {lag} is not smaller than the series length {t}")
        per_pair: dict[tuple[str, str], LagCorrResult] = {}
        for name_a, a in variables.items():
            for name_b, b in variables.items():
                try:
                    per_pair[(name_a, name_b)] = tested(lagged_corr(a, b, lag))
                except DataError:
                    continue  # constant overlap, e.g. fully imputed sentiment
        out[lag] = per_pair
    return out


def write_lag_matrix_csv(path, results: dict[tuple[str, str], LagCorrResult]) -> None:
    """Square matrix of r values for one lag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["var"] + list(LAG_VARIABLES))
        for a in LAG_VARIABLES:
            row = [a]
            for b in LAG_VARIABLES:
                res = results.get((a, b))
                row.append("" if res is None else f"{res.r:.6f}")
            writer.writerow(row)


def write_lag_long_csv(path, matrices: dict[int, dict[tuple[str, str], LagCorrResult]]) -> None:
    """Long-format dump: lag,var_a,var_b,r,n,z,p."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "var_a", "var_b", "r", "n", "z", "p"])
        for lag in sorted(matrices):
            for (a, b), res in sorted(matrices[lag].items()):
                writer.writerow(
                    [
                        lag,
                        a,
                        b,
                        f"{res.r:.6f}",
                        res.n_effective,
                        "" if res.z is None else f"{res.z:.6f}",
                        "" if res.p_two_sided is None else f"{res.p_two_sided:.6f}",
                    ]
                )
