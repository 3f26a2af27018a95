"""Statistical instruments for the verification experiments.

Only what the experiment suite needs: empirical CDF comparison
(two-sample Kolmogorov-Smirnov), heavy-tail index estimation (Hill with
a threshold-stability diagnostic), and power-law variance fits.  All
estimators are deterministic functions of their sample inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov

from .errors import ParameterError

__all__ = [
    "Sample",
    "KsResult",
    "ks_two_sample",
    "HillResult",
    "hill_tail_index",
    "VarianceFit",
    "variance_scaling_fit",
    "save_sample",
    "load_sample",
]


@dataclass
class Sample:
    """Finite real values plus the provenance that produced them."""

    values: np.ndarray
    provenance: dict

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ParameterError("sample values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("sample contains non-finite values")
        if not self.provenance:
            raise ParameterError("sample needs provenance")

    def __len__(self) -> int:
        return len(self.values)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Sample) else np.asarray(x, dtype=float)


@dataclass
class KsResult:
    statistic: float
    pvalue: float
    n_effective: float


def ks_two_sample(a, b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov.

    The statistic is the exact sup-distance between the empirical CDFs;
    the p-value uses the asymptotic Kolmogorov law at the effective size
    n*m/(n+m) with the usual finite-size correction.  Thresholded checks
    in the experiments compare the statistic itself, not the p-value.
    """
    xa = np.sort(_values(a))
    xb = np.sort(_values(b))
    n, m = len(xa), len(xb)
    if n < 25 or m < 25:
        raise ParameterError("both samples need at least 25 points")
    grid = np.concatenate([xa, xb])
    fa = np.searchsorted(xa, grid, side="right") / n
    fb = np.searchsorted(xb, grid, side="right") / m
    d = float(np.max(np.abs(fa - fb)))
    ne = n * m / (n + m)
    arg = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return KsResult(statistic=d, pvalue=float(kolmogorov(arg)), n_effective=ne)


@dataclass
class HillResult:
    estimate: float
    stderr: float
    k: int
    diagnostics: dict = field(default_factory=dict)
    stable_tail: bool = True


def hill_tail_index(sample, top_fraction: float) -> HillResult:
    """Hill estimator of the tail index on the top order statistics.

    Also reports the estimate at half and a quarter of the threshold as a
    linearity diagnostic: a genuine power tail gives stable values, while
    e.g. an exponential tail drifts, which clears the ``stable_tail`` flag.
    """
    x = np.sort(_values(sample))[::-1]
    n = len(x)
    k = int(top_fraction * n)
    if k < 50:
        raise ParameterError("top_fraction * size must be at least 50")
    if x[k] <= 0:
        raise ParameterError("tail window reaches non-positive values")

    def _hill(kk: int) -> float:
        logs = np.log(x[:kk]) - math.log(x[kk])
        return 1.0 / float(np.mean(logs))

    est = _hill(k)
    ladder = {kk: _hill(kk) for kk in (max(k // 4, 50), max(k // 2, 50), k) if x[kk] > 0}
    drift = max(abs(v / est - 1.0) for v in ladder.values())
    return HillResult(
        estimate=est,
        stderr=est / math.sqrt(k),
        k=k,
        diagnostics={"ladder": {str(kk): v for kk, v in sorted(ladder.items())}, "drift": drift},
        stable_tail=bool(drift <= 0.10),
    )


@dataclass
class VarianceFit:
    exponent: float
    intercept: float
    sizes: list
    variances: list


def variance_scaling_fit(samples_by_size) -> VarianceFit:
    """Least-squares slope of log variance against log size.

    ``samples_by_size`` is an iterable of (size, sample) pairs, at least
    three sizes.
    """
    pairs = [(int(n), _values(s)) for n, s in samples_by_size]
    if len(pairs) < 3:
        raise ParameterError("need at least three sizes")
    sizes = np.array([p[0] for p in pairs], dtype=float)
    variances = np.array([np.var(p[1], ddof=1) for p in pairs])
    if np.any(variances <= 0):
        raise ParameterError("degenerate variance in at least one sample")
    slope, intercept = np.polyfit(np.log(sizes), np.log(variances), 1)
    return VarianceFit(
        exponent=float(slope),
        intercept=float(intercept),
        sizes=[int(s) for s in sizes],
        variances=[float(v) for v in variances],
    )


def save_sample(sample: Sample, path) -> None:
    """One-column CSV plus a .json provenance sidecar."""
    path = str(path)
    with open(path, "w") as fh:
        fh.write("value\n")
        for v in sample.values:
            fh.write(format(float(v), ".17g") + "\n")
    with open(path + ".json", "w") as fh:
        json.dump(sample.provenance, fh, sort_keys=True, default=str)
        fh.write("\n")


def load_sample(path) -> Sample:
    path = str(path)
    vals = np.loadtxt(path, skiprows=1, ndmin=1)
    with open(path + ".json") as fh:
        prov = json.load(fh)
    return Sample(values=vals, provenance=prov)
