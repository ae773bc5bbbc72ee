"""Sampling driver: reproducible counter-based RNG streams, streaming
mean/variance with exact merging, confidence intervals and weak-order slope
regression."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_BLOCK = 1 << 16


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    """Generator for one sample block, keyed by (seed, stream, block).

    Philox is counter-based, so the draws of block ``i`` are the same no
    matter which worker processes it or in which order blocks run; this is
    what makes totals independent of the worker layout.
    """
    if not (0 <= stream < 1 << 24) or not (0 <= block < 1 << 40):
        raise ValueError("stream must fit in 24 bits and block in 40 bits")
    return np.random.Generator(np.random.Philox(key=[seed, (stream << 40) | block]))


@dataclass
class RunningStats:
    """Welford streaming mean/variance accumulator with exact merging."""

    count: int = 0
    mean: float = 0.0
    _m2: float = 0.0

    def update(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        m = values.size
        if m == 0:
            return
        bmean = float(values.mean())
        bm2 = float(((values - bmean) ** 2).sum())
        self.merge(RunningStats(count=m, mean=bmean, _m2=bm2))

    def merge(self, other: "RunningStats") -> None:
        if other.count == 0:
            return
        n, m = self.count, other.count
        delta = other.mean - self.mean
        tot = n + m
        self.mean += delta * m / tot
        self._m2 += other._m2 + delta * delta * n * m / tot
        self.count = tot

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        if self.count < 2:
            return 0.0
        return self._m2 / (self.count - 1)


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with its 95% confidence half-width."""

    value: float
    variance: float
    n_samples: int
    half_width_95: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.half_width_95 is None:
            object.__setattr__(
                self, "half_width_95",
                1.96 * math.sqrt(max(self.variance, 0.0) / self.n_samples))


def run_estimate(task: Callable[[np.random.Generator, int], np.ndarray],
                 samples: int, seed: int, stream: int = 0,
                 block_size: int = DEFAULT_BLOCK) -> Estimate:
    """Estimate E[task] with ``samples`` draws split into fixed-size blocks.

    ``task(rng, m)`` must return ``m`` payoff samples using only ``rng``.
    Block boundaries depend only on ``block_size``, so the result is bitwise
    reproducible for a fixed (seed, stream, block_size) regardless of how
    blocks would be distributed over workers.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    stats = RunningStats()
    done = 0
    block = 0
    while done < samples:
        m = min(block_size, samples - done)
        vals = np.asarray(task(block_rng(seed, stream, block), m), dtype=float)
        if vals.shape != (m,):
            raise ValueError(f"task returned shape {vals.shape}, expected ({m},)")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise FloatingPointError(f"non-finite sample at index {done + bad}")
        stats.update(vals)
        done += m
        block += 1
    return Estimate(value=stats.mean, variance=stats.variance, n_samples=stats.count)


@dataclass(frozen=True)
class SlopeFit:
    """OLS fit of log|error| against log(1/n)."""

    slope: float
    intercept: float
    points: tuple
    residual: float
    dropped: int = 0


def regress_slope(errors: Sequence[tuple]) -> SlopeFit:
    """Least-squares slope of log|err| vs log(1/n).

    ``errors`` is a sequence of (n, |err|) pairs; nonpositive errors are
    dropped with a warning (they carry no order information).
    """
    pts = []
    dropped = 0
    for n, err in errors:
        if err > 0 and math.isfinite(err):
            pts.append((math.log(1.0 / n), math.log(err)))
        else:
            dropped += 1
    if dropped:
        warnings.warn(f"dropped {dropped} nonpositive error points from slope fit")
    if len(pts) < 2:
        raise ValueError("need at least two positive error points for a slope")
    xs = np.array([q[0] for q in pts])
    ys = np.array([q[1] for q in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = float(np.sum((ys - (slope * xs + intercept)) ** 2))
    return SlopeFit(slope=float(slope), intercept=float(intercept),
                    points=tuple(pts), residual=resid, dropped=dropped)
