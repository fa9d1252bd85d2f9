"""Loss microbenchmarks and empirical scaling-exponent fits.

Timings are taken single-threaded (BLAS pools limited to one thread and,
where the OS allows, the process pinned to one CPU). Summaries use the
median and the median absolute deviation so a noisy scheduler does not
dominate the fit. Fast kernels are looped within each repetition (as
``timeit`` does) so one recorded time is never shorter than
``MIN_SAMPLE_S``; recorded times are per call.
"""

from __future__ import annotations

import json
import os
import time
import timeit
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import matrixlab as ml
from . import objectives as obj
from .errors import ParameterError
from .objectives import ObjectiveSpec, ViewSet

MIN_REPS = 5
MIN_GRID = 4
MIN_SAMPLE_S = 0.02


@dataclass(frozen=True)
class BenchSample:
    objective: str
    N: int
    D: int
    V: int
    times: tuple[float, ...]
    value: float = float("nan")
    pinned: bool = False
    loops: int = 1

    def __post_init__(self):
        if len(self.times) < MIN_REPS:
            raise ParameterError(f"a BenchSample needs at least {MIN_REPS} repetitions")
        if any(not t > 0 for t in self.times):
            raise ParameterError("recorded times must be positive")

    @property
    def repetitions(self) -> int:
        return len(self.times)

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def mad(self) -> float:
        t = np.asarray(self.times)
        return float(np.median(np.abs(t - np.median(t))))


@contextmanager
def single_threaded():
    """Limit BLAS/OpenMP pools to one thread and pin to one CPU if possible.

    Yields whether CPU pinning succeeded.
    """
    pinned = False
    previous = None
    if hasattr(os, "sched_getaffinity"):
        try:
            previous = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {min(previous)})
            pinned = True
        except OSError:
            previous = None
    try:
        with threadpool_limits(limits=1):
            yield pinned
    finally:
        if previous is not None:
            os.sched_setaffinity(0, previous)


def _loops_for(timer: timeit.Timer, min_sample: float) -> int:
    """Smallest 1, 2, 5, 10, ... loop count whose run lasts at least ``min_sample``."""
    n = 1
    while True:
        for m in (1, 2, 5):
            loops = n * m
            if timer.timeit(loops) >= min_sample:
                return loops
        n *= 10


def _clock(fn: Callable[[], float], reps: int, warmup: int, min_sample: float = MIN_SAMPLE_S):
    if reps < MIN_REPS:
        raise ParameterError(f"reps must be >= {MIN_REPS}, got {reps}")
    if warmup < 1:
        raise ParameterError(f"warmup must be >= 1, got {warmup}")
    timer = timeit.Timer(fn, timer=time.perf_counter)
    with single_threaded() as pinned:
        for _ in range(warmup):
            value = fn()
        loops = _loops_for(timer, min_sample)
        times = tuple(t / loops for t in timer.repeat(repeat=reps, number=loops))
    return times, value, pinned, loops


def bench_views(N: int, D: int, V: int, seed: int = 0) -> ViewSet:
    """Fixed seeded Gaussian views: a shared signal plus per-view noise."""
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((N, D))
    return ViewSet([base + 0.1 * rng.standard_normal((N, D)) for _ in range(V)])


def time_loss(spec: ObjectiveSpec, N: int, D: int, V: int = 2, reps: int = MIN_REPS,
              warmup: int = 1, seed: int = 0) -> BenchSample:
    """Wall time of one loss evaluation (value only, no gradient)."""
    vs = bench_views(N, D, V, seed)
    times, value, pinned, loops = _clock(lambda: obj.evaluate(vs, spec).total, reps, warmup)
    return BenchSample(spec.kind, N, D, V, times, float(value), pinned, loops)


def bench_covariance(N: int, D: int, seed: int = 0) -> np.ndarray:
    """Unit-trace covariance of seeded row-normalized Gaussian embeddings."""
    rng = np.random.default_rng(seed)
    Z = ml.normalize(rng.standard_normal((N, D)), "row_unit")
    return (Z.T @ Z) / N


# variance terms as functions of an already formed covariance; forming
# the covariance is common to every objective and is not timed
VARIANCE_KERNELS: dict[str, Callable[[np.ndarray], float]] = {
    "frossl": lambda S: float(np.log(ml.frobenius_norm_sq(S))),
    "ivne": obj.neg_von_neumann,
    "corinfomax": obj.corinfomax_variance,
}


def time_variance_term(kind: str, N: int, D: int, reps: int = MIN_REPS, warmup: int = 1,
                       seed: int = 0) -> BenchSample:
    """Wall time of ``kind``'s variance term on a fixed D x D covariance."""
    if kind not in VARIANCE_KERNELS:
        raise ParameterError(f"no variance kernel for {kind!r}; have {sorted(VARIANCE_KERNELS)}")
    S = bench_covariance(N, D, seed)
    kernel = VARIANCE_KERNELS[kind]
    times, value, pinned, loops = _clock(lambda: kernel(S), reps, warmup)
    return BenchSample(f"{kind}:variance", N, D, 1, times, float(value), pinned, loops)


def _linfit(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), r2


def scaling_exponent(samples: Sequence[BenchSample]) -> float:
    """Least-squares slope of log(median time) against log(D)."""
    return _exponent_fit(samples)[0]


def _exponent_fit(samples):
    if len(samples) < MIN_GRID:
        raise ParameterError(f"need at least {MIN_GRID} grid points, got {len(samples)}")
    Ds = [s.D for s in samples]
    if any(b <= a for a, b in zip(Ds, Ds[1:])):
        raise ParameterError("D grid must be strictly increasing")
    if len({s.N for s in samples}) != 1:
        raise ParameterError("N must be held fixed across the grid")
    if samples[0].N < Ds[-1]:
        raise ParameterError(f"N={samples[0].N} must be >= max D={Ds[-1]}")
    slope, _, r2 = _linfit(np.log(Ds), np.log([s.median for s in samples]))
    return slope, r2


@dataclass
class BenchReport:
    objective: str
    grid: list
    medians: list
    mads: list
    slope: float
    r2: float
    pinned: bool
    axis: str = "D"
    samples: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"objective": self.objective, "axis": self.axis, "grid": self.grid,
                "medians": self.medians, "mads": self.mads, "slope": self.slope,
                "r2": self.r2, "pinned": self.pinned}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def d_sweep(kind: str, N: int, D_grid: Sequence[int], reps: int = MIN_REPS,
            warmup: int = 1) -> BenchReport:
    """Variance-term timings over ``D_grid`` and their log-log exponent."""
    samples = [time_variance_term(kind, N, D, reps, warmup) for D in D_grid]
    slope, r2 = _exponent_fit(samples)
    return BenchReport(samples[0].objective, list(D_grid), [s.median for s in samples],
                       [s.mad for s in samples], slope, r2,
                       all(s.pinned for s in samples), "D", samples)


def views_scaling(spec: ObjectiveSpec, N: int, D: int, V_grid: Sequence[int],
                  reps: int = MIN_REPS, warmup: int = 1,
                  timer: Callable[[int], BenchSample] | None = None) -> BenchReport:
    """Median loss time per V and a linear (not log-log) fit of time vs V.

    ``timer`` replaces :func:`time_loss` for a given V, which lets tests
    feed synthetic timings.
    """
    if any(b <= a for a, b in zip(V_grid, V_grid[1:])):
        raise ParameterError("V grid must be increasing")
    timer = timer or (lambda V: time_loss(spec, N, D, V, reps, warmup))
    samples = [timer(V) for V in V_grid]
    slope, _, r2 = _linfit(V_grid, [s.median for s in samples])
    return BenchReport(spec.kind, list(V_grid), [s.median for s in samples],
                       [s.mad for s in samples], slope, r2,
                       all(s.pinned for s in samples), "V", samples)
