"""Forward-pass wall-time measurement.

Reports distributions, never a single frames-per-second figure: desk-scale
CPU timings say nothing about published accelerator throughput, but the
train-vs-deploy ordering on the same machine is meaningful.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .network import build, forward, reparameterize_network
from .tensor import Tensor4, np_dtype

WARMUP_RUNS = 2


@dataclass
class BenchReport:
    variant: str
    structure: str
    input_hw: tuple
    threads: int | None
    times: list = field(default_factory=list)

    def __post_init__(self):
        if any(t <= 0 for t in self.times):
            raise ContractError("timings must be positive")

    @property
    def median(self):
        return float(np.median(self.times))

    @property
    def p10(self):
        return float(np.percentile(self.times, 10))

    @property
    def p90(self):
        return float(np.percentile(self.times, 90))

    @property
    def throughput(self):
        return 1.0 / self.median

    def lines(self):
        h, w = self.input_hw
        thread_label = "default" if self.threads is None else str(self.threads)
        return [
            f"variant={self.variant} structure={self.structure} input={h}x{w} "
            f"threads={thread_label} timed_runs={len(self.times)}",
            f"  median {self.median * 1e3:9.2f} ms   p10 {self.p10 * 1e3:9.2f} ms   "
            f"p90 {self.p90 * 1e3:9.2f} ms   throughput {self.throughput:8.3f} inputs/s",
        ]

    def machine_row(self):
        h, w = self.input_hw
        thread_label = "default" if self.threads is None else str(self.threads)
        return (
            f"bench,variant={self.variant},structure={self.structure},"
            f"h={h},w={w},threads={thread_label},runs={len(self.times)},"
            f"median_s={self.median:.6f},p10_s={self.p10:.6f},p90_s={self.p90:.6f},"
            f"throughput_ips={self.throughput:.4f}"
        )


def _limit_threads(threads):
    if threads is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def run_bench(cfg, structure, input_hw, runs, threads=None, seed=0,
              dtype="f32") -> BenchReport:
    """``runs`` includes two warmup passes that are never recorded."""
    if runs < 5:
        raise ContractError(f"need at least 5 runs (2 are warmup), got {runs}")
    if structure not in ("train", "deploy"):
        raise ContractError(f"structure must be train or deploy, got {structure!r}")
    net = build(cfg, seed, dtype=dtype)
    if structure == "deploy":
        net = reparameterize_network(net)
    rng = np.random.default_rng(seed)
    x = Tensor4(rng.standard_normal((1, 3) + tuple(input_hw)).astype(np_dtype(dtype)))

    times = []
    ctx = _limit_threads(threads)
    try:
        for i in range(runs):
            t0 = time.perf_counter()
            forward(net, x)
            elapsed = time.perf_counter() - t0
            if i >= WARMUP_RUNS:
                times.append(elapsed)
    finally:
        if ctx is not None:
            ctx.unregister()
    return BenchReport(cfg.variant, structure, tuple(input_hw), threads, times)
