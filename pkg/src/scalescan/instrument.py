"""Cost accounting for compute and memory.

Two independent counters live on a process-wide Meter:

* ``madds`` counts multiply-accumulate operations. Every differentiable op
  in the tensor layer reports its cost through the ``madds_*`` helpers
  below, and the benchmark predictor reuses the same helpers, so the two
  sides cannot drift apart. Conventions (documented, not negotiable):
  a matmul (m,k)@(k,n) is m*k*n MAdds; any elementwise pass over n
  scalars, including transcendentals like exp, counts n; softmax over n
  scalars counts 3n (shift, exp+sum, divide); layer norm counts 7n;
  a selective scan over (L, E, N) counts 7*L*E*N (discretize 2, state
  update 3, readout 2 per cell).

* ``live scalars`` tracks how many f64 scalars allocated inside a
  ``measure()`` block are simultaneously alive. Tensor buffers register
  on creation and deregister through weakref finalizers, which fire
  deterministically under CPython refcounting. Only buffers allocated
  while a measurement is open are tracked, so pre-existing parameters do
  not count; the number answers "how much working memory did this
  computation need". Single-threaded use is assumed.
"""

from __future__ import annotations

import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field


class Meter:
    __slots__ = ("madds", "live", "peak", "live_on", "gen")

    def __init__(self):
        self.madds = 0
        self.live = 0
        self.peak = 0
        self.live_on = False
        self.gen = 0

    def track(self, arr) -> None:
        """Register a freshly allocated buffer for liveness accounting."""
        if not self.live_on:
            return
        n = arr.size
        self.live += n
        if self.live > self.peak:
            self.peak = self.live
        weakref.finalize(arr, self._untrack, n, self.gen)

    def _untrack(self, n: int, gen: int) -> None:
        if self.live_on and gen == self.gen:
            self.live -= n


_METER = Meter()


def meter() -> Meter:
    return _METER


@dataclass
class Measurement:
    madds: int = 0
    peak_scalars: int = 0
    _madds0: int = field(default=0, repr=False)


@contextmanager
def measure():
    """Measure MAdds and peak live scalars for the enclosed computation.

    Not reentrant; nesting raises.
    """
    m = _METER
    if m.live_on:
        raise RuntimeError("measure() blocks do not nest")
    out = Measurement(_madds0=m.madds)
    m.gen += 1
    m.live = 0
    m.peak = 0
    m.live_on = True
    try:
        yield out
    finally:
        m.live_on = False
        out.madds = m.madds - out._madds0
        out.peak_scalars = m.peak


# Cost helpers. The ops call these with their actual shapes; the benchmark
# predictor calls them with symbolic ones. Keep them dumb arithmetic.

def madds_matmul(m: int, k: int, n: int, batch: int = 1) -> int:
    return batch * m * k * n


def madds_elementwise(n: int) -> int:
    return n


def madds_softmax(n: int) -> int:
    return 3 * n


def madds_layer_norm(n: int) -> int:
    return 7 * n


def madds_scan(L: int, E: int, N: int, batch: int = 1) -> int:
    return batch * 7 * L * E * N


def madds_conv2d(rows: int, k: int, c_in: int, c_out: int) -> int:
    # rows = frames * out_h * out_w, k the (square) kernel side
    return rows * k * k * c_in * c_out


def madds_attention(L: int, E: int, batch: int = 1) -> int:
    # scores + weighted values + softmax over L*L
    return batch * (2 * L * L * E + 3 * L * L)
