"""Time-bucketed delay queues.

:class:`DelayQueues` keeps axonal spikes in ``D`` circular buckets.
:class:`SynapticRing` is the per-rank synaptic side: it expands arriving
axonal spikes through the local synapse slice straight into fixed-point
input accumulators, one row per future step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ..topology import DELAY_HORIZON


class DelayError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class AxonalSpike:
    step: int
    source: int


@dataclass
class DelayQueues:
    horizon: int = DELAY_HORIZON
    buckets: list[list[tuple[int, int, int]]] = field(default_factory=list)

    def __post_init__(self):
        if not self.buckets:
            self.buckets = [[] for _ in range(self.horizon)]

    def enqueue(self, spike: AxonalSpike, delay: int) -> "DelayQueues":
        if not 1 <= delay <= self.horizon:
            raise DelayError(f"delay {delay} outside [1, {self.horizon}]")
        due = spike.step + delay
        self.buckets[due % self.horizon].append((due, spike.step, spike.source))
        return self

    def drain(self, step: int) -> list[AxonalSpike]:
        """Spikes due at ``step``, ordered by (emission step, source id)."""
        bucket = self.buckets[step % self.horizon]
        due = sorted(e for e in bucket if e[0] == step)
        self.buckets[step % self.horizon] = [e for e in bucket if e[0] != step]
        return [AxonalSpike(s, src) for _, s, src in due]

    def pending(self) -> int:
        return sum(len(b) for b in self.buckets)


def enqueue_axonal(queues: DelayQueues, spike: AxonalSpike, delay: int) -> DelayQueues:
    return queues.enqueue(spike, delay)


@nb.njit(cache=True, nogil=True)
def expand_spikes(sources, step, indptr, tgt_local, delays, src_wq, ring):
    """Add every synapse of ``sources`` into ``ring[(step + delay) % D, target]``."""
    horizon = ring.shape[0]
    n_events = 0
    for k in range(sources.shape[0]):
        s = sources[k]
        w = src_wq[s]
        for j in range(indptr[s], indptr[s + 1]):
            ring[(step + delays[j]) % horizon, tgt_local[j]] += w
        n_events += indptr[s + 1] - indptr[s]
    return n_events


@nb.njit(cache=True, nogil=True)
def drain_bucket(ring, step, out):
    row = step % ring.shape[0]
    for i in range(ring.shape[1]):
        out[i] = ring[row, i]
        ring[row, i] = 0


class SynapticRing:
    """Fixed-point input accumulators for one rank's neurons."""

    def __init__(self, n_local: int, horizon: int = DELAY_HORIZON):
        self.buf = np.zeros((horizon, n_local), dtype=np.int64)

    @property
    def horizon(self) -> int:
        return self.buf.shape[0]

    def drain(self, step: int, out: np.ndarray) -> np.ndarray:
        drain_bucket(self.buf, step, out)
        return out
