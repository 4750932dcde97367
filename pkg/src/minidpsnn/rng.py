"""Counter-based random numbers.

Every draw is a pure function of ``(seed, stream, key, counter)`` so that the
value a neuron sees never depends on which worker computes it or in what
order.  The mixing function is the SplitMix64 finalizer applied in a chain.
"""

import numba as nb
import numpy as np

# stream identifiers; one per independent use of randomness
STREAM_INTRA = 1
STREAM_REMOTE_COLUMN = 2
STREAM_REMOTE_TARGET = 3
STREAM_DELAY = 4
STREAM_INHIBITORY = 5
STREAM_EXTERNAL = 6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@nb.njit(inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def counter_hash(seed, stream, key, counter):
    h = _mix(np.uint64(seed) ^ _mix(np.uint64(stream) + _GOLDEN))
    h = _mix(h + _GOLDEN * (np.uint64(key) + np.uint64(1)))
    return _mix(h + _GOLDEN * (np.uint64(counter) + np.uint64(1)))


@nb.njit(cache=True)
def counter_uniform(seed, stream, key, counter):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(counter_hash(seed, stream, key, counter) >> np.uint64(11)) * _INV53


@nb.njit(cache=True)
def counter_randbelow(seed, stream, key, counter, n):
    return int(counter_uniform(seed, stream, key, counter) * n)


def poisson_cdf_table(mean: float, tail: float = 1e-17) -> np.ndarray:
    """Cumulative Poisson probabilities up to the point the tail is negligible."""
    if mean < 0:
        raise ValueError(f"Poisson mean must be >= 0, got {mean}")
    cdf = []
    p = np.exp(-mean)
    acc = 0.0
    k = 0
    while True:
        acc += p
        cdf.append(acc)
        k += 1
        p *= mean / k
        if 1.0 - acc < tail or (p < tail and k > mean):
            break
    table = np.asarray(cdf)
    table[-1] = 1.0
    return table


@nb.njit(cache=True)
def poisson_from_uniform(u, cdf):
    k = 0
    while k < cdf.shape[0] - 1 and u >= cdf[k]:
        k += 1
    return k


@nb.njit(cache=True)
def poisson_counts(seed, ids, step, cdf, out):
    """Poisson draws for ``ids`` at ``step``; ``out`` receives the counts."""
    total = 0
    for i in range(ids.shape[0]):
        k = poisson_from_uniform(counter_uniform(seed, STREAM_EXTERNAL, ids[i], step), cdf)
        out[i] = k
        total += k
    return total


def uniform_array(seed: int, stream: int, keys, counter: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return _uniform_array(np.uint64(seed), stream, keys, counter)


@nb.njit(cache=True)
def _uniform_array(seed, stream, keys, counter):
    out = np.empty(keys.shape[0])
    for i in range(keys.shape[0]):
        out[i] = counter_uniform(seed, stream, keys[i], counter)
    return out
