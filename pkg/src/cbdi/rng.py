"""Counter-based random streams.

A draw is a pure function of ``(seed, path, role, counter, index)``: the
stream key is built from ``(seed, path, role)`` and every variate is a
SplitMix64-style hash of the key, a 64-bit counter and a small index.
No generator state is carried, so draws can be produced in any order,
in any chunking across workers, and the compiled kernel reproduces the
same bits as the NumPy implementation below.
"""

import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
K_STEP = 0xD1B54A32D192ED03

# stream roles
GAUSS_A = 1
GAUSS_B = 2
POISSON = 3
JUMP = 4
MARK = 5

_U53 = 1.0 / 9007199254740992.0


def mix64(z):
    """SplitMix64 finalizer on Python ints (mod 2**64)."""
    z &= MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    return z ^ (z >> 31)


def stream_key(seed, path, role):
    """64-bit key of the stream ``(seed, path, role)``."""
    k = mix64(int(seed) + GOLDEN)
    k = mix64(k ^ ((int(path) * GOLDEN) & MASK))
    return mix64(k ^ ((int(role) * K_STEP) & MASK))


def _mix64_np(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(M2)
    return z ^ (z >> np.uint64(31))


def hash_bits(key, counter, index=0):
    """Raw 64-bit outputs for arrays of keys, counters and indices."""
    with np.errstate(over="ignore"):
        key = np.asarray(key, dtype=np.uint64)
        c = np.asarray(counter, dtype=np.uint64)
        k = np.asarray(index, dtype=np.uint64)
        z = _mix64_np(c + np.uint64(GOLDEN))
        z = _mix64_np(key ^ z)
        return _mix64_np(z ^ (k * np.uint64(K_STEP)))


def uniform(key, counter, index=0):
    """Uniform variates in the open interval (0, 1)."""
    bits = hash_bits(key, counter, index)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def normal(key_a, key_b, counter, index=0):
    """Standard normals by Box-Muller from two independent roles."""
    u1 = uniform(key_a, counter, index)
    u2 = uniform(key_b, counter, index)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class RngStream:
    """Sequential view of one counter-based stream.

    Handy for the samplers that take an ``rng_stream`` argument; the
    simulator addresses counters directly instead.
    """

    def __init__(self, seed, path=0, role=JUMP):
        self.key = stream_key(seed, path, role)
        self.counter = 0

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        c = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        out = uniform(np.uint64(self.key), c)
        return float(out[0]) if size is None else out.reshape(size)
