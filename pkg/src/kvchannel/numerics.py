"""Dense fp32 array substrate, deterministic PRNG, and distribution sampling.

Matrices are plain C-contiguous ``float32`` numpy arrays (row-major, shape
``(rows, cols)``); :func:`as_matrix` / :func:`as_vector` are the validation
gates that enforce dtype, layout, and finiteness before anything enters a
cache. Randomness comes from :class:`Prng`, a 64-bit xorshift*-based stream,
so every experiment is reproducible from a single integer seed.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
# any nonzero 64-bit constant works; this is the xorshift64* seed guard
_SEED_FALLBACK = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One splitmix64 step; used to scramble seeds into generator state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Prng:
    """Seedable deterministic generator (xorshift64* stream).

    Identical seeds produce identical streams. One instance per worker;
    concurrent use of a shared instance is not supported. Use
    :meth:`derive` to split statistically independent child streams
    (e.g. one per attention head).
    """

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        self.seed = int(seed)
        state = _splitmix64(self.seed & _MASK64)
        self._state = state if state != 0 else _SEED_FALLBACK

    def derive(self, *indices: int) -> "Prng":
        """Child generator keyed by integer indices; independent of parent draws."""
        mixed = self.seed & _MASK64
        for idx in indices:
            mixed = _splitmix64(mixed ^ _splitmix64(int(idx) & _MASK64))
        child = Prng.__new__(Prng)
        child.seed = mixed
        state = _splitmix64(mixed)
        child._state = state if state != 0 else _SEED_FALLBACK
        return child

    def next_u64(self) -> int:
        x = self._state
        x ^= (x >> 12)
        x ^= (x << 25) & _MASK64
        x ^= (x >> 27)
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        """Uniform draw in (0, 1] with 53-bit resolution."""
        return ((self.next_u64() >> 11) + 1) * 1.1102230246251565e-16  # 2**-53

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        return sample_normal(self, mu, sigma)

    def exponential(self, mu: float) -> float:
        return sample_exponential(self, mu)

    def uniform_array(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        state = self._state
        scale = 1.1102230246251565e-16
        for i in range(n):
            state ^= (state >> 12)
            state ^= (state << 25) & _MASK64
            state ^= (state >> 27)
            out[i] = ((((state * 0x2545F4914F6CDD1D) & _MASK64) >> 11) + 1) * scale
        self._state = state
        return out

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        """Standard-normal fp32 matrix, Box-Muller on the stream."""
        u = self.uniform_array(2 * rows * cols)
        z = np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * math.pi * u[1::2])
        return z.reshape(rows, cols).astype(np.float32)


def sample_normal(prng: Prng, mu: float, sigma: float) -> float:
    """One normal draw via Box-Muller; ``sigma=0`` returns ``mu`` exactly.

    May produce negative values; clamping is the caller's concern.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    u1 = prng.uniform()
    u2 = prng.uniform()
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    return mu + sigma * z


def exponential_icdf(u: float, mu: float) -> float:
    """Inverse CDF of the mean-``mu`` exponential at ``u`` in (0, 1]."""
    if mu <= 0.0:
        raise ValueError(f"exponential mean must be > 0, got {mu}")
    if not (0.0 < u <= 1.0):
        raise ValueError(f"u must lie in (0, 1], got {u}")
    return -mu * math.log(u)


def sample_exponential(prng: Prng, mu: float) -> float:
    """One exponential draw with mean ``mu`` (rate 1/``mu``) by inverse CDF."""
    return exponential_icdf(prng.uniform(), mu)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a C-contiguous fp32 2-D array; rejects NaN/Inf."""
    m = np.ascontiguousarray(a, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float32)
    if m.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def softmax_row(v) -> np.ndarray:
    """Numerically stabilized softmax of one score vector.

    Subtracts the row max before exponentiating, so huge scores cannot
    overflow. Output entries lie in [0, 1] and sum to 1 within 1e-6.
    """
    x = np.asarray(v)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax_row needs a nonempty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax_row input contains non-finite entries")
    shifted = x.astype(np.float64) - float(np.max(x))
    e = np.exp(shifted)
    probs = e / e.sum()
    if x.dtype == np.float32:
        return probs.astype(np.float32)
    return probs


def frobenius(M) -> float:
    """Frobenius norm: sqrt of the sum of squared entries (fp64 accumulation)."""
    x = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("frobenius input contains non-finite entries")
    return float(np.sqrt(np.sum(x * x)))
