"""Random distribution primitives shared by the samplers and oracles.

All stochastic code in the package draws through :class:`Rng`, a thin
wrapper over numpy's Philox counter-based generator.  A (seed, stream)
pair fully determines the output sequence, which is what makes chains,
splits and checkpoint resumes replayable.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln

__all__ = [
    "Rng",
    "sample_dirichlet",
    "crp_predictive",
    "stick_breaking",
    "sample_table_count",
    "sample_table_counts",
    "expected_table_count",
    "eppf_log_prob",
    "sample_categorical",
    "sample_categorical_log",
]

# Floor applied to Dirichlet components so downstream log-weights and the
# stick normalization invariant never see an exact zero.
_DIRICHLET_FLOOR = 1e-12


class Rng:
    """Counter-based random stream addressed by (seed, stream).

    Identical (seed, stream) pairs and call sequences produce identical
    outputs on every platform numpy supports.  Substreams are cheap:
    ``Rng(seed, stream)`` for any 64-bit stream id never collides with
    another stream of the same seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= int(stream) < 2**64:
            raise ValueError(f"stream must be a 64-bit unsigned integer, got {stream}")
        self.seed = int(seed)
        self.stream = int(stream)
        # An exact uint64 key: a plain list would round-trip through
        # float64 and degrade seeds at or above 2**63.
        key = np.array([np.uint64(self.seed), np.uint64(self.stream)], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream: int) -> "Rng":
        """Fresh Rng with the same seed on a different stream."""
        return Rng(self.seed, stream)

    # Thin delegates. Keeping them explicit documents the full surface the
    # package relies on and makes state capture trivial.
    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def beta(self, a, b, size=None):
        return self._gen.beta(a, b, size=size)

    def gamma(self, shape, scale=1.0, size=None):
        return self._gen.gamma(shape, scale, size=size)

    def standard_gamma(self, shape, size=None):
        return self._gen.standard_gamma(shape, size=size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def get_state(self) -> dict:
        """JSON-serializable generator state, used by checkpoints."""
        state = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in state["state"]["counter"]],
            "key": [int(v) for v in state["state"]["key"]],
            "buffer": [int(v) for v in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def set_state(self, payload: dict) -> None:
        self.seed = int(payload["seed"])
        self.stream = int(payload["stream"])
        state = self._gen.bit_generator.state
        state["state"]["counter"] = np.array(payload["counter"], dtype=np.uint64)
        state["state"]["key"] = np.array(payload["key"], dtype=np.uint64)
        state["buffer"] = np.array(payload["buffer"], dtype=np.uint64)
        state["buffer_pos"] = int(payload["buffer_pos"])
        state["has_uint32"] = int(payload["has_uint32"])
        state["uinteger"] = int(payload["uinteger"])
        self._gen.bit_generator.state = state

    @classmethod
    def from_state(cls, payload: dict) -> "Rng":
        rng = cls(int(payload["seed"]), int(payload["stream"]))
        rng.set_state(payload)
        return rng

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def as_rng(rng) -> Rng:
    """Coerce an int seed or pass through an existing Rng."""
    if isinstance(rng, Rng):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Rng(int(rng))
    raise TypeError(f"expected Rng or integer seed, got {type(rng).__name__}")


def sample_dirichlet(alpha, rng: Rng) -> np.ndarray:
    """Draw from Dirichlet(alpha) via normalized gammas.

    Components are floored at a tiny positive value and renormalized so a
    draw never contains an exact zero (which would poison log-weights).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("alpha must be a non-empty 1-d vector")
    if not np.all(alpha > 0):
        raise ValueError("Dirichlet parameters must be strictly positive")
    draw = rng.standard_gamma(alpha)
    total = draw.sum()
    if total <= 0:
        # All gammas underflowed (possible for very small alphas); fall back
        # to a one-hot on the relatively largest component.
        draw = np.full(alpha.size, _DIRICHLET_FLOOR)
        draw[int(np.argmax(alpha))] = 1.0
        total = draw.sum()
    out = draw / total
    out = np.maximum(out, _DIRICHLET_FLOOR)
    return out / out.sum()


def crp_predictive(counts, alpha: float) -> np.ndarray:
    """Predictive over existing blocks plus a trailing new-block slot.

    Returns ``[c_1, ..., c_K, alpha] / (n + alpha)``.  Empty counts give
    ``[1.0]``: the first customer always opens a new block.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if counts.size and np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    n = counts.sum() if counts.size else 0.0
    out = np.empty(counts.size + 1)
    out[:-1] = counts
    out[-1] = alpha
    return out / (n + alpha)


def stick_breaking(gamma: float, K: int, rng: Rng):
    """First K stick-breaking weights of GEM(gamma) plus the remainder.

    Returns ``(weights, remainder)`` with ``weights.sum() + remainder == 1``
    up to float rounding.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if K < 0:
        raise ValueError("K must be nonnegative")
    weights = np.empty(K)
    remaining = 1.0
    for i in range(K):
        b = rng.beta(1.0, gamma)
        weights[i] = remaining * b
        remaining *= 1.0 - b
    return weights, remaining


def sample_table_count(ab: float, n: int, rng: Rng) -> int:
    """Number of tables from n sequential CRP seatings at concentration ab.

    Customer i opens a new table with probability ab / (ab + i - 1), so the
    count is 0 iff n == 0 and at least 1 otherwise.
    """
    if ab <= 0:
        raise ValueError("concentration must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return 0
    m = 1
    for i in range(2, n + 1):
        if rng.uniform() < ab / (ab + i - 1):
            m += 1
    return m


def sample_table_counts(ab, n, rng: Rng) -> np.ndarray:
    """Vectorized :func:`sample_table_count` over aligned arrays ab, n."""
    ab = np.asarray(ab, dtype=np.float64)
    n = np.asarray(n, dtype=np.int64)
    if ab.shape != n.shape:
        raise ValueError("ab and n must have the same shape")
    if np.any(n < 0) or np.any(ab <= 0):
        raise ValueError("need n >= 0 and ab > 0")
    m = (n > 0).astype(np.int64)
    if n.size == 0:
        return m
    max_n = int(n.max())
    for i in range(2, max_n + 1):
        active = n >= i
        if not np.any(active):
            break
        p = ab[active] / (ab[active] + i - 1)
        m[active] += (rng.uniform(int(active.sum())) < p).astype(np.int64)
    return m


def expected_table_count(ab: float, n: int) -> float:
    """E[tables] after n seatings: ab * (digamma(ab + n) - digamma(ab))."""
    if ab <= 0:
        raise ValueError("concentration must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return 0.0
    return float(ab * (digamma(ab + n) - digamma(ab)))


def eppf_log_prob(block_sizes, alpha: float) -> float:
    """Log probability of a partition with the given block sizes under a CRP.

    log [ alpha^K * prod_k (b_k - 1)! / prod_{i=0}^{n-1} (alpha + i) ].
    The empty partition has probability one.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sizes = [int(b) for b in block_sizes]
    if any(b <= 0 for b in sizes):
        raise ValueError("block sizes must be positive")
    if not sizes:
        return 0.0
    n = sum(sizes)
    out = len(sizes) * np.log(alpha)
    out += sum(gammaln(b) for b in sizes)
    out -= gammaln(alpha + n) - gammaln(alpha)
    return float(out)


def sample_categorical(weights, rng: Rng) -> int:
    """Draw an index proportional to ``weights`` (nonnegative, unnormalized).

    Zero entries carry no mass; an all-zero or non-finite total is an
    error.  Consumes exactly one uniform.
    """
    cum = np.cumsum(weights)
    total = cum[-1] if cum.size else 0.0
    if not total > 0.0 or not np.isfinite(total):
        raise ValueError("all categorical weights are zero or invalid")
    idx = int(np.searchsorted(cum, rng.uniform() * total, side="right"))
    return idx if idx < cum.size else cum.size - 1


def sample_categorical_log(log_weights, rng: Rng) -> int:
    """Draw an index proportional to exp(log_weights), max-subtracted.

    Entries of -inf are allowed (zero mass); all -inf is an error.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.size == 0:
        raise ValueError("empty weight vector")
    hi = lw.max()
    if not np.isfinite(hi):
        raise ValueError("all categorical weights are zero or invalid")
    return sample_categorical(np.exp(lw - hi), rng)
