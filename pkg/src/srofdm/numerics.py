"""Complex-vector kernels shared by every stage: DFT matrices, least squares,
the Gaussian tail function, and reproducible counter-based random streams."""
from __future__ import annotations

import numpy as np
from scipy.special import erfc

__all__ = [
    "SingularSystemError",
    "RandomStream",
    "dft_matrix",
    "partial_fourier",
    "ls_solve",
    "q_function",
    "draw_cn",
]

_MASK64 = (1 << 64) - 1


class SingularSystemError(ValueError):
    """Raised when a least-squares system is rank deficient."""


class RandomStream:
    """Counter-based random stream keyed by (master_seed, stream_id).

    Two streams built from the same key pair produce the same draw sequence no
    matter when or on which worker they run, which is what makes large Monte
    Carlo sweeps bit-reproducible under any trial scheduling. Streams are
    stateful: consecutive draws advance the underlying Philox counter. Never
    share one instance across workers; give each trial its own stream_id.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self._gen = np.random.Generator(np.random.Philox(key=np.zeros(2, dtype=np.uint64)))
        self.reset(master_seed, stream_id)

    def reset(self, master_seed: int, stream_id: int = 0):
        """Rewind to the start of the (master_seed, stream_id) sequence.

        Reuses the existing bit generator, so tight loops over many trial ids
        can recycle one instance; the resulting draw sequence is identical to
        a freshly constructed stream with the same key.
        """
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.zeros(4, dtype=np.uint64),
                "key": np.array([self.master_seed, self.stream_id], dtype=np.uint64),
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self

    def __repr__(self):
        return f"RandomStream(master_seed={self.master_seed}, stream_id={self.stream_id})"

    def integers(self, low, high, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def normals(self, size=None):
        """Standard real normal draws."""
        return self._gen.standard_normal(size)


def dft_matrix(n: int) -> np.ndarray:
    """N-point DFT matrix with entries exp(-j*2*pi*p*q/n), 0-based p, q.

    Unnormalized: W^H W = n*I. Row k of the product W @ x is the k-th DFT bin
    of x, matching numpy.fft.fft conventions.
    """
    if n < 1:
        raise ValueError(f"DFT size must be >= 1, got {n}")
    pq = np.outer(np.arange(n), np.arange(n))
    return np.exp(-2j * np.pi * pq / n)


def partial_fourier(n: int, l: int) -> np.ndarray:
    """First l columns of the n-point DFT matrix (n x l, F^H F = n*I_l)."""
    if not 1 <= l <= n:
        raise ValueError(f"need 1 <= l <= n, got l={l}, n={n}")
    p = np.arange(n)[:, None]
    q = np.arange(l)[None, :]
    return np.exp(-2j * np.pi * p * q / n)


def ls_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least-squares solve min_x ||a x - b||_2 via orthogonal factorization.

    Solved through numpy's SVD-backed lstsq rather than normal equations; raises
    SingularSystemError on rank deficiency, which is how an over-parameterized
    channel model (more taps than pilots) announces itself.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2:
        raise ValueError("ls_solve expects a 2-D system matrix")
    if a.shape[0] < a.shape[1]:
        raise SingularSystemError(
            f"underdetermined system: {a.shape[0]} rows < {a.shape[1]} columns"
        )
    x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < a.shape[1]:
        raise SingularSystemError(
            f"rank-deficient system: rank {rank} < {a.shape[1]} columns"
        )
    return x


def q_function(z):
    """Gaussian tail probability Q(z) = P(N(0,1) > z).

    Evaluated as 0.5*erfc(z/sqrt(2)); accepts scalars or arrays.
    """
    return 0.5 * erfc(np.asarray(z) / np.sqrt(2.0))


def draw_cn(stream: RandomStream, count: int, variance: float) -> np.ndarray:
    """Draw `count` i.i.d. circularly symmetric complex Gaussian CN(0, variance).

    Unit-variance pairs are drawn internally and scaled by sqrt(variance), so
    streams with equal keys but different variances stay proportional.
    """
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    z = stream.normals(size=(2, count))
    unit = (z[0] + 1j * z[1]) * np.sqrt(0.5)
    return unit * np.sqrt(variance)
