"""Random binary query codebook, query regions and oracle responses.

Row ``i`` of the codebook defines the ``i``-th query: the union of all grid
cells whose bit is 1. A target contributes to the answer of query ``i`` when
the cell it occupies at time ``i`` is in that union, so the bit read for a
quantized trajectory is ``bits[i, flat[i] - 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .channel import QueryChannel, transmit
from .errors import DomainError, ResourceError

DEFAULT_MAX_BITS = 1 << 31
_ROW_CHUNK_BITS = 1 << 22


@dataclass(frozen=True)
class Codebook:
    """``n`` rows of ``cols`` Bernoulli(p) bits packed little-endian into uint64 words."""

    n: int
    cols: int
    p: float
    words: NDArray[np.uint64]  # (n, ceil(cols / 64))

    def bit(self, i: int, j: int) -> int:
        """Bit of 0-based row ``i`` and 0-based column ``j``."""
        return int((self.words[i, j >> 6] >> np.uint64(j & 63)) & np.uint64(1))

    def dense(self) -> NDArray[np.uint8]:
        raw = self.words.view(np.uint8)
        return np.unpackbits(raw, axis=1, bitorder="little")[:, : self.cols]

    def row_weights(self) -> NDArray[np.int64]:
        return np.bitwise_count(self.words).sum(axis=1).astype(np.int64)

    def query_sizes(self) -> NDArray[np.float64]:
        """Lebesgue size of every query region (fraction of cells selected)."""
        return self.row_weights() / self.cols

    def region(self, i: int) -> NDArray[np.int64]:
        """1-based flat indices of the cells in the ``i``-th (0-based) query."""
        row = np.unpackbits(self.words[i].view(np.uint8), bitorder="little")[: self.cols]
        return np.nonzero(row)[0] + 1


def generate(
    n: int,
    cols: int,
    p: float,
    seed: int | np.random.SeedSequence | np.random.Generator,
    max_bits: int = DEFAULT_MAX_BITS,
) -> Codebook:
    """Draw an ``n x cols`` Bernoulli(p) codebook from a seeded stream."""
    if n < 1 or cols < 1:
        raise DomainError("codebook dimensions must be positive")
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    if n * cols > max_bits:
        raise ResourceError(f"codebook of {n}x{cols} bits exceeds the cap of {max_bits} bits")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nwords = (cols + 63) // 64
    words = np.zeros((n, nwords), dtype=np.uint64)
    step = max(1, _ROW_CHUNK_BITS // cols)
    for r0 in range(0, n, step):
        r1 = min(n, r0 + step)
        bits = rng.random((r1 - r0, cols)) < p
        packed = np.packbits(bits, axis=1, bitorder="little")
        buf = np.zeros((r1 - r0, nwords * 8), dtype=np.uint8)
        buf[:, : packed.shape[1]] = packed
        words[r0:r1] = buf.view(np.uint64)
    return Codebook(n, cols, float(p), words)


def codewords(cb: Codebook, flats: ArrayLike, row_offset: int = 0) -> NDArray[np.uint8]:
    """Bits read along trajectories; ``flats`` is ``(N, m)`` of 1-based cells for rows ``row_offset..``."""
    f = np.asarray(flats, dtype=np.int64)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    m = f.shape[1]
    if row_offset + m > cb.n:
        raise DomainError("trajectory is longer than the codebook")
    if np.any(f < 1) or np.any(f > cb.cols):
        raise DomainError("flat index outside the codebook columns")
    j = f - 1
    rows = np.arange(row_offset, row_offset + m)[None, :]
    w = cb.words[rows, j >> 6]
    out = ((w >> (j & 63).astype(np.uint64)) & np.uint64(1)).astype(np.uint8)
    return out[0] if single else out


def codeword_for(cb: Codebook, flat: ArrayLike) -> NDArray[np.uint8]:
    return codewords(cb, np.asarray(flat))


def oracle_or(cb: Codebook, true_flats: ArrayLike, row_offset: int = 0) -> NDArray[np.uint8]:
    """Noiseless answers: OR over targets of the bits on their trajectories."""
    return codewords(cb, np.atleast_2d(true_flats), row_offset).max(axis=0)


def oracle_responses(
    cb: Codebook,
    true_flats: ArrayLike,
    channel: QueryChannel,
    rng: np.random.Generator,
    row_offset: int = 0,
) -> tuple[NDArray[np.uint8], NDArray, NDArray[np.float64]]:
    """``(z, y, sizes)``: noiseless OR answers, noisy responses and query sizes.

    The noise level of each response follows the realized size of its query
    region, not the design value ``p``.
    """
    z = oracle_or(cb, true_flats, row_offset)
    sizes = cb.query_sizes()[row_offset : row_offset + z.size]
    return z, transmit(channel, z, sizes, rng), sizes


def typicality_gap(cb: Codebook) -> float:
    return float(np.max(np.abs(cb.query_sizes() - cb.p)))


def default_eta(d: int, M: int) -> float:
    """Typicality slack ``sqrt(d log M / (2 M^d))``."""
    return math.sqrt(d * math.log(M) / (2.0 * float(M) ** d)) if M > 1 else 0.0
