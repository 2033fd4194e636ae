"""Received-signal composition per multiple-access scheme and threshold/SIC detection.

TX indices are 0-based throughout. A gain array ``g`` has shape ``(K, K, L+1)``
with ``g[i, j, l]`` the mean contribution of a bit-1 sent by TX i in slot l,
observed at the sampling instant of TX j (slot 0 is the current slot).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SCHEMES = ("noma", "mdma", "tdma")


class DetectionError(ValueError):
    pass


def _gain_array(gains) -> np.ndarray:
    return np.asarray(getattr(gains, "values", gains), dtype=float)


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Bits ``s_i[l]`` for all TXs and the current plus L past slots, shape (K, L+1)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits, dtype=np.int8)
        if b.ndim != 2 or not np.all((b == 0) | (b == 1)):
            raise DetectionError("frame bits must be a binary (K, L+1) array")
        object.__setattr__(self, "bits", b)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymbolFrame):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.bits.shape, self.bits.tobytes()))

    @property
    def num_tx(self) -> int:
        return self.bits.shape[0]

    @property
    def isi_length(self) -> int:
        return self.bits.shape[1] - 1

    @property
    def vector(self) -> np.ndarray:
        """Flattened S = [s_1[0..], ..., s_K[0], s_1[1], ...]: slot-major, TX-minor."""
        return self.bits.T.ravel()

    @classmethod
    def from_vector(cls, vec: Sequence[int], num_tx: int) -> "SymbolFrame":
        v = np.asarray(vec, dtype=np.int8)
        return cls(v.reshape(-1, num_tx).T)

    @classmethod
    def zeros(cls, num_tx: int, isi_length: int) -> "SymbolFrame":
        return cls(np.zeros((num_tx, isi_length + 1), dtype=np.int8))


class ThresholdTree:
    """SIC thresholds: TX j (0-based) owns ``2**j`` integer thresholds.

    The entry used for TX j is indexed by the already-decoded bits of TX 0..j-1
    read as a binary number with TX 0 as the most significant bit.
    """

    def __init__(self, levels: Iterable[Sequence[int]]):
        self.levels = [np.asarray(lv, dtype=np.int64).copy() for lv in levels]
        for j, lv in enumerate(self.levels):
            if lv.shape != (2**j,):
                raise DetectionError(f"TX {j} needs {2**j} thresholds, got {lv.shape}")
            if np.any(lv < 0):
                raise DetectionError("thresholds must be >= 0")

    @classmethod
    def constant(cls, num_tx: int, value: int = 1) -> "ThresholdTree":
        return cls([np.full(2**j, value, dtype=np.int64) for j in range(num_tx)])

    @classmethod
    def from_flat(cls, num_tx: int, flat: Sequence[int]) -> "ThresholdTree":
        flat = np.asarray(flat, dtype=np.int64)
        if flat.shape != (2**num_tx - 1,):
            raise DetectionError("flat tree size mismatch")
        return cls([flat[2**j - 1 : 2 ** (j + 1) - 1] for j in range(num_tx)])

    @classmethod
    def from_scalar(cls, thresholds: Sequence[int]) -> "ThresholdTree":
        """Tree that ignores upstream decisions (every prefix uses the same threshold)."""
        return cls([np.full(2**j, int(t), dtype=np.int64) for j, t in enumerate(thresholds)])

    @property
    def num_tx(self) -> int:
        return len(self.levels)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def copy(self) -> "ThresholdTree":
        return ThresholdTree(self.levels)

    @staticmethod
    def prefix_index(prefix: Sequence[int]) -> int:
        idx = 0
        for b in prefix:
            idx = 2 * idx + int(b)
        return idx

    def threshold(self, j: int, prefix: Sequence[int]) -> int:
        if len(prefix) != j:
            raise DetectionError(f"TX {j} needs a prefix of length {j}, got {len(prefix)}")
        return int(self.levels[j][self.prefix_index(prefix)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ThresholdTree):
            return NotImplemented
        return self.num_tx == other.num_tx and all(
            np.array_equal(a, b) for a, b in zip(self.levels, other.levels)
        )

    def __repr__(self) -> str:
        return f"ThresholdTree({[lv.tolist() for lv in self.levels]})"


def _check_tx(j: int, k: int) -> None:
    if not 0 <= j < k:
        raise IndexError(f"TX index {j} out of range for K={k}")


def mean_mdma(j: int, frame: SymbolFrame, gains, noise: float) -> float:
    g = _gain_array(gains)
    _check_tx(j, g.shape[0])
    s = frame.bits
    return float(noise + np.dot(s[j], g[j, j, :]))


def tdma_owner(j: int, l: int, num_tx: int) -> int:
    """TX that owned slot ``l`` when the current slot belongs to TX ``j``."""
    return (j - l) % num_tx


def mean_tdma(j: int, frame: SymbolFrame, gains, noise: float) -> float:
    """Only the slot owner transmits; ``frame.bits[i, l]`` is read for i = owner of slot l."""
    g = _gain_array(gains)
    k = g.shape[0]
    _check_tx(j, k)
    s = frame.bits
    total = noise + s[j, 0] * g[j, j, 0]
    for l in range(1, g.shape[2]):
        i = tdma_owner(j, l, k)
        total += s[i, l] * g[i, j, l]
    return float(total)


def mean_noma(j: int, frame: SymbolFrame, gains, noise: float) -> float:
    g = _gain_array(gains)
    _check_tx(j, g.shape[0])
    return float(noise + np.sum(frame.bits * g[:, j, :]))


def detect_scalar(sample: int, threshold: int) -> int:
    return int(sample >= threshold)


def sic_detect(samples: Sequence[int], tree: ThresholdTree) -> np.ndarray:
    """Sequential tree detection TX 0 .. K-1 with one sample per TX."""
    if len(samples) != tree.num_tx:
        raise DetectionError(f"{len(samples)} samples for a {tree.num_tx}-TX tree")
    out = np.zeros(tree.num_tx, dtype=np.int8)
    idx = 0
    for j, n in enumerate(samples):
        bit = int(n >= tree.levels[j][idx])
        out[j] = bit
        idx = 2 * idx + bit
    return out


def subtraction_sic_detect(samples: Sequence[int], base: Sequence[float], contrib) -> np.ndarray:
    """Classical SIC: subtract ``contrib[i, j]`` from sample j for every decoded 1 of TX i < j."""
    k = len(samples)
    contrib = np.asarray(contrib, dtype=float)
    if len(base) != k or contrib.shape != (k, k):
        raise DetectionError("base thresholds / contribution matrix do not match K")
    out = np.zeros(k, dtype=np.int8)
    for j in range(k):
        residual = samples[j] - sum(contrib[i, j] for i in range(j) if out[i])
        out[j] = int(residual >= base[j])
    return out


def tree_from_subtraction(base: Sequence[int], contrib) -> ThresholdTree:
    """Thresholds equivalent to subtraction SIC: ``tau_j^b = base_j + sum_i b_i * round(contrib[i, j])``."""
    k = len(base)
    c = np.rint(np.asarray(contrib, dtype=float)).astype(np.int64)
    levels = []
    for j in range(k):
        lv = np.empty(2**j, dtype=np.int64)
        for b in range(2**j):
            prefix = [(b >> (j - 1 - i)) & 1 for i in range(j)]
            lv[b] = int(base[j]) + sum(c[i, j] for i in range(j) if prefix[i])
        levels.append(np.maximum(lv, 0))
    return ThresholdTree(levels)


# Vectorised helpers for the simulators.


def compose_means(bits: np.ndarray, gains: np.ndarray, noise: float, scheme: str) -> np.ndarray:
    """Per-slot, per-sampling-point means for NOMA or MDMA.

    ``bits`` is (L + n, K): L history rows followed by the n simulated slots.
    ``gains`` is (K, K, L+1) or per-slot (n, K, K, L+1). Returns (n, K).
    """
    g = np.asarray(gains, dtype=float)
    per_slot = g.ndim == 4
    nl = g.shape[-1]
    L = nl - 1
    n = bits.shape[0] - L
    k = bits.shape[1]
    out = np.full((n, k), float(noise))
    b = bits.astype(float)
    for l in range(nl):
        s_l = b[L - l : L - l + n]  # bits sent l slots before each simulated slot
        if scheme == "noma":
            if per_slot:
                out += np.einsum("ni,nij->nj", s_l, g[..., l])
            else:
                out += s_l @ g[:, :, l]
        elif scheme == "mdma":
            if per_slot:
                diag = np.diagonal(g[..., l], axis1=1, axis2=2)
            else:
                diag = np.diagonal(g[:, :, l])
            out += s_l * diag
        else:
            raise ValueError(f"compose_means handles noma/mdma, not {scheme!r}")
    return out


def compose_means_tdma(bits: np.ndarray, owners: np.ndarray, gains: np.ndarray, noise: float) -> np.ndarray:
    """TDMA means: one bit per slot. ``bits``/``owners`` have L history entries first."""
    g = np.asarray(gains, dtype=float)
    per_slot = g.ndim == 4
    nl = g.shape[-1]
    L = nl - 1
    n = bits.shape[0] - L
    cur = owners[L:]
    out = np.full(n, float(noise))
    idx = np.arange(n)
    for l in range(nl):
        src = owners[L - l : L - l + n]
        s_l = bits[L - l : L - l + n].astype(float)
        if per_slot:
            out += s_l * g[idx, src, cur, l]
        else:
            out += s_l * g[src, cur, l]
    return out


def sic_detect_batch(counts: np.ndarray, tree: ThresholdTree) -> np.ndarray:
    """Row-wise :func:`sic_detect` for an (n, K) array of counts."""
    n, k = counts.shape
    if k != tree.num_tx:
        raise DetectionError("tree size mismatch")
    out = np.zeros((n, k), dtype=np.int8)
    idx = np.zeros(n, dtype=np.int64)
    for j in range(k):
        bit = counts[:, j] >= tree.levels[j][idx]
        out[:, j] = bit
        idx = 2 * idx + bit
    return out
