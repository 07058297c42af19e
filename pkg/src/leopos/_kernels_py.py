"""Pure numpy versions of the compiled kernels (same signatures and results)."""

from __future__ import annotations

import numpy as np


def gold_bits(cinit: int, length: int, nc: int = 1600) -> np.ndarray:
    total = length + nc + 31
    x1 = np.zeros(total, dtype=np.uint8)
    x2 = np.zeros(total, dtype=np.uint8)
    x1[0] = 1
    x2[:31] = (int(cinit) >> np.arange(31)) & 1
    # both recurrences reach back at most 28 positions, so 28 new bits per step
    for n in range(0, total - 31, 28):
        hi = min(n + 28, total - 31)
        x1[n + 31 : hi + 31] = x1[n + 3 : hi + 3] ^ x1[n:hi]
        x2[n + 31 : hi + 31] = x2[n + 3 : hi + 3] ^ x2[n + 2 : hi + 2] ^ x2[n + 1 : hi + 1] ^ x2[n:hi]
    return x1[nc : nc + length] ^ x2[nc : nc + length]


def sinc_interp(x, pos, table, oversample: int, half_taps: int, chunk: int = 16384) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    pos = np.asarray(pos, dtype=np.float64)
    n_in = x.size
    out = np.zeros(pos.size, dtype=np.complex128)
    offs = np.arange(-half_taps + 1, half_taps + 1)
    xp = np.concatenate([x, [0.0]])
    for s in range(0, pos.size, chunk):
        p = pos[s : s + chunk]
        k = np.floor(p).astype(np.int64)[:, None] + offs[None, :]
        u = (p[:, None] - k + half_taps) * oversample
        j = np.floor(u).astype(np.int64)
        valid = (k >= 0) & (k < n_in) & (j >= 0) & (j + 1 < table.size)
        jc = np.clip(j, 0, table.size - 2)
        w = table[jc] + (u - jc) * (table[jc + 1] - table[jc])
        w = np.where(valid, w, 0.0)
        kc = np.where(valid, k, n_in)
        out[s : s + chunk] = np.sum(w * xp[kc], axis=1)
    return out


def mul_fold(spec, replicas, decim: int) -> np.ndarray:
    nd, L = replicas.shape
    prod = replicas * spec[None, :]
    return prod.reshape(nd, decim, L // decim).sum(axis=1)
