"""Blocked pairwise kernel reductions.

Row blocks have a fixed size, so partial sums are identical no matter how many
worker threads evaluate them; partials are reduced in block order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_ROWS = 256


def max_threads():
    raw = os.environ.get("SHIFT_AUDIT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _map_blocks(fn, n_rows):
    starts = list(range(0, n_rows, BLOCK_ROWS))
    threads = min(max_threads(), len(starts))
    if threads <= 1:
        return [fn(s, min(s + BLOCK_ROWS, n_rows)) for s in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(s, min(s + BLOCK_ROWS, n_rows)), starts))


def sq_dists(a, b):
    """Squared Euclidean distances between rows of ``a`` and ``b``."""
    d = (a[:, None, :] - b[None, :, :]) ** 2
    return d.sum(axis=-1)


def gaussian_pair_sum(a, b, sigma, wa=None, wb=None):
    """Return sum_ij wa_i * wb_j * exp(-|a_i - b_j|^2 / (2 sigma^2))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wa = np.ones(len(a)) if wa is None else np.asarray(wa, dtype=float)
    wb = np.ones(len(b)) if wb is None else np.asarray(wb, dtype=float)
    scale = -0.5 / sigma**2

    def block(lo, hi):
        k = np.exp(scale * sq_dists(a[lo:hi], b))
        return float(wa[lo:hi] @ (k @ wb))

    partials = _map_blocks(block, len(a))
    return float(np.sum(np.asarray(partials))) if partials else 0.0


def gaussian_pair_trace(a, sigma, wa=None):
    """Diagonal part of :func:`gaussian_pair_sum` for ``b = a`` (k(x, x) = 1)."""
    wa = np.ones(len(a)) if wa is None else np.asarray(wa, dtype=float)
    return float(np.sum(wa * wa))


def product_kernel_mean(queries, centers, bandwidth):
    """Mean over centers of a product Gaussian kernel, for every query row."""
    queries = np.asarray(queries, dtype=float)
    centers = np.asarray(centers, dtype=float)
    h = np.asarray(bandwidth, dtype=float)
    norm = np.prod(h) * (2.0 * np.pi) ** (centers.shape[1] / 2.0)
    cs = centers / h

    def block(lo, hi):
        q = queries[lo:hi] / h
        return np.exp(-0.5 * sq_dists(q, cs)).mean(axis=1) / norm

    parts = _map_blocks(block, len(queries))
    return np.concatenate(parts) if parts else np.zeros(0)
