"""Pure-NumPy implementation of the quadrature hot loops.

Used when the compiled extension is unavailable (or forced via
``AMAP_PURE_PYTHON=1``). Semantics are identical to ``_quadcore.pyx``;
tests and the benchmark compare the two directly.

Family codes: 0 = squared exponential, 1 = Matérn 3/2, 2 = Matérn 5/2.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _k_of_d2(family: int, sf2: float, ls: float, d2: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.maximum(d2, 0.0)) / ls
    if family == 0:
        return sf2 * np.exp(-0.5 * s * s)
    if family == 1:
        a = _SQRT3 * s
        return sf2 * (1.0 + a) * np.exp(-a)
    if family == 2:
        a = _SQRT5 * s
        return sf2 * (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise ValueError(f"unknown kernel family code {family}")


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def cross_gram(family, sf2, ls, pts, w, targets):
    """Weighted kernel sums between quadrature clouds and fixed targets.

    pts: (B, Q, 3) quadrature evaluation points, one cloud per input.
    w: (Q,) normalized quadrature weights shared by all clouds.
    targets: (T, 3) deterministic query points.
    Returns (B, T) with entry [b, t] = sum_q w[q] * k(pts[b, q], targets[t]).
    """
    pts = np.asarray(pts, float)
    w = np.asarray(w, float)
    targets = np.asarray(targets, float)
    nb, nq, _ = pts.shape
    nt = targets.shape[0]
    out = np.empty((nb, nt))
    # chunk to keep the (chunk*Q, T) distance matrix small
    chunk = max(1, int(4_000_000 / max(1, nq * nt)))
    for lo in range(0, nb, chunk):
        hi = min(nb, lo + chunk)
        flat = pts[lo:hi].reshape(-1, 3)
        k = _k_of_d2(family, sf2, ls, _sqdist(flat, targets))
        out[lo:hi] = np.tensordot(
            w, k.reshape(hi - lo, nq, nt), axes=([0], [1])
        )
    return out


def pair_cross(family, sf2, ls, pa, wa, pb, wb):
    """Doubly weighted kernel sums between two sets of quadrature clouds.

    pa: (A, Q, 3), wa: (Q,); pb: (B, R, 3), wb: (R,).
    Returns (A, B) with [a, b] = sum_{q,r} wa[q] wb[r] k(pa[a,q], pb[b,r]).
    """
    pa = np.asarray(pa, float)
    pb = np.asarray(pb, float)
    wa = np.asarray(wa, float)
    wb = np.asarray(wb, float)
    na, nq, _ = pa.shape
    nb, nr, _ = pb.shape
    flat_b = pb.reshape(-1, 3)
    out = np.empty((na, nb))
    chunk = max(1, int(4_000_000 / max(1, nq * nb * nr)))
    for lo in range(0, na, chunk):
        hi = min(na, lo + chunk)
        flat_a = pa[lo:hi].reshape(-1, 3)
        k = _k_of_d2(family, sf2, ls, _sqdist(flat_a, flat_b))
        k = k.reshape(hi - lo, nq, nb, nr)
        out[lo:hi] = np.einsum("q,aqbr,r->ab", wa, k, wb, optimize=True)
    return out
