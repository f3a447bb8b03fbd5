"""Self-contained numerical primitives: symmetric eigensolver, k-means, distances.

The eigensolver is a Householder tridiagonalization followed by implicit-shift
QL with eigenvector accumulation, compiled with numba. Matrices here are small
(a few hundred rows at most), so a dense direct solver keeps behavior exactly
reproducible with no iterative-solver tuning surface.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from .rng import make_rng

KMEANS_MAX_ITERS = 100
_QL_MAX_SWEEPS = 50


class EigenPairs(NamedTuple):
    """Eigenvalues ascending; eigenvectors in matching columns, unit norm."""

    values: np.ndarray   # (k,)
    vectors: np.ndarray  # (n, k)


@njit(cache=True, nogil=True)
def _tred2(a):
    # Householder reduction of a real symmetric matrix to tridiagonal form;
    # `a` is replaced by the accumulated orthogonal transform.
    n = a.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    for i in range(n - 1, 0, -1):
        l = i - 1
        h = 0.0
        scale = 0.0
        if l > 0:
            for k in range(l + 1):
                scale += abs(a[i, k])
            if scale == 0.0:
                e[i] = a[i, l]
            else:
                for k in range(l + 1):
                    a[i, k] /= scale
                    h += a[i, k] * a[i, k]
                f = a[i, l]
                g = -np.sqrt(h) if f >= 0.0 else np.sqrt(h)
                e[i] = scale * g
                h -= f * g
                a[i, l] = f - g
                f = 0.0
                for j in range(l + 1):
                    a[j, i] = a[i, j] / h
                    g = 0.0
                    for k in range(j + 1):
                        g += a[j, k] * a[i, k]
                    for k in range(j + 1, l + 1):
                        g += a[k, j] * a[i, k]
                    e[j] = g / h
                    f += e[j] * a[i, j]
                hh = f / (h + h)
                for j in range(l + 1):
                    f = a[i, j]
                    g = e[j] - hh * f
                    e[j] = g
                    for k in range(j + 1):
                        a[j, k] -= f * e[k] + g * a[i, k]
        else:
            e[i] = a[i, l]
        d[i] = h
    d[0] = 0.0
    e[0] = 0.0
    for i in range(n):
        if d[i] != 0.0:
            for j in range(i):
                g = 0.0
                for k in range(i):
                    g += a[i, k] * a[k, j]
                for k in range(i):
                    a[k, j] -= g * a[k, i]
        d[i] = a[i, i]
        a[i, i] = 1.0
        for j in range(i):
            a[j, i] = 0.0
            a[i, j] = 0.0
    return d, e


@njit(cache=True, nogil=True)
def _tqli(d, e, z, max_sweeps):
    # Implicit-shift QL on the tridiagonal (d, e), rotating the columns of z
    # along. Returns False if an eigenvalue fails to converge.
    n = d.shape[0]
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) + dd == dd:
                    break
                m += 1
            if m == l:
                break
            if sweeps == max_sweeps:
                return False
            sweeps += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            sgn = r if g >= 0.0 else -r
            g = d[m] - d[l] + e[l] / (g + sgn)
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = z[k, i + 1]
                    z[k, i + 1] = s * z[k, i] + c * f
                    z[k, i] = c * z[k, i] - s * f
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return True


def symmetrize(a) -> np.ndarray:
    """Return the symmetric part (a + a.T)/2 as a fresh float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def sym_eigen_smallest(a, k: int, tol: float = 1e-8) -> EigenPairs:
    """Eigenpairs for the k smallest eigenvalues of a symmetric matrix.

    The input is symmetrized defensively. Output eigenvalues are ascending and
    each eigenvector is oriented so its first non-negligible component is
    positive, which pins down the sign freedom. Residuals are verified against
    tol * ||A||_F and an ArithmeticError is raised if the solve fell short.
    """
    sym = symmetrize(a)
    if not np.isfinite(sym).all():
        raise ValueError("matrix has non-finite entries")
    n = sym.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    z = sym.copy()
    d, e = _tred2(z)
    if not _tqli(d, e, z, _QL_MAX_SWEEPS):
        raise ArithmeticError("QL iteration failed to converge")

    order = np.argsort(d, kind="stable")[:k]
    values = d[order].copy()
    vectors = z[:, order].copy()

    for j in range(k):
        col = vectors[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if col[lead] < 0:
            vectors[:, j] = -col

    fro = np.linalg.norm(sym, "fro")
    residual = sym @ vectors - vectors * values
    if np.any(np.linalg.norm(residual, axis=0) > tol * fro):
        raise ArithmeticError(
            f"eigen residual exceeds {tol} * ||A||_F "
            f"(max {np.linalg.norm(residual, axis=0).max():.3e}, fro {fro:.3e})")
    return EigenPairs(values, vectors)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (m, k) squared Euclidean distances, clipped against rounding negatives.
    d2 = (
        (points * points).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = np.zeros(m, dtype=bool)
    idx = int(rng.integers(m))
    chosen[idx] = True
    centers = [idx]
    d2 = ((points - points[idx]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # every remaining point coincides with a chosen center
            idx = int(np.flatnonzero(~chosen)[0])
        else:
            target = rng.random() * total
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, target, side="right"))
            if idx >= m or d2[idx] == 0.0:
                idx = int(np.flatnonzero(d2 > 0)[-1])
        chosen[idx] = True
        centers.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[np.array(centers)].copy()


def _repair_empty(points, labels, d2, k):
    # Move the point farthest from its assigned centroid into each empty
    # cluster, never draining a cluster below one member. Ties break toward
    # the lowest point index (argmax picks the first maximum).
    sizes = np.bincount(labels, minlength=k)
    assigned_d = d2[np.arange(labels.size), labels]
    for j in range(k):
        if sizes[j] > 0:
            continue
        movable = sizes[labels] > 1
        if not movable.any():
            raise RuntimeError("cannot repair empty cluster: no movable points")
        cand = np.where(movable, assigned_d, -1.0)
        p = int(np.argmax(cand))
        sizes[labels[p]] -= 1
        labels[p] = j
        sizes[j] += 1
        assigned_d[p] = 0.0
    return labels


def kmeans(points, k: int, seed: int, max_iters: int = KMEANS_MAX_ITERS,
           on_iteration=None) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns one label per point.

    Deterministic given the seed: seeding draws come from the package
    generator, assignment ties break to the lowest centroid index, iteration
    stops at a label fixpoint (or max_iters), and empty clusters are repaired
    by reassigning the point farthest from its centroid. on_iteration, when
    given, is called with the label vector after every assignment pass.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points have non-finite entries")
    m = pts.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")

    rng = make_rng(seed)
    centers = _kmeanspp_centers(pts, k, rng)
    labels = np.full(m, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _sq_dists(pts, centers)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(pts, new_labels, d2, k)
        if on_iteration is not None:
            on_iteration(new_labels.copy())
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = pts[labels == j].mean(axis=0)
    return labels


def kmeans_objective(points, labels) -> float:
    """Sum of squared distances to the assigned clusters' mean vectors."""
    pts = np.asarray(points, dtype=np.float64)
    total = 0.0
    for j in np.unique(labels):
        members = pts[labels == j]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def cosine_distance(a, b) -> float:
    """1 - cos(a, b), clamped to [0, 2]. Zero-norm inputs are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance undefined for zero-norm input")
    d = 1.0 - float(a @ b) / (na * nb)
    return min(max(d, 0.0), 2.0)


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b))
