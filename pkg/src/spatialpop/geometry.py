"""Numeric subroutines for anchor-based positioning.

All solvers come in two layers: jitted cores that work on plain arrays and
report failures through status codes (so the simulation kernels can call
them), and thin Python wrappers that convert to tuples and raise.  The
reference transitions use the wrappers, the kernels use the cores, and both
therefore produce bit-identical labels.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit

DEFAULT_TOL = 1e-9
CONDITION_LIMIT = 1e10

OK = 0
DEGENERATE = 1
INCONSISTENT = 2

Point = tuple  # tuple[float, ...]


class GeometryError(ValueError):
    """Base class for positioning failures."""


class DegenerateGeometryError(GeometryError):
    """Anchors do not span the space (or are numerically too close to it)."""

    def __init__(self, message: str, indices: Sequence[int] | None = None):
        super().__init__(message)
        self.indices = tuple(indices) if indices is not None else None


class InconsistentAnchorsError(GeometryError):
    """No point satisfies the anchor distances within tolerance."""


# ----------------------------------------------------------------------------
# jitted cores
# ----------------------------------------------------------------------------


@njit(cache=True)
def dist_core(p, q):
    s = 0.0
    for j in range(p.shape[0]):
        d = p[j] - q[j]
        s += d * d
    return math.sqrt(s)


@njit(cache=True)
def norm_core(p):
    s = 0.0
    for j in range(p.shape[0]):
        s += p[j] * p[j]
    return math.sqrt(s)


@njit(cache=True)
def same_point_core(p, q, tol):
    scale = max(norm_core(p), norm_core(q))
    return dist_core(p, q) <= tol * (1.0 + scale)


@njit(cache=True)
def consistent_core(xu, xv, d, tol):
    return abs(dist_core(xu, xv) - d) <= tol * (1.0 + d)


@njit(cache=True)
def _lu(a, piv):
    # In-place partial-pivot elimination; returns False on an exactly zero pivot.
    m = a.shape[0]
    for c in range(m):
        best = c
        for r in range(c + 1, m):
            if abs(a[r, c]) > abs(a[best, c]):
                best = r
        piv[c] = best
        if a[best, c] == 0.0:
            return False
        if best != c:
            # multipliers left of column c stay put: _lu_solve replays the
            # swaps interleaved with elimination
            for j in range(c, m):
                tmp = a[c, j]
                a[c, j] = a[best, j]
                a[best, j] = tmp
        for r in range(c + 1, m):
            f = a[r, c] / a[c, c]
            a[r, c] = f
            for j in range(c + 1, m):
                a[r, j] -= f * a[c, j]
    return True


@njit(cache=True)
def _lu_solve(lu, piv, b):
    m = lu.shape[0]
    x = b.copy()
    for c in range(m):
        p = piv[c]
        if p != c:
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        for r in range(c + 1, m):
            x[r] -= lu[r, c] * x[c]
    for c in range(m - 1, -1, -1):
        s = x[c]
        for j in range(c + 1, m):
            s -= lu[c, j] * x[j]
        x[c] = s / lu[c, c]
    return x


@njit(cache=True)
def solve_core(a, b, out):
    """Solve ``a @ x = b`` into ``out``; DEGENERATE if cond_1(a) > CONDITION_LIMIT."""
    m = a.shape[0]
    lu = a.copy()
    piv = np.zeros(m, np.int64)
    if not _lu(lu, piv):
        return DEGENERATE
    norm_a = 0.0
    for j in range(m):
        s = 0.0
        for r in range(m):
            s += abs(a[r, j])
        norm_a = max(norm_a, s)
    norm_inv = 0.0
    e = np.zeros(m)
    for j in range(m):
        e[:] = 0.0
        e[j] = 1.0
        col = _lu_solve(lu, piv, e)
        s = 0.0
        for r in range(m):
            s += abs(col[r])
        norm_inv = max(norm_inv, s)
    if not norm_a * norm_inv <= CONDITION_LIMIT:
        return DEGENERATE
    x = _lu_solve(lu, piv, b)
    for j in range(m):
        out[j] = x[j]
    return OK


@njit(cache=True)
def _problem_scale(anc, dist, m):
    scale = 1.0
    for j in range(m):
        scale = max(scale, norm_core(anc[j]), dist[j])
    return scale


@njit(cache=True)
def _residual_ok(x, anc, dist, m, tol):
    for j in range(m):
        if abs(dist_core(x, anc[j]) - dist[j]) > tol * (1.0 + dist[j]):
            return False
    return True


@njit(cache=True)
def _sq_residual(x, anc, dist, m):
    s = 0.0
    for j in range(m):
        r = dist_core(x, anc[j]) - dist[j]
        s += r * r
    return s


@njit(cache=True)
def _refine(x, anc, dist, m, steps=3):
    # Gauss-Newton on the sphere equations themselves.  The differenced
    # linear system amplifies anchor noise by the inverse anchor spread even
    # when the point is well determined (always so on the line); a few steps
    # bring the error down to the geometric dilution of the full problem.
    k = x.shape[0]
    jt_j = np.empty((k, k))
    jt_r = np.empty(k)
    row = np.empty(k)
    step = np.empty(k)
    trial = np.empty(k)
    best = _sq_residual(x, anc, dist, m)
    for _ in range(steps):
        if best == 0.0:
            return
        jt_j[:, :] = 0.0
        jt_r[:] = 0.0
        for j in range(m):
            r = dist_core(x, anc[j])
            if r == 0.0:
                return
            for c in range(k):
                row[c] = (x[c] - anc[j, c]) / r
            res = r - dist[j]
            for a in range(k):
                jt_r[a] -= row[a] * res
                for b in range(k):
                    jt_j[a, b] += row[a] * row[b]
        if solve_core(jt_j, jt_r, step) != OK:
            return
        for c in range(k):
            trial[c] = x[c] + step[c]
        val = _sq_residual(trial, anc, dist, m)
        if not val < best:
            return
        best = val
        for c in range(k):
            x[c] = trial[c]


@njit(cache=True)
def multilaterate_core(anc, dist, k, tol, out):
    """Point at the given distances from ``k + 1`` anchors.

    Subtracting the first sphere equation from the others leaves the k x k
    system ``2 (a_j - a_0) . x = d_0^2 - d_j^2 + |a_j|^2 - |a_0|^2``.
    """
    scale = _problem_scale(anc, dist, k + 1)
    a = np.empty((k, k))
    b = np.empty(k)
    biggest = 0.0
    n0 = 0.0
    for c in range(k):
        n0 += anc[0, c] * anc[0, c]
    for r in range(k):
        nj = 0.0
        for c in range(k):
            a[r, c] = 2.0 * (anc[r + 1, c] - anc[0, c])
            biggest = max(biggest, abs(a[r, c]))
            nj += anc[r + 1, c] * anc[r + 1, c]
        b[r] = dist[0] * dist[0] - dist[r + 1] * dist[r + 1] + nj - n0
    if biggest <= tol * scale:
        return DEGENERATE
    status = solve_core(a, b, out)
    if status != OK:
        return status
    _refine(out, anc, dist, k + 1)
    if not _residual_ok(out, anc, dist, k + 1, tol):
        return INCONSISTENT
    return OK


@njit(cache=True)
def subspace_core(anc, dist, i, k, tol, out):
    """Position from the origin anchor (row 0) plus ``i`` anchors spanning
    the first ``i`` axes; the new axis ``i`` gets the nonnegative root."""
    scale = _problem_scale(anc, dist, i + 1)
    for c in range(k):
        out[c] = 0.0
    if i > 0:
        a = np.empty((i, i))
        b = np.empty(i)
        proj = np.empty(i)
        biggest = 0.0
        for r in range(i):
            nj = 0.0
            for c in range(i):
                a[r, c] = 2.0 * anc[r + 1, c]
                biggest = max(biggest, abs(a[r, c]))
                nj += anc[r + 1, c] * anc[r + 1, c]
            b[r] = dist[0] * dist[0] - dist[r + 1] * dist[r + 1] + nj
        if biggest <= tol * scale:
            return DEGENERATE
        status = solve_core(a, b, proj)
        if status != OK:
            return status
        for c in range(i):
            out[c] = proj[c]
    sq = 0.0
    for c in range(i):
        sq += out[c] * out[c]
    rad = dist[0] * dist[0] - sq
    if rad < -tol * (1.0 + dist[0] * dist[0]):
        return INCONSISTENT
    out[i] = math.sqrt(rad) if rad > 0.0 else 0.0
    if not _residual_ok(out, anc, dist, i + 1, tol):
        return INCONSISTENT
    return OK


@njit(cache=True)
def pair_candidates_core(g, d, x, dx, tol):
    """1-D: which of ``g + d`` / ``g - d`` lies at distance ``dx`` from ``x``.

    Returns (status, label); status OK only when exactly one candidate fits.
    """
    c1 = g + d
    c2 = g - d
    ok1 = abs(abs(c1 - x) - dx) <= tol * (1.0 + dx)
    ok2 = abs(abs(c2 - x) - dx) <= tol * (1.0 + dx)
    if ok1 and not ok2:
        return OK, c1
    if ok2 and not ok1:
        return OK, c2
    if ok1 and ok2:
        return DEGENERATE, 0.0
    return INCONSISTENT, 0.0


@njit(cache=True)
def resolve_pair_core(gu, du, gv, dv, duv, tol):
    """Enumerate the four sign choices for two greenish agents.

    Returns (status, has_u, xu, has_v, xv).
    """
    survivors = 0
    xu = 0.0
    xv = 0.0
    agree_u = True
    agree_v = True
    for su in (1.0, -1.0):
        for sv in (1.0, -1.0):
            cu = gu + su * du
            cv = gv + sv * dv
            if abs(abs(cu - cv) - duv) <= tol * (1.0 + duv):
                if survivors == 0:
                    xu = cu
                    xv = cv
                else:
                    if cu != xu:
                        agree_u = False
                    if cv != xv:
                        agree_v = False
                survivors += 1
    if survivors == 0:
        return INCONSISTENT, False, 0.0, False, 0.0
    return OK, agree_u, xu, agree_v, xv


# ----------------------------------------------------------------------------
# Python API
# ----------------------------------------------------------------------------


def _as_array(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("points must be one-dimensional coordinate sequences")
    return a


def distance(p, q) -> float:
    """Euclidean distance between two points."""
    a, b = _as_array(p), _as_array(q)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(dist_core(a, b))


def consistent(x_u, x_v, d_uv: float, tol: float = DEFAULT_TOL) -> bool:
    """True iff the two labels sit at distance ``d_uv`` within ``tol * (1 + d_uv)``."""
    a, b = _as_array(x_u), _as_array(x_v)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return bool(consistent_core(a, b, float(d_uv), tol))


def same_point(p, q, tol: float = DEFAULT_TOL) -> bool:
    return bool(same_point_core(_as_array(p), _as_array(q), tol))


def _unpack(anchors, k: int) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([tuple(a[0]) for a in anchors], dtype=np.float64).reshape(len(anchors), k)
    dist = np.array([a[1] for a in anchors], dtype=np.float64)
    if np.any(dist < 0) or not np.all(np.isfinite(dist)) or not np.all(np.isfinite(pos)):
        raise ValueError("anchor distances must be finite and nonnegative")
    return pos, dist


def _raise_for(status: int, what: str) -> None:
    if status == DEGENERATE:
        raise DegenerateGeometryError(f"{what}: anchors are affinely dependent")
    if status == INCONSISTENT:
        raise InconsistentAnchorsError(f"{what}: anchor distances are inconsistent")


def multilaterate(anchors, k: int, tol: float = DEFAULT_TOL) -> Point:
    """Exact position from ``k + 1`` (position, distance) anchors."""
    if len(anchors) != k + 1:
        raise ValueError(f"need exactly {k + 1} anchors in {k} dimensions, got {len(anchors)}")
    pos, dist = _unpack(anchors, k)
    out = np.zeros(k)
    _raise_for(multilaterate_core(pos, dist, k, tol, out), "multilaterate")
    return tuple(float(c) for c in out)


def position_in_subspace(anchors, i: int, k: int, tol: float = DEFAULT_TOL) -> Point:
    """Place a point from the origin anchor plus ``i`` subspace anchors.

    ``anchors[0]`` must be the origin.  The first ``i`` coordinates come from
    the projection onto the span of the others, coordinate ``i`` is the
    distance from that span, and the rest are zero.
    """
    if not 0 <= i < k:
        raise ValueError(f"subspace size {i} must lie in [0, {k})")
    if len(anchors) != i + 1:
        raise ValueError(f"need the origin plus {i} anchors, got {len(anchors)}")
    pos, dist = _unpack(anchors, k)
    if np.any(pos[0] != 0.0):
        raise ValueError("first anchor must be the origin")
    if i and np.any(pos[1:, i:] != 0.0):
        raise ValueError(f"anchors must lie in the span of the first {i} axes")
    out = np.zeros(k)
    _raise_for(subspace_core(pos, dist, i, k, tol, out), "position_in_subspace")
    return tuple(float(c) for c in out)


def resolve_greenish_pair(g_u: float, d_u: float, g_v: float, d_v: float,
                          d_uv: float, tol: float = DEFAULT_TOL):
    """Labels two 1-D agents can infer from one anchor each plus their mutual distance.

    Returns ``(label_u, label_v)`` where either entry is None when the
    surviving sign combinations disagree on it.
    """
    if d_u <= 0 or d_v <= 0:
        raise ValueError("anchor distances must be positive")
    status, has_u, xu, has_v, xv = resolve_pair_core(
        float(g_u), float(d_u), float(g_v), float(d_v), float(d_uv), tol)
    if status != OK:
        raise InconsistentAnchorsError("no sign combination matches the measured distance")
    return (float(xu) if has_u else None, float(xv) if has_v else None)
