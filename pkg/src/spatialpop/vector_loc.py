"""Self-stabilising localisation with initiator-vector queries.

The initiator raises each label coordinate to ``x_r[j] - v_ir[j]`` when that
is larger.  The per-coordinate offset ``M[j] = max_i (x_i[j] - p_i[j])`` never
changes, and agents attaining it spread by one-way epidemic, so every label
ends up as ``p_i + M``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .engine import GroundTruth, Protocol, QueryModel

GRID_BITS = 40  # dyadic grid for generated labels; keeps label arithmetic exact


@dataclass(frozen=True)
class VectorLabel:
    coords: tuple

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.coords):
            raise ValueError("label coordinates must be finite")


def transition_vector(u_label: VectorLabel, r_label: VectorLabel, v_ir) -> VectorLabel:
    """Initiator update ``x_u[j] <- max(x_u[j], x_r[j] - v_ir[j])``."""
    new = tuple(max(a, b - c) for a, b, c in zip(u_label.coords, r_label.coords, v_ir))
    return u_label if new == u_label.coords else VectorLabel(new)


def _labels(config) -> np.ndarray:
    return np.array([s.coords for s in config], dtype=np.float64)


def compute_offsets(config, gt: GroundTruth) -> tuple:
    """Per-coordinate maximum of label minus true position."""
    return tuple(float(m) for m in (_labels(config) - gt.positions).max(axis=0))


def _converged_arrays(labels: np.ndarray, pos: np.ndarray, tol: float) -> bool:
    off = labels - pos
    m = off.max(axis=0)
    return bool(np.all(np.abs(off - m) <= tol * (1.0 + np.abs(m))))


def oracle_vector_converged(config, gt: GroundTruth, tol: float = 1e-9) -> bool:
    """Every agent attains the offset maximum in every coordinate."""
    return _converged_arrays(_labels(config), gt.positions, tol)


def initial_labels(gt: GroundTruth, rng: np.random.Generator, recipe: str = "uniform",
                   spread: float = 1e3) -> list[VectorLabel]:
    """Arbitrary starting labels.

    ``uniform``: i.i.d. on ``[-R, R]^k`` with ``R = spread * position scale``;
    ``all-equal``: one shared random label; ``single-outlier``: correct labels
    except one agent pushed far out.  Values sit on a dyadic grid.
    """
    n, k = gt.n, gt.k
    scale = max(1.0, float(np.ptp(gt.positions)))
    r = float(math.floor(spread * scale))
    unit = 2.0 ** GRID_BITS
    hi = int(r * unit)

    def draw(size):
        return rng.integers(-hi, hi, size=size, endpoint=True).astype(np.float64) / unit

    if recipe == "uniform":
        lab = draw((n, k))
    elif recipe == "all-equal":
        lab = np.broadcast_to(draw(k), (n, k)).copy()
    elif recipe == "single-outlier":
        lab = gt.positions.copy()
        lab[int(rng.integers(n))] = r
    else:
        raise ValueError(f"unknown label recipe {recipe!r}")
    return [VectorLabel(tuple(float(c) for c in row)) for row in lab]


# ----------------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------------


@njit(cache=True)
def vector_update(labels, pos, u, r):
    changed = False
    for j in range(labels.shape[1]):
        cand = labels[r, j] - (pos[r, j] - pos[u, j])
        if cand > labels[u, j]:
            labels[u, j] = cand
            changed = True
    return changed


@njit(cache=True)
def _run_block(labels, pos, init, resp):
    last = 0
    for t in range(init.shape[0]):
        if vector_update(labels, pos, init[t], resp[t]):
            last = t + 1
    return last


@njit(cache=True)
def _silent(labels, pos):
    n, k = labels.shape
    for u in range(n):
        for r in range(n):
            if u == r:
                continue
            for j in range(k):
                if labels[r, j] - (pos[r, j] - pos[u, j]) > labels[u, j]:
                    return False
    return True


@njit(cache=True)
def _audit(labels, pos, init, resp, tol, counts):
    """Fact checks on every interaction.

    counts: [decreases, offset raised above M, S_M membership not inherited].
    Returns the largest excess of any offset over the starting M.
    """
    n, k = labels.shape
    m = np.empty(k)
    for j in range(k):
        m[j] = labels[0, j] - pos[0, j]
        for i in range(1, n):
            m[j] = max(m[j], labels[i, j] - pos[i, j])
    drift = 0.0
    before = np.empty(k)
    for t in range(init.shape[0]):
        u = init[t]
        r = resp[t]
        for j in range(k):
            before[j] = labels[u, j]
        vector_update(labels, pos, u, r)
        for j in range(k):
            if labels[u, j] < before[j]:
                counts[0] += 1
            off = labels[u, j] - pos[u, j]
            drift = max(drift, off - m[j])
            if off - m[j] > tol:
                counts[1] += 1
            r_in = abs((labels[r, j] - pos[r, j]) - m[j]) <= tol
            if r_in and abs(off - m[j]) > tol:
                counts[2] += 1
    return drift


@dataclass
class FactAudit:
    interactions: int
    decreases: int
    offset_violations: int
    membership_violations: int
    max_drift: float

    @property
    def ok(self) -> bool:
        return not (self.decreases or self.offset_violations or self.membership_violations)


def audit_facts(labels: np.ndarray, gt: GroundTruth, stream, interactions: int,
                tol: float = 1e-12, block: int = 1 << 20) -> FactAudit:
    """Run the vector protocol in place on ``labels`` checking, after every
    interaction, that labels never decrease, the offset maximum never moves,
    and meeting an agent that attains it makes the initiator attain it."""
    counts = np.zeros(3, np.int64)
    drift = 0.0
    done = 0
    while done < interactions:
        init, resp = stream.take(min(block, interactions - done))
        drift = max(drift, _audit(labels, gt.positions, init, resp, tol, counts))
        done += len(init)
    return FactAudit(done, int(counts[0]), int(counts[1]), int(counts[2]), drift)


class VectorLocalisation(Protocol):
    query = QueryModel.INITIATOR_VECTOR
    has_kernel = True

    def __init__(self, k: int, tol: float = 1e-9, recipe: str = "uniform"):
        self.k = k
        self.tol = tol
        self.recipe = recipe
        self.name = f"vector(k={k})"

    def transition(self, u, v, datum):
        return transition_vector(u, v, datum), v

    def converged(self, config, gt):
        return oracle_vector_converged(config, gt, self.tol)

    def bound(self, n: int) -> float:
        return math.log(n)

    def initial_configuration(self, gt: GroundTruth, rng):
        return initial_labels(gt, rng, self.recipe)

    def encode(self, config, gt):
        return _labels(config).reshape(len(config), gt.k)

    def decode(self, labels):
        return [VectorLabel(tuple(float(c) for c in row)) for row in labels]

    def run_block(self, labels, gt, init, resp):
        return _run_block(labels, gt.positions, init, resp), 0, ""

    def fast_converged(self, labels, gt):
        return _converged_arrays(labels, gt.positions, self.tol)

    def fast_silent(self, labels, gt):
        return bool(_silent(labels, gt.positions))

    def extras(self, config, gt):
        return {"offset_max": max(compute_offsets(config, gt))}

    def fast_extras(self, labels, gt):
        return {"offset_max": float((labels - gt.positions).max())}
