"""Leader-based localisation with symmetric distance queries.

Two protocols share one state space:

* ``transition_alg1`` -- the leader approves the first ``k`` greens one at a
  time, each placed on a fresh axis; every other agent becomes green once it
  has met ``k + 1`` distinct greens (the leader included) and multilaterates.
* ``transition_improved1d`` -- on the line, an agent with a single green
  contact is "greenish" (two candidate positions) and two greenish agents can
  often resolve each other.

Labels are leader-relative coordinates and are correct up to an isometry
fixing the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import geometry
from .engine import GroundTruth, Protocol
from .geometry import (DEFAULT_TOL, DEGENERATE, INCONSISTENT, OK, dist_core,
                       multilaterate_core, pair_candidates_core, resolve_pair_core,
                       same_point_core, subspace_core)


class ApprovalMismatchError(geometry.InconsistentAnchorsError):
    """A blue agent's contacts have the registry's size but not its members."""


@dataclass(frozen=True)
class LeaderState:
    k: int
    registry: tuple = ()  # ((label, leader distance), ...)

    @property
    def label(self) -> tuple:
        return (0.0,) * self.k


@dataclass(frozen=True)
class BlueState:
    contacts: tuple = ()  # ((green label, measured distance), ...)
    leader_distance: float | None = None


@dataclass(frozen=True)
class GreenState:
    label: tuple


@dataclass(frozen=True)
class GreenishState:
    anchor_label: float
    anchor_distance: float

    @property
    def candidates(self) -> tuple[float, float]:
        return (self.anchor_label - self.anchor_distance, self.anchor_label + self.anchor_distance)


def is_green(s) -> bool:
    return isinstance(s, (GreenState, LeaderState))


def _is_origin(p, tol) -> bool:
    return all(c == 0.0 for c in p) or geometry.same_point(p, (0.0,) * len(p), tol)


def _blue_meets_green(b: BlueState, g, d: float, k: int, tol: float, strict: bool):
    if isinstance(g, LeaderState) and len(g.registry) < k:
        others = [c for c in b.contacts if not _is_origin(c[0], tol)]
        if len(others) == len(g.registry):
            anchors = [((0.0,) * k, d)]
            for pos, _ in g.registry:
                match = next((c for c in b.contacts if geometry.same_point(c[0], pos, tol)), None)
                if match is None:
                    break
                anchors.append((pos, match[1]))
            else:
                label = geometry.position_in_subspace(anchors, len(g.registry), k, tol)
                return GreenState(label), replace(g, registry=g.registry + ((label, d),))
            if strict:
                raise ApprovalMismatchError("blue contacts do not match the leader registry")
    lab = g.label
    if any(geometry.same_point(c[0], lab, tol) for c in b.contacts):
        return b, g
    contacts = b.contacts + ((lab, d),)
    if len(contacts) == k + 1:
        return GreenState(geometry.multilaterate(contacts, k, tol)), g
    ld = d if isinstance(g, LeaderState) else b.leader_distance
    return BlueState(contacts, ld), g


def transition_alg1(u, v, d_uv: float, k: int, tol: float = DEFAULT_TOL, strict: bool = True):
    """Positioning in k dimensions; symmetric, so either side may be the blue one.

    With ``strict`` a same-size but different contact set at approval time
    raises; the self-stabilising wrapper passes ``strict=False`` and simply
    skips the approval.
    """
    if isinstance(u, BlueState) and is_green(v):
        return _blue_meets_green(u, v, d_uv, k, tol, strict)
    if isinstance(v, BlueState) and is_green(u):
        v2, u2 = _blue_meets_green(v, u, d_uv, k, tol, strict)
        return u2, v2
    return u, v


def _greenish_meets_green(gs: GreenishState, x: float, d: float, tol: float):
    if geometry.same_point((gs.anchor_label,), (x,), tol):
        return gs
    status, label = pair_candidates_core(gs.anchor_label, gs.anchor_distance, x, d, tol)
    if status == INCONSISTENT:
        raise geometry.InconsistentAnchorsError("neither candidate matches the second anchor")
    if status != OK:
        return gs
    return GreenState((float(label),))


def transition_improved1d(u, v, d_uv: float, tol: float = DEFAULT_TOL):
    """Faster protocol on the line using greenish agents."""
    for swap in (False, True):
        a, b = (v, u) if swap else (u, v)
        if isinstance(a, BlueState) and is_green(b):
            if isinstance(b, LeaderState) and not b.registry:
                a2, b2 = _blue_meets_green(a, b, d_uv, 1, tol, True)
            else:
                a2, b2 = GreenishState(float(b.label[0]), d_uv), b
            return (b2, a2) if swap else (a2, b2)
        if isinstance(a, GreenishState) and is_green(b):
            a2 = _greenish_meets_green(a, float(b.label[0]), d_uv, tol)
            return (b, a2) if swap else (a2, b)
    if isinstance(u, GreenishState) and isinstance(v, GreenishState):
        xu, xv = geometry.resolve_greenish_pair(u.anchor_label, u.anchor_distance,
                                                v.anchor_label, v.anchor_distance, d_uv, tol)
        return (GreenState((xu,)) if xu is not None else u,
                GreenState((xv,)) if xv is not None else v)
    return u, v


def labels_match_isometry(labels: np.ndarray, rel: np.ndarray, tol: float,
                          samples: int = 20000) -> bool:
    """Is there an origin-fixing isometry taking ``rel`` onto ``labels``?

    Fits the best orthogonal map (Procrustes) and checks every agent, then
    cross-checks pairwise distances on all pairs (small n) or a fixed sample.
    """
    if labels.shape != rel.shape:
        return False
    u, _, vt = np.linalg.svd(rel.T @ labels)
    mapped = rel @ (u @ vt)
    err = np.linalg.norm(mapped - labels, axis=1)
    if np.any(err > tol * (1.0 + np.linalg.norm(rel, axis=1))):
        return False
    n = len(rel)
    if n * (n - 1) // 2 <= samples:
        i, j = np.triu_indices(n, 1)
    else:
        g = np.random.default_rng(0)
        i = g.integers(0, n, samples)
        j = (i + 1 + g.integers(0, n - 1, samples)) % n
    dl = np.linalg.norm(labels[i] - labels[j], axis=1)
    dp = np.linalg.norm(rel[i] - rel[j], axis=1)
    return bool(np.all(np.abs(dl - dp) <= tol * (1.0 + dp)))


def oracle_localized(config, gt: GroundTruth, tol: float = 1e-6) -> bool:
    """All agents green and their labels an isometric image of the truth
    (leader at the origin)."""
    if gt.leader_index is None or not all(is_green(s) for s in config):
        return False
    if not isinstance(config[gt.leader_index], LeaderState):
        return False
    labels = np.array([s.label for s in config], dtype=np.float64)
    return labels_match_isometry(labels, gt.relative_positions(), tol)


# ----------------------------------------------------------------------------
# kernel
# ----------------------------------------------------------------------------

BLUE, GREENISH, GREEN, LEADER = 0, 1, 2, 3
NOCHANGE, CHANGED, MISMATCH = 0, 1, 4
# fault codes reuse geometry.DEGENERATE / INCONSISTENT shifted past CHANGED
F_DEGENERATE, F_INCONSISTENT = 2, 3

FAULT_NAMES = {F_DEGENERATE: "DegenerateGeometryError", F_INCONSISTENT: "InconsistentAnchorsError",
               MISMATCH: "ApprovalMismatchError"}


@njit(cache=True)
def _fault(status):
    return F_DEGENERATE if status == DEGENERATE else F_INCONSISTENT


@njit(cache=True)
def _is_origin_k(p, tol):
    zero = True
    for c in range(p.shape[0]):
        if p[c] != 0.0:
            zero = False
    if zero:
        return True
    return same_point_core(p, np.zeros(p.shape[0]), tol)


@njit(cache=True)
def _make_green(S, b, out):
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    role[b] = GREEN
    label[b, :] = out
    ncont[b] = 0
    cpos[b, :, :] = 0.0
    cdist[b, :] = 0.0
    ldist[b] = np.nan


@njit(cache=True)
def blue_meets_green_k(S, b, g, d, k, tol, strict):
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    if role[g] == LEADER and nreg[g] < k:
        i = nreg[g]
        cnt = 0
        for j in range(ncont[b]):
            if not _is_origin_k(cpos[b, j], tol):
                cnt += 1
        if cnt == i:
            anc = np.zeros((i + 1, k))
            dist = np.zeros(i + 1)
            dist[0] = d
            ok = True
            for e in range(i):
                found = -1
                for j in range(ncont[b]):
                    if same_point_core(cpos[b, j], reg[g, e], tol):
                        found = j
                        break
                if found < 0:
                    ok = False
                    break
                anc[e + 1, :] = reg[g, e]
                dist[e + 1] = cdist[b, found]
            if ok:
                out = np.zeros(k)
                st = subspace_core(anc, dist, i, k, tol, out)
                if st != OK:
                    return _fault(st)
                _make_green(S, b, out)
                reg[g, i, :] = out
                regd[g, i] = d
                nreg[g] = i + 1
                return CHANGED
            if strict:
                return MISMATCH
    for j in range(ncont[b]):
        if same_point_core(cpos[b, j], label[g], tol):
            return NOCHANGE
    c = ncont[b]
    cpos[b, c, :] = label[g]
    cdist[b, c] = d
    ncont[b] = c + 1
    if c + 1 == k + 1:
        out = np.zeros(k)
        st = multilaterate_core(cpos[b], cdist[b], k, tol, out)
        if st != OK:
            return _fault(st)
        _make_green(S, b, out)
    elif role[g] == LEADER:
        ldist[b] = d
    return CHANGED


@njit(cache=True)
def alg1_step(S, u, v, d, k, tol, strict):
    """Returns (code, agent whose geometry failed or -1)."""
    role = S[0]
    if role[u] == BLUE and role[v] >= GREEN:
        return blue_meets_green_k(S, u, v, d, k, tol, strict), u
    if role[v] == BLUE and role[u] >= GREEN:
        return blue_meets_green_k(S, v, u, d, k, tol, strict), v
    return NOCHANGE, -1


@njit(cache=True)
def _improved_blue(S, b, g, d, tol):
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    if role[g] == LEADER and nreg[g] == 0:
        return blue_meets_green_k(S, b, g, d, 1, tol, True)
    role[b] = GREENISH
    cpos[b, 0, 0] = label[g, 0]
    cdist[b, 0] = d
    ncont[b] = 1
    return CHANGED


@njit(cache=True)
def _improved_greenish(S, a, g, d, tol):
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    if same_point_core(cpos[a, 0, :1], label[g, :1], tol):
        return NOCHANGE
    st, x = pair_candidates_core(cpos[a, 0, 0], cdist[a, 0], label[g, 0], d, tol)
    if st == INCONSISTENT:
        return F_INCONSISTENT
    if st != OK:
        return NOCHANGE
    out = np.zeros(1)
    out[0] = x
    _make_green(S, a, out)
    return CHANGED


@njit(cache=True)
def improved_step(S, u, v, d, tol):
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    ru = role[u]
    rv = role[v]
    if ru == BLUE and rv >= GREEN:
        return _improved_blue(S, u, v, d, tol), u
    if rv == BLUE and ru >= GREEN:
        return _improved_blue(S, v, u, d, tol), v
    if ru == GREENISH and rv >= GREEN:
        return _improved_greenish(S, u, v, d, tol), u
    if rv == GREENISH and ru >= GREEN:
        return _improved_greenish(S, v, u, d, tol), v
    if ru == GREENISH and rv == GREENISH:
        st, has_u, xu, has_v, xv = resolve_pair_core(cpos[u, 0, 0], cdist[u, 0],
                                                     cpos[v, 0, 0], cdist[v, 0], d, tol)
        if st != OK:
            return F_INCONSISTENT, u
        out = np.zeros(1)
        if has_u:
            out[0] = xu
            _make_green(S, u, out)
        if has_v:
            out[0] = xv
            _make_green(S, v, out)
        return (CHANGED if has_u or has_v else NOCHANGE), -1
    return NOCHANGE, -1


@njit(cache=True)
def _run_block(S, pos, k, tol, improved, init, resp):
    role = S[0]
    last = 0
    for t in range(init.shape[0]):
        u = init[t]
        v = resp[t]
        ru = role[u]
        rv = role[v]
        if (ru >= GREEN and rv >= GREEN) or (ru == BLUE and rv == BLUE):
            continue
        d = dist_core(pos[u], pos[v])
        if improved:
            code, _ = improved_step(S, u, v, d, tol)
        else:
            code, _ = alg1_step(S, u, v, d, k, tol, True)
        if code == CHANGED:
            last = t + 1
        elif code != NOCHANGE:
            return last, t + 1, code
    return last, 0, 0


@njit(cache=True)
def _silent(S, pos, k, tol, improved):
    role = S[0]
    n = role.shape[0]
    for u in range(n):
        for v in range(n):
            if u == v:
                continue
            ru = role[u]
            rv = role[v]
            if (ru >= GREEN and rv >= GREEN) or (ru == BLUE and rv == BLUE):
                continue
            d = dist_core(pos[u], pos[v])
            if improved:
                code, _ = improved_step(S, u, v, d, tol)
            else:
                code, _ = alg1_step(S, u, v, d, k, tol, True)
            if code != NOCHANGE:
                return False
    return True


@dataclass
class LocArrays:
    role: np.ndarray
    label: np.ndarray
    cpos: np.ndarray
    cdist: np.ndarray
    ncont: np.ndarray
    ldist: np.ndarray
    reg: np.ndarray
    regd: np.ndarray
    nreg: np.ndarray

    @classmethod
    def empty(cls, n: int, k: int) -> "LocArrays":
        return cls(np.zeros(n, np.int8), np.zeros((n, k)), np.zeros((n, k + 1, k)),
                   np.zeros((n, k + 1)), np.zeros(n, np.int64), np.full(n, np.nan),
                   np.zeros((n, k, k)), np.zeros((n, k)), np.zeros(n, np.int64))

    def tuple(self):
        return (self.role, self.label, self.cpos, self.cdist, self.ncont, self.ldist,
                self.reg, self.regd, self.nreg)

    def copy(self) -> "LocArrays":
        return LocArrays(*(a.copy() for a in self.tuple()))


def encode_role(st: LocArrays, i: int, s, k: int) -> None:
    """Write one leader_loc role into row ``i`` of the arrays."""
    if isinstance(s, LeaderState):
        st.role[i] = LEADER
        for e, (lab, d) in enumerate(s.registry):
            st.reg[i, e] = lab
            st.regd[i, e] = d
        st.nreg[i] = len(s.registry)
    elif isinstance(s, GreenState):
        st.role[i] = GREEN
        st.label[i] = s.label
    elif isinstance(s, GreenishState):
        st.role[i] = GREENISH
        st.cpos[i, 0, 0] = s.anchor_label
        st.cdist[i, 0] = s.anchor_distance
        st.ncont[i] = 1
    elif isinstance(s, BlueState):
        st.role[i] = BLUE
        for j, (lab, d) in enumerate(s.contacts):
            st.cpos[i, j] = lab
            st.cdist[i, j] = d
        st.ncont[i] = len(s.contacts)
        if s.leader_distance is not None:
            st.ldist[i] = s.leader_distance
    else:
        raise TypeError(f"not a localisation role: {s!r}")


def decode_role(st: LocArrays, i: int, k: int):
    r = st.role[i]
    if r == LEADER:
        return LeaderState(k, tuple((tuple(float(c) for c in st.reg[i, e]), float(st.regd[i, e]))
                                    for e in range(st.nreg[i])))
    if r == GREEN:
        return GreenState(tuple(float(c) for c in st.label[i]))
    if r == GREENISH:
        return GreenishState(float(st.cpos[i, 0, 0]), float(st.cdist[i, 0]))
    ld = float(st.ldist[i])
    return BlueState(tuple((tuple(float(c) for c in st.cpos[i, j]), float(st.cdist[i, j]))
                           for j in range(st.ncont[i])), None if math.isnan(ld) else ld)


def anchor_agents(st: LocArrays, u: int, v: int) -> tuple:
    """Agents whose labels the non-green party of a failed interaction was
    using as anchors (its collected contacts plus the green it met)."""
    if st.role[u] >= GREEN and st.role[v] >= GREEN:
        return ()
    b, g = (u, v) if st.role[u] < GREEN else (v, u)
    labs = [st.cpos[b, j] for j in range(st.ncont[b])] + [st.label[g]]
    greens = np.flatnonzero(st.role >= GREEN)
    found = set()
    for lab in labs:
        hit = greens[np.all(st.label[greens] == lab, axis=1)]
        found.update(int(h) for h in hit)
    return tuple(sorted(found))


class LeaderLocalisation(Protocol):
    """Leader-based localisation over the symmetric distance query model."""

    has_kernel = True
    improved = False

    def __init__(self, k: int, tol: float = DEFAULT_TOL, oracle_tol: float = 1e-6):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self.tol = tol
        self.oracle_tol = oracle_tol
        self.name = f"leaderloc(k={k})"

    def transition(self, u, v, datum):
        return transition_alg1(u, v, datum, self.k, self.tol)

    def converged(self, config, gt):
        return oracle_localized(config, gt, self.oracle_tol)

    def bound(self, n: int) -> float:
        return n * (math.log(n) / n) ** (1 / (self.k + 1))

    def initial_configuration(self, gt: GroundTruth, rng=None) -> list:
        if gt.leader_index is None:
            raise ValueError("leader-based localisation needs a designated leader")
        return [LeaderState(self.k) if i == gt.leader_index else BlueState() for i in range(gt.n)]

    def extras(self, config, gt):
        leader = config[gt.leader_index] if gt.leader_index is not None else None
        return {"green": sum(is_green(s) for s in config),
                "registry": len(leader.registry) if isinstance(leader, LeaderState) else 0}

    def encode(self, config, gt):
        st = LocArrays.empty(len(config), self.k)
        for i, s in enumerate(config):
            encode_role(st, i, s, self.k)
        return st

    def decode(self, st):
        return [decode_role(st, i, self.k) for i in range(len(st.role))]

    def run_block(self, st, gt, init, resp):
        last, fault, code = _run_block(st.tuple(), gt.positions, self.k, self.tol,
                                       self.improved, init, resp)
        why = FAULT_NAMES.get(code, "")
        if code == F_DEGENERATE:
            anchors = anchor_agents(st, int(init[fault - 1]), int(resp[fault - 1]))
            if anchors:
                why += f" with anchor agents {anchors}"
        return last, fault, why

    def fast_converged(self, st, gt):
        if gt.leader_index is None or st.role[gt.leader_index] != LEADER:
            return False
        if np.any(st.role < GREEN):
            return False
        return labels_match_isometry(st.label, gt.relative_positions(), self.oracle_tol)

    def fast_silent(self, st, gt):
        return bool(_silent(st.copy().tuple(), gt.positions, self.k, self.tol, self.improved))

    def fast_extras(self, st, gt):
        li = gt.leader_index
        return {"green": int(np.sum(st.role >= GREEN)),
                "registry": int(st.nreg[li]) if li is not None and st.role[li] == LEADER else 0}


class Improved1D(LeaderLocalisation):
    """The greenish-agent protocol on the line."""

    improved = True

    def __init__(self, tol: float = DEFAULT_TOL, oracle_tol: float = 1e-6):
        super().__init__(1, tol, oracle_tol)
        self.name = "improved1d"

    def transition(self, u, v, datum):
        return transition_improved1d(u, v, datum, self.tol)

    def bound(self, n: int) -> float:
        return (n * math.log(n)) ** (1 / 3)

    def extras(self, config, gt):
        out = super().extras(config, gt)
        out["greenish"] = sum(isinstance(s, GreenishState) for s in config)
        return out

    def fast_extras(self, st, gt):
        out = super().fast_extras(st, gt)
        out["greenish"] = int(np.sum(st.role == GREENISH))
        return out
