"""Self-stabilising leader-based localisation.

Every agent is in one of three phases:

* ``LineState`` -- the reset buffer.  Indices ``1..D*L`` are red (they pull
  anything they meet into the buffer), higher ones are white.  Two line
  agents both move to one past the smaller index; two agents at the top
  leave for the election.
* ``ElectionState`` -- coin ``N`` agents pair up into heads/tails holders;
  an electing initiator reads the responder's coin as a fair toss.  ``L``
  heads make a leader, a tail makes a follower.
* ``LocaliseState`` -- the leader-based localisation rules, plus anomaly
  detection: two placed agents whose labels disagree with their measured
  distance, a geometry failure, or an expired deadline all send agents back
  to the start of the buffer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import geometry
from .engine import GroundTruth, Protocol, StopRule, run_trial
from .geometry import DEFAULT_TOL, consistent_core, dist_core
from .leader_loc import (BLUE, CHANGED, GREEN, LEADER, NOCHANGE, BlueState, GreenState,
                         LeaderState, LocArrays, alg1_step, decode_role, encode_role,
                         is_green, transition_alg1)


class Coin(enum.IntEnum):
    N = 0
    H = 1
    T = 2


@dataclass(frozen=True)
class SelfStabParams:
    """Population-size dependent constants.

    ``deadline_threshold`` counts the agent's own interactions;
    ``consistency_tol`` is the slack used when two placed agents compare
    labels against their measured distance.
    """

    n: int
    k: int
    L: int
    deadline_threshold: int
    D: int = 3
    tol: float = DEFAULT_TOL
    consistency_tol: float = 1e-6

    def __post_init__(self):
        if self.n < 2 or self.k < 1 or self.L < 1 or self.D < 1 or self.deadline_threshold < 1:
            raise ValueError(f"invalid self-stabilisation parameters {self}")

    @classmethod
    def for_population(cls, n: int, k: int, D: int = 3, deadline_c: float = 16.0,
                       tol: float = DEFAULT_TOL, consistency_tol: float = 1e-6) -> "SelfStabParams":
        L = max(1, math.ceil(math.log2(n)))
        thr = math.ceil(deadline_c * n ** (k / (k + 1)) * math.log(n) ** (1 / (k + 1)))
        return cls(n, k, L, max(1, thr), D, tol, consistency_tol)

    @property
    def top(self) -> int:
        return 2 * self.D * self.L

    @property
    def red_limit(self) -> int:
        return self.D * self.L


@dataclass(frozen=True)
class LineState:
    index: int


@dataclass(frozen=True)
class ElectionState:
    coin: Coin = Coin.N
    counter: int = 1
    deadline: int = 0


@dataclass(frozen=True)
class LocaliseState:
    role: object  # LeaderState, BlueState or GreenState
    coin: Coin = Coin.N
    deadline: int = 0

    def __post_init__(self):
        if not isinstance(self.role, BlueState) and self.deadline != 0:
            raise ValueError("only blue agents carry a deadline")


RESET = LineState(1)
FRESH = ElectionState(Coin.N, 1, 0)


def _placed(s) -> bool:
    return isinstance(s, LocaliseState) and is_green(s.role)


# ----------------------------------------------------------------------------
# reference transitions
# ----------------------------------------------------------------------------


def _buffer(u, v, p: SelfStabParams):
    if isinstance(u, LineState) and isinstance(v, LineState):
        if u.index >= p.top and v.index >= p.top:
            return FRESH, FRESH
        m = LineState(min(min(u.index, v.index) + 1, p.top))
        return m, m
    swap = isinstance(v, LineState)
    line, other = (v, u) if swap else (u, v)
    if line.index <= p.red_limit:
        line, other = RESET, RESET
    else:
        line = FRESH
    return (other, line) if swap else (line, other)


def _toss(u: ElectionState, coin: Coin, p: SelfStabParams):
    if coin is Coin.T:
        return LocaliseState(BlueState(), u.coin, 0)
    if u.counter >= p.L:
        return LocaliseState(LeaderState(p.k), u.coin, 0)
    return replace(u, counter=u.counter + 1)


def transition_election(u, v, p: SelfStabParams):
    """Coin pairing, else a toss by an electing initiator (at most one rule)."""
    if isinstance(u, ElectionState) and isinstance(v, ElectionState) \
            and u.coin is Coin.N and v.coin is Coin.N:
        return replace(u, coin=Coin.H), replace(v, coin=Coin.T)
    if isinstance(u, ElectionState) and not isinstance(v, LineState) and v.coin is not Coin.N:
        return _toss(u, v.coin, p), v
    return u, v


def _rewrap(s: LocaliseState, role) -> LocaliseState:
    if role is s.role:
        return s
    return LocaliseState(role, s.coin, s.deadline if isinstance(role, BlueState) else 0)


def _localise(u, v, d_uv: float, p: SelfStabParams):
    if not (isinstance(u, LocaliseState) and isinstance(v, LocaliseState)):
        return u, v
    ru, rv = u.role, v.role
    if is_green(ru) and is_green(rv):
        if not geometry.consistent(ru.label, rv.label, d_uv, p.consistency_tol):
            return RESET, RESET
        return u, v
    try:
        ru2, rv2 = transition_alg1(ru, rv, d_uv, p.k, p.tol, strict=False)
    except geometry.GeometryError:
        return (RESET, v) if isinstance(ru, BlueState) else (u, RESET)
    return _rewrap(u, ru2), _rewrap(v, rv2)


def _tick(s, p: SelfStabParams):
    if isinstance(s, ElectionState) or (isinstance(s, LocaliseState) and isinstance(s.role, BlueState)):
        if s.deadline + 1 >= p.deadline_threshold:
            return RESET
        return replace(s, deadline=s.deadline + 1)
    return s


def transition_selfstab(u, v, d_uv: float, p: SelfStabParams):
    """One interaction of the self-stabilising protocol.

    Buffer rules take precedence.  Otherwise one election rule, then the
    localisation rules, then every electing or blue participant ages by one.
    """
    if isinstance(u, LineState) or isinstance(v, LineState):
        return _buffer(u, v, p)
    u, v = transition_election(u, v, p)
    u, v = _localise(u, v, d_uv, p)
    return _tick(u, p), _tick(v, p)


def oracle_selfstab_converged(config, gt: GroundTruth, tol: float = 1e-6) -> bool:
    """All agents placed and every pair's labels match the true distance."""
    if not all(_placed(s) for s in config):
        return False
    labels = np.array([s.role.label for s in config], dtype=np.float64)
    return bool(_all_consistent(labels, gt.positions, tol))


# ----------------------------------------------------------------------------
# adversarial starting configurations
# ----------------------------------------------------------------------------

RECIPES = ("random-fields", "inconsistent-greens", "two-leaders", "mid-buffer",
           "expired-deadlines", "all-buffer-red", "consistent-greens")


def _rand_point(rng, k, dims=None):
    x = np.zeros(k)
    m = k if dims is None else dims
    x[:m] = rng.uniform(-1.0, 1.0, m)
    return tuple(float(c) for c in x)


def _rand_role(rng, p: SelfStabParams, coin: Coin):
    kind = int(rng.integers(3))
    k = p.k
    if kind == 0:
        reg = tuple((_rand_point(rng, k, e + 1), float(rng.uniform(0.0, 2.0)))
                    for e in range(int(rng.integers(0, k + 1))))
        return LocaliseState(LeaderState(k, reg), coin)
    if kind == 1:
        contacts = tuple((_rand_point(rng, k), float(rng.uniform(0.0, 2.0)))
                         for _ in range(int(rng.integers(0, k + 1))))
        ld = float(rng.uniform(0.0, 2.0)) if rng.random() < 0.5 else None
        return LocaliseState(BlueState(contacts, ld), coin, int(rng.integers(0, p.deadline_threshold)))
    return LocaliseState(GreenState(_rand_point(rng, k)), coin)


def init_adversarial(recipe: str, n: int, k: int, params: SelfStabParams,
                     rng: np.random.Generator, gt: GroundTruth | None = None) -> list:
    """Build a hostile starting configuration by name (see ``RECIPES``)."""
    p = params
    if (p.n, p.k) != (n, k):
        raise ValueError("parameters were built for a different population")

    def coin():
        return Coin(int(rng.integers(3)))

    if recipe == "random-fields":
        out = []
        for _ in range(n):
            phase = int(rng.integers(3))
            if phase == 0:
                out.append(LineState(int(rng.integers(1, p.top + 1))))
            elif phase == 1:
                out.append(ElectionState(coin(), int(rng.integers(1, p.L + 1)),
                                         int(rng.integers(0, p.deadline_threshold))))
            else:
                out.append(_rand_role(rng, p, coin()))
        return out
    if recipe == "inconsistent-greens":
        return [LocaliseState(GreenState(_rand_point(rng, k)), coin()) for _ in range(n)]
    if recipe == "two-leaders":
        leaders = set(rng.choice(n, size=2, replace=False).tolist())
        return [LocaliseState(LeaderState(k) if i in leaders else BlueState(), coin())
                for i in range(n)]
    if recipe == "mid-buffer":
        return [LineState(int(rng.integers(1, p.top + 1))) for _ in range(n)]
    if recipe == "all-buffer-red":
        return [LineState(int(rng.integers(1, p.red_limit + 1))) for _ in range(n)]
    if recipe == "expired-deadlines":
        leader = int(rng.integers(n))
        return [LocaliseState(LeaderState(k), coin()) if i == leader else
                LocaliseState(BlueState(), coin(), p.deadline_threshold - 1) for i in range(n)]
    if recipe == "consistent-greens":
        if gt is None:
            raise ValueError("consistent-greens needs the ground truth")
        return [LocaliseState(GreenState(tuple(float(c) for c in row)), Coin.N)
                for row in gt.positions]
    raise ValueError(f"unknown recipe {recipe!r}; choose from {', '.join(RECIPES)}")


# ----------------------------------------------------------------------------
# kernel
# ----------------------------------------------------------------------------

LINE, ELECT, LOC = 0, 1, 2


@njit(cache=True)
def _reset(P, i):
    P[0][i] = LINE
    P[1][i] = 1


@njit(cache=True)
def _depart(P, i):
    phase, bidx, coin, counter, deadline = P
    phase[i] = ELECT
    coin[i] = 0
    counter[i] = 1
    deadline[i] = 0


@njit(cache=True)
def _start_role(P, S, i, leader):
    phase, bidx, coin, counter, deadline = P
    role, label, cpos, cdist, ncont, ldist, reg, regd, nreg = S
    phase[i] = LOC
    deadline[i] = 0
    ncont[i] = 0
    ldist[i] = np.nan
    nreg[i] = 0
    label[i, :] = 0.0
    role[i] = LEADER if leader else BLUE


@njit(cache=True)
def _tick_k(P, S, i, thr):
    phase, bidx, coin, counter, deadline = P
    if phase[i] == ELECT or (phase[i] == LOC and S[0][i] == BLUE):
        if deadline[i] + 1 >= thr:
            _reset(P, i)
        else:
            deadline[i] += 1
        return True
    return False


@njit(cache=True)
def ss_step(P, S, u, v, d, k, L, top, red, thr, tol, ctol, election_only):
    """Mirror of the reference transition; returns whether anything changed."""
    phase, bidx, coin, counter, deadline = P
    role = S[0]
    label = S[1]
    pu = phase[u]
    pv = phase[v]
    if pu == LINE or pv == LINE:
        if pu == LINE and pv == LINE:
            if bidx[u] >= top and bidx[v] >= top:
                _depart(P, u)
                _depart(P, v)
            else:
                m = min(min(bidx[u], bidx[v]) + 1, top)
                bidx[u] = m
                bidx[v] = m
            return True
        line = u if pu == LINE else v
        other = v if pu == LINE else u
        if bidx[line] <= red:
            _reset(P, line)
            _reset(P, other)
        else:
            _depart(P, line)
        return True
    changed = False
    if pu == ELECT and pv == ELECT and coin[u] == 0 and coin[v] == 0:
        coin[u] = 1
        coin[v] = 2
        changed = True
    elif pu == ELECT and coin[v] != 0:
        changed = True
        if coin[v] == 2:
            _start_role(P, S, u, False)
        elif counter[u] >= L:
            _start_role(P, S, u, True)
        else:
            counter[u] += 1
    if election_only:
        return changed
    if phase[u] == LOC and phase[v] == LOC:
        if role[u] >= GREEN and role[v] >= GREEN:
            if not consistent_core(label[u], label[v], d, ctol):
                _reset(P, u)
                _reset(P, v)
                return True
        else:
            code, agent = alg1_step(S, u, v, d, k, tol, False)
            if code == CHANGED:
                changed = True
                if role[agent] >= GREEN:
                    deadline[agent] = 0
            elif code != NOCHANGE:
                _reset(P, agent)
                changed = True
    if _tick_k(P, S, u, thr):
        changed = True
    if _tick_k(P, S, v, thr):
        changed = True
    return changed


@njit(cache=True)
def _run_block(P, S, pos, k, L, top, red, thr, tol, ctol, election_only, init, resp):
    last = 0
    for t in range(init.shape[0]):
        u = init[t]
        v = resp[t]
        if ss_step(P, S, u, v, dist_core(pos[u], pos[v]), k, L, top, red, thr, tol, ctol,
                   election_only):
            last = t + 1
    return last


@njit(cache=True)
def _silent(P, S, pos, k, L, top, red, thr, tol, ctol, election_only):
    n = pos.shape[0]
    for u in range(n):
        for v in range(n):
            if u != v and ss_step(P, S, u, v, dist_core(pos[u], pos[v]), k, L, top, red, thr,
                                  tol, ctol, election_only):
                return False
    return True


@njit(cache=True)
def _all_consistent(label, pos, tol):
    n = pos.shape[0]
    for u in range(n):
        for v in range(u + 1, n):
            if not consistent_core(label[u], label[v], dist_core(pos[u], pos[v]), tol):
                return False
    return True


@dataclass
class SelfStabArrays:
    phase: np.ndarray
    bidx: np.ndarray
    coin: np.ndarray
    counter: np.ndarray
    deadline: np.ndarray
    loc: LocArrays

    def fields(self):
        return (self.phase, self.bidx, self.coin, self.counter, self.deadline)

    def copy(self) -> "SelfStabArrays":
        return SelfStabArrays(*(a.copy() for a in self.fields()), self.loc.copy())


class SelfStabilising(Protocol):
    """Self-stabilising localisation; ``election_only`` freezes everything
    except coin pairing and tosses (used to study clean election phases)."""

    has_kernel = True

    def __init__(self, params: SelfStabParams, recipe: str = "random-fields",
                 election_only: bool = False):
        self.params = params
        self.k = params.k
        self.recipe = recipe
        self.election_only = election_only
        self.name = f"selfstab(k={params.k})"

    def transition(self, u, v, datum):
        if self.election_only:
            if isinstance(u, LineState) or isinstance(v, LineState):
                return _buffer(u, v, self.params)
            return transition_election(u, v, self.params)
        return transition_selfstab(u, v, datum, self.params)

    def converged(self, config, gt):
        return oracle_selfstab_converged(config, gt, self.params.consistency_tol)

    def bound(self, n: int) -> float:
        k = self.k
        return n ** (k / (k + 1)) * math.log(n) ** (1 / (k + 1)) * math.log(n)

    def initial_configuration(self, gt: GroundTruth, rng):
        return init_adversarial(self.recipe, gt.n, gt.k, self.params, rng, gt)

    @staticmethod
    def _counts(kinds) -> dict:
        out = {"line": 0, "election": 0, "leaders": 0, "placed": 0}
        for kind in kinds:
            out[kind] += 1
        return out

    def extras(self, config, gt):
        def kind(s):
            if isinstance(s, LineState):
                return "line"
            if isinstance(s, ElectionState):
                return "election"
            if isinstance(s.role, LeaderState):
                return "leaders"
            return "placed" if is_green(s.role) else None
        return self._counts(x for x in map(kind, config) if x)

    def encode(self, config, gt):
        n, k = len(config), self.k
        st = SelfStabArrays(np.zeros(n, np.int8), np.zeros(n, np.int64), np.zeros(n, np.int8),
                            np.ones(n, np.int64), np.zeros(n, np.int64), LocArrays.empty(n, k))
        for i, s in enumerate(config):
            if isinstance(s, LineState):
                st.phase[i] = LINE
                st.bidx[i] = s.index
            elif isinstance(s, ElectionState):
                st.phase[i] = ELECT
                st.coin[i], st.counter[i], st.deadline[i] = int(s.coin), s.counter, s.deadline
            elif isinstance(s, LocaliseState):
                st.phase[i] = LOC
                st.coin[i], st.deadline[i] = int(s.coin), s.deadline
                encode_role(st.loc, i, s.role, k)
            else:
                raise TypeError(f"not a self-stabilising state: {s!r}")
        return st

    def decode(self, st: SelfStabArrays):
        out = []
        for i in range(len(st.phase)):
            ph = st.phase[i]
            if ph == LINE:
                out.append(LineState(int(st.bidx[i])))
            elif ph == ELECT:
                out.append(ElectionState(Coin(int(st.coin[i])), int(st.counter[i]), int(st.deadline[i])))
            else:
                out.append(LocaliseState(decode_role(st.loc, i, self.k), Coin(int(st.coin[i])),
                                         int(st.deadline[i])))
        return out

    def _args(self):
        p = self.params
        return (p.k, p.L, p.top, p.red_limit, p.deadline_threshold, p.tol, p.consistency_tol,
                self.election_only)

    def run_block(self, st, gt, init, resp):
        last = _run_block(st.fields(), st.loc.tuple(), gt.positions, *self._args(), init, resp)
        return last, 0, ""

    def fast_converged(self, st, gt):
        if np.any(st.phase != LOC) or np.any(st.loc.role < GREEN):
            return False
        return bool(_all_consistent(st.loc.label, gt.positions, self.params.consistency_tol))

    def fast_silent(self, st, gt):
        c = st.copy()
        return bool(_silent(c.fields(), c.loc.tuple(), gt.positions, *self._args()))

    def fast_extras(self, st, gt):
        loc = st.phase == LOC
        return {"line": int(np.sum(st.phase == LINE)), "election": int(np.sum(st.phase == ELECT)),
                "leaders": int(np.sum(loc & (st.loc.role == LEADER))),
                "placed": int(np.sum(loc & (st.loc.role == GREEN)))}


def run_election_phase(n: int, rng, params: SelfStabParams | None = None) -> int:
    """Run one clean election (all agents start fresh, localisation frozen)
    until nobody is electing; return the number of leaders produced."""
    p = params or SelfStabParams.for_population(n, 1)
    proto = SelfStabilising(p, election_only=True)
    gt = GroundTruth(np.arange(n, dtype=np.float64).reshape(n, 1))
    if p.k != 1:
        gt = GroundTruth(np.hstack([gt.positions, np.zeros((n, p.k - 1))]))
    stop = StopRule(predicate=lambda st, _: not np.any(st.phase == ELECT))
    res = run_trial(proto, gt, [FRESH] * n, rng, stop)
    return res.extras["leaders"]
