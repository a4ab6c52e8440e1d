"""Random pairwise scheduler and the protocol-agnostic interaction loop.

A trial repeatedly draws an ordered (initiator, responder) pair, evaluates
the geometric query on the hidden ground truth and hands the pair's states
plus the datum to the protocol's transition.  Protocols may also provide an
array kernel; the loop then feeds the same pair blocks to the kernel, so both
paths see an identical interaction sequence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import geometry


class QueryModel(enum.Enum):
    SYMMETRIC_DISTANCE = "symmetric-distance"
    INITIATOR_VECTOR = "initiator-vector"


class TrialAborted(RuntimeError):
    """A transition hit degenerate or inconsistent geometry mid-trial."""

    def __init__(self, message: str, interaction: int, agents: tuple[int, int]):
        super().__init__(message)
        self.interaction = interaction
        self.agents = agents


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Hidden agent positions; only the engine and the oracles read these."""

    positions: np.ndarray
    leader_index: int | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] < 1:
            raise ValueError("positions must be an (n, k) array with k >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        uniq, first, counts = np.unique(pos, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup = uniq[np.argmax(counts > 1)]
            idx = np.flatnonzero(np.all(pos == dup, axis=1))
            raise ValueError(f"duplicate positions at agents {idx.tolist()}")
        if self.leader_index is not None and not 0 <= self.leader_index < pos.shape[0]:
            raise ValueError(f"leader index {self.leader_index} out of range")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def k(self) -> int:
        return self.positions.shape[1]

    def relative_positions(self) -> np.ndarray:
        """Positions translated so the leader (if any) sits at the origin."""
        if self.leader_index is None:
            return self.positions.copy()
        return self.positions - self.positions[self.leader_index]

    def check_general_position(self, indices) -> None:
        """Raise DegenerateGeometryError if the given agents are affinely dependent."""
        idx = list(indices)
        if len(idx) > self.k + 1:
            raise ValueError(f"at most {self.k + 1} points can be affinely independent")
        if len(idx) < 2:
            return
        base = self.positions[idx[0]]
        diffs = self.positions[idx[1:]] - base
        s = np.linalg.svd(diffs, compute_uv=False)
        scale = max(1.0, float(np.abs(self.positions[idx]).max()))
        if s[-1] <= geometry.DEFAULT_TOL * scale or s[0] / s[-1] > geometry.CONDITION_LIMIT:
            raise geometry.DegenerateGeometryError(
                f"agents {idx} are not in general position", idx)


def evaluate_query(gt: GroundTruth, i: int, r: int, model: QueryModel):
    """Distance ``|p_r - p_i|`` or the initiator's vector ``p_r - p_i``."""
    if i == r:
        raise ValueError("an agent cannot interact with itself")
    p, q = gt.positions[i], gt.positions[r]
    if model is QueryModel.SYMMETRIC_DISTANCE:
        return float(geometry.dist_core(p, q))
    return tuple(float(q[j] - p[j]) for j in range(gt.k))


# ----------------------------------------------------------------------------
# scheduling
# ----------------------------------------------------------------------------


def trial_seed(base_seed: int, n: int, trial: int) -> np.random.SeedSequence:
    """Independent per-trial seed material, stable under reordering of trials."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(n, trial))


def trial_rngs(base_seed: int, n: int, trial: int) -> tuple[np.random.Generator, ...]:
    """(positions, initial configuration, scheduler) generators for one trial."""
    return tuple(np.random.default_rng(s) for s in trial_seed(base_seed, n, trial).spawn(3))


def _decode_pairs(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    init = x // (n - 1)
    resp = x % (n - 1)
    resp += resp >= init
    return init, resp


def schedule_pair(rng: np.random.Generator, n: int) -> tuple[int, int]:
    """One uniformly random ordered pair of distinct agents (one draw)."""
    if n < 2:
        raise ValueError("need at least two agents to schedule an interaction")
    x = int(rng.integers(0, n * (n - 1)))
    i, r = divmod(x, n - 1)
    return i, r + (r >= i)


class PairStream:
    """Ordered pairs drawn in fixed-size blocks.

    Block boundaries never depend on how callers slice the stream, so any
    consumer pattern sees the same sequence for a given generator state.
    """

    def __init__(self, rng: np.random.Generator, n: int, block: int = 1 << 16):
        if n < 2:
            raise ValueError("need at least two agents to schedule an interaction")
        self.rng = rng
        self.n = n
        self.block = block
        self._init = np.empty(0, np.int64)
        self._resp = np.empty(0, np.int64)
        self._pos = 0

    def _refill(self):
        x = self.rng.integers(0, self.n * (self.n - 1), size=self.block, dtype=np.int64)
        self._init, self._resp = _decode_pairs(x, self.n)
        self._pos = 0

    def take(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        chunks_i, chunks_r = [], []
        while m > 0:
            if self._pos == len(self._init):
                self._refill()
            step = min(m, len(self._init) - self._pos)
            chunks_i.append(self._init[self._pos:self._pos + step])
            chunks_r.append(self._resp[self._pos:self._pos + step])
            self._pos += step
            m -= step
        if len(chunks_i) == 1:
            return chunks_i[0], chunks_r[0]
        if not chunks_i:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(chunks_i), np.concatenate(chunks_r)


class FixedPairs:
    """Replays an explicit pair list (tests, trace comparisons)."""

    def __init__(self, pairs):
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self._init = np.ascontiguousarray(arr[:, 0])
        self._resp = np.ascontiguousarray(arr[:, 1])
        self._pos = 0

    def take(self, m: int):
        m = min(m, len(self._init) - self._pos)
        s = slice(self._pos, self._pos + m)
        self._pos += m
        return self._init[s], self._resp[s]


# ----------------------------------------------------------------------------
# protocols and trials
# ----------------------------------------------------------------------------


class Protocol:
    """Transition definition plus oracle; subclasses may add an array kernel.

    The kernel half works on an opaque ``state`` produced by ``encode`` and
    must mirror ``transition`` exactly.
    """

    name = "protocol"
    query = QueryModel.SYMMETRIC_DISTANCE
    has_kernel = False

    def transition(self, u, v, datum):
        raise NotImplementedError

    def converged(self, config, gt: GroundTruth) -> bool:
        raise NotImplementedError

    def bound(self, n: int) -> float:
        """Theoretical parallel-time bound with constant 1."""
        raise NotImplementedError

    def extras(self, config, gt: GroundTruth) -> dict:
        return {}

    # array kernel ----------------------------------------------------------
    def encode(self, config, gt: GroundTruth):
        raise NotImplementedError

    def decode(self, state) -> list:
        raise NotImplementedError

    def run_block(self, state, gt: GroundTruth, init: np.ndarray, resp: np.ndarray):
        """Apply the pairs; return (1-based offset of last change or 0,
        offset of a faulting interaction or 0, fault description)."""
        raise NotImplementedError

    def fast_converged(self, state, gt: GroundTruth) -> bool:
        raise NotImplementedError

    def fast_silent(self, state, gt: GroundTruth) -> bool:
        raise NotImplementedError

    def fast_extras(self, state, gt: GroundTruth) -> dict:
        return self.extras(self.decode(state), gt)


@dataclass(frozen=True)
class StopRule:
    predicate: Callable[[Any, GroundTruth], bool] | None = None
    max_parallel_time: float = math.inf
    check_interval: int | None = None
    verify_silence: bool = False


@dataclass
class TrialResult:
    interactions: int
    last_change_interaction: int
    parallel_time: float
    converged: bool
    silence_verified: bool
    extras: dict = field(default_factory=dict)
    final: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        assert 0 <= self.last_change_interaction <= self.interactions
        assert self.parallel_time >= 0


def _python_block(protocol: Protocol, config: list, gt: GroundTruth, init, resp):
    last = 0
    for t in range(len(init)):
        i, r = int(init[t]), int(resp[t])
        datum = evaluate_query(gt, i, r, protocol.query)
        u, v = config[i], config[r]
        try:
            u2, v2 = protocol.transition(u, v, datum)
        except geometry.GeometryError as exc:
            return last, t + 1, f"{type(exc).__name__}: {exc}"
        if u2 != u or v2 != v:
            config[i], config[r] = u2, v2
            last = t + 1
    return last, 0, ""


def run_trial(protocol: Protocol, gt: GroundTruth, init, rng, stop: StopRule,
              *, fast: bool | None = None) -> TrialResult:
    """Run one trial until the oracle predicate holds or the budget runs out.

    ``rng`` is a Generator or anything with ``take(m)`` returning pair
    arrays.  The predicate is evaluated up front and then at every
    ``check_interval`` boundary (default n interactions) after which some
    state changed; ``last_change_interaction`` is exact regardless.
    """
    n = gt.n
    if len(init) != n:
        raise ValueError(f"configuration has {len(init)} agents, ground truth has {n}")
    use_fast = protocol.has_kernel if fast is None else fast
    stream = PairStream(rng, n) if isinstance(rng, np.random.Generator) else rng
    if use_fast:
        state = protocol.encode(init, gt)
        predicate = stop.predicate or protocol.fast_converged
    else:
        state = list(init)
        predicate = stop.predicate or protocol.converged
    check = stop.check_interval or n
    budget = math.ceil(stop.max_parallel_time * n) if math.isfinite(stop.max_parallel_time) else math.inf
    t = last = 0
    converged = bool(predicate(state, gt))
    while not converged and t < budget:
        m = int(min(check, budget - t))
        init_idx, resp_idx = stream.take(m)
        if len(init_idx) == 0:
            break
        if use_fast:
            off, fault, why = protocol.run_block(state, gt, init_idx, resp_idx)
        else:
            off, fault, why = _python_block(protocol, state, gt, init_idx, resp_idx)
        if fault:
            at = t + fault
            pair = (int(init_idx[fault - 1]), int(resp_idx[fault - 1]))
            raise TrialAborted(f"interaction {at} between agents {pair}: {why}", at, pair)
        if off:
            last = t + off
        t += len(init_idx)
        if off:
            converged = bool(predicate(state, gt))
    silent = False
    if converged and stop.verify_silence:
        silent = protocol.fast_silent(state, gt) if use_fast else verify_silence(protocol, state, gt, fast=False)
    extras = protocol.fast_extras(state, gt) if use_fast else protocol.extras(state, gt)
    return TrialResult(interactions=t, last_change_interaction=last, parallel_time=last / n,
                       converged=converged, silence_verified=silent, extras=extras, final=state)


def verify_silence(protocol: Protocol, config, gt: GroundTruth, *, fast: bool | None = None) -> bool:
    """True iff no ordered pair's transition (with its true datum) changes a state."""
    if fast is None:
        fast = protocol.has_kernel and not isinstance(config, list)
    if fast:
        state = protocol.encode(config, gt) if isinstance(config, list) else config
        return bool(protocol.fast_silent(state, gt))
    if not isinstance(config, list):
        config = protocol.decode(config)
    n = len(config)
    for i in range(n):
        for r in range(n):
            if i == r:
                continue
            u, v = config[i], config[r]
            try:
                u2, v2 = protocol.transition(u, v, evaluate_query(gt, i, r, protocol.query))
            except geometry.GeometryError:
                return False
            if u2 != u or v2 != v:
                return False
    return True
