"""One-way and k-contact epidemics.

A blue agent turns green after meeting ``k`` distinct green agents; ``k = 1``
is the ordinary one-way epidemic.  Distinctness is observed through tokens
the simulator hands out (the agent index), the only place where agents are
not anonymous.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .engine import GroundTruth, Protocol


class Colour(enum.Enum):
    BLUE = "blue"
    GREEN = "green"


@dataclass(frozen=True)
class EpidemicState:
    colour: Colour
    token: int
    contacts: frozenset = frozenset()


def _absorb(b: EpidemicState, g: EpidemicState, k: int) -> EpidemicState:
    if b.colour is not Colour.BLUE or g.colour is not Colour.GREEN or g.token in b.contacts:
        return b
    contacts = b.contacts | {g.token}
    if len(contacts) >= k:
        return EpidemicState(Colour.GREEN, b.token)
    return replace(b, contacts=contacts)


def k_contact_transition(u: EpidemicState, v: EpidemicState, k: int):
    """Symmetric k-contact rule: each side absorbs the other if applicable."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return _absorb(u, v, k), _absorb(v, u, k)


def epidemic_complete(config) -> bool:
    return all(s.colour is Colour.GREEN for s in config)


def initial_configuration(n: int, k: int, rng: np.random.Generator) -> list[EpidemicState]:
    """Exactly ``k`` green agents chosen uniformly, the rest blue."""
    if k > n:
        raise ValueError(f"cannot seed {k} green agents in a population of {n}")
    greens = set(rng.choice(n, size=k, replace=False).tolist())
    return [EpidemicState(Colour.GREEN if i in greens else Colour.BLUE, i) for i in range(n)]


# ----------------------------------------------------------------------------
# kernel
# ----------------------------------------------------------------------------


@njit(cache=True)
def _absorb_k(green, contacts, ncont, b, g, k):
    if green[b] or not green[g]:
        return False
    for j in range(ncont[b]):
        if contacts[b, j] == g:
            return False
    contacts[b, ncont[b]] = g
    ncont[b] += 1
    if ncont[b] >= k:
        green[b] = True
        ncont[b] = 0
    return True


@njit(cache=True)
def _run_block(green, contacts, ncont, k, init, resp):
    last = 0
    for t in range(init.shape[0]):
        u = init[t]
        v = resp[t]
        if green[u] != green[v]:
            if green[u]:
                changed = _absorb_k(green, contacts, ncont, v, u, k)
            else:
                changed = _absorb_k(green, contacts, ncont, u, v, k)
            if changed:
                last = t + 1
    return last


@njit(cache=True)
def _silent(green, contacts, ncont):
    n = green.shape[0]
    for b in range(n):
        if green[b]:
            continue
        for g in range(n):
            if not green[g]:
                continue
            seen = False
            for j in range(ncont[b]):
                if contacts[b, j] == g:
                    seen = True
            if not seen:
                return False
    return True


@dataclass
class EpidemicArrays:
    green: np.ndarray
    contacts: np.ndarray
    ncont: np.ndarray


class KContactEpidemic(Protocol):
    has_kernel = True

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self.name = f"kcontact(k={k})"

    def transition(self, u, v, datum):
        return k_contact_transition(u, v, self.k)

    def converged(self, config, gt: GroundTruth) -> bool:
        return epidemic_complete(config)

    def bound(self, n: int) -> float:
        return n ** (1 - 1 / self.k) * math.log(n) ** (1 / self.k)

    def extras(self, config, gt):
        return {"green": sum(s.colour is Colour.GREEN for s in config)}

    def initial_configuration(self, gt: GroundTruth, rng: np.random.Generator):
        return initial_configuration(gt.n, self.k, rng)

    def encode(self, config, gt):
        n = len(config)
        st = EpidemicArrays(np.zeros(n, np.bool_), np.full((n, self.k), -1, np.int64),
                            np.zeros(n, np.int64))
        for i, s in enumerate(config):
            if s.token != i:
                raise ValueError("the kernel uses agent indices as contact tokens")
            st.green[i] = s.colour is Colour.GREEN
            for j, c in enumerate(sorted(s.contacts)):
                st.contacts[i, j] = c
            st.ncont[i] = len(s.contacts)
        return st

    def decode(self, st: EpidemicArrays):
        return [EpidemicState(Colour.GREEN if st.green[i] else Colour.BLUE, i,
                              frozenset(st.contacts[i, :st.ncont[i]].tolist()))
                for i in range(len(st.green))]

    def run_block(self, st, gt, init, resp):
        return _run_block(st.green, st.contacts, st.ncont, self.k, init, resp), 0, ""

    def fast_converged(self, st, gt):
        return bool(st.green.all())

    def fast_silent(self, st, gt):
        return bool(_silent(st.green, st.contacts, st.ncont))

    def fast_extras(self, st, gt):
        return {"green": int(st.green.sum())}
