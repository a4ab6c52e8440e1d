"""Shared helpers: ground-truth builders and a two-path trace comparator."""

import itertools

import numpy as np
import pytest

from spatialpop.engine import FixedPairs, GroundTruth, _python_block
from spatialpop.harness import generate_positions


def uniform_gt(n, k, seed=0, leader=None) -> GroundTruth:
    return generate_positions(n, k, "uniform", np.random.default_rng(seed), leader)


def random_pairs(n, m, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, m)
    r = (i + 1 + rng.integers(0, n - 1, m)) % n
    return np.stack([i, r], axis=1)


def assert_paths_agree(protocol, gt, init, pairs, chunk=97):
    """Feed identical pair chunks to the reference transition and the kernel;
    configurations and last-change offsets must match after every chunk."""
    config = list(init)
    state = protocol.encode(init, gt)
    assert protocol.decode(state) == config
    a, b = FixedPairs(pairs), FixedPairs(pairs)
    changes = 0
    while True:
        ia, ra = a.take(chunk)
        ib, rb = b.take(chunk)
        if len(ia) == 0:
            break
        ref = _python_block(protocol, config, gt, ia, ra)
        fast = protocol.run_block(state, gt, ib, rb)
        assert ref[0] == fast[0], "last-change offsets differ"
        assert bool(ref[1]) == bool(fast[1]) and ref[1] == fast[1], "fault offsets differ"
        assert protocol.decode(state) == config
        changes += ref[0] > 0
        if ref[1]:
            break
    return config, changes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ----------------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------------


def forward_instance(rng, k, cond_max=1e3):
    """Well-conditioned anchors plus a hidden point; distances by numpy."""
    while True:
        anc = rng.uniform(-1, 1, (k + 1, k))
        diffs = anc[1:] - anc[0]
        if np.linalg.cond(diffs) < cond_max:
            break
    x = rng.uniform(-1, 1, k)
    return anc, np.linalg.norm(anc - x, axis=1), x


def subspace_frame(q):
    """Canonical incremental coordinates of the rows of ``q`` (leader at the
    origin) via QR with a positive diagonal: row e lives in the first e+1 axes."""
    qm, r = np.linalg.qr(q.T)
    sign = np.sign(np.diag(r))
    return qm * sign, (r * sign[:, None]).T


def brute_force_pair(gu, du, gv, dv, duv, tol):
    keep = [(su, sv) for su, sv in itertools.product((1, -1), repeat=2)
            if abs(abs((gu + su * du) - (gv + sv * dv)) - duv) <= tol * (1 + duv)]
    if not keep:
        return "inconsistent"
    u = {gu + su * du for su, _ in keep}
    v = {gv + sv * dv for _, sv in keep}
    return (u.pop() if len(u) == 1 else None, v.pop() if len(v) == 1 else None)
