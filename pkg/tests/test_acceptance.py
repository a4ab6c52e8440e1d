"""Acceptance suite: scaling fits, invariant audits and determinism at desk scale.

Each test prints one ``ACCEPTANCE <n> <name>: PASS|FAIL`` line with the
measured numbers, then asserts.  The whole module takes tens of minutes on a
single core; deselect it with ``-m "not slow"`` for quick runs.
"""

import dataclasses

import numpy as np
import pytest

from conftest import brute_force_pair, forward_instance, subspace_frame
from spatialpop.cli import main
from spatialpop.engine import PairStream, StopRule, run_trial, trial_rngs
from spatialpop.geometry import multilaterate, position_in_subspace, resolve_greenish_pair
from spatialpop.harness import (ExperimentConfig, aborted, fit_scaling, generate_positions,
                                polylog_exponent, run_experiment, write_csv)
from spatialpop.selfstab import SelfStabilising, SelfStabParams, run_election_phase
from spatialpop.vector_loc import (VectorLocalisation, audit_facts, compute_offsets,
                                   initial_labels)

pytestmark = pytest.mark.slow

SEED = 2024
TOL = 0.1
HOSTILE = ("random-fields", "inconsistent-greens", "two-leaders", "mid-buffer",
           "expired-deadlines")


def grid(lo, hi):
    return [2 ** e for e in range(lo, hi + 1)]


CONFIGS = {
    "kcontact-2": ExperimentConfig("kcontact", grid(10, 16), k_contact=2, trials=30, base_seed=SEED),
    "kcontact-3": ExperimentConfig("kcontact", grid(10, 16), k_contact=3, trials=30, base_seed=SEED),
    "leaderloc-1": ExperimentConfig("leaderloc", grid(10, 14), k=1, trials=30, base_seed=SEED),
    "leaderloc-2": ExperimentConfig("leaderloc", grid(10, 14), k=2, trials=30, base_seed=SEED),
    "improved1d": ExperimentConfig("improved1d", grid(10, 18), trials=30, base_seed=SEED),
    "vector-2": ExperimentConfig("vector", grid(8, 16), k=2, trials=30, base_seed=SEED),
}
for _k in (1, 2):
    for _r in HOSTILE:
        CONFIGS[f"selfstab-{_k}-{_r}"] = ExperimentConfig("selfstab", [1024], k=_k, trials=20,
                                                          recipe=_r, base_seed=SEED)

_RUNS: dict = {}


def rows_for(name):
    if name not in _RUNS:
        _RUNS[name] = run_experiment(CONFIGS[name])
    return _RUNS[name]


@pytest.fixture
def report(capsys):
    def emit(num, name, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return emit


def power_fit(name):
    cfg = CONFIGS[name]
    return fit_scaling(rows_for(name), "power", polylog_exponent(cfg))


# ----------------------------------------------------------------------------
# 1: k-contact epidemic
# ----------------------------------------------------------------------------


def test_acceptance_1_kcontact_scaling(report):
    results = []
    for kc in (2, 3):
        rep = power_fit(f"kcontact-{kc}")
        target = 1 - 1 / kc
        results.append((kc, rep.value, rep.stderr, abs(rep.value - target) <= TOL))
    detail = "; ".join(f"k={kc} exponent={v:.3f}±{se:.3f} target={1 - 1 / kc:.3f}"
                       for kc, v, se, _ in results)
    assert report(1, "k-contact epidemic scaling", all(r[3] for r in results), detail)


# ----------------------------------------------------------------------------
# 2: leader-based localisation
# ----------------------------------------------------------------------------


def test_acceptance_2_leaderloc_scaling(report):
    parts, ok = [], True
    for k in (1, 2):
        name = f"leaderloc-{k}"
        rows = rows_for(name)
        rep = power_fit(name)
        target = k / (k + 1)
        good = all(r.silence_verified for r in rows if r.converged) and not aborted(rows)
        ok &= good and abs(rep.value - target) <= TOL
        conv = sum(r.converged for r in rows)
        parts.append(f"k={k} exponent={rep.value:.3f}±{rep.stderr:.3f} target={target:.3f} "
                     f"converged={conv}/{len(rows)} silent_and_localised={good}")
    assert report(2, "leader localisation scaling", ok, "; ".join(parts))


# ----------------------------------------------------------------------------
# 3: improved 1-D protocol
# ----------------------------------------------------------------------------


def test_acceptance_3_improved1d(report):
    rep = power_fit("improved1d")
    n = 2 ** 14
    imp = [r for r in rows_for("improved1d") if r.n == n]
    plain = [r for r in rows_for("leaderloc-1") if r.n == n]
    assert [r.trial for r in imp] == [r.trial for r in plain]  # same seeds, same positions
    m_imp = float(np.median([r.parallel_time for r in imp]))
    m_plain = float(np.median([r.parallel_time for r in plain]))
    all_conv = all(r.converged for r in imp + plain)
    ok = abs(rep.value - 1 / 3) <= TOL and m_imp < m_plain and all_conv
    assert report(3, "improved 1-D protocol", ok,
                  f"exponent={rep.value:.3f}±{rep.stderr:.3f} target=0.333; "
                  f"median at n=2^14 improved={m_imp:.1f} plain={m_plain:.1f}")


# ----------------------------------------------------------------------------
# 4: vector protocol
# ----------------------------------------------------------------------------


def test_acceptance_4_vector(report):
    rows = rows_for("vector-2")
    rep = fit_scaling(rows, "log")
    fit_ok = rep.relative_residual < 0.1 and all(r.converged for r in rows)

    n, k = 2 ** 12, 2
    rng_pos, rng_init, rng_sched = trial_rngs(SEED, n, 0)
    gt = generate_positions(n, k, "uniform", rng_pos)
    labels = np.array([s.coords for s in initial_labels(gt, rng_init)])
    audit = audit_facts(labels, gt, PairStream(rng_sched, n), 10 ** 7)
    audit_ok = audit.ok and audit.max_drift < 1e-12

    exact = True
    for trial in range(1, 6):
        rng_pos, rng_init, rng_sched = trial_rngs(SEED, n, trial)
        gt = generate_positions(n, k, "uniform", rng_pos)
        proto = VectorLocalisation(k)
        init = proto.initial_configuration(gt, rng_init)
        m0 = np.array(compute_offsets(init, gt))
        res = run_trial(proto, gt, init, rng_sched,
                        StopRule(max_parallel_time=64 * proto.bound(n), verify_silence=True))
        exact &= res.converged and res.silence_verified
        exact &= bool(np.all(res.final - gt.positions == m0))

    ok = fit_ok and audit_ok and exact
    assert report(4, "vector protocol", ok,
                  f"slope={rep.value:.3f} intercept={rep.intercept:.3f} "
                  f"rel_residual={rep.relative_residual:.4f}; audit of {audit.interactions} "
                  f"interactions decreases={audit.decreases} offset={audit.offset_violations} "
                  f"membership={audit.membership_violations} drift={audit.max_drift:.1e}; "
                  f"offsets exact at convergence={exact}")


# ----------------------------------------------------------------------------
# 5: leader election
# ----------------------------------------------------------------------------


def test_acceptance_5_election(report):
    n, phases = 2 ** 12, 2000
    params = SelfStabParams.for_population(n, 1)
    unique = sum(run_election_phase(n, trial_rngs(SEED, n, t)[2], params) == 1
                 for t in range(phases))
    frac = unique / phases
    exact = (1 - 1 / n) ** (n - 1)  # n * (1/n) * (1 - 1/n)^(n-1)
    ok = abs(frac - exact) <= 0.033
    assert report(5, "leader election", ok,
                  f"unique-leader fraction={frac:.4f} over {phases} phases, "
                  f"binomial value={exact:.4f}")


# ----------------------------------------------------------------------------
# 6: self-stabilisation
# ----------------------------------------------------------------------------


def test_acceptance_6_selfstab(report):
    parts, ok = [], True
    for k in (1, 2):
        for recipe in HOSTILE:
            rows = rows_for(f"selfstab-{k}-{recipe}")
            good = sum(r.converged and r.silence_verified for r in rows)
            ok &= good == len(rows)
            worst = max(r.parallel_time for r in rows)
            parts.append(f"k={k} {recipe} {good}/{len(rows)} worst={worst:.0f}")

    n = 1024
    quiet = True
    for k in (1, 2):
        params = SelfStabParams.for_population(n, k)
        proto = SelfStabilising(params, "consistent-greens")
        for trial in range(5):
            rng_pos, rng_init, rng_sched = trial_rngs(SEED, n, trial)
            gt = generate_positions(n, k, "uniform", rng_pos)
            init = proto.initial_configuration(gt, rng_init)
            res = run_trial(proto, gt, init, rng_sched, StopRule(verify_silence=True))
            quiet &= res.converged and res.silence_verified and res.interactions == 0
            state = proto.encode(init, gt)
            i, r = PairStream(rng_sched, n).take(100 * n)
            last, fault, _ = proto.run_block(state, gt, i, r)
            quiet &= last == 0 and fault == 0
    ok &= quiet
    parts.append(f"consistent-greens zero changes={quiet}")
    assert report(6, "self-stabilisation", ok, "; ".join(parts))


# ----------------------------------------------------------------------------
# 7: geometry oracles
# ----------------------------------------------------------------------------


def test_acceptance_7_geometry(report):
    rng = np.random.default_rng(SEED)
    worst_m = worst_s = 0.0
    for k in (1, 2, 3):
        for _ in range(10 ** 4):
            anc, dist, x = forward_instance(rng, k)
            got = multilaterate(list(zip(map(tuple, anc), dist)), k)
            worst_m = max(worst_m, float(np.max(np.abs(np.array(got) - x))))

            q = rng.uniform(-1, 1, (k, k))
            while np.linalg.cond(q) > 1e3:
                q = rng.uniform(-1, 1, (k, k))
            _, frame = subspace_frame(q)
            i = int(rng.integers(k))
            anchors = [((0.0,) * k, float(np.linalg.norm(q[i])))]
            anchors += [(tuple(frame[e]), float(np.linalg.norm(q[i] - q[e]))) for e in range(i)]
            got = position_in_subspace(anchors, i, k)
            worst_s = max(worst_s, float(np.max(np.abs(np.array(got) - frame[i]))))

    mismatches = 0
    for _ in range(10 ** 5):
        gu, gv = rng.uniform(-5, 5, 2)
        du, dv = rng.uniform(0.01, 3, 2)
        su, sv = rng.choice([-1, 1], 2)
        duv = abs((gu + su * du) - (gv + sv * dv))
        mismatches += resolve_greenish_pair(gu, du, gv, dv, duv) != \
            brute_force_pair(gu, du, gv, dv, duv, 1e-9)
    # one shared green contact, and equal distances on the same side
    named = [(0, 1, 0, 2, 1), (0, 2, 5, 2, 5)]
    named_ok = all(resolve_greenish_pair(*c) == brute_force_pair(*c, 1e-9) == (None, None)
                   for c in named)

    ok = worst_m <= 1e-8 and worst_s <= 1e-8 and mismatches == 0 and named_ok
    assert report(7, "geometry oracles", ok,
                  f"multilaterate max error={worst_m:.1e}; subspace max error={worst_s:.1e}; "
                  f"greenish mismatches={mismatches}/100000; named cases={named_ok}")


# ----------------------------------------------------------------------------
# 8: determinism
# ----------------------------------------------------------------------------


def test_acceptance_8_determinism(report, tmp_path):
    differing = []
    for name, cfg in CONFIGS.items():
        n0 = min(cfg.n_grid)
        small = dataclasses.replace(cfg, n_grid=[n0], trials=min(cfg.trials, 5))
        again = write_csv(run_experiment(small))
        if name in _RUNS:
            first = write_csv([r for r in _RUNS[name] if r.n == n0 and r.trial < small.trials])
        else:
            first = write_csv(run_experiment(small))
        if first != again:
            differing.append(name)

    cfg_file = tmp_path / "acc.cfg"
    cfg_file.write_text(f"protocol = leaderloc\nk = 2\nn = 1024\ntrials = 3\nseed = {SEED}\n")
    outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
    codes = [main(["--config", str(cfg_file), "--out", str(o)]) for o in outs]
    cli_same = codes == [0, 0] and outs[0].read_bytes() == outs[1].read_bytes()

    ok = not differing and cli_same
    assert report(8, "determinism", ok,
                  f"{len(CONFIGS)} configurations rerun, differing={differing or 'none'}; "
                  f"CLI reruns byte-identical={cli_same}")
