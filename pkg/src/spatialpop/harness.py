"""Experiment orchestration: configs, ground truth, trial batches, CSV, fits."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import GroundTruth, StopRule, TrialAborted, run_trial, trial_rngs
from .epidemics import KContactEpidemic
from .geometry import DEFAULT_TOL
from .leader_loc import Improved1D, LeaderLocalisation
from .selfstab import RECIPES, SelfStabilising, SelfStabParams
from .vector_loc import GRID_BITS, VectorLocalisation

PROTOCOLS = ("kcontact", "leaderloc", "improved1d", "selfstab", "vector")
LABEL_RECIPES = ("uniform", "all-equal", "single-outlier")
CSV_HEADER = ("protocol", "n", "k", "seed", "trial", "interactions", "parallel_time",
              "converged", "silence_verified", "extras")


class ConfigError(ValueError):
    """Invalid experiment configuration or unreadable input."""


@dataclass
class ExperimentConfig:
    protocol: str
    n_grid: list
    k: int = 1
    k_contact: int = 1
    trials: int = 1
    base_seed: int = 0
    tol: float = DEFAULT_TOL
    budget_multiplier: float = 64.0
    D: int = 3
    C_d: float = 16.0
    recipe: str | None = None
    positions_source: str = "uniform"
    output: str | None = None
    verify_silence: bool = True
    silence_max_n: int = 1 << 14

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        if not self.n_grid:
            raise ConfigError("n_grid is empty")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.protocol == "improved1d" and self.k != 1:
            raise ConfigError("improved1d runs on the line (k = 1)")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        lo = max(2, self.k + 2)
        for n in self.n_grid:
            if n < lo:
                raise ConfigError(f"population size {n} below the minimum {lo}")
            if self.protocol == "kcontact" and n < self.k_contact:
                raise ConfigError(f"population size {n} below the epidemic threshold {self.k_contact}")
        if self.k_contact < 1:
            raise ConfigError("k_contact must be at least 1")
        if not self.budget_multiplier > 0:
            raise ConfigError("budget multiplier must be positive")
        if self.protocol == "selfstab" and self.recipe not in (None, *RECIPES):
            raise ConfigError(f"unknown recipe {self.recipe!r}; choose from {', '.join(RECIPES)}")
        if self.protocol == "vector" and self.recipe not in (None, *LABEL_RECIPES):
            raise ConfigError(f"unknown label recipe {self.recipe!r}; choose from {', '.join(LABEL_RECIPES)}")
        if self.D < 1 or self.C_d <= 0:
            raise ConfigError("buffer length D and deadline constant C_d must be positive")
        return self


@dataclass
class ResultRow:
    protocol: str
    n: int
    k: int
    seed: int
    trial: int
    interactions: int
    parallel_time: float
    converged: bool
    silence_verified: bool
    extras: dict = field(default_factory=dict)

    def cells(self) -> list:
        extras = ";".join(f"{key}={_fmt(val)}" for key, val in sorted(self.extras.items()))
        return [self.protocol, str(self.n), str(self.k), str(self.seed), str(self.trial),
                str(self.interactions), _fmt(self.parallel_time), _fmt(self.converged),
                _fmt(self.silence_verified), extras]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ----------------------------------------------------------------------------
# ground truth
# ----------------------------------------------------------------------------


def read_positions(path, k: int) -> np.ndarray:
    """One agent per line, ``k`` whitespace-separated decimals."""
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read positions file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != k:
            raise ConfigError(f"{path}:{lineno}: expected {k} coordinates, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(len(rows), k)


def generate_positions(n: int, k: int, source: str, rng: np.random.Generator,
                       leader_index: int | None = None) -> GroundTruth:
    """Uniform points on a fine dyadic grid in ``[0,1)^k``, or a file.

    Uniform draws are redrawn until pairwise distinct.  Affine degeneracy is
    detected lazily by the geometry solvers when the points are used.
    """
    if n < 2:
        raise ConfigError("need at least two agents")
    if source in ("uniform", "uniform-cube"):
        unit = 2.0 ** GRID_BITS
        pos = rng.integers(0, 1 << GRID_BITS, size=(n, k)).astype(np.float64) / unit
        while True:
            _, first = np.unique(pos, axis=0, return_index=True)
            if len(first) == n:
                break
            dup = np.setdiff1d(np.arange(n), first)
            pos[dup] = rng.integers(0, 1 << GRID_BITS, size=(len(dup), k)) / unit
    else:
        pos = read_positions(source, k)
        if len(pos) < n:
            raise ConfigError(f"positions file has {len(pos)} agents, need {n}")
        pos = pos[:n]
    try:
        return GroundTruth(pos, leader_index)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# running
# ----------------------------------------------------------------------------


def make_protocol(cfg: ExperimentConfig, n: int):
    p = cfg.protocol
    if p == "kcontact":
        return KContactEpidemic(cfg.k_contact)
    if p == "leaderloc":
        return LeaderLocalisation(cfg.k, cfg.tol)
    if p == "improved1d":
        return Improved1D(cfg.tol)
    if p == "vector":
        return VectorLocalisation(cfg.k, cfg.tol, cfg.recipe or "uniform")
    params = SelfStabParams.for_population(n, cfg.k, D=cfg.D, deadline_c=cfg.C_d, tol=cfg.tol)
    return SelfStabilising(params, cfg.recipe or "random-fields")


def polylog_exponent(cfg: ExperimentConfig) -> float:
    """Exponent of the log factor in the protocol's time bound."""
    return {"kcontact": 1 / cfg.k_contact, "leaderloc": 1 / (cfg.k + 1),
            "improved1d": 1 / 3}.get(cfg.protocol, 0.0)


def run_one(cfg: ExperimentConfig, n: int, trial: int) -> ResultRow:
    rng_pos, rng_init, rng_sched = trial_rngs(cfg.base_seed, n, trial)
    leader = 0 if cfg.protocol in ("leaderloc", "improved1d") else None
    gt = generate_positions(n, cfg.k, cfg.positions_source, rng_pos, leader)
    protocol = make_protocol(cfg, n)
    init = protocol.initial_configuration(gt, rng_init)
    stop = StopRule(max_parallel_time=cfg.budget_multiplier * protocol.bound(n),
                    verify_silence=cfg.verify_silence and n <= cfg.silence_max_n)
    try:
        res = run_trial(protocol, gt, init, rng_sched, stop)
    except TrialAborted as exc:
        note = str(exc).replace(",", "").replace(";", " ").replace("=", ":")
        return ResultRow(cfg.protocol, n, cfg.k, cfg.base_seed, trial, exc.interaction,
                         exc.interaction / n, False, False, {"aborted": note})
    extras = dict(res.extras)
    if cfg.protocol == "kcontact":
        extras["k_contact"] = cfg.k_contact
    return ResultRow(cfg.protocol, n, cfg.k, cfg.base_seed, trial, res.interactions,
                     res.parallel_time, res.converged, res.silence_verified, extras)


def run_experiment(cfg: ExperimentConfig, progress=None) -> list[ResultRow]:
    """One row per (n, trial), in that order."""
    cfg.validate()
    rows = []
    for n in cfg.n_grid:
        for trial in range(cfg.trials):
            rows.append(run_one(cfg, n, trial))
            if progress:
                progress(rows[-1])
    return rows


def aborted(rows) -> bool:
    return any("aborted" in r.extras for r in rows)


def write_csv(rows, out=None) -> str:
    """Serialise rows; writes to ``out`` (path) when given and returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text


def read_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            extras = dict(kv.split("=", 1) for kv in rec["extras"].split(";") if kv)
            rows.append(ResultRow(rec["protocol"], int(rec["n"]), int(rec["k"]), int(rec["seed"]),
                                  int(rec["trial"]), int(rec["interactions"]),
                                  float(rec["parallel_time"]), rec["converged"] == "true",
                                  rec["silence_verified"] == "true", extras))
    return rows


# ----------------------------------------------------------------------------
# scaling fits
# ----------------------------------------------------------------------------


class InsufficientData(ValueError):
    pass


@dataclass
class ScalingReport:
    model: str
    value: float  # n-exponent (power) or slope in ln n (log)
    stderr: float
    intercept: float
    relative_residual: float
    medians: dict
    q90: dict
    non_converged: dict
    target: float | None = None
    tolerance: float | None = None
    passed: bool = True

    def summary(self) -> str:
        what = "exponent" if self.model == "power" else "slope"
        lines = [f"model={self.model} {what}={self.value:.4f} stderr={self.stderr:.4f} "
                 f"intercept={self.intercept:.4f} rel_residual={self.relative_residual:.4f}"]
        if self.target is not None:
            lines.append(f"target={self.target} tolerance={self.tolerance} "
                         f"{'PASS' if self.passed else 'FAIL'}")
        for n in sorted(self.medians):
            lines.append(f"  n={n} median={self.medians[n]:.4f} q90={self.q90[n]:.4f} "
                         f"non_converged={self.non_converged.get(n, 0)}")
        return "\n".join(lines)


def per_n_times(rows):
    times, failed = defaultdict(list), defaultdict(int)
    for r in rows:
        if r.converged:
            times[r.n].append(r.parallel_time)
        else:
            failed[r.n] += 1
    return times, failed


def fit_scaling(rows, model: str = "power", correction: float = 0.0, target: float | None = None,
                tolerance: float = 0.1, min_ns: int = 4, min_trials: int = 10,
                residual_limit: float = 0.1) -> ScalingReport:
    """Least-squares fit of per-n medians of converged trials.

    ``power``: log(median / (ln n)^correction) against log n.
    ``log``: median against ln n; passes when the relative residual is below
    ``residual_limit`` (and the slope is near ``target`` if one is given).
    """
    if model not in ("power", "log"):
        raise ValueError(f"unknown model {model!r}")
    times, failed = per_n_times(rows)
    ns = sorted(n for n, ts in times.items() if len(ts) >= min_trials)
    if len(ns) < min_ns:
        raise InsufficientData(f"need {min_ns} population sizes with {min_trials} converged "
                               f"trials, have {len(ns)}")
    med = {n: float(np.median(times[n])) for n in ns}
    q90 = {n: float(np.quantile(times[n], 0.9)) for n in ns}
    ln = np.log(np.array(ns, dtype=np.float64))
    y = np.array([med[n] for n in ns])
    if model == "power":
        x, yy = ln, np.log(y / ln ** correction)
    else:
        x, yy = ln, y
    (slope, icept), cov = np.polyfit(x, yy, 1, cov="unscaled")
    resid = yy - (slope * x + icept)
    dof = len(ns) - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    stderr = math.sqrt(max(0.0, sigma2 * cov[0, 0]))
    rel = float(np.max(np.abs(y - (slope * x + icept)) / y)) if model == "log" \
        else float(np.max(np.abs(np.exp(resid) - 1.0)))
    passed = True
    if target is not None:
        passed = abs(slope - target) <= tolerance
    if model == "log":
        passed = passed and rel < residual_limit
    allns = sorted(set(times) | set(failed))
    return ScalingReport(model, float(slope), stderr, float(icept), rel, med, q90,
                         {n: failed.get(n, 0) for n in allns}, target, tolerance, passed)


def summarise(rows) -> str:
    """Per-n medians, 0.9-quantiles and non-converged counts."""
    times, failed = per_n_times(rows)
    out = []
    for n in sorted(set(times) | set(failed)):
        ts = times.get(n, [])
        med = f"{np.median(ts):.4f}" if ts else "nan"
        q = f"{np.quantile(ts, 0.9):.4f}" if ts else "nan"
        out.append(f"n={n} converged={len(ts)} non_converged={failed.get(n, 0)} "
                   f"median={med} q90={q}")
    return "\n".join(out)
