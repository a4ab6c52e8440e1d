"""Command-line entry point: ``spatialpop --protocol kcontact --n 1024,2048 ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (PROTOCOLS, ConfigError, ExperimentConfig, InsufficientData, aborted,
                      fit_scaling, polylog_exponent, run_experiment, summarise, write_csv)

# flag name -> (config field, converter)
_FIELDS = {
    "protocol": ("protocol", str),
    "n": ("n_grid", None),
    "k": ("k", int),
    "k_contact": ("k_contact", int),
    "trials": ("trials", int),
    "seed": ("base_seed", int),
    "tol": ("tol", float),
    "budget_mult": ("budget_multiplier", float),
    "buffer_d": ("D", int),
    "deadline_c": ("C_d", float),
    "recipe": ("recipe", str),
    "positions": ("positions_source", str),
    "out": ("output", str),
    "silence_max_n": ("silence_max_n", int),
}


def _parse_ns(values) -> list[int]:
    out = []
    for v in values:
        for part in str(v).split(","):
            part = part.strip()
            if part:
                try:
                    out.append(int(part))
                except ValueError:
                    raise ConfigError(f"bad population size {part!r}") from None
    return out


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are flag names."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spatialpop",
                                 description="Run spatial population protocol experiments.")
    ap.add_argument("--config", help="key=value file; command-line flags override it")
    ap.add_argument("--protocol", choices=PROTOCOLS)
    ap.add_argument("--n", action="append", help="population size(s); repeat or comma-separate")
    ap.add_argument("--k", type=int, help="dimension (default 1)")
    ap.add_argument("--k-contact", type=int, help="k-contact epidemic threshold (default 1)")
    ap.add_argument("--trials", type=int, help="trials per population size (default 1)")
    ap.add_argument("--seed", type=int, help="base seed (default 0)")
    ap.add_argument("--tol", type=float, help="geometric tolerance (default 1e-9)")
    ap.add_argument("--budget-mult", type=float,
                    help="budget in multiples of the theoretical bound (default 64)")
    ap.add_argument("--buffer-d", type=int, help="self-stabilisation buffer constant D (default 3)")
    ap.add_argument("--deadline-c", type=float, help="deadline constant C_d (default 16)")
    ap.add_argument("--recipe", help="selfstab adversarial recipe or vector label recipe")
    ap.add_argument("--positions", help="'uniform' or a positions file")
    ap.add_argument("--out", help="CSV path (default stdout)")
    ap.add_argument("--silence-max-n", type=int,
                    help="largest n for which silence is verified (default 16384)")
    ap.add_argument("--fit", type=float, metavar="TARGET",
                    help="fit a scaling law and compare against TARGET")
    ap.add_argument("--fit-tol", type=float, default=0.1, help="tolerance for --fit (default 0.1)")
    ap.add_argument("--summary", action="store_true", help="print per-n medians to stderr")
    return ap


def config_from_args(args) -> ExperimentConfig:
    raw = read_config_file(args.config) if args.config else {}
    for key in _FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if "protocol" not in raw:
        raise ConfigError("--protocol is required")
    if "n" not in raw:
        raise ConfigError("--n is required")
    kwargs = {}
    for key, val in raw.items():
        name, conv = _FIELDS[key]
        if key == "n":
            kwargs[name] = _parse_ns(val if isinstance(val, list) else [val])
            continue
        try:
            kwargs[name] = conv(val)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {val!r}") from None
    return ExperimentConfig(**kwargs).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        rows = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    text = write_csv(rows, cfg.output)
    if cfg.output is None:
        sys.stdout.write(text)
    if args.summary:
        print(summarise(rows), file=sys.stderr)
    if args.fit is not None:
        model = "log" if cfg.protocol in ("vector", "selfstab") else "power"
        try:
            rep = fit_scaling(rows, model, polylog_exponent(cfg), args.fit, args.fit_tol)
            print(rep.summary(), file=sys.stderr)
        except InsufficientData as exc:
            print(f"fit skipped: {exc}", file=sys.stderr)
    return 3 if aborted(rows) else 0


if __name__ == "__main__":
    sys.exit(main())
