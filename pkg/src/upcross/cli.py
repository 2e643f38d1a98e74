"""Command line entry point.

Settings come from, in increasing priority: built-in per-command defaults,
a ``key=value`` config file (``--config``), and flags.  Exit status is 0 when
every check passes, 2 when a check fails and 1 on usage or runtime errors.

Config file keys are the long flag names with dashes or underscores
(``seed``, ``paths``, ``levels``, ``proxy_offset``, ``horizons``, ``eta``,
``delta``, ``m``, ``lambda``, ``threads``, ``out``, ``mode``, ``log_base``)
plus ``budget`` (maximum projected fine steps).  ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import sys

from .exit_law import selftest_exit_law
from .experiments import EXPERIMENTS, ExperimentConfig, ExperimentError, default_threads

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2

COMMAND_DEFAULTS = {
    "sup-rate": dict(paths=200, levels=(2, 3, 4, 5, 6), horizons=(1.0,)),
    "lp-rate": dict(paths=500, levels=(2, 3, 4, 5, 6), horizons=(0.5, 1.0, 2.0, 4.0)),
    "variation": dict(paths=300, levels=(2, 3, 4, 5, 6), horizons=(1.0,)),
    "scaling-test": dict(paths=1000, levels=(5,), horizons=(1.0,)),
    "subadditivity": dict(paths=100, levels=(4,), horizons=(0.5,)),
    "selftest": dict(),
}
EXIT_LAW_SAMPLES = 1_000_000


def parse_int_list(text: str) -> tuple[int, ...]:
    """``"2,3,4"`` or ``"2..6"`` (inclusive) or a mix of both."""
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty list {text!r}")
    return tuple(out)


def parse_float_list(text: str) -> tuple[float, ...]:
    out = tuple(float(p) for p in str(text).replace(" ", "").split(",") if p)
    if not out:
        raise ValueError(f"empty list {text!r}")
    return out


def _opt_float(text):
    return None if str(text).lower() in ("", "none", "e") else float(text)


CONVERTERS = {
    "seed": int, "paths": int, "levels": parse_int_list, "proxy_offset": int,
    "horizons": parse_float_list, "eta": float, "delta": float, "m": int, "lam": float,
    "threads": int, "out": str, "mode": str, "log_base": _opt_float, "budget": float,
}
ALIASES = {"lambda": "lam"}


def read_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            key = ALIASES.get(key, key)
            if key not in CONVERTERS:
                raise ValueError(f"{path}:{n}: unknown key {key!r}")
            out[key] = CONVERTERS[key](value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("experiment settings")
    g.add_argument("--config", help="key=value settings file (flags override it)")
    g.add_argument("--seed", type=int)
    g.add_argument("--paths", type=int, help="number of paths (samples for selftest-exit-law)")
    g.add_argument("--levels", type=parse_int_list, help="coarse levels k, e.g. 2,3,4 or 2..6")
    g.add_argument("--proxy-offset", type=int, help="K_ref - k for the local-time proxy (default 6)")
    g.add_argument("--horizons", type=parse_float_list, help="horizons T, e.g. 0.5,1,2,4")
    g.add_argument("--eta", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--m", type=int, help="variation interval [-2^m, 2^m]")
    g.add_argument("--lambda", dest="lam", type=float, help="scaling factor for scaling-test")
    g.add_argument("--threads", type=int, help="worker threads (default $UPCROSS_THREADS or 1)")
    g.add_argument("--out", help="CSV output path; a .json mirror is written next to it")
    g.add_argument("--mode", choices=("exact", "deterministic-durations"))
    g.add_argument("--log-base", type=_opt_float, help="base of log(2^k) in the normalizer (default e)")

    p = argparse.ArgumentParser(prog="upcross", description="Upcrossing local-time experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("selftest-exit-law", parents=[common], help="exit-time sampler moments and series")
    for name in COMMAND_DEFAULTS:
        sub.add_parser(name, parents=[common])
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = dict(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        values.update(read_config_file(args.config))
    for key in CONVERTERS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "threads" not in values:
        values["threads"] = default_threads()
    return ExperimentConfig(**values)


def _run_exit_law(args, cfg: ExperimentConfig) -> int:
    n = args.paths if args.paths is not None else EXIT_LAW_SAMPLES
    rep = selftest_exit_law(n, seed=cfg.seed)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.passed else EXIT_VERDICT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        cfg = resolve_config(args)
        if args.command == "selftest-exit-law":
            return _run_exit_law(args, cfg)
        report = EXPERIMENTS[args.command](cfg)
    except (ExperimentError, ValueError, OSError) as exc:
        print(f"upcross: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if cfg.out:
        try:
            csv_path, json_path = report.write(cfg.out)
        except OSError as exc:
            print(f"upcross: error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    else:
        sys.stdout.write(report.to_csv())
    for line in report.lines():
        print(line, file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
