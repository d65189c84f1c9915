"""Command-line entry point.

Exit codes: 0 success, 1 operational or input error, 2 when ``analyze``
emitted at least one Anomaly verdict.
"""

from __future__ import annotations

import argparse
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import tomli_w

from . import __version__
from .calibration import CalibrationError, PairedDeltaTable, calibrate_all, fragment_toml
from .config import ConfigError, load_config
from .evidence import EvidenceError, load_evidence_file
from .fixtures import KINDS, generate, record_judgements
from .intent import AXES, estimate_axis_constants, presquash_corpus
from .pipeline import SessionReport, class_table_rows, run_session, write_reports
from .providers import ProviderError
from .telemetry import SessionLoadError, load_session

log = logging.getLogger("ibalign")

EXIT_OK, EXIT_ERROR, EXIT_ANOMALY = 0, 1, 2


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def cmd_validate(args) -> int:
    try:
        pack = load_evidence_file(args.evidence)
    except OSError as exc:
        return _fail(f"{args.evidence}: {exc.strerror}")
    except EvidenceError as exc:
        for v in exc.violations:
            print(v)
        return EXIT_ERROR
    print(f"ok: {len(pack.components)} components")
    return EXIT_OK


def _print_summary(report: SessionReport) -> None:
    print(f"session {report.session}: {report.totals['steps']} steps")
    width = max([len(k) for k in report.classes] + [5])
    print(f"  {'class':<{width}}  Authorised  Anomaly  Uncertain")
    for name, a, b, c in class_table_rows(report.classes):
        print(f"  {name:<{width}}  {a:>10}  {b:>7}  {c:>9}")
    if report.degraded_steps:
        print(f"  judge fell back on steps {report.degraded_steps}")


def cmd_analyze(args) -> int:
    overrides = {"provider.kind": args.provider, "fusion.gamma": args.gamma, "fusion.theta": args.theta}
    try:
        config = load_config(args.config, overrides=overrides)
    except ConfigError as exc:
        return _fail(str(exc))

    sessions = [Path(s) for s in args.session]
    out = Path(args.out)
    names = [s.name for s in sessions]
    if len(set(names)) != len(names):
        return _fail("session directories must have distinct names when analysed together")

    def one(path: Path) -> SessionReport:
        bundle = load_session(path)
        report = run_session(bundle, config)
        write_reports(report, out if len(sessions) == 1 else out / path.name)
        return report

    try:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            reports = list(pool.map(one, sessions))
    except (SessionLoadError, ProviderError, ConfigError, OSError) as exc:
        return _fail(str(exc))
    for report in reports:
        _print_summary(report)
    return EXIT_ANOMALY if any(r.anomalies for r in reports) else EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        config = load_config(args.config)
        table = PairedDeltaTable.from_csv(args.table, args.roles)
        fragment, results = calibrate_all(table, config.data["calibration"], w_b=config.h.w_b)
    except (ConfigError, CalibrationError, OSError, ValueError) as exc:
        return _fail(str(exc))
    for res in results:
        for w in res.warnings:
            log.warning("%s channel: %s", res.channel, w)
    text = fragment_toml(fragment, results)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_constants(args) -> int:
    try:
        prior = load_config(args.config).prior
    except ConfigError as exc:
        return _fail(str(exc))
    root = Path(args.corpus)
    files = [root]
    if root.is_dir():
        files = sorted(root.rglob("evidence.json")) or sorted(root.rglob("*.json"))
    packs = []
    for f in files:
        try:
            packs.append(load_evidence_file(f))
        except (EvidenceError, OSError) as exc:
            log.warning("skipping %s: %s", f, exc)
    if not packs:
        return _fail(f"no valid evidence packs under {root}")
    sums = presquash_corpus(packs, prior)
    try:
        consts = estimate_axis_constants({a: [s[j] for s in sums] for j, a in enumerate(AXES)})
    except ValueError as exc:
        return _fail(str(exc))
    text = tomli_w.dumps({"constants": consts.to_mapping()})
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} from {len(packs)} packs")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    seed = args.seed
    if seed is None:
        seed = random.SystemRandom().randrange(2 ** 31)
        log.warning("no --seed given; using seed %d", seed)
    try:
        root = generate(args.kind, args.out, seed=seed, steps=args.steps)
        config = load_config(args.config, overrides={"provider.kind": "builtin"})
        record_judgements(run_session(load_session(root), config), root)
    except (ValueError, OSError, SessionLoadError) as exc:
        return _fail(str(exc))
    print(f"wrote {args.kind} fixture ({args.steps} steps, seed {seed}) to {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ibalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check one evidence JSON file")
    s.add_argument("evidence")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("analyze", help="score session bundles and write reports")
    s.add_argument("--session", action="append", required=True, help="session directory (repeatable)")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--provider", choices=("builtin", "remote", "replay"))
    s.add_argument("--gamma", type=float)
    s.add_argument("--theta", type=float)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("calibrate", help="derive channel weights from a paired-delta table")
    s.add_argument("--table", required=True)
    s.add_argument("--roles", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("constants", help="estimate axis caps and scales from evidence packs")
    s.add_argument("--corpus", required=True, help="evidence file, or a directory searched for evidence.json (else any *.json)")
    s.add_argument("--out")
    s.add_argument("--config")
    s.set_defaults(func=cmd_constants)

    s = sub.add_parser("gen-fixture", help="write a synthetic session bundle")
    s.add_argument("kind", choices=KINDS)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, default=60)
    s.add_argument("--config")
    s.set_defaults(func=cmd_gen_fixture)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
