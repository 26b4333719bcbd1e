"""Operator command line for the offline pipeline and the live service.

Verbs: synth, ingest, split, build-memory, evaluate, reflect, serve,
inspect-memory. Failures exit nonzero with a single machine-parsable
``error: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import AppConfig
from .dialogue import (
    chronological_split,
    filter_duplicate_targets,
    load_corpus,
    read_corpus,
    save_corpus,
)
from .errors import MemrecError
from .evaluation import HarnessConfig, compare_reports, run_experiment
from .general_memory import (
    Outcome,
    ReflectionRecord,
    load_guidelines,
    reflect,
    save_guidelines,
    seed_manual_guidelines,
)
from .memory_bank import MemoryStore
from .synth import SynthSpec, generate
from .variants import VARIANT_NAMES, variant_by_name


def _cmd_synth(args) -> int:
    spec = SynthSpec(n_warm=args.warm, n_cold=args.cold, seed=args.seed)
    paths = generate(args.out, spec)
    print(f"wrote {paths['sessions']} {paths['catalog']} {paths['planted']}")
    return 0


def _cmd_ingest(args) -> int:
    corpus = load_corpus(args.sessions, args.catalog)
    if not args.keep_duplicate_targets:
        corpus = filter_duplicate_targets(corpus)
    save_corpus(corpus, args.out)
    n_sessions = sum(len(u.sessions) for u in corpus.users.values())
    print(f"ingested {len(corpus.users)} users, {n_sessions} sessions, "
          f"{len(corpus.catalog)} catalog items -> {args.out}")
    return 0


def _cmd_split(args) -> int:
    corpus = read_corpus(args.corpus)
    corpus = chronological_split(corpus, n_valid=args.n_valid, n_test=args.n_test)
    out = args.out or args.corpus
    save_corpus(corpus, out)
    by_split = {"train": 0, "valid": 0, "test": 0}
    for sp in corpus.split_assignment.values():
        by_split[sp.value] += 1
    print(f"split -> {by_split} ({out})")
    return 0


def _cmd_build_memory(args) -> int:
    from .evaluation import build_banks

    cfg = AppConfig.load(args.config)
    corpus = read_corpus(args.corpus)
    ports = cfg.make_ports()
    banks = build_banks(corpus, ports, cfg.retry_budget)
    store = MemoryStore(args.store)
    for bank in banks.values():
        store.persist(bank)
    total = sum(len(b) for b in banks.values())
    print(f"built {len(banks)} banks, {total} entries -> {args.store}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = AppConfig.load(args.config)
    corpus = read_corpus(args.corpus)
    ports = cfg.make_ports()
    harness = HarnessConfig(
        pipeline=cfg.pipeline_config(),
        reflect_every=cfg.reflect_every,
        candidate_count=cfg.candidate_count,
        per_user_average=cfg.per_user_average,
    )
    variant = variant_by_name(args.variant)
    banks = None
    if args.store and not variant.without_um:
        store = MemoryStore(args.store)
        banks = {uid: store.restore(uid) for uid in store.user_ids()}
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    run_log = report_dir / f"runlog-{variant.name}.jsonl" if args.run_log else None
    report = run_experiment(
        corpus, variant, harness, ports,
        expert=cfg.make_expert(), banks=banks, run_log=run_log,
    )
    (report_dir / f"report-{variant.name}.json").write_text(
        report.to_json(), encoding="utf-8"
    )
    _, csv_text = compare_reports([report])
    (report_dir / f"report-{variant.name}.csv").write_text(csv_text, encoding="utf-8")
    print(report.render_table())
    return 0


def _cmd_reflect(args) -> int:
    cfg = AppConfig.load(args.config)
    llm = cfg.make_llm()
    guidelines = (
        load_guidelines(args.guidelines)
        if args.guidelines and Path(args.guidelines).exists()
        else seed_manual_guidelines()
    )
    n = 0
    with open(args.runlog, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            record = ReflectionRecord(
                trajectory=rec.get("trajectory", ""),
                outcome=Outcome.HIT if rec.get("hit") else Outcome.MISS,
                response="",
            )
            guidelines = reflect(guidelines, record, llm, retry_budget=cfg.retry_budget)
            n += 1
    out = args.guidelines or "guidelines.json"
    save_guidelines(guidelines, out)
    print(f"reflected over {n} trajectories -> {out} (version {guidelines.version})")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = AppConfig.load(args.config)
    host, port = cfg.bind
    uvicorn.run(create_app(cfg), host=host, port=port, log_level="warning")
    return 0


def _cmd_inspect_memory(args) -> int:
    store = MemoryStore(args.store)
    bank = store.restore(args.user_id)
    if not bank.entries:
        print(f"(no memory for {args.user_id})")
        return 0
    width = max(len(e.entity) for e in bank.entries.values())
    for entry in bank.peek():
        print(f"{entry.entity.ljust(width)}  [{entry.last_touched:>4}]  {entry.attitude}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--warm", type=int, default=20)
    p.add_argument("--cold", type=int, default=4)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="load + validate sessions/catalog into a corpus file")
    p.add_argument("sessions")
    p.add_argument("catalog")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-duplicate-targets", action="store_true")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="chronological train/valid/test split per user")
    p.add_argument("corpus")
    p.add_argument("--n-valid", type=int, default=1)
    p.add_argument("--n-test", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("build-memory", help="extract memory banks from Train sessions")
    p.add_argument("corpus")
    p.add_argument("--store", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_build_memory)

    p = sub.add_parser("evaluate", help="run one variant over the Test split")
    p.add_argument("corpus")
    p.add_argument("--variant", choices=VARIANT_NAMES, default="base")
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.add_argument("--store", help="reuse banks persisted by build-memory")
    p.add_argument("--run-log", action="store_true", help="write per-point JSONL run log")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("reflect", help="batch reflection over a run log")
    p.add_argument("--runlog", required=True)
    p.add_argument("--guidelines")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_reflect)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("inspect-memory", help="print one user's memory bank")
    p.add_argument("user_id")
    p.add_argument("--store", required=True)
    p.set_defaults(func=_cmd_inspect_memory)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MemrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
