"""Command line interface.

Batch subcommands (simulate, contexts, train, detect, eval, extract) run the
pipeline in-process on flat files; `serve` boots the HTTP gateway that the
alert console talks to.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .apps import (
    AppContextDatabase,
    AppSource,
    Provenance,
    extract_app,
    format_app_context,
    format_logic,
    merge_contexts,
)
from .core import (
    AegisError,
    Layout,
    load_events,
    load_home,
    save_home,
    write_events,
)
from .engine import load_contexts, stream_to_contexts, write_contexts
from .evaluate import format_table, run_experiment, write_csv
from .markov import DetectorConfig, TransitionModel, classify, train
from .simulate import ThreatId, benchmark_app_db, benchmark_suite

_LAYOUTS = {
    "single": Layout.SINGLE_BEDROOM,
    "single_bedroom": Layout.SINGLE_BEDROOM,
    "double": Layout.DOUBLE_BEDROOM,
    "double_bedroom": Layout.DOUBLE_BEDROOM,
    "duplex": Layout.DUPLEX,
}


def _cmd_extract(args) -> int:
    home = load_home(args.home)
    with open(args.app, "r", encoding="utf-8") as fh:
        source = fh.read()
    name = args.name or os.path.splitext(os.path.basename(args.app))[0]
    pairs = extract_app(AppSource(name, source), home)
    if not pairs:
        print("no trigger-action logic found")
        return 0
    for logic, ctx in pairs:
        print(format_logic(logic))
        print(format_app_context(ctx))
        print()
    if args.db:
        db = (
            AppContextDatabase.load(args.db)
            if os.path.exists(args.db)
            else AppContextDatabase()
        )
        db.insert(name, merge_contexts(pairs), Provenance.USER_SUBMITTED)
        db.save(args.db)
        print(f"stored app context {name!r} in {args.db}")
    return 0


def _cmd_contexts(args) -> int:
    home = load_home(args.home)
    events = load_events(args.events, home)
    arrays = stream_to_contexts(home, events)
    write_contexts(args.out, arrays)
    print(f"{len(arrays)} context arrays -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    arrays = load_contexts(args.contexts)
    cfg = DetectorConfig(tau=args.tau, epsilon_smoothing=args.epsilon)
    model = train(arrays, cfg)
    model.save(args.out)
    print(
        f"trained on {model.trained_snapshots} snapshots: "
        f"{len(model.observed_states)} states, {model.transition_count()} transitions -> {args.out}"
    )
    return 0


def _cmd_detect(args) -> int:
    home = load_home(args.home)
    model = TransitionModel.load(args.model)
    apps = AppContextDatabase.load(args.apps) if args.apps else AppContextDatabase()
    arrays = load_contexts(args.contexts)
    cfg = model.config
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    malicious = 0
    try:
        for prev, nxt in zip(arrays, arrays[1:]):
            verdict = classify(model, cfg, prev, nxt, apps, home)
            if verdict.label.value == "malicious":
                malicious += 1
            rec = {
                "ts": nxt.timestamp,
                "prev": prev.key(),
                "next": nxt.key(),
                "label": verdict.label.value,
                "reason": verdict.reason.value,
                "probability": verdict.probability,
            }
            if verdict.validated_by:
                rec["validated_by"] = verdict.validated_by
            out.write(json.dumps(rec))
            out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(
        f"{len(arrays) - 1} transitions classified, {malicious} malicious",
        file=sys.stderr,
    )
    return 0


def _cmd_simulate(args) -> int:
    layout = _LAYOUTS[args.layout]
    threats = [
        ThreatId(t.strip().upper())
        for t in args.threats.split(",")
        if t.strip() and t.strip().lower() != "none"
    ]
    home, train_trace, test_trace, split_ts = benchmark_suite(
        layout,
        args.users,
        args.seed,
        days=args.days,
        threats=threats,
        injections_per_threat=args.injections,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    save_home(os.path.join(args.out_dir, "home.json"), home)
    write_events(os.path.join(args.out_dir, "train.jsonl"), train_trace.events)
    write_events(os.path.join(args.out_dir, "test.jsonl"), test_trace.events)
    with open(os.path.join(args.out_dir, "labels.jsonl"), "w", encoding="utf-8") as fh:
        for e, label in zip(test_trace.events, test_trace.labels):
            fh.write(
                json.dumps({"ts": e.timestamp, "entity": e.entity_id, "threat": label})
            )
            fh.write("\n")
    benchmark_app_db(home).save(os.path.join(args.out_dir, "contexts.json"))
    print(
        f"home with {home.n_bits} bits; {len(train_trace.events)} train events, "
        f"{len(test_trace.events)} test events (split at {split_ts} ms) -> {args.out_dir}"
    )
    return 0


def _cmd_eval(args) -> int:
    rows = run_experiment(args.suite, args.seed, days=args.days)
    print(format_table(rows))
    if args.out:
        write_csv(args.out, rows)
        print(f"\nreport -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import AegisRuntime, OperationMode, create_app

    home = load_home(args.home)
    model = TransitionModel.load(args.model)
    apps = AppContextDatabase.load(args.apps) if args.apps else AppContextDatabase()
    tokens = None
    if args.tokens:
        with open(args.tokens, "r", encoding="utf-8") as fh:
            # file maps user -> token; the runtime wants token -> user
            tokens = {v: k for k, v in json.load(fh).items()}
    mode = (
        OperationMode.ADAPTIVE_TRAINING
        if args.mode == "adaptive"
        else OperationMode.DETECTION
    )
    runtime = AegisRuntime(
        home,
        model,
        apps,
        mode=mode,
        state_dir=args.state_dir,
        tokens=tokens,
        apps_path=args.apps,
    )
    app = create_app(runtime, console_dir=args.console_dir)
    host, _, port = args.listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aegis", description="Context-aware smart home security toolkit"
    )
    p.add_argument("--version", action="version", version=f"aegis {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    x = sub.add_parser("extract", help="extract trigger-action logic from an app")
    x.add_argument("app", help="app source file")
    x.add_argument("--home", required=True, help="home descriptor JSON")
    x.add_argument("--db", help="app context database to append to")
    x.add_argument("--name", help="app name (defaults to the file stem)")
    x.set_defaults(func=_cmd_extract)

    c = sub.add_parser("contexts", help="fold an event log into context arrays")
    c.add_argument("--home", required=True)
    c.add_argument("--events", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_contexts)

    t = sub.add_parser("train", help="train the transition model")
    t.add_argument("--contexts", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--tau", type=float, default=0.0)
    t.add_argument("--epsilon", type=float, default=0.0)
    t.set_defaults(func=_cmd_train)

    d = sub.add_parser("detect", help="classify context transitions")
    d.add_argument("--model", required=True)
    d.add_argument("--contexts", required=True)
    d.add_argument("--apps")
    d.add_argument("--home", required=True)
    d.add_argument("--out")
    d.set_defaults(func=_cmd_detect)

    s = sub.add_parser("simulate", help="generate a benchmark dataset")
    s.add_argument("--layout", choices=sorted(_LAYOUTS), default="single_bedroom")
    s.add_argument("--users", type=int, default=1)
    s.add_argument("--days", type=int, default=10)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--threats", default="t1,t2,t3,t4,t5")
    s.add_argument("--injections", type=int, default=4)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("eval", help="run an evaluation suite")
    e.add_argument(
        "--suite",
        required=True,
        choices=["layouts", "multiuser", "sensors", "apps", "policies"],
    )
    e.add_argument("--seed", type=int, default=7)
    e.add_argument("--days", type=int, default=10)
    e.add_argument("--out")
    e.set_defaults(func=_cmd_eval)

    v = sub.add_parser("serve", help="run the alert gateway")
    v.add_argument("--home", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--apps")
    v.add_argument("--mode", choices=["detection", "adaptive"], default="detection")
    v.add_argument("--listen", default="127.0.0.1:8000")
    v.add_argument("--state-dir")
    v.add_argument("--tokens", help="JSON file mapping user name -> bearer token")
    v.add_argument("--console-dir", help="static directory for the web console")
    v.set_defaults(func=_cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AegisError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
