"""The ``algodisc`` command line.

Every subcommand reads one configuration file and writes into one output
directory.  Exit codes: 0 success, 2 configuration, 3 input data, 4 output
directory, 5 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from ..abpe import count_pairs, parse_corpus, parse_merges
from ..lang import Vocabulary
from .benchmark import run_benchmark
from .config import ConfigError, DataError, ExperimentConfig, OutputError, default_config, load_config
from .discover import build_domain, qap_instances, run_discover
from .grover import run_grover
from .io import prepare_output, write_json, write_text
from .report import emit_report, format_rows, parse_rows
from .schedule import format_comparison, format_traces, run_schedule_search

log = logging.getLogger("algodisc")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_OUTPUT, EXIT_NUMERIC = 0, 1, 2, 3, 4, 5


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out(args) -> str:
    if not args.out:
        raise ConfigError("--out is required")
    return args.out


def cmd_discover(args) -> dict:
    cfg = _config(args)
    st = run_discover(cfg, _out(args), resume=args.resume)
    return {"rounds": st.round, "vocabulary": len(st.vocab), "merges": len(st.merges), "problems": len(st.best)}


def cmd_benchmark(args) -> dict:
    cfg, out = _config(args), _out(args)
    prepare_output(out, cfg, "benchmark", args.resume)
    rows = run_benchmark(cfg)
    write_text(os.path.join(out, "results.csv"), format_rows(rows))
    for name, text in emit_report(rows).items():
        write_text(os.path.join(out, name), text)
    return {"rows": len(rows)}


def cmd_schedule_search(args) -> dict:
    cfg, out = _config(args), _out(args)
    prepare_output(out, cfg, "schedule-search", args.resume)
    results = run_schedule_search(cfg, qap_instances(cfg))
    write_text(os.path.join(out, "schedules.csv"), format_comparison(results))
    write_text(os.path.join(out, "gamma_traces.csv"), format_traces(results))
    better = sum(r.final("searched") < r.final("default") for r in results)
    no_worse = sum(r.final("searched") <= r.final("default") for r in results)
    return {"instances": len(results), "no_worse_than_default": no_worse, "better_than_default": better}


def cmd_grover(args) -> dict:
    cfg, out = _config(args), _out(args)
    prepare_output(out, cfg, "grover", args.resume)
    summary = run_grover(cfg, out, resume=args.resume)
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


def cmd_report(args) -> dict:
    cfg, out = _config(args), _out(args)
    if cfg.report.rows is None:
        raise ConfigError("report.rows must name a results CSV")
    path = cfg.path(cfg.report.rows)
    try:
        with open(path) as f:
            rows = parse_rows(f.read())
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    prepare_output(out, cfg, "report", args.resume)
    for name, text in emit_report(rows).items():
        write_text(os.path.join(out, name), text)
    return {"rows": len(rows)}


def cmd_abpe_inspect(args) -> dict:
    run = args.run or args.out
    if not run:
        raise ConfigError("give the discovery run directory to inspect")
    cfg_path = os.path.join(run, "config.json")
    cfg = load_config(args.config or cfg_path)
    language = build_domain(cfg).vocab.language
    try:
        with open(os.path.join(run, "vocab.json")) as f:
            vocab = Vocabulary.from_catalog(language, f.read())
        with open(os.path.join(run, "merges.csv")) as f:
            merges = parse_merges(f.read())
        with open(os.path.join(run, "corpus.txt")) as f:
            corpus = parse_corpus(f.read(), vocab)
    except FileNotFoundError as e:
        raise DataError(f"{run} is not a discovery run: {e.filename} is missing") from None
    except (ValueError, KeyError) as e:
        raise DataError(f"{run}: {e}") from None
    print("round  count  cost  width  token")
    for m in merges:
        tok = vocab[m.new_id]
        print(f"{m.round:5d}  {m.count:5d}  {tok.cost:4d}  {tok.width:5d}  {m.new_id}")
    pairs = count_pairs(corpus, vocab).most_common(args.top)
    if pairs:
        print(f"\nmost frequent fusable pairs in the current corpus ({len(corpus)} programs):")
        for (a, b), c in pairs:
            print(f"{c:7d}  {a}  {b}")
    return {"vocabulary": len(vocab), "merges": len(merges), "corpus": len(corpus)}


COMMANDS = {
    "discover": (cmd_discover, "alternate self-play, training and A-BPE rounds"),
    "benchmark": (cmd_benchmark, "compare discovered programs with classical baselines"),
    "schedule-search": (cmd_schedule_search, "search Frank-Wolfe step-size schedules"),
    "grover": (cmd_grover, "verify Grover circuits and discover gate sequences"),
    "abpe-inspect": (cmd_abpe_inspect, "show the merge history of a discovery run"),
    "report": (cmd_report, "summarize a benchmark results CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="algodisc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", metavar="PATH", help="experiment configuration (JSON)")
        s.add_argument("--seed", type=int, metavar="N", help="override the configuration's seed")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--resume", action="store_true", help="continue the run already in --out")
        if name == "abpe-inspect":
            s.add_argument("run", nargs="?", help="discovery run directory (defaults to --out)")
            s.add_argument("--top", type=int, default=10, help="candidate pairs to list")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        summary = handler(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OutputError as e:
        print(f"output error: {e}", file=sys.stderr)
        return EXIT_OUTPUT
    except FloatingPointError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as e:  # noqa: BLE001 - the last line of defence reports and exits
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_OTHER
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
