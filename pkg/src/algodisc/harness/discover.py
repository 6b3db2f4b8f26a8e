"""Discovery runs: self-play, training and A-BPE rounds, resumable from disk.

Layout of the output directory::

    manifest.json, config.json, state.json
    rounds/NNNN/        snapshot after round NNNN (written whole, then renamed)
        vocab.json model.ckpt corpus.txt merges.csv metrics.csv best.json episodes.jsonl
    vocab.json model.ckpt corpus.txt merges.csv metrics.csv best_programs.csv episodes.jsonl

The top-level files mirror the latest snapshot.  ``state.json`` is written
last, so a run killed mid-round resumes from the previous snapshot and
recomputes the round with the same seeds.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import shutil
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..abpe import format_corpus, format_merges, parse_corpus, parse_merges, run_abpe
from ..lang import Vocabulary
from ..model import (METRIC_COLUMNS, NonFiniteLoss, Optimizer, Params, balance_batch, train_step)
from ..qap.domain import LANGUAGES, QapDomain, relative_gap, with_best_known
from ..qap.instance import QapInstance, parse_qaplib, parse_qaplib_solution
from ..quantum import make_quantum_domain
from ..search import Episode, UniformNet, append_episodes, self_play
from ..toy import toy_domain
from .config import ConfigError, DataError, ExperimentConfig, OutputError
from .io import prepare_output, read_json, replace_dir, write_json, write_text

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# domains


def load_qaplib_instance(path: str) -> QapInstance:
    """Read a QAPLIB ``.dat`` file and, if present, the ``.sln`` beside it."""
    name = os.path.splitext(os.path.basename(path))[0]
    try:
        with open(path) as f:
            inst = parse_qaplib(f.read(), name)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    sln = os.path.splitext(path)[0] + ".sln"
    if os.path.exists(sln):
        try:
            with open(sln) as f:
                n, value, _ = parse_qaplib_solution(f.read())
        except (ValueError, IndexError) as e:
            raise DataError(f"{sln}: {e}") from None
        if n != inst.n:
            raise DataError(f"{sln}: solution is for n={n}, instance has n={inst.n}")
        inst = inst.with_optimum(value, "external")
    return inst


def qap_instances(cfg: ExperimentConfig) -> list[QapInstance]:
    """Every instance the configuration names, each with a reference optimum."""
    src = cfg.instances
    if src.qaplib:
        return [with_best_known(load_qaplib_instance(cfg.path(p)), cfg.seed) for p in src.qaplib]
    dom = build_domain(cfg)
    return [dom.instance(n, s) for n in src.sizes for s in src.seeds]


def build_domain(cfg: ExperimentConfig, vocab: Vocabulary | None = None):
    if cfg.domain == "qap":
        vocab = vocab or LANGUAGES[cfg.language]()
        src = cfg.instances
        if src.qaplib:
            insts = [with_best_known(load_qaplib_instance(cfg.path(p)), cfg.seed) for p in src.qaplib]
            return QapDomain(vocab, instances=insts)
        return QapDomain(vocab, tuple(src.sizes), src.generator, tuple(src.seeds))
    if cfg.domain == "grover":
        dom = make_quantum_domain(tuple(cfg.grover.sizes))
        return dom.with_vocab(vocab) if vocab is not None else dom
    dom = toy_domain()
    return dom.with_vocab(vocab) if vocab is not None else dom


# ---------------------------------------------------------------------------
# training


def train_on_episodes(params: Params, episodes: Sequence[Episode], cfg: ExperimentConfig,
                      rng: np.random.Generator, round_index: int = 0) -> tuple[Params, list[dict]]:
    """Momentum SGD on balanced minibatches drawn from the episodes' moves."""
    t = cfg.training
    samples = [s for ep in episodes for s in ep.samples()]
    rows: list[dict] = []
    if not samples or t.steps == 0:
        return params, rows
    opt = Optimizer(lr=t.lr, momentum=t.momentum)
    size = min(t.batch_size, len(samples))
    for step in range(t.steps):
        idx = rng.choice(len(samples), size=size, replace=False)
        batch = balance_batch([samples[i] for i in sorted(idx)], rng)
        try:
            params, m = train_step(params, batch, opt=opt)
        except NonFiniteLoss as e:
            log.warning("round %d step %d: %s", round_index, step, e)
            continue
        rows.append({"round": round_index, "step": step, **m, "lr": t.lr, "batch_size": len(batch)})
    return params, rows


def format_metrics(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, METRIC_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in METRIC_COLUMNS})
    return buf.getvalue()


def parse_metrics(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({"round": int(r["round"]), "step": int(r["step"]),
                    "policy_loss": float(r["policy_loss"]), "value_loss": float(r["value_loss"]),
                    "loss": float(r["loss"]), "lr": float(r["lr"]), "batch_size": int(r["batch_size"])})
    return out


BEST_COLUMNS = ("instance", "n", "loss", "best_known", "gap", "program")


def format_best(best: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BEST_COLUMNS)
    for name in sorted(best):
        b = best[name]
        bk = b["best_known"]
        gap = "" if bk is None else f"{relative_gap(b['loss'], bk):.10g}"
        w.writerow([name, b["n"], f"{b['loss']:.10g}", "" if bk is None else f"{bk:.10g}", gap,
                    " ".join(b["program"])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# the run


@dataclass
class RunState:
    round: int = 0
    vocab: Vocabulary | None = None
    params: Params | None = None
    trained: bool = False
    corpus: list[list[str]] = field(default_factory=list)
    merges: list = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    best: dict = field(default_factory=dict)
    merge_rounds: int = 0


def _seed(cfg: ExperimentConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.seed, spawn_key=key)


def _snapshot(out: str, st: RunState, episodes: Sequence[Episode]) -> None:
    rounds = os.path.join(out, "rounds")
    os.makedirs(rounds, exist_ok=True)
    final = os.path.join(rounds, f"{st.round - 1:04d}")
    tmp = final + ".tmp"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    files = {
        "vocab.json": st.vocab.to_catalog(),
        "corpus.txt": format_corpus(st.corpus),
        "merges.csv": format_merges(st.merges),
        "metrics.csv": format_metrics(st.metrics),
        "best_programs.csv": format_best(st.best),
    }
    for name, text in files.items():
        write_text(os.path.join(tmp, name), text)
    write_json(os.path.join(tmp, "best.json"), st.best)
    write_json(os.path.join(tmp, "run.json"), {"trained": st.trained, "merge_rounds": st.merge_rounds})
    st.params.save(os.path.join(tmp, "model.ckpt"))
    append_episodes(os.path.join(tmp, "episodes.jsonl"), episodes)
    replace_dir(tmp, final)
    # top-level mirrors of the latest snapshot
    for name in (*files, "model.ckpt"):
        shutil.copyfile(os.path.join(final, name), os.path.join(out, name + ".tmp"))
        os.replace(os.path.join(out, name + ".tmp"), os.path.join(out, name))
    _concat_episodes(out, st.round)
    write_json(os.path.join(out, "state.json"), {"completed_rounds": st.round})


def _concat_episodes(out: str, rounds: int) -> None:
    tmp = os.path.join(out, "episodes.jsonl.tmp")
    with open(tmp, "w") as dst:
        for r in range(rounds):
            with open(os.path.join(out, "rounds", f"{r:04d}", "episodes.jsonl")) as src:
                lines = src.read().splitlines(keepends=True)
            dst.writelines(lines if r == 0 else lines[1:])
    os.replace(tmp, os.path.join(out, "episodes.jsonl"))


def _restore(out: str, cfg: ExperimentConfig, language) -> RunState:
    state = read_json(os.path.join(out, "state.json")) if os.path.exists(os.path.join(out, "state.json")) else None
    if state is None:
        return RunState()
    done = state.get("completed_rounds")
    if not isinstance(done, int) or done < 0:
        raise OutputError(f"{out}/state.json is corrupt")
    if done == 0:
        return RunState()
    snap = os.path.join(out, "rounds", f"{done - 1:04d}")
    try:
        with open(os.path.join(snap, "vocab.json")) as f:
            vocab = Vocabulary.from_catalog(language, f.read())
        with open(os.path.join(snap, "corpus.txt")) as f:
            corpus = parse_corpus(f.read(), vocab)
        with open(os.path.join(snap, "merges.csv")) as f:
            merges = parse_merges(f.read())
        with open(os.path.join(snap, "metrics.csv")) as f:
            metrics = parse_metrics(f.read())
        params = Params.load(os.path.join(snap, "model.ckpt"))
    except (OSError, ValueError, KeyError) as e:
        raise OutputError(f"snapshot {snap} cannot be read: {e}") from None
    best = read_json(os.path.join(snap, "best.json"))
    run = read_json(os.path.join(snap, "run.json"))
    return RunState(done, vocab, params, bool(run["trained"]), corpus, merges, metrics, best,
                    int(run["merge_rounds"]))


def run_discover(cfg: ExperimentConfig, out: str, resume: bool = False,
                 stop_after: int | None = None) -> RunState:
    """Alternate self-play, training and A-BPE for ``discover.iterations`` rounds.

    ``stop_after`` ends the process after that many rounds in this call,
    which is how interruption is exercised in tests.
    """
    resumed = prepare_output(out, cfg, "discover", resume)
    domain = build_domain(cfg)
    language = domain.vocab.language
    st = _restore(out, cfg, language) if resumed else RunState()
    if st.vocab is None:
        st.vocab = domain.vocab
        st.params = Params.init(cfg.training.model_config(), len(st.vocab),
                                seed=int(_seed(cfg, 0).generate_state(1)[0]))
    else:
        domain = build_domain(cfg, st.vocab)
    # clear any snapshot left half-written by an interrupted round
    for stale in (os.path.join(out, "rounds", f"{st.round:04d}"), os.path.join(out, "rounds", f"{st.round:04d}.tmp")):
        if os.path.exists(stale):
            shutil.rmtree(stale)
    d = cfg.discover
    done_here = 0
    while st.round < d.iterations:
        if stop_after is not None and done_here >= stop_after:
            break
        r = st.round
        seed = tuple(int(x) for x in _seed(cfg, 1, r).generate_state(2))
        net = st.params if st.trained else UniformNet(seed)
        episodes = self_play(domain, net, cfg.search, d.episodes, seed=seed, corpus=st.corpus)
        for ep in episodes:
            _update_best(st.best, ep, domain)
        rng = np.random.default_rng(_seed(cfg, 2, r))
        st.params, rows = train_on_episodes(st.params, episodes, cfg, rng, r)
        st.metrics.extend(rows)
        st.trained = st.trained or bool(rows)
        if (r + 1) % d.abpe_every == 0:
            vocab, history, _ = run_abpe(st.corpus, st.vocab, d.abpe_threshold, round_index=st.merge_rounds)
            st.merge_rounds += 1
            st.merges.extend(history)
            if history:
                st.vocab = vocab
                st.params = st.params.grow(len(vocab))
                domain = domain.with_vocab(vocab)
            st.corpus = []
        st.round += 1
        _snapshot(out, st, episodes)
        done_here += 1
    return st


def _update_best(best: dict, ep: Episode, domain) -> None:
    name = ep.problem_id or "problem"
    if not np.isfinite(ep.best_loss):
        return
    cur = best.get(name)
    if cur is None or ep.best_loss < cur["loss"]:
        n, bk = _problem_meta(domain, name)
        best[name] = {"n": n, "loss": float(ep.best_loss), "best_known": bk, "program": list(ep.best_program)}


def _problem_meta(domain, name: str):
    if isinstance(domain, QapDomain):
        for inst in list(domain._cache.values()) + list(domain.instances or []):
            if inst.name == name:
                return inst.n, inst.known_optimum
    if name.startswith("grover-n"):
        return int(name.split("-")[1][1:]), 0.0
    return 0, None


def load_run(out: str, cfg: ExperimentConfig) -> RunState:
    """Read the latest snapshot of a finished or interrupted discovery run."""
    return _restore(out, cfg, build_domain(cfg).vocab.language)


__all__ = ["run_discover", "build_domain", "qap_instances", "train_on_episodes", "load_run",
           "load_qaplib_instance", "ConfigError"]
