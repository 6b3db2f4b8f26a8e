"""Atomic file writes and the run manifest."""

from __future__ import annotations

import hashlib
import json
import os
import shutil

from .. import __version__
from .config import ExperimentConfig, OutputError

MANIFEST = "manifest.json"
RUN_FORMAT = "algodisc-run"
RUN_VERSION = 1


def write_text(path: str | os.PathLike, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_json(path: str | os.PathLike, doc) -> None:
    write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise OutputError(f"{path} is missing") from None
    except json.JSONDecodeError as e:
        raise OutputError(f"{path} is corrupt ({e})") from None


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()


def prepare_output(out: str, cfg: ExperimentConfig, command: str, resume: bool) -> bool:
    """Create or reopen ``out``; returns True when an earlier run is being resumed.

    A fresh run refuses a non-empty directory.  A resumed run requires a
    manifest written by the same command with the same configuration.
    """
    manifest = os.path.join(out, MANIFEST)
    if os.path.isdir(out) and os.listdir(out):
        if not resume:
            raise OutputError(f"{out} is not empty; pass --resume to continue the run in it")
        doc = read_json(manifest)
        if doc.get("format") != RUN_FORMAT or doc.get("version") != RUN_VERSION:
            raise OutputError(f"{manifest} is not a version-{RUN_VERSION} run manifest")
        if doc.get("command") != command:
            raise OutputError(f"{out} holds a {doc.get('command')!r} run, not {command!r}")
        if doc.get("config_sha256") != config_digest(cfg):
            raise OutputError(f"{out} was produced with a different configuration")
        return True
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create {out}: {e}") from None
    write_text(os.path.join(out, "config.json"), cfg.to_json())
    write_json(manifest, {"format": RUN_FORMAT, "version": RUN_VERSION, "command": command,
                          "config_sha256": config_digest(cfg), "package_version": __version__})
    return False


def replace_dir(tmp: str, final: str) -> None:
    if os.path.exists(final):
        shutil.rmtree(final)
    os.replace(tmp, final)
