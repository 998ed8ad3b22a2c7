"""Run manifests: every CLI invocation logs enough to reproduce itself.

The determinism block (subcommand, full config, input digests, tool version)
identifies a run: two runs with equal determinism blocks must produce
byte-identical primary outputs. Timestamps live in a separate block so they
never participate in that comparison.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from .errors import DataError

TOOL_NAME = "debcse"
TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot digest input {path}: {exc}") from exc
    return h.hexdigest()


def fresh_run_dir(path) -> Path:
    """Create the run directory; refuse to write into a non-empty one."""
    run_dir = Path(path)
    if run_dir.exists():
        if any(run_dir.iterdir()):
            raise DataError(f"run directory {run_dir} exists and is not empty")
    else:
        run_dir.mkdir(parents=True)
    return run_dir


class ManifestWriter:
    def __init__(self, run_dir: Path, subcommand: str, config: dict, inputs: dict):
        self.run_dir = Path(run_dir)
        self.determinism = {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "subcommand": subcommand,
            "config": config,
            "inputs": {name: file_digest(p) for name, p in inputs.items()},
        }
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def add_output(self, name: str) -> None:
        self.outputs.append(name)

    def write(self) -> Path:
        body = {
            "determinism": self.determinism,
            "outputs": sorted(self.outputs),
            "run": {
                "started": self.started,
                "finished": datetime.now(timezone.utc).isoformat(),
            },
        }
        path = self.run_dir / MANIFEST_NAME
        path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
