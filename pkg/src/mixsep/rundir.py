"""Run directories: config snapshot, checkpoints, JSON-lines metrics and provenance.

Nothing written here carries a wall-clock value, so two runs with the same
config and seed leave byte-identical files behind.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ParamStore, save_checkpoint
from .pipeline import RunConfig, format_config, load_config


def _plain(obj):
    """JSON fallback for numpy scalars and arrays."""
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_plain)


class RunDir:
    def __init__(self, path, cfg: RunConfig | None = None):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            self.write_config(cfg)

    @property
    def config_path(self) -> Path:
        return self.path / "config.txt"

    def write_config(self, cfg: RunConfig) -> None:
        self.config_path.write_text(format_config(cfg))

    def read_config(self) -> RunConfig:
        return load_config(self.config_path)

    def checkpoint_path(self, tag) -> Path:
        return self.path / f"ckpt-{tag}.bin"

    def save(self, params: ParamStore, tag) -> Path:
        path = self.checkpoint_path(tag)
        save_checkpoint(path, params)
        return path

    def reset(self, *names: str) -> None:
        """Truncate log files so a rerun does not append to an earlier one."""
        for name in names:
            (self.path / name).write_text("")

    def append(self, name: str, record: dict) -> None:
        with open(self.path / name, "a") as fh:
            fh.write(dumps(record) + "\n")

    def write_json(self, name: str, obj) -> Path:
        path = self.path / name
        path.write_text(dumps(obj) + "\n")
        return path


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
