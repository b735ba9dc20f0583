"""Plot-ready output tables and the run manifest.

Every table is a CSV preceded by `# key=value` comment lines that declare the
cost unit and grid parameters. Floats use one fixed format, and nothing
time-dependent is written, so reruns with the same inputs are byte-identical.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Mapping

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
MANIFEST_NAME = "manifest.json"


class OutputWriter:
    def __init__(self, out_dir: Path, command: str, header: Mapping[str, Any]) -> None:
        self.out_dir = out_dir
        self.command = command
        self.header = dict(header)
        self.files: list[dict[str, Any]] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def _header_lines(self) -> str:
        lines = [f"# command={self.command}"]
        lines += [f"# {key}={_fmt(value)}" for key, value in self.header.items()]
        return "\n".join(lines) + "\n"

    def table(self, name: str, frame: pd.DataFrame, description: str) -> Path:
        path = self.out_dir / name
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write(self._header_lines())
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.files.append({"path": name, "kind": "table", "rows": int(len(frame)), "description": description})
        logger.info("Wrote %s (%s rows)", path, len(frame))
        return path

    def register(self, name: str, description: str) -> None:
        """Record a file written by someone else (a dataset or policy file)."""
        self.files.append({"path": name, "kind": "file", "description": description})

    def write_manifest(self) -> Path:
        path = self.out_dir / MANIFEST_NAME
        payload = {
            "command": self.command,
            "parameters": {k: _fmt(v) for k, v in self.header.items()},
            "files": self.files,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)
