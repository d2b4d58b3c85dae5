"""Resume-friendly job checkpoints: atomic JSON snapshots of completed work."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Checkpoint:
    completed_ids: set[str] = field(default_factory=set)
    rng_state: dict | None = None
    elapsed_seconds: float = 0.0
    skipped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "completed_ids": sorted(self.completed_ids),
            "rng_state": self.rng_state,
            "elapsed_seconds": self.elapsed_seconds,
            "skipped": self.skipped,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Checkpoint":
        return cls(
            completed_ids=set(raw.get("completed_ids", [])),
            rng_state=raw.get("rng_state"),
            elapsed_seconds=float(raw.get("elapsed_seconds", 0.0)),
            skipped=list(raw.get("skipped", [])),
        )


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Write-temp-then-rename so a crash never leaves a partial checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name, dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(checkpoint.to_dict(), fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint | None:
    path = Path(path)
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return Checkpoint.from_dict(json.load(fh))
