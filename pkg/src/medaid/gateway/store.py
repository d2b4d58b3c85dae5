"""File-backed session persistence.

One JSON document per session id; writes go through a temp file and an atomic
rename, so a reader (or a crash) never observes a partial snapshot.  A per-id
lease serializes writers: message posts for one session are processed in
arrival order.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from contextlib import contextmanager
from pathlib import Path

from ..errors import StoreConflict, StoreNotFound

_SAFE_ID = re.compile(r"^[A-Za-z0-9_-]+$")


class SessionStore:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry = threading.Lock()

    def _path(self, session_id: str) -> Path:
        if not _SAFE_ID.match(session_id):
            raise StoreNotFound(f"no session {session_id!r}")
        return self.directory / f"{session_id}.json"

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry:
            lock = self._locks.get(session_id)
            if lock is None:
                lock = self._locks[session_id] = threading.Lock()
            return lock

    @contextmanager
    def lease(self, session_id: str, wait: bool = True):
        """Exclusive writer lease on one session id."""
        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=wait):
            raise StoreConflict(f"session {session_id!r} already has a writer")
        try:
            yield
        finally:
            lock.release()

    def put(self, snapshot: dict) -> None:
        session_id = snapshot["id"]
        path = self._path(session_id)
        fd, tmp = tempfile.mkstemp(prefix=f".{session_id}.", dir=self.directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(snapshot, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get(self, session_id: str) -> dict:
        path = self._path(session_id)
        if not path.exists():
            raise StoreNotFound(f"no session {session_id!r}")
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def list_ids(self) -> list[str]:
        """All persisted ids, most recently updated last."""
        entries = []
        for path in self.directory.glob("*.json"):
            try:
                with open(path, encoding="utf-8") as fh:
                    snapshot = json.load(fh)
            except (json.JSONDecodeError, OSError):
                continue
            entries.append((snapshot.get("updated_at", 0.0), snapshot.get("id", path.stem)))
        return [session_id for _, session_id in sorted(entries)]
