"""The serialized writer: dedup, lattice application, append-only log, replay."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..lattice import LatticeStore
from . import protocol
from .protocol import ProtocolError

logger = logging.getLogger(__name__)

DEDUP_WINDOW = 1024


@dataclass
class SeqTracker:
    """Applied sequence numbers for one sensor: a contiguous prefix plus stragglers."""

    upto: int = -1
    pending: set = field(default_factory=set)

    def seen(self, seq: int) -> bool:
        return seq <= self.upto or seq in self.pending

    def add(self, seq: int) -> None:
        self.pending.add(seq)
        while self.upto + 1 in self.pending:
            self.upto += 1
            self.pending.discard(self.upto)


class LogCorruptError(ValueError):
    def __init__(self, lineno: int, detail: str):
        super().__init__(f"ingest log line {lineno}: {detail}")
        self.lineno = lineno


class Ingestor:
    """Applies accepted messages to the lattice and the log, exactly once per (sensor, seq).

    All mutation goes through one instance on one thread (the server's event
    loop), which makes it the single writer.
    """

    def __init__(self, store: LatticeStore | None = None, log_path=None, window: int = DEDUP_WINDOW, fsync: bool = False):
        self.store = store if store is not None else LatticeStore()
        self.window = window
        self.fsync = fsync
        self.seqs: dict[str, SeqTracker] = {}
        self.snippet_ids: dict[str, set] = {}
        self.snippets: list[dict] = []
        self.frames_applied = 0
        self.batches_applied = 0
        self.duplicates = 0
        self._log = None
        self.log_path = Path(log_path) if log_path is not None else None
        if self.log_path is not None:
            self._log = open(self.log_path, "a", encoding="utf-8")

    @classmethod
    def resume(cls, log_path, window: int = DEDUP_WINDOW, fsync: bool = False, strict: bool = True) -> Ingestor:
        """Rebuild state from an existing log, then keep appending to it."""
        ing = cls(window=window, fsync=fsync)
        if Path(log_path).exists():
            replay_into(ing, log_path, strict)
        ing.log_path = Path(log_path)
        ing._log = open(ing.log_path, "a", encoding="utf-8")
        return ing

    def close(self) -> None:
        if self._log is not None:
            self._log.flush()
            if self.fsync:
                os.fsync(self._log.fileno())
            self._log.close()
            self._log = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _append(self, record: dict) -> None:
        if self._log is None:
            return
        self._log.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._log.flush()
        if self.fsync:
            os.fsync(self._log.fileno())

    def apply_batch(self, sensor: str, seq: int, frames, rx: float | None = None) -> bool:
        """Apply a validated batch; returns False when it was already applied."""
        tracker = self.seqs.get(sensor)
        if tracker is None:
            tracker = self.seqs[sensor] = SeqTracker()
        if tracker.seen(seq):
            self.duplicates += 1
            return False
        if seq > tracker.upto + self.window:
            raise ProtocolError(protocol.SEQ, f"seq {seq} beyond dedup window (applied up to {tracker.upto})")
        if frames:
            ts = [f[0] for f in frames]
            lv = [f[1] for f in frames]
            self.store.insert_arrays(sensor, ts, lv)
        self._append({"t": "batch", "sensor": sensor, "seq": seq, "frames": frames,
                      "rx": round(time.time() if rx is None else rx, 3)})
        tracker.add(seq)
        self.frames_applied += len(frames)
        self.batches_applied += 1
        return True

    def apply_snippet(self, msg: dict, rx: float | None = None) -> bool:
        ids = self.snippet_ids.setdefault(msg["sensor"], set())
        if msg["sid"] in ids:
            self.duplicates += 1
            return False
        record = {k: msg[k] for k in ("t", "sensor", "sid", "start", "duration", "digest", "tags")}
        record["rx"] = round(time.time() if rx is None else rx, 3)
        self._append(record)
        ids.add(msg["sid"])
        self.snippets.append(record)
        return True

    def apply_record(self, record: dict) -> None:
        """Re-apply one log record (used by replay; never re-logged)."""
        kind = record.get("t")
        if kind == "batch":
            sensor, seq, frames = protocol.check_batch(record)
            self.apply_batch(sensor, seq, frames, rx=record.get("rx"))
        elif kind == "snippet":
            self.apply_snippet(protocol.check_snippet(record), rx=record.get("rx"))
        else:
            raise ProtocolError(protocol.PROTO, f"unknown record type {kind!r}")


def replay_into(ingestor: Ingestor, log_path, strict: bool = True) -> int:
    """Feed every record of ``log_path`` to ``ingestor``; returns the number of skipped lines.

    ``strict`` halts on the first corrupt line with its line number; otherwise
    corrupt lines are counted and skipped.
    """
    if ingestor._log is not None:
        raise ValueError("replay target must not write a log")
    skipped = 0
    with open(log_path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = protocol.decode(line)
                ingestor.apply_record(record)
            except (ProtocolError, ValueError, KeyError) as e:
                if strict:
                    raise LogCorruptError(lineno, str(e)) from None
                skipped += 1
                logger.warning("skipping corrupt log line %d: %s", lineno, e)
    return skipped


def replay(log_path, strict: bool = True) -> LatticeStore:
    ing = Ingestor()
    replay_into(ing, log_path, strict)
    return ing.store
