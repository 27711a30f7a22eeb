"""Line-delimited JSON run logs.

A log is a header line (format version, normalised scenario, rates), one
line per record ordered by (tick, topic priority), and a footer carrying the
record count and a digest of the record lines. Keys are sorted and floats are
written with ``repr`` precision so a log is a deterministic byte stream.
"""

from __future__ import annotations

import enum
import gzip
import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import IFVFError

LOG_VERSION = 1
BASE_RATE = 1000
DIVISORS = {"force": 10, "gripper": 20, "control": 25, "safety": 100, "vision": 3000}
PRIORITY = {"event": 0, "force": 1, "gripper": 2, "vision": 3, "skill": 4, "plan": 4, "control": 5, "safety": 6}


class CorruptLog(IFVFError):
    pass


class VersionMismatch(IFVFError):
    pass


def jsonable(x):
    """Convert numpy scalars/arrays, enums and tuples into plain JSON values."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class LogWriter:
    """Accumulates record lines in memory; `enabled=False` keeps only counters."""

    def __init__(self, header: dict, enabled: bool = True):
        self.enabled = enabled
        self.header = {"kind": "header", "log_version": LOG_VERSION, "base_rate": BASE_RATE,
                       "divisors": dict(DIVISORS), **header}
        self.lines: list = []
        self.counts = {t: 0 for t in PRIORITY}
        self._last = (-1, -1)
        self._hash = hashlib.sha256()

    def record(self, tick: int, topic: str, data: dict) -> None:
        key = (tick, PRIORITY[topic])
        if key < self._last:
            raise CorruptLog(f"record {topic}@{tick} written out of order")
        self._last = key
        self.counts[topic] += 1
        if not self.enabled:
            return
        line = _dumps({"tick": tick, "topic": topic, "data": jsonable(data)})
        self.lines.append(line)
        self._hash.update(line.encode())
        self._hash.update(b"\n")

    def footer(self, ticks: int, status: str) -> dict:
        return {"kind": "footer", "ticks": ticks, "status": status, "records": len(self.lines),
                "counts": {k: v for k, v in self.counts.items() if v}, "digest": self._hash.hexdigest()}

    def text(self, ticks: int, status: str) -> str:
        parts = [_dumps(jsonable(self.header))] + self.lines + [_dumps(self.footer(ticks, status))]
        return "\n".join(parts) + "\n"


class RunLog:
    """Parsed log: header, record dicts and footer."""

    def __init__(self, header: dict, records: list, footer: dict):
        self.header = header
        self.records = records
        self.footer = footer

    def by_topic(self, topic: str):
        return [r for r in self.records if r["topic"] == topic]

    def count(self, topic: str) -> int:
        return sum(1 for r in self.records if r["topic"] == topic)


def parse_log(text: str) -> RunLog:
    lines = text.splitlines()
    if not lines:
        raise CorruptLog("empty log")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptLog(f"unreadable header: {exc.msg}") from None
    if header.get("kind") != "header":
        raise CorruptLog("first line is not a header")
    if header.get("log_version") != LOG_VERSION:
        raise VersionMismatch(f"log version {header.get('log_version')} != {LOG_VERSION}")
    if len(lines) < 2:
        raise CorruptLog("log has no footer (truncated)")
    try:
        footer = json.loads(lines[-1])
    except json.JSONDecodeError:
        raise CorruptLog("log has no footer (truncated)") from None
    if footer.get("kind") != "footer":
        raise CorruptLog("log has no footer (truncated)")
    body = lines[1:-1]
    if footer.get("records") != len(body):
        raise CorruptLog(f"footer announces {footer.get('records')} records, found {len(body)}")
    h = hashlib.sha256()
    records = []
    last = (-1, -1)
    for i, line in enumerate(body, start=2):
        h.update(line.encode())
        h.update(b"\n")
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise CorruptLog(f"line {i} is not valid JSON") from None
        if rec.get("topic") not in PRIORITY or not isinstance(rec.get("tick"), int):
            raise CorruptLog(f"line {i} is not a record")
        key = (rec["tick"], PRIORITY[rec["topic"]])
        if key < last:
            raise CorruptLog(f"line {i} out of order")
        last = key
        records.append(rec)
    if h.hexdigest() != footer.get("digest"):
        raise CorruptLog("record digest does not match footer")
    return RunLog(header, records, footer)


def read_log_text(path) -> str:
    p = Path(path)
    if p.suffix == ".gz":
        with gzip.open(p, "rt") as fh:
            return fh.read()
    return p.read_text()


def write_log_text(path, text: str) -> None:
    p = Path(path)
    if p.suffix == ".gz":
        # mtime=0 keeps the compressed bytes reproducible
        with open(p, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
            fh.write(text.encode())
    else:
        p.write_text(text)
