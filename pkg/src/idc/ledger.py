"""Append-only, hash-chained decision ledger stored as JSON Lines.

Each line is the canonical serialization of one DecisionRecord including its
hash.  Verification needs nothing but this module's reader and SHA-256; it
does not import the runtime or the policy engine.
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Union

from idc.core import (
    GENESIS_HASH,
    DecisionRecord,
    RecordTemplate,
    SerializationError,
    deserialize,
)

LEDGER_SUFFIX = ".idledger"

Source = Union[str, Path, bytes, Iterable[DecisionRecord]]


class LedgerError(Exception):
    pass


class LedgerIOError(LedgerError):
    """Persisting a record failed; the in-flight intent must not be realized."""


class MalformedLine(LedgerError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_seq: Optional[int] = None
    reason: Optional[str] = None
    records: int = 0

    def __str__(self) -> str:
        if self.ok:
            return f"OK: {self.records} records, chain intact"
        return f"TAMPERED: first bad record seq={self.first_bad_seq} ({self.reason})"


def _now_us() -> int:
    return time.time_ns() // 1000


class Ledger:
    """Single-writer ledger, in memory (``path=None``) or backed by a file.

    ``durability="durable"`` flushes and fsyncs after every append;
    ``"fast"`` leaves buffering to the OS until ``flush``/``close``.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        *,
        durability: str = "durable",
        clock: Callable[[], int] = _now_us,
    ) -> None:
        if durability not in ("durable", "fast"):
            raise ValueError(f"unknown durability mode {durability!r}")
        self.path = Path(path) if path is not None else None
        self.durability = durability
        self.clock = clock
        self.records: list[DecisionRecord] = []
        self.head_hash = GENESIS_HASH
        self._fh = None
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size > 0:
                report = verify_chain(self.path)
                if not report.ok:
                    raise LedgerError(f"refusing to append to a broken ledger: {report}")
                self.records = list(read_stream(self.path, verify=False))
                if self.records:
                    self.head_hash = self.records[-1].hash
            self._fh = open(self.path, "ab")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[DecisionRecord]:
        return iter(self.records)

    def append(self, template: RecordTemplate, timestamp: int | None = None) -> DecisionRecord:
        record = DecisionRecord(
            seq=len(self.records),
            timestamp=self.clock() if timestamp is None else timestamp,
            intent=template.intent,
            decision=template.decision,
            applied_rules=tuple(template.applied_rules),
            policy_id=template.policy_id,
            context=template.context,
            prev_hash=self.head_hash,
            kind=template.kind,
        )
        try:
            sealed = dataclasses.replace(record, hash=record.compute_hash())
            line = sealed.line() + b"\n"
        except SerializationError as exc:
            raise LedgerIOError(f"record cannot be serialized: {exc}") from exc
        if self._fh is not None:
            try:
                self._fh.write(line)
                if self.durability == "durable":
                    self._fh.flush()
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise LedgerIOError(f"ledger write failed: {exc}") from exc
        self.records.append(sealed)
        self.head_hash = sealed.hash
        return sealed

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None

    def __enter__(self) -> Ledger:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def to_bytes(self) -> bytes:
        return b"".join(r.line() + b"\n" for r in self.records)


def _lines(source: Source) -> Iterator[tuple[int, bytes | DecisionRecord]]:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
        source = data
    if isinstance(source, bytes):
        if not source.strip(b"\n"):
            return  # empty, or newlines only
        lines = source.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        for n, line in enumerate(lines, start=1):
            yield n, line
    else:
        for n, rec in enumerate(source, start=1):
            yield n, rec


def _parse_line(line_no: int, line: bytes) -> DecisionRecord:
    try:
        record = DecisionRecord.from_value(deserialize(line))
    except SerializationError as exc:
        raise MalformedLine(line_no, str(exc)) from None
    if record.line() != line:
        raise MalformedLine(line_no, "line is not in canonical form")
    return record


def verify_chain(source: Source) -> VerificationReport:
    """Recompute every hash and link from genesis; report the first failure."""
    prev = GENESIS_HASH
    count = 0
    items = list(_lines(source))
    for index, (line_no, item) in enumerate(items):
        if isinstance(item, DecisionRecord):
            record = item
        else:
            try:
                record = _parse_line(line_no, item)
            except MalformedLine:
                return VerificationReport(False, index, "malformed-line", count)
        if record.seq != index:
            return VerificationReport(False, index, "seq-gap", count)
        if record.prev_hash != prev:
            return VerificationReport(False, index, "prev-link-mismatch", count)
        if record.compute_hash() != record.hash:
            return VerificationReport(False, index, "hash-mismatch", count)
        prev = record.hash
        count += 1
    return VerificationReport(True, None, None, count)


def read_stream(source: Source, *, verify: bool = True) -> Iterator[DecisionRecord]:
    """Yield records in seq order; by default refuse a ledger that fails verification."""
    if not isinstance(source, (str, Path, bytes)):
        source = list(source)
    if verify:
        report = verify_chain(source)
        if not report.ok:
            raise LedgerError(f"ledger failed verification: {report}")
    for line_no, item in _lines(source):
        if isinstance(item, DecisionRecord):
            yield item
        else:
            yield _parse_line(line_no, item)
