"""
Line-delimited JSON trace of a stochastic EM run.
The first line is a header record; each following line is one completed iteration.
Lines are flushed as they are written so an aborted run leaves a readable partial trace.
"""

import json
import logging
from typing import Dict, Optional

from core.config import SCHEMA_VERSION
from core.errors import TraceFormatError
from core.models import IterationRecord, SemTrace

logger = logging.getLogger(__name__)


class TraceWriter:
    """Appends trace records to a file, one JSON object per line."""

    def __init__(self, path: str, header: Dict):
        self.path = path
        self._file = open(path, "w")
        self._write(header)
        self.records_written = 0

    def _write(self, data: Dict) -> None:
        self._file.write(json.dumps(data, sort_keys=True) + "\n")
        self._file.flush()

    def write(self, record: IterationRecord) -> None:
        self._write(record.to_dict())
        self.records_written += 1

    __call__ = write

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()
            logger.info(f"Wrote {self.records_written} iteration records to {self.path}")

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_trace(path: str) -> SemTrace:
    """Parse a trace file back into a SemTrace (without flow draws)."""
    trace: Optional[SemTrace] = None
    try:
        f = open(path, "r")
    except OSError as e:
        raise TraceFormatError(f"Cannot open trace {path}: {e}") from e
    with f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"invalid JSON ({e.msg})", line_number) from e
            kind = data.get("record") if isinstance(data, dict) else None
            if trace is None:
                if kind != "header":
                    raise TraceFormatError("first record must be the header", line_number)
                if data.get("schema_version") != SCHEMA_VERSION:
                    raise TraceFormatError(f"unsupported schema_version {data.get('schema_version')}", line_number)
                try:
                    trace = SemTrace.from_header(data)
                except KeyError as e:
                    raise TraceFormatError(f"header lacks {e}", line_number) from e
                continue
            if kind != "iteration":
                raise TraceFormatError(f"unexpected record type {kind!r}", line_number)
            try:
                trace.append(IterationRecord.from_dict(data))
            except (KeyError, TypeError, ValueError) as e:
                raise TraceFormatError(f"malformed iteration record: {e}", line_number) from e
    if trace is None:
        raise TraceFormatError(f"Trace {path} is empty")
    logger.info(f"Read {len(trace)} iteration records from {path}")
    return trace
