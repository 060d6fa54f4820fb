"""
Metrics sinks.

A sink receives scalar records ``{step, phase, key, value}`` and whole
episode records ``{step, phase, return, success, skill_histogram}``.

Usage::

    from choreo.harness.metrics import JsonlMetricsSink

    with JsonlMetricsSink('runs/a/metrics.jsonl') as sink:
        sink.write(step=10, phase='pretrain', key='wm_loss', value=3.2)
"""

import json
import logging
import os
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class MetricsSink:
    """
    Base protocol for metrics outputs.

    The base implementations are no-ops, so it doubles as the null sink.
    """

    def write(self, step: int, phase: str, key: str, value: float) -> None:
        self.write_record({'step': int(step), 'phase': phase, 'key': key, 'value': float(value)})

    def write_many(self, step: int, phase: str, values: Dict[str, float]) -> None:
        for key in sorted(values):
            self.write(step, phase, key, values[key])

    def write_record(self, record: dict) -> None:
        """Deliver one JSON-serialisable record."""

    def close(self) -> None:
        """Release any resources held by this sink."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class JsonlMetricsSink(MetricsSink):
    """
    Append-only JSON-lines file.

    Args:
        path:       File to append to.
        keep_lines: When given, the file is first truncated to its first
                    ``keep_lines`` records (used when resuming a run).
    """

    def __init__(self, path: str, keep_lines: Optional[int] = None):
        self.path = path
        self.lines = 0
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if keep_lines is not None and os.path.exists(path):
            with open(path, encoding='utf-8') as f:
                kept = f.readlines()[:keep_lines]
            with open(path, 'w', encoding='utf-8') as f:
                f.writelines(kept)
            logger.info(f"metrics: resumed {path} at record {len(kept)}")
        elif keep_lines is None and os.path.exists(path):
            os.remove(path)
        if os.path.exists(path):
            with open(path, encoding='utf-8') as f:
                self.lines = sum(1 for _ in f)
        self._file = open(path, 'a', encoding='utf-8')

    def write_record(self, record: dict) -> None:
        self._file.write(json.dumps(record, sort_keys=True) + '\n')
        self.lines += 1

    def flush(self) -> None:
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()


class MemoryMetricsSink(MetricsSink):
    """
    Keeps records in memory when ``capture=True``; only intended for tests.

    Args:
        capture: If True, retain every record in ``records``.
    """

    def __init__(self, capture: bool = False):
        self.capture = capture
        self.records: List[dict] = []
        self.record_count = 0

    def write_record(self, record: dict) -> None:
        self.record_count += 1
        if self.capture:
            self.records.append(record)

    def values(self, key: str) -> List[float]:
        return [r['value'] for r in self.records if r.get('key') == key]
