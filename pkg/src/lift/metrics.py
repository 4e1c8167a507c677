from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any


@dataclass
class MetricsLog:
    """Ordered ``(step, metric, value)`` records plus free-form run metadata."""

    records: list[tuple[int, str, float]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def record(self, step: int, name: str, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {name!r} at step {step} is not finite: {value}")
        if self.records and step < self.records[-1][0]:
            raise ValueError(f"step {step} precedes the last recorded step {self.records[-1][0]}")
        self.records.append((int(step), name, value))

    def __len__(self) -> int:
        return len(self.records)

    def names(self) -> list[str]:
        return list(dict.fromkeys(name for _, name, _ in self.records))

    def series(self, name: str) -> tuple[list[int], list[float]]:
        steps = [s for s, n, _ in self.records if n == name]
        values = [v for _, n, v in self.records if n == name]
        return steps, values

    def last(self, name: str) -> float:
        _, values = self.series(name)
        if not values:
            raise KeyError(name)
        return values[-1]

    def best(self, name: str) -> float:
        _, values = self.series(name)
        if not values:
            raise KeyError(name)
        return min(values)

    def to_csv(self, fh=None) -> str | None:
        """Write ``step,metric,value`` rows. Values use ``repr`` (shortest exact form)."""
        buf = fh if fh is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "metric", "value"])
        for step, name, value in self.records:
            writer.writerow([step, name, repr(value)])
        return None if fh is not None else buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != ["step", "metric", "value"]:
            raise ValueError(f"unexpected CSV header {header}")
        log = cls()
        for step, name, value in reader:
            log.record(int(step), name, float(value))
        return log
