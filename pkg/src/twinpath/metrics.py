from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable


@dataclass
class TraversalMetrics:
    """Run counters. Agglomeration across jobs and nodes is a field-wise sum."""

    paths_processed: int = 0
    paths_stalled: int = 0
    final_paths: int = 0
    rules_evaluated: int = 0
    rules_triggered: int = 0
    postconditions_skipped: int = 0
    expression_errors: int = 0
    expansion_failures: int = 0
    work_requests_sent: int = 0
    work_requests_received: int = 0
    paths_sent: int = 0
    paths_received: int = 0

    def add(self, other: TraversalMetrics) -> TraversalMetrics:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def to_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> TraversalMetrics:
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown metric fields: {sorted(unknown)}")
        values = {k: int(v) for k, v in doc.items()}
        if any(v < 0 for v in values.values()):
            raise ValueError("metric counters must be non-negative")
        return cls(**values)


def sum_metrics(parts: Iterable[TraversalMetrics]) -> TraversalMetrics:
    total = TraversalMetrics()
    for p in parts:
        total.add(p)
    return total
