"""Append-only metrics recording behind every experiment.

Rows are ``(step, iteration, method, model_id, split, metric, value)``,
written to CSV with a fixed header. Float values are serialized with
``repr`` so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import DimensionError

COLUMNS = ("step", "iteration", "method", "model_id", "split", "metric", "value")


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    def append(self, step, iteration, method, model_id, split, metric, value):
        if self.rows and step < self.rows[-1][0]:
            raise DimensionError(
                f"metrics step went backwards: {step} after {self.rows[-1][0]}")
        self.rows.append((int(step), int(iteration), str(method),
                          str(model_id), str(split), str(metric), float(value)))

    def values(self, metric, model_id=None, split=None, method=None):
        """Rows matching a metric name (and optional filters) as (x_step, x_iter, value)."""
        out = []
        for step, it, meth, mid, spl, name, value in self.rows:
            if name != metric:
                continue
            if model_id is not None and mid != str(model_id):
                continue
            if split is not None and spl != split:
                continue
            if method is not None and meth != method:
                continue
            out.append((step, it, value))
        return out

    def metric_names(self):
        return sorted({row[5] for row in self.rows})

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for step, it, method, mid, split, metric, value in self.rows:
                w.writerow([step, it, method, mid, split, metric, repr(value)])

    @classmethod
    def read_csv(cls, path):
        log = cls()
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise DimensionError(f"unexpected metrics header {header}")
            for row in reader:
                step, it, method, mid, split, metric, value = row
                log.rows.append((int(step), int(it), method, mid, split,
                                 metric, float(value)))
        return log
