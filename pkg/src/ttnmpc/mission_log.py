"""Per-tick mission records and their summary metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

COLUMNS = [
    ("tick", ""), ("time", "s"),
    ("x2", "m"), ("y2", "m"), ("theta1", "rad"), ("theta2", "rad"),
    ("v", "m/s"), ("phi", "rad"),
    ("ref_x2", "m"), ("ref_y2", "m"), ("ref_theta1", "rad"), ("ref_theta2", "rad"),
    ("pred_end_x2", "m"), ("pred_end_y2", "m"),
    ("error", ""), ("position_error", "m"), ("path_error", "m"), ("clearance", "m"),
    ("iterations", ""), ("status", ""),
]
# wall-clock measurements live in a separate file so the mission CSV is reproducible byte for byte
TIMING_COLUMNS = [("tick", ""), ("solve_time", "s")]


@dataclass
class TickRow:
    tick: int
    time: float
    state: np.ndarray
    control: np.ndarray
    reference: np.ndarray
    pred_end: np.ndarray
    error: float
    position_error: float
    path_error: float
    clearance: float
    solve_time: float
    iterations: int
    status: str

    def as_list(self):
        return [self.tick, self.time, *self.state, *self.control, *self.reference, *self.pred_end[:2],
                self.error, self.position_error, self.path_error, self.clearance,
                self.iterations, self.status]


@dataclass
class Summary:
    status: str
    tick_count: int
    final_error: float
    final_position_error: float
    max_path_error: float
    rmse_path_error: float
    min_clearance: float
    max_abs_theta1: float
    mean_solve_time: float
    max_solve_time: float
    total_iterations: int
    wall_time: float = 0.0
    real_time_factor: float | None = None


@dataclass
class MissionLog:
    rows: list[TickRow] = field(default_factory=list)
    status: str = "running"
    initial_state: np.ndarray | None = None
    final_state: np.ndarray | None = None
    final_error: float = float("nan")
    final_position_error: float = float("nan")
    final_clearance: float = float("inf")
    wall_time: float = 0.0
    real_time_factor: float | None = None
    predictions: list = field(default_factory=list, repr=False)

    @property
    def tick_count(self) -> int:
        return len(self.rows)

    @property
    def success(self) -> bool:
        return self.status == "success"

    def states(self) -> np.ndarray:
        """Measured states before each tick, plus the final state."""
        pts = [r.state for r in self.rows]
        if self.final_state is not None:
            pts.append(self.final_state)
        return np.array(pts).reshape(-1, 4)

    def controls(self) -> np.ndarray:
        return np.array([r.control for r in self.rows]).reshape(-1, 2)

    def summary(self) -> Summary:
        return summarize(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([name for name, _ in COLUMNS])
        for row in self.rows:
            w.writerow([_fmt(v) for v in row.as_list()])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([name for name, _ in TIMING_COLUMNS])
        for row in self.rows:
            w.writerow([row.tick, _fmt(row.solve_time)])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summarize(log: MissionLog) -> Summary:
    """Summary metrics, recomputed from the rows every time.

    Path error statistics include the final state (appended as a pseudo-row)
    only through ``final_error``/``final_position_error``.
    """
    rows = log.rows
    path_err = np.array([r.path_error for r in rows], dtype=float)
    clear = np.array([r.clearance for r in rows] + [log.final_clearance], dtype=float)
    th1 = np.array([abs(r.state[2]) for r in rows], dtype=float)
    if log.final_state is not None:
        th1 = np.append(th1, abs(log.final_state[2]))
    solve = np.array([r.solve_time for r in rows], dtype=float)
    finite = path_err[np.isfinite(path_err)]
    return Summary(
        status=log.status,
        tick_count=len(rows),
        final_error=float(log.final_error),
        final_position_error=float(log.final_position_error),
        max_path_error=float(finite.max()) if finite.size else float("nan"),
        rmse_path_error=float(np.sqrt(np.mean(finite ** 2))) if finite.size else float("nan"),
        min_clearance=float(clear.min()),
        max_abs_theta1=float(th1.max()) if th1.size else 0.0,
        mean_solve_time=float(solve.mean()) if solve.size else 0.0,
        max_solve_time=float(solve.max()) if solve.size else 0.0,
        total_iterations=int(sum(r.iterations for r in rows)),
        wall_time=float(log.wall_time),
        real_time_factor=log.real_time_factor,
    )


def summary_to_json(summary: Summary) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        return v
    return json.dumps({k: clean(v) for k, v in asdict(summary).items()}, indent=2, sort_keys=True)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
