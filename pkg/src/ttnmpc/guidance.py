"""Waypoint following and obstacle-avoidance missions on top of the NMPC planner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mission_log import MissionLog
from .nlp import Solver
from .ocp import Obstacle, OcpProblem, terminal_error
from .planner import PlannerConfig, run_mission
from .sim import Simulator

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class WaypointPath:
    """Ordered reference states ``(M, 4)`` with cumulative arclength.

    On a closed path the segment from the last point back to the first is
    part of the path, so ``length`` exceeds ``arclength[-1]``.
    """

    points: np.ndarray
    closed: bool = False
    arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"waypoints must have shape (M, 4), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("path has no waypoints")
        if not np.all(np.isfinite(pts)):
            raise ValueError("waypoints must be finite")
        seg = np.hypot(*np.diff(pts[:, :2], axis=0).T)
        if np.any(seg <= 0):
            k = int(np.flatnonzero(seg <= 0)[0])
            raise ValueError(f"waypoints {k} and {k + 1} coincide")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "arclength", np.concatenate([[0.0], np.cumsum(seg)]))

    def __len__(self):
        return self.points.shape[0]

    @property
    def closing_segment(self) -> float:
        return float(np.hypot(*(self.points[0, :2] - self.points[-1, :2]))) if self.closed else 0.0

    @property
    def length(self) -> float:
        return float(self.arclength[-1]) + self.closing_segment

    @classmethod
    def from_xy(cls, xy, closed: bool = False, direction: str = "forward", theta2=None) -> "WaypointPath":
        """Build reference states from planar points.

        Without ``theta2`` the trailer orientation follows the path tangent;
        for backward travel the tangent is reversed so the trailer leads.
        The hitch reference is zero.
        """
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if theta2 is None:
            theta2 = tangent_heading(xy, closed, direction)
        theta2 = np.asarray(theta2, dtype=float).reshape(-1)
        if theta2.size != xy.shape[0]:
            raise ValueError("theta2 must have one entry per waypoint")
        pts = np.column_stack([xy, np.zeros(len(xy)), theta2])
        return cls(pts, closed)


def tangent_heading(xy, closed: bool = False, direction: str = "forward") -> np.ndarray:
    """Unwrapped trailer heading along a polyline (angle from +y, forward vector (sin, -cos))."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        return np.zeros(len(xy))
    if closed:
        t = np.roll(xy, -1, axis=0) - np.roll(xy, 1, axis=0)
    else:
        t = np.gradient(xy, axis=0)
    if direction == "backward":
        t = -t
    return np.unwrap(np.arctan2(t[:, 0], -t[:, 1]))


def circle_arc(center, radius: float, start_angle: float, sweep: float, n_points: int,
               direction: str = "forward") -> WaypointPath:
    """Open arc (or closed full circle when ``|sweep| = 2 pi``) sampled at ``n_points``.

    Angles are the usual polar angles about ``center``; positive sweep is
    counter-clockwise.
    """
    if radius <= 0 or n_points < 2:
        raise ValueError("radius must be > 0 and n_points >= 2")
    closed = math.isclose(abs(sweep), TWO_PI)
    ang = start_angle + sweep * np.arange(n_points) / (n_points if closed else n_points - 1)
    xy = np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    # analytic tangent avoids finite-difference error at the ends
    s = np.sign(sweep)
    t = np.column_stack([-np.sin(ang) * s, np.cos(ang) * s])
    if direction == "backward":
        t = -t
    return WaypointPath.from_xy(xy, closed, theta2=np.unwrap(np.arctan2(t[:, 0], -t[:, 1])))


def read_waypoints(path, closed: bool = False, direction: str = "forward") -> WaypointPath:
    """Parse a waypoint file: one ``x,y[,theta2]`` per line, ``#`` starts a comment."""
    rows, with_heading = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 'x,y[,theta2]', got {line!r}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
            has = len(vals) == 3
            if with_heading is None:
                with_heading = has
            elif has != with_heading:
                raise ValueError(f"{path}:{lineno}: theta2 must be given on every line or on none")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no waypoints")
    arr = np.array(rows)
    return WaypointPath.from_xy(arr[:, :2], closed, direction, arr[:, 2] if with_heading else None)


def write_waypoints(path, waypoints: WaypointPath, header: str = ""):
    with open(path, "w") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        for x, y, _, th in waypoints.points:
            fh.write(f"{float(x)!r},{float(y)!r},{float(th)!r}\n")


@dataclass(frozen=True)
class GuidanceConfig:
    """``preview``: feed the horizon a reference that advances along the path from
    the selected target by ``preview_speed * v_max * dt`` per node, instead of
    repeating the single target at every node. The trailer axle moves at
    ``|v| cos(theta1)``, so a preview at full ``v_max`` outruns it on curves."""

    lookahead: float = 2.0
    min_error: float = 0.1
    preview: bool = True
    preview_speed: float = 0.75

    def __post_init__(self):
        if not self.lookahead > 0:
            raise ValueError("lookahead must be > 0")
        if not self.min_error > 0:
            raise ValueError("min_error must be > 0")
        if not 0 < self.preview_speed <= 1:
            raise ValueError("preview_speed must lie in (0, 1]")


def nearest_waypoint(path: WaypointPath, x) -> int:
    """Index of the waypoint closest to the trailer position; ties go to the lower index."""
    pts = path.points if isinstance(path, WaypointPath) else np.asarray(path, dtype=float)
    if len(pts) == 0:
        raise ValueError("path has no waypoints")
    d = (pts[:, 0] - x[0]) ** 2 + (pts[:, 1] - x[1]) ** 2
    return int(np.argmin(d))


def lookahead_lambda(lookahead: float, error: float) -> float:
    """Distance ahead of the nearest waypoint: ``L - L / (1 + error)``."""
    if not lookahead > 0:
        raise ValueError("lookahead must be > 0")
    if not error >= 0:
        raise ValueError("error must be >= 0")
    return lookahead - lookahead / (1.0 + error)


def target_index(path: WaypointPath, index: int, distance: float) -> int:
    """Waypoint at arclength ``s[index] + distance`` (first sample at or beyond it)."""
    return arclength_index(path, path.arclength[index] + distance)


def arclength_index(path: WaypointPath, s: float) -> int:
    """First sample at or beyond arclength ``s`` (wrapped on closed paths, clamped on open ones)."""
    arc = path.arclength
    if path.closed:
        s %= path.length
        k = int(np.searchsorted(arc, s - 1e-12, side="left"))
        return 0 if k >= len(arc) else k
    return min(int(np.searchsorted(arc, s - 1e-12, side="left")), len(arc) - 1)


def preview_reference(path: WaypointPath, index: int, nodes: int, spacing: float, x) -> np.ndarray:
    """``nodes`` reference states starting at waypoint ``index``, ``spacing`` meters apart,
    headings unwrapped continuously from the branch nearest ``x``."""
    s0 = path.arclength[index]
    idx = [arclength_index(path, s0 + k * spacing) for k in range(nodes)]
    ref = path.points[idx].copy()
    ref[:, 3] = np.unwrap(ref[:, 3])
    shift = TWO_PI * round((x[3] - ref[0, 3]) / TWO_PI)
    ref[:, 3] += shift
    return ref


def select_target(path: WaypointPath, x, config: GuidanceConfig, error: float | None = None) -> np.ndarray:
    """Reference state ``lambda`` meters past the nearest waypoint.

    ``error`` defaults to the distance between ``x`` and the path end.
    The returned row is an exact copy of a path sample.
    """
    if error is None:
        error = terminal_error(x, align_heading(path.points[-1], x))
    idx = target_index(path, nearest_waypoint(path, x), lookahead_lambda(config.lookahead, error))
    return path.points[idx].copy()


def align_heading(ref, x) -> np.ndarray:
    """Shift the reference orientation by whole turns to the branch nearest the state's."""
    ref = np.array(ref, dtype=float)
    ref[3] += TWO_PI * round((x[3] - ref[3]) / TWO_PI)
    return ref


def polyline_distance(path: WaypointPath, x) -> float:
    """Distance from the trailer position to the path polyline."""
    p = np.asarray(x[:2], dtype=float)
    pts = path.points[:, :2]
    if len(pts) == 1:
        return float(np.hypot(*(p - pts[0])))
    a = pts if path.closed else pts[:-1]
    b = np.roll(pts, -1, axis=0) if path.closed else pts[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    d = a + t[:, None] * ab - p
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


class _LapTracker:
    """Completes a lap once the nearest index is back near the start after 90% of the length."""

    def __init__(self, path: WaypointPath, start: int):
        self.path, self.start, self.last = path, start, start
        self.travelled = 0.0

    def update(self, idx: int) -> bool:
        s, total = self.path.arclength, self.path.length
        ds = (s[idx] - s[self.last]) % total
        if ds < 0.5 * total:  # ignore backwards jitter
            self.travelled += ds
            self.last = idx
        n = len(self.path)
        near = min((idx - self.start) % n, (self.start - idx) % n) <= 5
        return self.travelled > 0.9 * total and near


def run_path_following(path: WaypointPath, initial, template: OcpProblem,
                       guidance: GuidanceConfig = GuidanceConfig(),
                       config: PlannerConfig | None = None, plant: Simulator | None = None,
                       solver: Solver | None = None, keep_predictions: bool = False) -> MissionLog:
    """Follow ``path`` with a per-tick lookahead target.

    Open paths finish when the state is within ``guidance.min_error`` of the
    final waypoint; closed paths finish after one lap.
    """
    initial = np.asarray(initial, dtype=float)
    config = config or PlannerConfig(min_allowable_error=guidance.min_error)
    end = align_heading(path.points[-1], initial) if not path.closed else None
    start = nearest_waypoint(path, initial)
    lap = _LapTracker(path, start) if path.closed else None
    current = {"target": path.points[target_index(path, start, guidance.lookahead)]}

    def reference_fn(state, _previous):
        if path.closed:
            err = terminal_error(state, align_heading(current["target"], state))
        else:
            err = terminal_error(state, align_heading(end, state))
        idx = target_index(path, nearest_waypoint(path, state), lookahead_lambda(guidance.lookahead, err))
        target = align_heading(path.points[idx], state)
        current["target"] = target
        if not guidance.preview:
            return target
        spacing = guidance.preview_speed * template.params.v_max * template.dt
        return preview_reference(path, idx, template.horizon + 1, spacing, state)

    def done_fn(state, log):
        if path.closed:
            return lap.update(nearest_waypoint(path, state)) and len(log.rows) > 0
        return terminal_error(state, align_heading(end, state)) <= guidance.min_error

    final = path.points[start] if path.closed else end
    max_ticks = config.max_ticks or max(50, math.ceil(4 * path.length / (template.params.v_max * template.dt)))
    config = replace(config, min_allowable_error=guidance.min_error, max_ticks=max_ticks)
    return run_mission(initial, final, template, config, plant, solver, reference_fn=reference_fn,
                       path_error_fn=lambda s: polyline_distance(path, s), done_fn=done_fn,
                       error_fn=lambda s: terminal_error(s, align_heading(final, s)),
                       keep_predictions=keep_predictions)


def run_obstacle_mission(obstacles, initial, target, template: OcpProblem,
                         config: PlannerConfig = PlannerConfig(), plant: Simulator | None = None,
                         solver: Solver | None = None) -> MissionLog:
    """Drive to ``target`` while keeping both body circles clear of ``obstacles``."""
    obs = tuple(o if isinstance(o, Obstacle) else Obstacle(*o) for o in obstacles)
    return run_mission(initial, target, template.updated(obstacles=obs), config, plant, solver)

