"""Planar maze geometry: wall segments, movable disc obstacles, maze presets.

All lengths are in meters. A maze is a rectilinear channel described by a
centerline polyline; the walls are the two offset polylines plus an end cap.
The start end of the channel is open: leaving through it is a distinct
episode event, detected against the opening plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

MAZE_FORMAT_VERSION = 1


def vec2(x: float, y: float) -> np.ndarray:
    return np.array([x, y], dtype=float)


def closest_point_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return a.copy()
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return a + t * ab


def segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(p - closest_point_on_segment(p, a, b)))


@dataclass(frozen=True)
class Obstacle:
    """Movable disc with a dry-friction-like translation threshold."""

    center: np.ndarray
    radius: float
    resistance: float  # newtons of contact force needed before it yields

    def __post_init__(self):
        if self.radius <= 0 or self.resistance <= 0:
            raise ConfigurationError("obstacle radius and resistance must be positive")


@dataclass(frozen=True)
class MazeSpec:
    """Static maze description.

    walls            -- (n, 2, 2) array of segment endpoints
    channel_width    -- distance between the two wall polylines
    entrance         -- episode start point (inside the channel)
    opening          -- point on the open-end plane of the channel
    opening_inward   -- unit normal of that plane, pointing into the maze
    goal             -- target point; reaching within goal_radius is success
    obstacles        -- movable discs in their initial positions
    length_along_path-- centerline arc length
    centerline       -- (k, 2) waypoints (kept for probe-point derivation)
    """

    walls: np.ndarray
    channel_width: float
    entrance: np.ndarray
    opening: np.ndarray
    opening_inward: np.ndarray
    goal: np.ndarray
    goal_radius: float
    obstacles: tuple[Obstacle, ...]
    length_along_path: float
    centerline: np.ndarray

    def wall_distance(self, p: np.ndarray) -> float:
        return min(segment_distance(p, w[0], w[1]) for w in self.walls)

    def point_at_arc(self, s: float) -> np.ndarray:
        """Point on the centerline at arc length s (clamped to the path)."""
        pts = self.centerline
        s = min(max(s, 0.0), self.length_along_path)
        acc = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            seg = float(np.linalg.norm(b - a))
            if acc + seg >= s or seg == 0.0:
                t = 0.0 if seg == 0.0 else (s - acc) / seg
                return a + t * (b - a)
            acc += seg
        return pts[-1].copy()

    def free_clearance(self, p: np.ndarray, peg_radius: float) -> float:
        """Clearance margin of a peg centered at p (negative = overlapping)."""
        d = self.wall_distance(p) - peg_radius
        for ob in self.obstacles:
            d = min(d, float(np.linalg.norm(p - ob.center)) - ob.radius - peg_radius)
        return d

    def entrance_progress(self, p: np.ndarray) -> float:
        """Signed distance of p past the opening plane (negative = outside)."""
        return float((p - self.opening) @ self.opening_inward)

    def centerline_distance(self, p: np.ndarray) -> float:
        return min(
            segment_distance(p, a, b) for a, b in zip(self.centerline[:-1], self.centerline[1:])
        )


def validate_maze(spec: MazeSpec, peg_radius: float) -> None:
    """Raise ConfigurationError if the maze cannot host a peg of this radius."""
    if not np.all(np.isfinite(spec.walls)):
        raise ConfigurationError("maze walls contain non-finite coordinates")
    if spec.channel_width <= 2 * peg_radius:
        raise ConfigurationError(
            f"channel width {spec.channel_width} must exceed peg diameter {2 * peg_radius}"
        )
    if spec.goal_radius <= 0:
        raise ConfigurationError("goal radius must be positive")
    for ob in spec.obstacles:
        if ob.radius >= spec.channel_width / 2:
            raise ConfigurationError("obstacle radius must be below half the channel width")
    for name, point in (("entrance", spec.entrance), ("goal", spec.goal)):
        if spec.wall_distance(point) < peg_radius:
            raise ConfigurationError(f"{name} point does not fit inside the free channel")
        if spec.centerline_distance(point) > spec.channel_width / 2 - peg_radius:
            raise ConfigurationError(f"{name} point lies outside the channel")
    if spec.entrance_progress(spec.entrance) <= 0:
        raise ConfigurationError("entrance point lies outside the opening plane")
    for i, ob in enumerate(spec.obstacles):
        if spec.wall_distance(ob.center) < ob.radius:
            raise ConfigurationError(f"obstacle {i} overlaps a wall")
        for j, other in enumerate(spec.obstacles[:i]):
            gap = float(np.linalg.norm(ob.center - other.center)) - ob.radius - other.radius
            if gap < 0:
                raise ConfigurationError(f"obstacles {j} and {i} overlap")


def _offset_polyline(waypoints: np.ndarray, offset: float, chamfer: float = 0.0) -> np.ndarray:
    """Offset a rectilinear polyline to one side.

    Corners are mitered; outer corners get a 45-degree chamfer cut of the
    given size (bevelled dead corners, like a routed channel).
    """
    dirs = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        d = b - a
        n = np.linalg.norm(d)
        if n == 0:
            raise ConfigurationError("degenerate centerline segment")
        dirs.append(d / n)
    normals = [vec2(-d[1], d[0]) for d in dirs]
    pts = [waypoints[0] + offset * normals[0]]
    for i in range(1, len(dirs)):
        corner = waypoints[i] + offset * (normals[i - 1] + normals[i])
        cross = dirs[i - 1][0] * dirs[i][1] - dirs[i - 1][1] * dirs[i][0]
        outer = cross * offset < 0
        if outer and chamfer > 0.0:
            pts.append(corner - chamfer * dirs[i - 1])
            pts.append(corner + chamfer * dirs[i])
        else:
            pts.append(corner)
    pts.append(waypoints[-1] + offset * normals[-1])
    return np.array(pts)


def build_channel_maze(
    waypoints,
    channel_width: float = 0.05,
    goal: np.ndarray | None = None,
    goal_radius: float = 0.015,
    entrance_inset: float = 0.02,
    obstacle_arcs=(),
    obstacle_radius: float = 0.0125,
    obstacle_resistance: float = 25.0,
    corner_chamfer: float = 0.025,
) -> MazeSpec:
    """Build a walled channel along a rectilinear centerline.

    The first waypoint is the open entrance end; the last is capped. Obstacles
    are placed on the centerline at the given arc lengths.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.ndim != 2 or waypoints.shape[0] < 2 or waypoints.shape[1] != 2:
        raise ConfigurationError("centerline needs at least two 2-D waypoints")
    half = channel_width / 2.0
    left = _offset_polyline(waypoints, +half, corner_chamfer)
    right = _offset_polyline(waypoints, -half, corner_chamfer)
    walls = []
    for poly in (left, right):
        for a, b in zip(poly[:-1], poly[1:]):
            walls.append((a, b))
    walls.append((left[-1], right[-1]))  # end cap
    walls = np.array(walls)

    d0 = waypoints[1] - waypoints[0]
    d0 = d0 / np.linalg.norm(d0)
    seg_lengths = [float(np.linalg.norm(b - a)) for a, b in zip(waypoints[:-1], waypoints[1:])]
    total = float(sum(seg_lengths))

    spec = MazeSpec(
        walls=walls,
        channel_width=channel_width,
        entrance=waypoints[0] + entrance_inset * d0,
        opening=waypoints[0].copy(),
        opening_inward=d0,
        goal=waypoints[-1].copy() if goal is None else np.asarray(goal, dtype=float),
        goal_radius=goal_radius,
        obstacles=(),
        length_along_path=total,
        centerline=waypoints,
    )
    obstacles = tuple(
        Obstacle(center=spec.point_at_arc(s), radius=obstacle_radius, resistance=obstacle_resistance)
        for s in obstacle_arcs
    )
    return MazeSpec(
        walls=spec.walls,
        channel_width=spec.channel_width,
        entrance=spec.entrance,
        opening=spec.opening,
        opening_inward=spec.opening_inward,
        goal=spec.goal,
        goal_radius=spec.goal_radius,
        obstacles=obstacles,
        length_along_path=spec.length_along_path,
        centerline=spec.centerline,
    )


def default_maze(scale: str = "desk") -> MazeSpec:
    """Built-in three-turn staircase channel, 50 mm wide.

    "desk" halves the full 0.7035 m path for quick experiments; "full" keeps
    the complete length. Three movable discs sit on the last straight around
    the path midpoint; their 25 N resistance is chosen so that a 300 N/m
    marginal stiffness (max push ~18 N) cannot move them while 1000 N/m
    (up to 60 N) can.
    """
    if scale == "desk":
        waypoints = [(0.0, 0.0), (0.06, 0.0), (0.06, 0.04), (0.11, 0.04), (0.11, 0.24175)]
        obstacle_arcs = (0.195, 0.222, 0.249)
        goal = vec2(0.11, 0.15)
    elif scale == "full":
        waypoints = [(0.0, 0.0), (0.12, 0.0), (0.12, 0.08), (0.22, 0.08), (0.22, 0.4835)]
        obstacle_arcs = (0.345, 0.372, 0.399)
        goal = vec2(0.22, 0.38)
    else:
        raise ConfigurationError(f"unknown maze scale {scale!r} (use 'desk' or 'full')")
    return build_channel_maze(waypoints, goal=goal, obstacle_arcs=obstacle_arcs)


def probe_points(spec: MazeSpec, n: int = 6, peg_radius: float = 0.015) -> np.ndarray:
    """Interior probe sites spread over straights and turns of the channel.

    Candidates are the segment midpoints interleaved with the turn waypoints
    (thinned/padded to exactly n by arc position); each is slid along the
    centerline until a peg fits there with margin, so probes never start
    inside an obstacle.
    """
    wp = spec.centerline
    seg_len = [float(np.linalg.norm(b - a)) for a, b in zip(wp[:-1], wp[1:])]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    arcs = []
    for i in range(len(seg_len)):
        arcs.append(0.5 * (cum[i] + cum[i + 1]))  # straight midpoint
        if i < len(seg_len) - 1:
            arcs.append(cum[i + 1])  # turn waypoint
    if len(arcs) > n:
        order = sorted(range(len(seg_len)), key=lambda i: seg_len[i])
        drop = set()
        for i in order:
            if len(arcs) - len(drop) <= n:
                break
            drop.add(2 * i)  # midpoint entries sit at even indices
        arcs = [a for i, a in enumerate(arcs) if i not in drop]
    while len(arcs) < n:
        arcs.append(spec.length_along_path * (len(arcs) + 0.5) / (n + 1))

    margin = 0.004
    pts = []
    for arc in arcs[:n]:
        found = None
        for step in range(81):  # scan outward in 5 mm hops
            delta = 0.005 * ((step + 1) // 2) * (1 if step % 2 else -1)
            cand = spec.point_at_arc(arc + delta)
            if spec.free_clearance(cand, peg_radius) >= margin:
                found = cand
                break
        if found is None:
            raise ConfigurationError(f"no clear probe site near arc {arc:.3f}")
        pts.append(found)
    return np.array(pts)


def maze_to_dict(spec: MazeSpec) -> dict:
    return {
        "version": MAZE_FORMAT_VERSION,
        "walls": spec.walls.tolist(),
        "channel_width": spec.channel_width,
        "entrance": spec.entrance.tolist(),
        "opening": spec.opening.tolist(),
        "opening_inward": spec.opening_inward.tolist(),
        "goal": spec.goal.tolist(),
        "goal_radius": spec.goal_radius,
        "obstacles": [
            {"center": ob.center.tolist(), "radius": ob.radius, "resistance": ob.resistance}
            for ob in spec.obstacles
        ],
        "length_along_path": spec.length_along_path,
        "centerline": spec.centerline.tolist(),
    }


def maze_from_dict(data: dict) -> MazeSpec:
    try:
        if int(data.get("version", -1)) != MAZE_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported maze file version {data.get('version')}")
        return MazeSpec(
            walls=np.array(data["walls"], dtype=float),
            channel_width=float(data["channel_width"]),
            entrance=np.array(data["entrance"], dtype=float),
            opening=np.array(data["opening"], dtype=float),
            opening_inward=np.array(data["opening_inward"], dtype=float),
            goal=np.array(data["goal"], dtype=float),
            goal_radius=float(data["goal_radius"]),
            obstacles=tuple(
                Obstacle(
                    center=np.array(ob["center"], dtype=float),
                    radius=float(ob["radius"]),
                    resistance=float(ob["resistance"]),
                )
                for ob in data["obstacles"]
            ),
            length_along_path=float(data["length_along_path"]),
            centerline=np.array(data["centerline"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed maze description: {exc}") from exc


def save_maze(spec: MazeSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(maze_to_dict(spec), fh, indent=2)


def load_maze(path) -> MazeSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read maze file {path}: {exc}") from exc
    return maze_from_dict(data)
