"""Quasi-static contact resolution for a circular peg among walls and discs.

Each actuation step drags a spring anchor from the current peg position to
pos + dp in a fixed number of substeps. At every substep the peg settles at
the constrained minimum of the (implicitly damped) spring energy, movable
obstacles yield when their contact load exceeds their resistance, and the
reaction force is recorded. A final undamped settle gives the static wrench,
so the reported force obeys F = k_n * (anchor penetration) exactly for a
single flat wall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationError
from .geometry import MazeSpec

MAX_RELINEARIZE = 80
MAX_PUSH_PASSES = 12
POSITION_TOL = 1e-12  # settle fixed-point tolerance, meters
PRIMAL_TOL = 1e-10  # allowed constraint violation, meters
DUAL_TOL = -1e-12  # allowed negative contact force, newtons
CANDIDATE_PAD = 0.02  # extra radius when prefiltering walls, meters


@dataclass
class Contact:
    kind: str  # "wall" or "obstacle"
    index: int
    normal: tuple[float, float]  # unit, pointing from the surface toward the peg
    force: float  # newtons, >= 0
    point: tuple[float, float]  # contact point on the peg rim


@dataclass
class StepResult:
    position: np.ndarray
    obstacle_positions: list[np.ndarray]
    contacts: list[Contact]
    force: np.ndarray  # (2,) static reaction force on the peg
    torque_z: float
    max_force: float  # peak reaction magnitude over all substeps
    any_contact: bool
    obstacle_max_force: list[float]
    obstacle_moved: list[bool]
    path: list[np.ndarray] = field(default_factory=list)  # substep-end peg positions


class ContactWorld:
    """Solver workspace bound to one maze. Obstacle positions are inputs."""

    def __init__(self, spec: MazeSpec, peg_radius: float):
        self.spec = spec
        self.peg_radius = peg_radius
        walls = np.asarray(spec.walls, dtype=float)
        self._wa = walls[:, 0, :]
        ab = walls[:, 1, :] - walls[:, 0, :]
        self._wab = ab
        self._wlen2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
        self._obs_radius = np.array([ob.radius for ob in spec.obstacles], dtype=float)
        self._obs_resist = np.array([ob.resistance for ob in spec.obstacles], dtype=float)

    # -- geometric queries ---------------------------------------------------

    def wall_gaps(self, p: np.ndarray, radius: float) -> np.ndarray:
        """Clearance of a disc at p to every wall segment (negative = overlap)."""
        rel = p[None, :] - self._wa
        t = np.clip(np.einsum("ij,ij->i", rel, self._wab) / self._wlen2, 0.0, 1.0)
        cp = self._wa + t[:, None] * self._wab
        d = np.linalg.norm(p[None, :] - cp, axis=1)
        return d - radius

    def _wall_closest(self, p: np.ndarray, j: int) -> np.ndarray:
        a = self._wa[j]
        t = float((p - a) @ self._wab[j]) / self._wlen2[j]
        t = min(1.0, max(0.0, t))
        return a + t * self._wab[j]

    def _wall_closest_t(self, p: np.ndarray, j: int) -> tuple[np.ndarray, float]:
        a = self._wa[j]
        t = float((p - a) @ self._wab[j]) / self._wlen2[j]
        t = min(1.0, max(0.0, t))
        return a + t * self._wab[j], t

    # -- linearized constraints ----------------------------------------------

    def _linearize(self, p, wall_ids, obs_pos, obs_ids):
        """Half-plane constraints n.x >= c at the current peg position.

        Each entry also carries the local curvature: (center, radius) of the
        contact circle, radius 0 for flat wall bands.
        """
        cons = []
        r = self.peg_radius
        for j in wall_ids:
            cp, t = self._wall_closest_t(p, j)
            dx, dy = p[0] - cp[0], p[1] - cp[1]
            d = math.hypot(dx, dy)
            if d < 1e-12:
                # center exactly on the surface: fall back to segment's perpendicular
                ex, ey = self._wab[j]
                L = math.hypot(ex, ey)
                nx, ny = -ey / L, ex / L
            else:
                nx, ny = dx / d, dy / d
            interior = 0.0 < t < 1.0  # interior band is flat; endpoints are circles
            cons.append(
                (
                    nx,
                    ny,
                    nx * cp[0] + ny * cp[1] + r,
                    "wall",
                    j,
                    None if interior else (cp[0], cp[1], r),
                )
            )
        for i in obs_ids:
            o = obs_pos[i]
            dx, dy = p[0] - o[0], p[1] - o[1]
            d = math.hypot(dx, dy)
            if d < 1e-12:
                nx, ny = 1.0, 0.0
            else:
                nx, ny = dx / d, dy / d
            reach = r + self._obs_radius[i]
            cons.append(
                (nx, ny, nx * o[0] + ny * o[1] + reach, "obstacle", i, (o[0], o[1], reach))
            )
        return cons

    @staticmethod
    def _circle_equilibrium(ax, ay, kx, ky, qx, qy, radius, feasible, near):
        """Exact spring equilibrium on the feasible part of a circular boundary.

        Minimizes the anisotropic spring energy over the circle around
        (qx, qy), skipping arc points that overlap other geometry; used when a
        lone curved contact is active, where the tangent-plane iteration can
        stall (anchor near the circle center). Near-ties are broken toward the
        current peg position so the quasi-static continuation stays on its
        branch. Returns None if no feasible grid point exists.
        """

        def point(th):
            return qx + radius * math.cos(th), qy + radius * math.sin(th)

        def energy(th):
            px, py = point(th)
            return 0.5 * (kx * (px - ax) ** 2 + ky * (py - ay) ** 2)

        n_grid = 64
        best_i = None
        best_e = math.inf
        best_d = math.inf
        for i in range(n_grid):
            th = 2 * math.pi * i / n_grid
            px, py = point(th)
            if not feasible(px, py):
                continue
            e = energy(th)
            d = math.hypot(px - near[0], py - near[1])
            if e < best_e - 1e-12 or (abs(e - best_e) <= 1e-12 and d < best_d):
                best_i, best_e, best_d = i, e, d
        if best_i is None:
            return None
        lo = 2 * math.pi * (best_i - 1) / n_grid
        hi = 2 * math.pi * (best_i + 1) / n_grid
        for _ in range(90):  # ternary search on the bracketed basin
            m1 = lo + (hi - lo) / 3
            m2 = hi - (hi - lo) / 3
            if energy(m1) <= energy(m2):
                hi = m2
            else:
                lo = m1
        th = 0.5 * (lo + hi)
        px, py = point(th)
        if not feasible(px, py):
            px, py = point(2 * math.pi * best_i / n_grid)
        return px, py

    @staticmethod
    def _best_equilibrium(ax, ay, kx, ky, cons):
        """Constrained minimum of the spring energy over linearized contacts.

        Enumerates active sets of size 0..2, keeps the feasible candidate with
        the lowest energy. Returns (px, py, [(cons_idx, force), ...]) or None.
        """
        feasible_all = True
        for (nx, ny, c, *_rest) in cons:
            if nx * ax + ny * ay - c < -PRIMAL_TOL:
                feasible_all = False
                break
        if feasible_all:
            return ax, ay, []

        best = None

        def consider(px, py, lams):
            nonlocal best
            for (nx, ny, c, *_rest) in cons:
                if nx * px + ny * py - c < -PRIMAL_TOL:
                    return
            e = 0.5 * (kx * (px - ax) ** 2 + ky * (py - ay) ** 2)
            if best is None or e < best[0]:
                best = (e, px, py, lams)

        for i, (nx, ny, c, *_rest) in enumerate(cons):
            q = nx * nx / kx + ny * ny / ky
            lam = (c - (nx * ax + ny * ay)) / q
            if lam < DUAL_TOL:
                continue
            lam = max(lam, 0.0)
            consider(ax + lam * nx / kx, ay + lam * ny / ky, [(i, lam)])
        n = len(cons)
        for i in range(n):
            n1x, n1y, c1 = cons[i][:3]
            for j in range(i + 1, n):
                n2x, n2y, c2 = cons[j][:3]
                det = n1x * n2y - n2x * n1y
                if abs(det) < 1e-9:
                    continue
                px = (c1 * n2y - c2 * n1y) / det
                py = (n1x * c2 - n2x * c1) / det
                gx, gy = kx * (px - ax), ky * (py - ay)
                l1 = (gx * n2y - gy * n2x) / det
                l2 = (n1x * gy - n1y * gx) / det
                if l1 < DUAL_TOL or l2 < DUAL_TOL:
                    continue
                consider(px, py, [(i, max(l1, 0.0)), (j, max(l2, 0.0))])
        if best is None:
            return None
        return best[1], best[2], best[3]

    def _settle(self, p_start, anchor, kx, ky, wall_ids, obs_pos, obs_ids):
        """Fixed-point iteration of linearize-and-solve until the peg rests.

        Sliding on a curved contact converges only linearly, so the loop
        applies a capped Aitken extrapolation when it detects a steady
        contraction ratio.
        """
        p_lin = np.array(p_start, dtype=float)
        p = p_lin
        prev = None
        d_prev = None
        last_move = math.inf
        cons = []
        lams = []

        def true_feasible(px, py):
            q = np.array([px, py])
            gaps = self.wall_gaps(q, self.peg_radius)
            for j in wall_ids:
                if gaps[j] < -1e-9:
                    return False
            for i in obs_ids:
                gap = (
                    math.hypot(px - obs_pos[i][0], py - obs_pos[i][1])
                    - self.peg_radius
                    - self._obs_radius[i]
                )
                if gap < -1e-9:
                    return False
            return True

        for it in range(MAX_RELINEARIZE):
            cons = self._linearize(p_lin, wall_ids, obs_pos, obs_ids)
            sol = self._best_equilibrium(anchor[0], anchor[1], kx, ky, cons)
            if sol is None:
                raise SimulationError("contact solver: no feasible equilibrium")
            px, py, lams = sol
            if it >= 12 and len(lams) == 1 and cons[lams[0][0]][5] is not None:
                # stalled on a lone curved contact: solve the circle case exactly
                qx, qy, radius = cons[lams[0][0]][5]
                exact = self._circle_equilibrium(
                    anchor[0], anchor[1], kx, ky, qx, qy, radius, true_feasible, p_lin
                )
                if exact is not None:
                    px, py = exact
                    lams = [
                        (
                            lams[0][0],
                            math.hypot(kx * (px - anchor[0]), ky * (py - anchor[1])),
                        )
                    ]
            p = np.array([px, py])
            d = None if prev is None else p - prev
            last_move = math.inf if d is None else math.hypot(d[0], d[1])
            if last_move < POSITION_TOL:
                break
            p_lin = p
            if d_prev is not None and d is not None:
                prev_move = math.hypot(d_prev[0], d_prev[1])
                ratio = last_move / prev_move if prev_move > 0 else math.inf
                # extrapolate only a steady same-direction contraction
                if 0.05 < ratio < 0.995 and float(d @ d_prev) > 0.0:
                    gain = min(ratio / (1.0 - ratio), 8.0)
                    jump = gain * d
                    scale = math.hypot(jump[0], jump[1])
                    if scale > 2e-3:  # keep the guess local to the contact
                        jump *= 2e-3 / scale
                    p_lin = p + jump
                    prev = p
                    d_prev = None  # demand two plain iterates before the next jump
                    continue
            prev = p
            d_prev = d
        if last_move > 1e-9:
            raise SimulationError("contact solver: equilibrium iteration did not converge")
        contacts = []
        for idx, lam in lams:
            nx, ny, c, kind, which = cons[idx][:5]
            contacts.append(
                Contact(
                    kind=kind,
                    index=which,
                    normal=(nx, ny),
                    force=lam,
                    point=(p[0] - self.peg_radius * nx, p[1] - self.peg_radius * ny),
                )
            )
        return p, contacts

    # -- obstacle sweeps -----------------------------------------------------

    def _sweep_circle(self, o, radius, ux, uy, dist, obs_pos, skip_idx):
        """First blocking time when moving a disc along (ux, uy).

        Returns (t_free, blocker) where blocker is None, ("wall", j) or
        ("obstacle", i) and t_free <= dist is the allowed travel.
        """
        t_best = dist
        blocker = None
        # walls: interior band plus endpoint circles
        for j in range(len(self._wa)):
            a = self._wa[j]
            e = self._wab[j]
            L = math.sqrt(self._wlen2[j])
            ex, ey = e[0] / L, e[1] / L
            mx, my = -ey, ex
            s0 = mx * (o[0] - a[0]) + my * (o[1] - a[1])
            su = mx * ux + my * uy
            proj0 = ex * (o[0] - a[0]) + ey * (o[1] - a[1])
            pu = ex * ux + ey * uy
            if su != 0.0:
                sgn = 1.0 if s0 >= 0 else -1.0
                t = (sgn * radius - s0) / su
                if -1e-12 <= t <= t_best:
                    foot = proj0 + t * pu
                    if -1e-12 <= foot <= L + 1e-12 and sgn * su < 0:
                        t_best, blocker = max(t, 0.0), ("wall", j)
            for q in (a, a + e):
                wx, wy = o[0] - q[0], o[1] - q[1]
                b_half = wx * ux + wy * uy
                cq = wx * wx + wy * wy - radius * radius
                disc = b_half * b_half - cq
                if disc <= 0:
                    continue
                t = -b_half - math.sqrt(disc)
                if -1e-12 <= t <= t_best:
                    t_best, blocker = max(t, 0.0), ("wall", j)
        for i, other in enumerate(obs_pos):
            if i == skip_idx:
                continue
            rr = radius + self._obs_radius[i]
            wx, wy = o[0] - other[0], o[1] - other[1]
            b_half = wx * ux + wy * uy
            cq = wx * wx + wy * wy - rr * rr
            disc = b_half * b_half - cq
            if disc <= 0:
                continue
            t = -b_half - math.sqrt(disc)
            if -1e-12 <= t <= t_best:
                t_best, blocker = max(t, 0.0), ("obstacle", i)
        return t_best, blocker

    def _push_obstacle(self, idx, ux, uy, dist, force, obs_pos, moved, obs_max, depth=0):
        """Translate obstacle idx along (ux, uy), sliding on walls and pushing
        lighter neighbours ahead when the transmitted load allows it."""
        obs_max[idx] = max(obs_max[idx], force)
        remaining = dist
        deflections = 0
        guard = 0
        while remaining > 1e-12 and guard < 16:
            guard += 1
            o = obs_pos[idx]
            t_free, blocker = self._sweep_circle(
                o, self._obs_radius[idx], ux, uy, remaining, obs_pos, idx
            )
            if t_free > 0:
                obs_pos[idx] = o + np.array([ux * t_free, uy * t_free])
                moved[idx] = True
                remaining -= t_free
            if remaining <= 1e-12 or blocker is None:
                break
            if blocker[0] == "wall":
                if deflections >= 2:
                    break
                cp = self._wall_closest(obs_pos[idx], blocker[1])
                nx, ny = obs_pos[idx][0] - cp[0], obs_pos[idx][1] - cp[1]
                nn = math.hypot(nx, ny)
                if nn < 1e-12:
                    break
                nx, ny = nx / nn, ny / nn
                dot = ux * nx + uy * ny
                tx, ty = ux - dot * nx, uy - dot * ny
                tn = math.hypot(tx, ty)
                if tn < 1e-9:
                    break
                ux, uy = tx / tn, ty / tn
                remaining *= tn
                deflections += 1
            else:
                j = blocker[1]
                obs_max[j] = max(obs_max[j], force)
                if depth + 1 >= len(obs_pos) + 1 or force <= self._obs_resist[j]:
                    break
                dx = obs_pos[j][0] - obs_pos[idx][0]
                dy = obs_pos[j][1] - obs_pos[idx][1]
                dn = math.hypot(dx, dy)
                if dn < 1e-12:
                    break
                # the chain transmits the pushing load undiminished
                self._push_obstacle(
                    j, dx / dn, dy / dn, remaining, force, obs_pos, moved, obs_max, depth + 1
                )
                t_retry, _ = self._sweep_circle(
                    obs_pos[idx], self._obs_radius[idx], ux, uy, remaining, obs_pos, idx
                )
                if t_retry <= 1e-12:
                    break

    # -- full actuation step ---------------------------------------------------

    def resolve_step(
        self,
        position: np.ndarray,
        obstacle_positions,
        dp: np.ndarray,
        kx_star: float,
        ky_star: float,
        dx_star: float = 0.0,
        dy_star: float = 0.0,
        substeps: int = 20,
        substep_dt: float = 0.05,
    ) -> StepResult:
        p0 = np.array(position, dtype=float)
        dp = np.asarray(dp, dtype=float)
        obs_pos = [np.array(o, dtype=float) for o in obstacle_positions]
        n_obs = len(obs_pos)
        moved = [False] * n_obs
        obs_max = [0.0] * n_obs
        target = p0 + dp

        # fast path: nothing within reach of the swept motion
        reach = float(np.linalg.norm(dp)) + CANDIDATE_PAD
        wall_g = self.wall_gaps(p0, self.peg_radius)
        min_obs = math.inf
        for i, o in enumerate(obs_pos):
            min_obs = min(
                min_obs,
                float(np.linalg.norm(p0 - o)) - self.peg_radius - self._obs_radius[i],
            )
        if float(wall_g.min(initial=math.inf)) > reach and min_obs > reach:
            return StepResult(
                position=target,
                obstacle_positions=obs_pos,
                contacts=[],
                force=np.zeros(2),
                torque_z=0.0,
                max_force=0.0,
                any_contact=False,
                obstacle_max_force=obs_max,
                obstacle_moved=moved,
                path=[p0 + dp * (s / substeps) for s in range(1, substeps + 1)],
            )

        wall_ids = [int(j) for j in np.flatnonzero(wall_g <= reach + CANDIDATE_PAD)]
        obs_ids = list(range(n_obs))

        p = p0.copy()
        max_force = 0.0
        any_contact = False
        kxd = kx_star + dx_star / substep_dt  # implicit spring-damper stiffness
        kyd = ky_star + dy_star / substep_dt

        def run_passes(anchor_eff, kx, ky, p_hint):
            nonlocal max_force, any_contact
            pos = p_hint
            contacts = []
            for _ in range(MAX_PUSH_PASSES):
                pos, contacts = self._settle(pos, anchor_eff, kx, ky, wall_ids, obs_pos, obs_ids)
                fx = kx * (pos[0] - anchor_eff[0])
                fy = ky * (pos[1] - anchor_eff[1])
                max_force = max(max_force, math.hypot(fx, fy))
                if contacts:
                    any_contact = True
                pushed = False
                for c in contacts:
                    if c.kind != "obstacle":
                        continue
                    i = c.index
                    obs_max[i] = max(obs_max[i], c.force)
                    if c.force > self._obs_resist[i]:
                        k_n = 1.0 / (c.normal[0] ** 2 / kx + c.normal[1] ** 2 / ky)
                        give = (c.force - self._obs_resist[i]) / k_n + 1e-9
                        before = obs_pos[i].copy()
                        self._push_obstacle(
                            i, -c.normal[0], -c.normal[1], give, c.force, obs_pos, moved, obs_max
                        )
                        if np.array_equal(before, obs_pos[i]):
                            continue
                        pushed = True
                if not pushed:
                    break
            return pos, contacts

        path = []
        for s in range(1, substeps + 1):
            anchor = p0 + dp * (s / substeps)
            delta_anchor = dp / substeps
            # implicit damping shifts the effective anchor toward the previous pose
            ax = (kx_star * anchor[0] + (dx_star / substep_dt) * (p[0] + delta_anchor[0])) / kxd
            ay = (ky_star * anchor[1] + (dy_star / substep_dt) * (p[1] + delta_anchor[1])) / kyd
            p, _ = run_passes((ax, ay), kxd, kyd, p)
            path.append(p.copy())

        # final static settle at the commanded target: damping force vanishes
        p, contacts = run_passes((target[0], target[1]), kx_star, ky_star, p)
        path.append(p.copy())

        fx = kx_star * (p[0] - target[0])
        fy = ky_star * (p[1] - target[1])
        tz = 0.0
        for c in contacts:
            rx, ry = c.point[0] - p[0], c.point[1] - p[1]
            tz += rx * (c.force * c.normal[1]) - ry * (c.force * c.normal[0])
        if not np.all(np.isfinite(p)):
            raise SimulationError("contact solver produced non-finite position")
        return StepResult(
            position=p,
            obstacle_positions=obs_pos,
            contacts=contacts,
            force=np.array([fx, fy]),
            torque_z=tz,
            max_force=max_force,
            any_contact=any_contact,
            obstacle_max_force=obs_max,
            obstacle_moved=moved,
            path=path,
        )
