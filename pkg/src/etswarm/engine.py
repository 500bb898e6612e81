"""Discrete-tick world hosting the robot protocol.

Each tick runs six phases in a fixed order: sense, deliver last tick's
messages (independent Bernoulli loss per receiver), step every robot in
ascending id order, integrate motion, apply scheduled damage, record
metrics.  All randomness comes from one seeded generator, so a world's
whole history is a function of its construction arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import protocol as proto
from .gene import NEIGHBOR_OFFSETS, Gene, Tag, embed, grows_from, lattice_distance, neighbor_tags
from .protocol import Message, MotionCommand, Params, RobotMemory, SensedNeighbor, State


class SeedPlacementError(ValueError):
    pass


@dataclass(frozen=True)
class CommModel:
    radius: float = 7.0
    loss_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")


@dataclass(frozen=True)
class MotionModel:
    speed: float = 0.33
    edge_follow_gap: float = 3.3
    collision_radius: float = 1.155


@dataclass(frozen=True)
class DamageEvent:
    """``kind`` is ``"cut"`` or ``"remove"``.

    A cut splits robots by the side of the line through ``point`` along
    ``direction``; robots on the left of the direction are removed
    (``side="remove"``) or shifted ``separation`` further left
    (``side="separate"``).
    """

    at_tick: int
    kind: str = "cut"
    point: tuple[float, float] = (0.0, 0.0)
    direction: tuple[float, float] = (0.0, 1.0)
    side: str = "separate"
    ids: tuple[int, ...] = ()
    separation: Optional[float] = None


@dataclass
class Robot:
    mem: RobotMemory
    x: float
    y: float
    heading: float = 0.0


@dataclass
class Transition:
    tick: int
    robot: int
    old: State
    new: State


@dataclass
class FragmentReport:
    ids: tuple[int, ...]
    size: int
    epoch: int
    gene_ones: int
    stable_fraction: float
    bijection: bool
    placed: int
    rms_error: float
    converged: bool
    diagnostic: Optional[str]


@dataclass
class ConvergenceReport:
    tick: int
    fragments: list[FragmentReport]
    watchdog: str = "ok"

    @property
    def converged(self) -> bool:
        return bool(self.fragments) and all(f.converged for f in self.fragments)

    @property
    def terminal(self) -> bool:
        """Every fragment is either converged or stuck on a diagnostic."""
        return bool(self.fragments) and all(
            f.converged or f.diagnostic is not None for f in self.fragments
        ) and any(f.diagnostic is not None for f in self.fragments)


TERMINAL_DIAGNOSTICS = frozenset({"CannotScale", "CannotSeed"})


# Blocked moves retry with the step turned left first, then right, so two
# robots meeting head-on slide past each other; the backward turns let a
# robot wedged in a cluster of searchers yield instead of locking up.
_SIDESTEPS = (0.0, math.pi / 4, -math.pi / 4, math.pi / 2, -math.pi / 2,
              3 * math.pi / 4, -3 * math.pi / 4, math.pi)


class World:
    def __init__(self, gene: Gene, params: Params = Params(), comm: CommModel = CommModel(),
                 motion: Optional[MotionModel] = None, seed: int = 0,
                 damage: Sequence[DamageEvent] = ()):
        if comm.radius <= 1.5 * params.d:
            raise ValueError("communication radius must exceed 1.5 d")
        self.gene = gene
        self.params = params
        self.comm = comm
        self.motion = motion or MotionModel(
            speed=0.1 * params.d, edge_follow_gap=params.d, collision_radius=0.35 * params.d)
        if self.motion.collision_radius >= params.d / 2:
            raise ValueError("collision radius must stay below d/2")
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.robots: dict[int, Robot] = {}
        self.tick = 0
        self.damage = sorted(damage, key=lambda e: e.at_tick)
        self.pending: list[tuple[Message, tuple[int, ...]]] = []
        self.transitions: list[Transition] = []
        self.violations: list[str] = []
        self.min_separation = math.inf
        self.last_progress = 0
        self.delivered = 0
        self.sent = 0
        self.trace: Optional[Callable[[str], None]] = None
        self.observers: list[Callable[["World"], None]] = []

    # -------------------------------------------------------------- setup

    def add_robot(self, mem: RobotMemory, x: float, y: float) -> None:
        if mem.id in self.robots:
            raise ValueError(f"duplicate robot id {mem.id}")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("robot position must be finite")
        self.robots[mem.id] = Robot(mem, float(x), float(y))

    def positions(self) -> tuple[list[int], np.ndarray]:
        ids = sorted(self.robots)
        pos = np.array([[self.robots[i].x, self.robots[i].y] for i in ids], dtype=float).reshape(-1, 2)
        return ids, pos

    # -------------------------------------------------------------- tick

    def step(self) -> "World":
        ids, pos = self.positions()
        n = len(ids)
        R = self.comm.radius
        diff = pos[None, :, :] - pos[:, None, :]  # diff[i, j] = pos[j] - pos[i]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        in_range = dist <= R
        np.fill_diagonal(in_range, False)
        index = {rid: k for k, rid in enumerate(ids)}

        # deliver
        inbox: dict[int, list[Message]] = {rid: [] for rid in ids}
        heard: dict[int, dict[int, proto.Heartbeat]] = {rid: {} for rid in ids}
        p = self.comm.loss_prob
        total = sum(len(r) for _, r in self.pending)
        draws = self.rng.random(total) if 0.0 < p < 1.0 and total else None
        k = 0
        for msg, receivers in self.pending:
            for rid in receivers:
                lost = p >= 1.0 or (draws is not None and draws[k] < p)
                k += 1
                if lost or rid not in inbox:
                    continue
                inbox[rid].append(msg)
                self.delivered += 1
                if msg.kind == proto.Kind.HEARTBEAT:
                    heard[rid][msg.sender_id] = msg.payload
        self.pending = []

        # sense + step
        commands: dict[int, MotionCommand] = {}
        progress = False
        for i, rid in enumerate(ids):
            robot = self.robots[rid]
            nbr = np.nonzero(in_range[i])[0]
            hb = heard[rid]
            sensed = [
                SensedNeighbor(ids[j], float(dist[i, j]), float(diff[i, j, 0]), float(diff[i, j, 1]),
                               hb.get(ids[j]))
                for j in nbr
            ]
            old = robot.mem.state
            mem, out, cmd = proto.step(robot.mem, inbox[rid], sensed, self.tick)
            robot.mem = mem
            if mem.state != old:
                progress = True
                self.transitions.append(Transition(self.tick, rid, old, mem.state))
                if not proto.is_legal(old, mem.state):
                    self.violations.append(f"tick {self.tick}: robot {rid} illegal {old}->{mem.state}")
            commands[rid] = cmd
            if out:
                receivers = tuple(ids[j] for j in nbr)
                for msg in out:
                    self.pending.append((msg, receivers))
                    self.sent += 1

        # motion
        if self._integrate(ids, pos, commands, index):
            progress = True
        if progress:
            self.last_progress = self.tick

        # damage
        while self.damage and self.damage[0].at_tick <= self.tick:
            apply_damage(self, self.damage.pop(0))
            self.last_progress = self.tick

        self._monitor()
        if self.trace is not None:
            self._write_trace()
        for obs in self.observers:
            obs(self)
        self.tick += 1
        return self

    def _integrate(self, ids, pos, commands, index) -> bool:
        speed = self.motion.speed
        gap = self.motion.edge_follow_gap
        min_sep = 2.0 * self.motion.collision_radius
        R = self.comm.radius
        cur = pos.copy()
        moved = False
        states = [self.robots[rid].mem.state for rid in ids]
        placed_mask = np.array([st in proto.PLACED for st in states], dtype=bool)
        queued_mask = np.array([st == State.QUEUED for st in states], dtype=bool)
        for rid in ids:
            cmd = commands.get(rid)
            if cmd is None or cmd.kind == "halt":
                continue
            i = index[rid]
            here = cur[i]
            if cmd.kind == "move":
                step = np.array([cmd.dx, cmd.dy])
                length = math.hypot(cmd.dx, cmd.dy)
                if length > speed:
                    step *= speed / length
            else:
                step = self._orbit_step(i, cur, placed_mask, gap, speed, R, cmd.clockwise)
                if step is None:
                    # no shape in range yet: follow the outline of the queue
                    step = self._orbit_step(i, cur, queued_mask, gap, speed, R, cmd.clockwise)
                if step is None:
                    continue
            others = np.delete(cur, i, axis=0)
            target = None
            for turn in _SIDESTEPS:
                c, s = math.cos(turn), math.sin(turn)
                trial = here + np.array([step[0] * c - step[1] * s, step[0] * s + step[1] * c])
                if not np.all(np.isfinite(trial)):
                    break
                if len(others) == 0 or np.sqrt(((others - trial) ** 2).sum(axis=1)).min() >= min_sep:
                    target, step = trial, trial - here
                    break
            if target is None:
                continue
            cur[i] = target
            robot = self.robots[rid]
            robot.heading = math.atan2(step[1], step[0])
            robot.x, robot.y = float(target[0]), float(target[1])
            moved = True
        return moved

    @staticmethod
    def _orbit_step(i, cur, centers_mask, gap, speed, R, clockwise):
        rel = cur[i] - cur
        d2 = (rel ** 2).sum(axis=1)
        d2[i] = np.inf
        d2[~centers_mask] = np.inf
        j = int(np.argmin(d2))
        r = math.sqrt(d2[j])
        if not math.isfinite(r) or r > R or r == 0.0:
            return None
        ux, uy = rel[j] / r
        ang = (-1.0 if clockwise else 1.0) * speed / gap
        c, s = math.cos(ang), math.sin(ang)
        wx, wy = ux * c - uy * s, ux * s + uy * c
        target = cur[j] + gap * np.array([wx, wy])
        step = target - cur[i]
        length = math.hypot(step[0], step[1])
        if length > speed:
            step *= speed / length
        return step

    def _monitor(self) -> None:
        ids, pos = self.positions()
        if len(ids) > 1:
            diff = pos[None, :, :] - pos[:, None, :]
            dist = np.sqrt((diff ** 2).sum(axis=2))
            np.fill_diagonal(dist, np.inf)
            m = float(dist.min())
            self.min_separation = min(self.min_separation, m)
            if m < 2.0 * self.motion.collision_radius - 1e-9:
                self.violations.append(f"tick {self.tick}: robots overlap ({m:.4f})")
        owners: dict[tuple, list[int]] = {}
        for rid in ids:
            mem = self.robots[rid].mem
            if mem.tag is not None and mem.state in proto.PLACED:
                owners.setdefault((mem.epoch, mem.tag), []).append(rid)
        dups = [v for v in owners.values() if len(v) > 1]
        if dups:
            frag = fragment_of(self)
            for group in dups:
                if len({frag[r] for r in group}) < len(group):
                    self.violations.append(f"tick {self.tick}: duplicate tag held by {group}")

    def _write_trace(self) -> None:
        lines = []
        for rid in sorted(self.robots):
            r = self.robots[rid]
            m = r.mem
            tag = f"{m.tag[0]},{m.tag[1]}" if m.tag is not None else "-"
            ts = str(m.ts) if m.ts is not None else "-"
            lines.append(f"{self.tick} {rid} {m.state.value} {tag} {ts} {r.x:.6f} {r.y:.6f}\n")
        self.trace("".join(lines))


def tick(world: World) -> World:
    """Advance ``world`` by one tick in place and return it."""
    return world.step()


# ------------------------------------------------------------------ setup


def seed_pair(gene: Gene, seed_tag: Tag) -> tuple[Tag, Tag]:
    ring = neighbor_tags(seed_tag)
    for k in range(6):
        a, b = ring[k], ring[(k + 1) % 6]
        if gene.flag(a) and gene.flag(b):
            return a, b
    raise SeedPlacementError(f"no two adjacent set cells around {seed_tag}")


def init_seeds(world: World, gene: Gene, seed_tag: Optional[Tag] = None,
               ids: Optional[Sequence[int]] = None) -> World:
    """Place the three seed robots: Active with TS 1 at ``seed_tag`` and two
    Inactive robots with TS 2 on adjacent set cells."""
    seed_tag = (0, 0) if seed_tag is None else tuple(seed_tag)
    if gene.flag(seed_tag) != 1:
        raise SeedPlacementError(f"seed tag {seed_tag} is not part of the shape")
    a, b = seed_pair(gene, seed_tag)
    if ids is None:
        start = max(world.robots, default=0) + 1
        ids = (start, start + 1, start + 2)
    d = world.params.d
    for rid, tag, ts, state in zip(ids, (seed_tag, a, b), (1, 2, 2),
                                   (State.ACTIVE, State.INACTIVE, State.INACTIVE)):
        mem = proto.placed_robot(rid, gene, tag, ts, state, world.params)
        world.add_robot(mem, *embed(tag, d))
    return world


def queue_cells(gene: Gene, seed_tag: Tag, count: int, direction: Optional[int] = None) -> list[Tag]:
    """Lattice cells for a straight queue leaving the shape near the seed.

    The head sits two hops from ``seed_tag`` and every cell keeps at least
    two hops from every set cell.  Returned head first.
    """
    ones = gene.ones()
    dirs = range(6) if direction is None else [direction]
    for k in dirs:
        dx, dy = NEIGHBOR_OFFSETS[k]
        cells = [(seed_tag[0] + dx * s, seed_tag[1] + dy * s) for s in range(2, count + 2)]
        if all(min(lattice_distance(c, o) for o in ones) >= 2 for c in cells):
            return cells
    raise SeedPlacementError(f"no straight queue fits beside seed {seed_tag}")


def queue_options(gene: Gene) -> list[tuple[Tag, int]]:
    """``(seed_tag, direction)`` pairs usable for seeding plus a queue.

    A seed qualifies when the whole shape can grow from its triangle and a
    straight queue in ``direction`` stays clear of the shape.
    """
    ones = gene.ones()
    options = []
    for t in ones:
        try:
            pair = seed_pair(gene, t)
        except SeedPlacementError:
            continue
        if not grows_from(ones, (t, *pair)):
            continue
        for k in range(6):
            dx, dy = NEIGHBOR_OFFSETS[k]
            head = (t[0] + 2 * dx, t[1] + 2 * dy)
            if min(lattice_distance(head, o) for o in ones) < 2:
                continue
            # the ray only moves away from the shape if the next cell is farther
            nxt = (t[0] + 3 * dx, t[1] + 3 * dy)
            if min(lattice_distance(nxt, o) for o in ones) < 2:
                continue
            options.append((t, k))
    return options


def build_world(gene: Gene, robot_count: Optional[int] = None, seed: int = 0,
                params: Params = Params(), comm: CommModel = CommModel(),
                motion: Optional[MotionModel] = None, damage: Sequence[DamageEvent] = (),
                seed_tag: Optional[Tag] = None) -> World:
    """Seeds plus a queue of the remaining robots, ids drawn from the seed.

    Ids increase from the far end of the queue toward the shape, so robots
    leave from the tail and travel along the remaining queue to reach the
    shape; the queue never detaches from it.
    """
    world = World(gene, params, comm, motion, seed, damage)
    robot_count = gene.total_ones if robot_count is None else robot_count
    if robot_count < 3:
        raise SeedPlacementError("at least three robots are needed")
    setup_rng = np.random.default_rng([seed, 1])
    options = queue_options(gene)
    n_queue = robot_count - 3
    if seed_tag is not None:
        seed_tag = tuple(seed_tag)
        choices = [o for o in options if o[0] == seed_tag] or [(seed_tag, None)]
    else:
        choices = options
    if not choices:
        raise SeedPlacementError("no seed cell on the shape boundary admits a queue")
    tag, direction = choices[int(setup_rng.integers(len(choices)))]
    cells = queue_cells(gene, tag, n_queue, direction) if n_queue else []
    ids = [int(v) for v in setup_rng.choice(np.arange(1, 10 * robot_count + 1), robot_count, replace=False)]
    seed_ids, queue_ids = ids[:3], sorted(ids[3:], reverse=True)
    init_seeds(world, gene, tag, seed_ids)
    d = params.d
    for rid, cell in zip(queue_ids, cells):
        world.add_robot(proto.queued_robot(rid, gene, params), *embed(cell, d))
    world.seed_tag = tag
    return world


# ------------------------------------------------------------------ damage


def apply_damage(world: World, event: DamageEvent) -> World:
    if event.kind == "remove":
        for rid in event.ids:
            world.robots.pop(rid, None)
        return world
    if event.kind != "cut":
        raise ValueError(f"unknown damage kind {event.kind!r}")
    dx, dy = event.direction
    norm = math.hypot(dx, dy)
    nx, ny = -dy / norm, dx / norm  # left of the direction
    px, py = event.point
    hit = [rid for rid, r in world.robots.items() if (r.x - px) * nx + (r.y - py) * ny > 0.0]
    if event.side == "remove":
        for rid in hit:
            del world.robots[rid]
        return world
    sep = event.separation if event.separation is not None else 3.0 * world.comm.radius
    if sep <= world.comm.radius:
        raise ValueError("separation must exceed the communication radius")
    for rid in hit:
        r = world.robots[rid]
        r.x += sep * nx
        r.y += sep * ny
    return world


# ------------------------------------------------------------------ reports


def fragments(world: World) -> list[list[int]]:
    """Connected components of the communication graph, sorted by min id."""
    ids, pos = world.positions()
    if not ids:
        return []
    diff = pos[None, :, :] - pos[:, None, :]
    adj = np.sqrt((diff ** 2).sum(axis=2)) <= world.comm.radius
    seen = [False] * len(ids)
    comps = []
    for s in range(len(ids)):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            i = stack.pop()
            comp.append(ids[i])
            for j in np.nonzero(adj[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        comps.append(sorted(comp))
    return sorted(comps)


def fragment_of(world: World) -> dict[int, int]:
    out = {}
    for k, comp in enumerate(fragments(world)):
        for rid in comp:
            out[rid] = k
    return out


def detect_convergence(world: World, watchdog_ticks: int = 3000) -> ConvergenceReport:
    reports = []
    d = world.params.d
    for comp in fragments(world):
        mems = [world.robots[r].mem for r in comp]
        epoch = max(m.epoch for m in mems)
        holders = [m for m in mems if m.epoch == epoch]
        gene = min(holders, key=lambda m: m.id).gene
        placed = [m for m in mems if m.state in proto.PLACED and m.tag is not None]
        tags = [m.tag for m in placed if m.epoch == epoch]
        ones = set(gene.ones())
        bijection = (len(tags) == len(set(tags)) == len(placed)) and set(tags) == ones
        stable = sum(1 for m in mems if m.state == State.STABLE)
        if placed and all(m.epoch == epoch for m in placed):
            err = np.array([
                [world.robots[m.id].x - embed(m.tag, d).px, world.robots[m.id].y - embed(m.tag, d).py]
                for m in placed
            ])
            err -= err.mean(axis=0)
            rms = float(math.sqrt((err ** 2).sum(axis=1).mean()))
        else:
            rms = math.nan
        diags = sorted({m.diagnostic for m in mems if m.diagnostic in TERMINAL_DIAGNOSTICS})
        converged = bijection and all(m.state == State.STABLE for m in placed)
        reports.append(FragmentReport(
            ids=tuple(comp), size=len(comp), epoch=epoch, gene_ones=len(ones),
            stable_fraction=stable / len(comp), bijection=bijection, placed=len(placed),
            rms_error=rms, converged=converged, diagnostic=diags[0] if diags else None,
        ))
    watchdog = "stalled" if world.tick - world.last_progress > watchdog_ticks else "ok"
    return ConvergenceReport(world.tick, reports, watchdog)
