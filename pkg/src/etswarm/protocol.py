"""Per-robot state machine for shape formation and regeneration.

:func:`step` is a pure function: one robot's memory, the messages delivered
to it this tick and what it senses go in; a new memory, the messages it
broadcasts and a motion command come out.  Nothing here keeps module state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Union

from .gene import (
    CannotScaleError,
    Gene,
    Tag,
    bfs_hops,
    census_from_boundary,
    embed,
    enclosed_cells,
    flood,
    gene_from_ones,
    generate_scaled_gene,
    grows_from,
    lattice_distance,
    neighbor_tags,
    translate_gene,
    trace_boundary,
)


class State(str, enum.Enum):
    QUEUED = "Queued"
    SEARCH = "Search"
    INACTIVE = "Inactive"
    ACTIVE = "Active"
    QUASI = "Quasi"
    STABLE = "Stable"
    DANGER = "Danger"
    LEADER = "Leader"

    def __str__(self):
        return self.value


PLACED = frozenset({State.INACTIVE, State.ACTIVE, State.QUASI, State.STABLE, State.DANGER, State.LEADER})

LEGAL_TRANSITIONS: Mapping[State, frozenset] = {
    State.QUEUED: frozenset({State.SEARCH}),
    State.SEARCH: frozenset({State.INACTIVE}),
    State.INACTIVE: frozenset({State.ACTIVE}),
    State.ACTIVE: frozenset({State.QUASI, State.STABLE}),
    State.QUASI: frozenset({State.ACTIVE}),
    # robots already standing on a cell of a freshly shared shape go
    # straight to Inactive instead of re-queueing
    State.STABLE: frozenset({State.DANGER, State.QUEUED, State.INACTIVE}),
    State.DANGER: frozenset({State.LEADER, State.QUEUED, State.INACTIVE}),
    State.LEADER: frozenset({State.ACTIVE}),
}


def is_legal(old: State, new: State) -> bool:
    return old == new or new in LEGAL_TRANSITIONS[old]


class Kind(enum.IntEnum):
    HEARTBEAT = 1
    ELECTION_ID = 2
    GENE_CHUNK = 3
    NEW_SHAPE_NOTICE = 4


class Scope(enum.IntEnum):
    QUEUE = 0
    DANGER = 1


@dataclass(frozen=True)
class Heartbeat:
    state: State
    tag: Optional[Tag]
    ts: Optional[int]
    epoch: int = 0


@dataclass(frozen=True)
class Election:
    """Minimum-id flood.  Queue gossip also carries the release watermark and
    a few of the smallest still-queued ids the sender knows."""

    scope: Scope
    epoch: int
    candidate: int
    watermark: int = -1
    known: tuple[int, ...] = ()
    leader: bool = False


@dataclass(frozen=True)
class GeneChunk:
    leader_id: int
    epoch: int
    index: int
    count: int
    entries: tuple[tuple[int, int, int, int], ...]


@dataclass(frozen=True)
class NewShapeNotice:
    leader_id: int
    epoch: int
    leader_tag: Tag
    chunk_count: int
    total_ones: int
    bounds: tuple[int, int, int, int]
    origin: Tag
    co_seeds: tuple[int, ...]


Payload = Union[Heartbeat, Election, GeneChunk, NewShapeNotice]

_PAYLOAD_TYPE = {
    Kind.HEARTBEAT: Heartbeat,
    Kind.ELECTION_ID: Election,
    Kind.GENE_CHUNK: GeneChunk,
    Kind.NEW_SHAPE_NOTICE: NewShapeNotice,
}


class Message(NamedTuple):
    sender_id: int
    kind: Kind
    payload: Payload


class SensedNeighbor(NamedTuple):
    """A robot within communication range.  ``dx, dy`` point from the sensing
    robot to the sensed one."""

    id: int
    distance: float
    dx: float = 0.0
    dy: float = 0.0
    last_heartbeat: Optional[Heartbeat] = None


class MotionCommand(NamedTuple):
    kind: str  # "halt", "edge_follow" or "move"
    dx: float = 0.0
    dy: float = 0.0
    clockwise: bool = True


HALT = MotionCommand("halt")
EDGE_FOLLOW = MotionCommand("edge_follow")


def move_toward(dx: float, dy: float) -> MotionCommand:
    return MotionCommand("move", dx, dy)


@dataclass(frozen=True)
class Params:
    d: float = 3.3
    neighbor_factor: float = 1.5
    quasi_wait: int = 20
    queue_release: int = 50
    election_timeout: int = 128
    announce_ticks: int = 10
    census_budget: int = 4000
    chunk_size: int = 32
    rebroadcasts: int = 5
    seed_delay: int = 40
    capture_factor: float = 1.1
    dock_patience: int = 25
    known_max: int = 8

    @property
    def neighbor_threshold(self) -> float:
        return self.neighbor_factor * self.d


@dataclass(frozen=True)
class QueueMemory:
    known: frozenset = frozenset()
    watermark: int = -1


@dataclass(frozen=True)
class ElectionMemory:
    candidate: Optional[int] = None
    leader_id: Optional[int] = None
    timer: int = 0


@dataclass(frozen=True)
class CensusMemory:
    phase: str = "announce"
    ticks: int = 0
    start: Optional[Tag] = None
    recorded: frozenset = frozenset()
    away: bool = False
    count: Optional[int] = None
    segregated: Optional[int] = None
    boundary: tuple = ()
    new_gene: Optional[Gene] = None
    target: Optional[Tag] = None
    co_seeds: tuple = ()
    messages: tuple = ()
    left: int = 0
    aborts: int = 0


@dataclass(frozen=True)
class DockMemory:
    target: Tag
    best: float = math.inf
    stall: int = 0


@dataclass(frozen=True)
class RxMemory:
    leader_id: int
    epoch: int
    chunks: Mapping[int, tuple] = field(default_factory=dict)
    notice: Optional[NewShapeNotice] = None


@dataclass(frozen=True)
class RobotMemory:
    id: int
    state: State
    gene: Gene
    params: Params = Params()
    epoch: int = 0
    tag: Optional[Tag] = None
    ts: Optional[int] = None
    nn_target: Optional[int] = None
    quasi_timer: int = 0
    queue_release_timer: int = 0
    seen: Mapping[int, Heartbeat] = field(default_factory=dict)
    queue: QueueMemory = QueueMemory()
    election: ElectionMemory = ElectionMemory()
    census: Optional[CensusMemory] = None
    dock: Optional[DockMemory] = None
    rx: Optional[RxMemory] = None
    dropped: int = 0
    diagnostic: Optional[str] = None

    def heartbeat(self) -> Heartbeat:
        return Heartbeat(self.state, self.tag, self.ts, self.epoch)


def queued_robot(rid: int, gene: Gene, params: Params = Params(), epoch: int = 0) -> RobotMemory:
    return RobotMemory(
        id=rid,
        state=State.QUEUED,
        gene=gene,
        params=params,
        epoch=epoch,
        queue_release_timer=params.queue_release,
        queue=QueueMemory(frozenset({rid})),
    )


def placed_robot(rid: int, gene: Gene, tag: Tag, ts: int, state: State,
                 params: Params = Params(), epoch: int = 0) -> RobotMemory:
    return RobotMemory(
        id=rid, state=state, gene=gene, params=params, epoch=epoch,
        tag=tag, ts=ts, nn_target=gene.nn(tag),
    )


# ---------------------------------------------------------------- helpers


class _Tick(NamedTuple):
    """Per-tick view shared by the state handlers."""

    inbox: list
    sensed: list
    prev_seen: Mapping[int, Heartbeat]
    out: list


def _placed_neighbors(mem: RobotMemory, sensed, radius: Optional[float] = None):
    """``(sensed, heartbeat)`` pairs for placed robots of the same gene epoch
    within ``radius`` (nearest-neighbour threshold by default)."""
    if radius is None:
        radius = mem.params.neighbor_threshold
    found = []
    for s in sensed:
        if s.distance > radius:
            continue
        hb = mem.seen.get(s.id)
        if hb is not None and hb.state in PLACED and hb.epoch == mem.epoch and hb.tag is not None:
            found.append((s, hb))
    return found


def count_neighbors(mem: RobotMemory, sensed) -> int:
    return len(_placed_neighbors(mem, sensed))


def assign_ts(neighbor_ts) -> int:
    """Gradient value for a robot that has just placed itself."""
    values = [t for t in neighbor_ts if t is not None]
    if not values:
        raise ValueError("assign_ts needs at least one placed neighbour with a known TS")
    return 1 + max(values)


def _slot_offset(tag: Tag, anchors, d: float) -> tuple[float, float]:
    """Offset from the sensing robot to the cell ``tag``, averaged over
    placed robots with known tags."""
    tx, ty = embed(tag, d)
    sx = sy = 0.0
    for s, hb in anchors:
        ax, ay = embed(hb.tag, d)
        sx += s.dx + tx - ax
        sy += s.dy + ty - ay
    k = len(anchors)
    return sx / k, sy / k


def localize(mem: RobotMemory, sensed) -> Optional[Tag]:
    """Pick the lattice cell a searching robot should occupy, or ``None``.

    Candidates neighbour at least two sensed placed robots.  A candidate is
    dropped when any robot in range already announces it or physically sits
    on it, when the gene flag there is 0, or when none of its placed
    neighbours is Active.  The survivor beside the lowest-TS Active robot
    wins, ties going to the canonical neighbour order around that robot.
    """
    d = mem.params.d
    near = _placed_neighbors(mem, sensed)
    if len(near) < 2:
        return None
    near_tags = {hb.tag: (s, hb) for s, hb in near}
    counts: dict[Tag, int] = {}
    for t in near_tags:
        for nb in neighbor_tags(t):
            if nb not in near_tags:
                counts[nb] = counts.get(nb, 0) + 1
    candidates = {c for c, k in counts.items() if k >= 2}
    if not candidates:
        return None

    taken = set()
    for s in sensed:
        hb = mem.seen.get(s.id)
        if hb is not None and hb.tag is not None and hb.epoch == mem.epoch:
            taken.add(hb.tag)
    candidates -= taken

    anchors = list(near)
    survivors = []
    for c in candidates:
        if mem.gene.flag(c) != 1:
            continue
        if not any(
            near_tags[nb][1].state == State.ACTIVE for nb in neighbor_tags(c) if nb in near_tags
        ):
            continue
        ox, oy = _slot_offset(c, anchors, d)
        if any(math.hypot(s.dx - ox, s.dy - oy) < 0.5 * d for s in sensed):
            continue
        survivors.append(c)
    if not survivors:
        return None

    actives = sorted(
        (hb.ts if hb.ts is not None else math.inf, s.id, hb.tag)
        for s, hb in near
        if hb.state == State.ACTIVE
    )
    for _, _, atag in actives:
        ring = neighbor_tags(atag)
        around = [c for c in ring if c in survivors]
        if around:
            return around[0]
    return None


# ---------------------------------------------------------------- step


def step(mem: RobotMemory, inbox, sensed, tick: int = 0):
    """Advance one robot by one tick.

    Returns ``(memory, outgoing messages, motion command)``.
    """
    prev_seen = mem.seen
    seen = None
    dropped = 0
    good = []
    for msg in inbox:
        try:
            kind = Kind(msg.kind)
            ok = isinstance(msg.payload, _PAYLOAD_TYPE[kind])
        except (ValueError, AttributeError, TypeError, KeyError):
            ok = False
        if not ok:
            dropped += 1
            continue
        good.append(msg)
        if kind == Kind.HEARTBEAT:
            if seen is None:
                seen = dict(prev_seen)
            seen[msg.sender_id] = msg.payload
    if seen is not None or dropped:
        mem = replace(mem, seen=seen if seen is not None else prev_seen, dropped=mem.dropped + dropped)

    ctx = _Tick(good, sensed, prev_seen, [])
    mem = _receive_gene(mem, ctx)
    handler = _HANDLERS[mem.state]
    mem, motion = handler(mem, ctx)
    if mem.state != State.QUEUED:
        ctx.out.insert(0, Message(mem.id, Kind.HEARTBEAT, mem.heartbeat()))
    return mem, ctx.out, motion


def _receive_gene(mem: RobotMemory, ctx: _Tick) -> RobotMemory:
    """Collect and relay gene chunks for a newer shape; relaying happens once
    per chunk."""
    rx = mem.rx
    changed = False
    for msg in ctx.inbox:
        if msg.kind not in (Kind.GENE_CHUNK, Kind.NEW_SHAPE_NOTICE):
            continue
        p = msg.payload
        if p.epoch <= mem.epoch or p.leader_id == mem.id:
            continue
        key = (p.epoch, -p.leader_id)
        if rx is None or key > (rx.epoch, -rx.leader_id):
            rx = RxMemory(p.leader_id, p.epoch, {}, None)
            changed = True
        elif key != (rx.epoch, -rx.leader_id):
            continue
        if msg.kind == Kind.GENE_CHUNK:
            if p.index in rx.chunks:
                continue
            rx = replace(rx, chunks={**rx.chunks, p.index: p.entries})
        else:
            if rx.notice is not None:
                continue
            rx = replace(rx, notice=p)
        changed = True
        ctx.out.append(Message(mem.id, msg.kind, p))
    if changed:
        mem = replace(mem, rx=rx)
    return mem


def _complete_gene(mem: RobotMemory) -> Optional[tuple[Gene, NewShapeNotice]]:
    rx = mem.rx
    if rx is None or rx.notice is None:
        return None
    notice = rx.notice
    if len(rx.chunks) < notice.chunk_count:
        return None
    ones = [(e[0], e[1]) for i in range(notice.chunk_count) for e in rx.chunks[i] if e[2]]
    gene = gene_from_ones(ones, notice.bounds, notice.origin)
    if gene.total_ones != notice.total_ones:
        return None
    return gene, notice


def _adopt_gene(mem: RobotMemory, gene: Gene, notice: NewShapeNotice) -> RobotMemory:
    seen = {k: v for k, v in mem.seen.items() if v.epoch == notice.epoch}
    base = dict(gene=gene, epoch=notice.epoch, seen=seen, election=ElectionMemory(),
                census=None, dock=None, rx=None)
    if mem.tag is not None and gene.flag(mem.tag) == 1:
        if mem.id in notice.co_seeds:
            ts = 2
        else:
            hops = bfs_hops(notice.leader_tag, set(gene.ones()))
            ts = 2 + hops.get(mem.tag, len(hops))
        return replace(mem, state=State.INACTIVE, ts=ts, nn_target=gene.nn(mem.tag), **base)
    return replace(
        mem, state=State.QUEUED, tag=None, ts=None, nn_target=None,
        queue=QueueMemory(frozenset({mem.id})),
        queue_release_timer=mem.params.queue_release, **base,
    )


def _election_inbox(mem: RobotMemory, ctx: _Tick) -> RobotMemory:
    el = mem.election
    cand, leader = el.candidate, el.leader_id
    for msg in ctx.inbox:
        if msg.kind != Kind.ELECTION_ID:
            continue
        p = msg.payload
        if p.scope != Scope.DANGER or p.epoch != mem.epoch:
            continue
        cand = p.candidate if cand is None else min(cand, p.candidate)
        if p.leader:
            leader = p.candidate if leader is None else min(leader, p.candidate)
    if (cand, leader) != (el.candidate, el.leader_id):
        mem = replace(mem, election=replace(el, candidate=cand, leader_id=leader))
    return mem


def _election_broadcast(mem: RobotMemory, ctx: _Tick):
    el = mem.election
    if el.leader_id is not None:
        ctx.out.append(Message(mem.id, Kind.ELECTION_ID,
                               Election(Scope.DANGER, mem.epoch, el.leader_id, leader=True)))
    elif el.candidate is not None:
        ctx.out.append(Message(mem.id, Kind.ELECTION_ID,
                               Election(Scope.DANGER, mem.epoch, el.candidate)))


# ---------------------------------------------------------------- states


def queued_step(mem: RobotMemory, ctx: _Tick):
    q = mem.queue
    known = set(q.known)
    known.add(mem.id)
    wm = q.watermark
    for msg in ctx.inbox:
        p = msg.payload
        if msg.kind == Kind.ELECTION_ID and p.scope == Scope.QUEUE and p.epoch == mem.epoch:
            wm = max(wm, p.watermark)
            known.add(p.candidate)
            known.update(p.known)
        elif msg.kind == Kind.HEARTBEAT and p.state == State.SEARCH and p.epoch == mem.epoch:
            wm = max(wm, msg.sender_id)
    pending = sorted(i for i in known if i > wm or i == mem.id)
    known_fs = frozenset(pending)
    lowest = pending[0]
    timer = mem.queue_release_timer
    if lowest == mem.id:
        timer -= 1
    else:
        timer = mem.params.queue_release
    ctx.out.append(Message(mem.id, Kind.ELECTION_ID, Election(
        Scope.QUEUE, mem.epoch, lowest, wm, tuple(pending[: mem.params.known_max]))))
    if lowest == mem.id and timer <= 0:
        return replace(mem, state=State.SEARCH, queue=QueueMemory(known_fs, max(wm, mem.id)),
                       queue_release_timer=0), EDGE_FOLLOW
    return replace(mem, queue=QueueMemory(known_fs, wm), queue_release_timer=timer), HALT


def search_step(mem: RobotMemory, ctx: _Tick):
    p = mem.params
    d = p.d
    anchors = _placed_neighbors(mem, ctx.sensed, radius=2.0 * d)
    dock = mem.dock
    if dock is not None:
        if not anchors or mem.gene.flag(dock.target) != 1 or _taken(mem, ctx, dock.target):
            dock = None
        else:
            ox, oy = _slot_offset(dock.target, anchors, d)
            dist = math.hypot(ox, oy)
            if dist <= 1e-6 * d:
                return _place(mem, ctx, dock.target)
            if dist < dock.best - 1e-9 * d:
                dock = DockMemory(dock.target, dist, 0)
            else:
                dock = replace(dock, stall=dock.stall + 1)
            if dock.stall > p.dock_patience:
                dock = None
            else:
                return replace(mem, dock=dock), move_toward(ox, oy)

    target = localize(mem, ctx.sensed)
    if target is not None:
        ox, oy = _slot_offset(target, anchors or _placed_neighbors(mem, ctx.sensed), d)
        dist = math.hypot(ox, oy)
        if dist <= 1e-6 * d:
            return _place(mem, ctx, target)
        if dist <= p.capture_factor * d:
            return replace(mem, dock=DockMemory(target, dist, 0)), move_toward(ox, oy)
    if mem.dock is not None:
        mem = replace(mem, dock=None)
    return mem, EDGE_FOLLOW


def _taken(mem: RobotMemory, ctx: _Tick, tag: Tag) -> bool:
    for s in ctx.sensed:
        hb = mem.seen.get(s.id)
        if hb is not None and hb.tag == tag and hb.epoch == mem.epoch:
            return True
    return False


def _place(mem: RobotMemory, ctx: _Tick, tag: Tag):
    near = _placed_neighbors(mem, ctx.sensed)
    ts = assign_ts(hb.ts for _, hb in near)
    mem = replace(mem, state=State.INACTIVE, tag=tag, ts=ts, nn_target=mem.gene.nn(tag), dock=None)
    return mem, HALT


def inactive_step(mem: RobotMemory, ctx: _Tick):
    for s, hb in _placed_neighbors(mem, ctx.sensed):
        if hb.state != State.STABLE:
            continue
        before = ctx.prev_seen.get(s.id)
        if before is not None and before.epoch == mem.epoch and before.state in (State.ACTIVE, State.QUASI):
            return replace(mem, state=State.ACTIVE), HALT
    return mem, HALT


def active_step(mem: RobotMemory, ctx: _Tick):
    near = _placed_neighbors(mem, ctx.sensed)
    for _, hb in near:
        if hb.state == State.ACTIVE and hb.ts is not None and hb.ts < mem.ts:
            return replace(mem, state=State.QUASI, quasi_timer=mem.params.quasi_wait), HALT
    if len(near) == mem.nn_target:
        return replace(mem, state=State.STABLE), HALT
    return mem, HALT


def quasi_step(mem: RobotMemory, ctx: _Tick):
    timer = mem.quasi_timer - 1
    if timer <= 0:
        return replace(mem, state=State.ACTIVE, quasi_timer=0), HALT
    return replace(mem, quasi_timer=timer), HALT


def stable_step(mem: RobotMemory, ctx: _Tick):
    done = _complete_gene(mem)
    if done is not None:
        return _adopt_gene(mem, *done), HALT
    mem = _election_inbox(mem, ctx)
    if count_neighbors(mem, ctx.sensed) < mem.nn_target and mem.election.leader_id is None:
        el = mem.election
        cand = mem.id if el.candidate is None else min(el.candidate, mem.id)
        mem = replace(mem, state=State.DANGER,
                      election=ElectionMemory(cand, None, mem.params.election_timeout))
    _election_broadcast(mem, ctx)
    return mem, HALT


def danger_step(mem: RobotMemory, ctx: _Tick):
    done = _complete_gene(mem)
    if done is not None:
        return _adopt_gene(mem, *done), HALT
    mem = _election_inbox(mem, ctx)
    el = mem.election
    backed_off = el.leader_id is not None or (el.candidate is not None and el.candidate < mem.id)
    if not backed_off:
        timer = el.timer - 1
        if timer <= 0:
            mem = replace(mem, state=State.LEADER,
                          election=ElectionMemory(mem.id, mem.id, 0), census=CensusMemory())
            _election_broadcast(mem, ctx)
            return mem, HALT
        mem = replace(mem, election=replace(el, timer=timer))
    _election_broadcast(mem, ctx)
    return mem, HALT


def leader_step(mem: RobotMemory, ctx: _Tick):
    c = mem.census or CensusMemory()
    p = mem.params
    if c.phase not in ("flood", "settle", "done"):
        _election_broadcast(mem, ctx)
    phase = c.phase
    if phase == "announce":
        if c.ticks + 1 >= p.announce_ticks:
            c = replace(c, phase="exit", ticks=0, recorded=frozenset({mem.tag}))
        else:
            c = replace(c, ticks=c.ticks + 1)
        return replace(mem, census=c), HALT

    if phase == "exit":
        return _leave_slot(mem, ctx, c)

    if phase == "census":
        return _census_walk(mem, ctx, c)

    if phase == "return":
        return _return_to_seat(mem, ctx, c)

    if phase == "flood":
        ctx.out.extend(c.messages)
        left = c.left - 1
        if left <= 0:
            c = replace(c, phase="settle", left=p.seed_delay)
        else:
            c = replace(c, left=left)
        return replace(mem, census=c), HALT

    if phase == "settle":
        left = c.left - 1
        if left <= 0:
            mem = replace(mem, state=State.ACTIVE, ts=1, nn_target=mem.gene.nn(mem.tag),
                          census=replace(c, phase="done"), election=ElectionMemory())
            return mem, HALT
        return replace(mem, census=replace(c, left=left)), HALT

    return mem, HALT  # failed: stays put and reports its diagnostic


def _leave_slot(mem: RobotMemory, ctx: _Tick, c: CensusMemory):
    """Step out of the home slot into a free neighbouring slot so the
    periphery walk starts outside the remnant."""
    p = mem.params
    d = p.d
    anchors = _placed_neighbors(mem, ctx.sensed, radius=2.0 * d)
    if not anchors:
        return _plan_regeneration(mem, c, HALT)
    hx, hy = _slot_offset(mem.tag, anchors, d)
    home = embed(mem.tag, d)
    # only slots that also touch another robot lie on the periphery walk
    touching = {t for _, hb in anchors for t in neighbor_tags(hb.tag)}
    for nb in sorted(neighbor_tags(mem.tag), key=lambda t: t not in touching):
        e = embed(nb, d)
        ox, oy = hx + e.px - home.px, hy + e.py - home.py
        if any(math.hypot(s.dx - ox, s.dy - oy) < 0.5 * d for s in ctx.sensed):
            continue
        if math.hypot(ox, oy) <= 1e-6 * d or c.ticks >= p.dock_patience * 4:
            return replace(mem, census=replace(c, phase="census", ticks=0, start=nb)), EDGE_FOLLOW
        return replace(mem, census=replace(c, ticks=c.ticks + 1)), move_toward(ox, oy)
    # boxed in on all sides: walk from where it stands
    return replace(mem, census=replace(c, phase="census", ticks=0, start=mem.tag)), EDGE_FOLLOW


def _census_walk(mem: RobotMemory, ctx: _Tick, c: CensusMemory):
    p = mem.params
    d = p.d
    heard = {m.sender_id for m in ctx.inbox if m.kind == Kind.HEARTBEAT}
    recorded = set(c.recorded)
    anchors = []
    for s in ctx.sensed:
        hb = mem.seen.get(s.id)
        if hb is None or hb.epoch != mem.epoch or hb.tag is None or hb.state not in PLACED:
            continue
        anchors.append((s, hb))
        if s.id in heard:
            recorded.add(hb.tag)
    if not anchors:
        # nothing left around the leader: it is the whole remnant
        return _plan_regeneration(mem, replace(c, recorded=frozenset(recorded)), EDGE_FOLLOW)
    start = c.start if c.start is not None else mem.tag
    ox, oy = _slot_offset(start, anchors, d)
    gap = math.hypot(ox, oy)
    away = c.away or gap > 1.5 * d
    ticks = c.ticks + 1
    # two tags (its own and one other) is all a two-robot remnant offers
    if away and len(recorded) >= 2 and gap <= 0.5 * d:
        c = replace(c, phase="return", recorded=frozenset(recorded), away=away, ticks=0)
        return _plan_regeneration(mem, c, EDGE_FOLLOW)
    if ticks > p.census_budget:
        c = replace(c, recorded=frozenset({mem.tag}), away=False, ticks=0, aborts=c.aborts + 1)
        return replace(mem, census=c, diagnostic="CensusAbort"), EDGE_FOLLOW
    c = replace(c, recorded=frozenset(recorded), away=away, ticks=ticks)
    return replace(mem, census=c), EDGE_FOLLOW


def _plan_regeneration(mem: RobotMemory, c: CensusMemory, motion: MotionCommand):
    """Turn the recorded periphery into a census, a scaled gene and a seat.

    The seat is the leader's own slot when a seed triangle works there;
    otherwise the nearest free slot beside two adjacent remnant robots where
    one does.
    """
    gene = mem.gene
    cells = flood(mem.tag, set(c.recorded) | {mem.tag})
    boundary = trace_boundary(cells)
    n = census_from_boundary(gene, boundary)
    remnant = enclosed_cells(boundary) & set(gene.ones())
    c = replace(c, count=n, segregated=gene.total_ones - n, boundary=tuple(boundary))
    try:
        scaled = generate_scaled_gene(gene, n)
    except CannotScaleError:
        return replace(mem, census=replace(c, phase="failed"), diagnostic="CannotScale"), HALT

    tags_to_ids = {}
    for rid, hb in sorted(mem.seen.items()):
        if hb.epoch == mem.epoch and hb.tag is not None and hb.tag in remnant and rid != mem.id:
            tags_to_ids.setdefault(hb.tag, rid)
    occupied = set(tags_to_ids)
    for seat in seat_candidates(mem.tag, occupied):
        placement = place_scaled_gene(scaled, seat, occupied | {seat}, tags_to_ids)
        if placement is not None:
            new_gene, co_seeds = placement
            c = replace(c, phase="return", ticks=0, target=seat, new_gene=new_gene,
                        co_seeds=tuple(co_seeds))
            return replace(mem, census=c), motion
    return replace(mem, census=replace(c, phase="failed"), diagnostic="CannotSeed"), HALT


def seat_candidates(home: Tag, occupied: set) -> list[Tag]:
    """``home`` first, then free cells beside two adjacent occupied cells,
    nearest first."""
    free = set()
    for t in occupied:
        for nb in neighbor_tags(t):
            if nb in occupied or nb == home:
                continue
            ring = neighbor_tags(nb)
            if any(ring[k] in occupied and ring[(k + 1) % 6] in occupied for k in range(6)):
                free.add(nb)
    return [home] + sorted(free, key=lambda t: (lattice_distance(home, t), t))


def _return_to_seat(mem: RobotMemory, ctx: _Tick, c: CensusMemory):
    p = mem.params
    d = p.d
    anchors = _placed_neighbors(mem, ctx.sensed, radius=2.0 * d)
    if not anchors:
        return _seat(mem, ctx, c)
    ox, oy = _slot_offset(c.target, anchors, d)
    dist = math.hypot(ox, oy)
    if dist <= 1e-6 * d:
        return _seat(mem, ctx, c)
    if c.ticks >= p.census_budget:
        return replace(mem, census=replace(c, phase="failed"), diagnostic="CannotSeed"), HALT
    c = replace(c, ticks=c.ticks + 1)
    if c.target == mem.tag or dist <= p.capture_factor * d:
        return replace(mem, census=c), move_toward(ox, oy)
    return replace(mem, census=c), EDGE_FOLLOW


def _seat(mem: RobotMemory, ctx: _Tick, c: CensusMemory):
    """Take the seat, adopt the new gene and start flooding it."""
    p = mem.params
    epoch = mem.epoch + 1
    msgs = gene_messages(mem.id, epoch, c.new_gene, c.target, c.co_seeds, p.chunk_size)
    c = replace(c, phase="flood", messages=tuple(msgs), left=p.rebroadcasts)
    seen = {k: v for k, v in mem.seen.items() if v.epoch == epoch}
    mem = replace(mem, gene=c.new_gene, epoch=epoch, census=c, seen=seen, tag=c.target,
                  nn_target=c.new_gene.nn(c.target), ts=1)
    return mem, HALT


def place_scaled_gene(scaled: Gene, leader_tag: Tag, remnant: set, tags_to_ids: Mapping[Tag, int]):
    """Translate ``scaled`` so it covers as much of the remnant as possible
    while putting the leader on a set cell with two adjacent co-seeds from
    which the whole shape can grow.

    Returns ``(gene, co_seed_ids)`` or ``None``.
    """
    ones = scaled.ones()
    best = None
    for s in ones:
        shift = (leader_tag[0] - s[0], leader_tag[1] - s[1])
        placed = {(x + shift[0], y + shift[1]) for x, y in ones}
        seeds = _co_seeds(leader_tag, placed, tags_to_ids)
        if seeds is None:
            continue
        key = (-len(placed & remnant), shift)
        if best is None or key < best[0]:
            best = (key, shift, seeds)
    if best is None:
        return None
    return translate_gene(scaled, best[1]), best[2]


def _co_seeds(leader_tag: Tag, placed: set, tags_to_ids: Mapping[Tag, int]):
    """Lowest-id pair of robots on mutually adjacent cells beside the leader
    whose triangle grows into all of ``placed``."""
    ring = [t for t in neighbor_tags(leader_tag) if t in placed and t in tags_to_ids]
    pairs = []
    for i, a in enumerate(ring):
        for b in ring[i + 1:]:
            if b in neighbor_tags(a) and grows_from(placed, (leader_tag, a, b)):
                pairs.append(tuple(sorted((tags_to_ids[a], tags_to_ids[b]))))
    return min(pairs) if pairs else None


def gene_messages(sender: int, epoch: int, gene: Gene, leader_tag: Tag, co_seeds, chunk_size: int):
    ones = [(t[0], t[1], 1, gene.nn(t)) for t in gene.ones()]
    chunks = [tuple(ones[i:i + chunk_size]) for i in range(0, len(ones), chunk_size)]
    msgs = [
        Message(sender, Kind.GENE_CHUNK, GeneChunk(sender, epoch, i, len(chunks), chunk))
        for i, chunk in enumerate(chunks)
    ]
    msgs.append(Message(sender, Kind.NEW_SHAPE_NOTICE, NewShapeNotice(
        sender, epoch, leader_tag, len(chunks), gene.total_ones, gene.bounds(), gene.origin,
        tuple(co_seeds))))
    return msgs


_HANDLERS = {
    State.QUEUED: queued_step,
    State.SEARCH: search_step,
    State.INACTIVE: inactive_step,
    State.ACTIVE: active_step,
    State.QUASI: quasi_step,
    State.STABLE: stable_step,
    State.DANGER: danger_step,
    State.LEADER: leader_step,
}
