"""Per-state behaviour of the robot state machine, driven by hand-built
neighbourhoods rather than the full simulator."""

import math
import random
from dataclasses import replace

import pytest

from etswarm import protocol as proto
from etswarm.gene import Bitmap, compile_gene, embed, generate_scaled_gene, neighbor_tags
from etswarm.protocol import (
    Election,
    ElectionMemory,
    Heartbeat,
    Kind,
    Message,
    Params,
    RobotMemory,
    Scope,
    SensedNeighbor,
    State,
    assign_ts,
    gene_messages,
    is_legal,
    localize,
    placed_robot,
    queued_robot,
    step,
)

P = Params()
D = P.d
BLOCK = compile_gene(Bitmap.from_rows([[1] * 5] * 5))  # tags -2..2 on both axes


def pos(tag):
    p = embed(tag, D)
    return p.px, p.py


def sense(me_xy, others):
    """Inbox of heartbeats and sensed list for a robot at ``me_xy`` among
    ``others`` = [(memory, (x, y))]."""
    inbox, sensed = [], []
    for m, (x, y) in others:
        dx, dy = x - me_xy[0], y - me_xy[1]
        hb = m.heartbeat()
        inbox.append(Message(m.id, Kind.HEARTBEAT, hb))
        sensed.append(SensedNeighbor(m.id, math.hypot(dx, dy), dx, dy, hb))
    return inbox, sensed


def placed(rid, tag, ts, state=State.STABLE, gene=BLOCK):
    return placed_robot(rid, gene, tag, ts, state, P)


def ring_of(center, state=State.STABLE, ts=3, skip=(), start_id=100):
    return [(placed(start_id + k, t, ts, state), pos(t))
            for k, t in enumerate(neighbor_tags(center)) if t not in skip]


# ---------------------------------------------------------------- table


def test_legal_transition_table():
    allowed = {
        (State.QUEUED, State.SEARCH), (State.SEARCH, State.INACTIVE),
        (State.INACTIVE, State.ACTIVE), (State.ACTIVE, State.QUASI),
        (State.ACTIVE, State.STABLE), (State.QUASI, State.ACTIVE),
        (State.STABLE, State.DANGER), (State.STABLE, State.QUEUED),
        (State.DANGER, State.LEADER), (State.DANGER, State.QUEUED),
        (State.LEADER, State.ACTIVE),
        # robots already standing inside a freshly shared shape
        (State.STABLE, State.INACTIVE), (State.DANGER, State.INACTIVE),
    }
    for a in State:
        for b in State:
            assert is_legal(a, b) == (a == b or (a, b) in allowed), (a, b)


# ---------------------------------------------------------------- step


class TestStep:
    def test_stable_fixpoint(self):
        me = placed(1, (0, 0), 2)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0)))
        new, out, cmd = step(me, inbox, sensed, 0)
        assert new.state == State.STABLE
        assert replace(new, seen=me.seen) == me
        assert [m.kind for m in out] == [Kind.HEARTBEAT]
        assert cmd == proto.HALT

    def test_active_reaching_nn_becomes_stable(self):
        me = placed(1, (0, 0), 2, State.ACTIVE)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0)))
        assert step(me, inbox, sensed)[0].state == State.STABLE

    def test_stable_missing_neighbor_enters_danger(self):
        me = placed(1, (0, 0), 2)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0), skip=[(1, 0)]))
        new, out, _ = step(me, inbox, sensed)
        assert new.state == State.DANGER
        assert any(m.kind == Kind.ELECTION_ID and m.payload.candidate == 1 for m in out)

    def test_pure(self):
        me = placed(1, (0, 0), 2, State.ACTIVE)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0), skip=[(0, 1)]))
        assert step(me, inbox, sensed, 5) == step(me, inbox, sensed, 5)

    def test_malformed_messages_dropped_and_counted(self):
        me = placed(1, (0, 0), 2)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0)))
        bad = [Message(9, Kind.HEARTBEAT, "garbage"), Message(9, 77, None)]
        new, _, _ = step(me, inbox + bad, sensed)
        assert new.dropped == 2
        assert new.state == State.STABLE

    def test_placed_robots_always_heartbeat_with_tag(self):
        for state in proto.PLACED:
            me = placed(1, (0, 0), 2, state)
            if state == State.LEADER:
                me = replace(me, census=proto.CensusMemory())
            _, out, _ = step(me, [], [])
            hb = [m for m in out if m.kind == Kind.HEARTBEAT]
            assert len(hb) == 1 and hb[0].payload.tag == (0, 0)


# ---------------------------------------------------------------- queue


def run_queue(ids, loss=0.0, seed=0, ticks=400):
    """Fully connected queue; returns the release order and whether each
    release was the lowest id still queued at that moment."""
    rng = random.Random(seed)
    gene = BLOCK
    mems = {i: queued_robot(i, gene, P) for i in ids}
    pending = []
    order, safe = [], True
    for t in range(ticks):
        inbox = {i: [] for i in mems}
        for msg in pending:
            for i in mems:
                if i != msg.sender_id and rng.random() >= loss:
                    inbox[i].append(msg)
        pending = []
        still = sorted(i for i, m in mems.items() if m.state == State.QUEUED)
        for i in sorted(mems):
            m = mems[i]
            if m.state != State.QUEUED:
                # released robots leave; only their heartbeats remain audible
                pending.append(Message(i, Kind.HEARTBEAT, Heartbeat(State.SEARCH, None, None, 0)))
                continue
            new, out, _ = step(m, inbox[i], [])
            if new.state == State.SEARCH:
                order.append(i)
                safe = safe and i == still[0]
            mems[i] = new
            pending.extend(out)
    return order, safe


class TestQueue:
    def test_lowest_id_released_first(self):
        order, safe = run_queue([7, 3, 9], ticks=P.queue_release + 5)
        assert order == [3]
        assert safe

    def test_release_order_follows_ids(self):
        order, safe = run_queue([7, 3, 9], ticks=4 * P.queue_release)
        assert order == [3, 7, 9]
        assert safe

    def test_single_robot_leaves_after_timer(self):
        m = queued_robot(4, BLOCK, P)
        for t in range(P.queue_release - 1):
            m, _, cmd = step(m, [], [])
            assert m.state == State.QUEUED and cmd == proto.HALT
        m, _, cmd = step(m, [], [])
        assert m.state == State.SEARCH
        assert cmd == proto.EDGE_FOLLOW

    @pytest.mark.parametrize("seed", range(20))
    def test_loss_never_releases_non_minimum(self, seed):
        rng = random.Random(seed)
        ids = rng.sample(range(1, 200), 6)
        order, safe = run_queue(ids, loss=0.2, seed=seed, ticks=8 * P.queue_release)
        assert safe
        assert order == sorted(ids)[: len(order)]


# ---------------------------------------------------------------- localize


def searcher(rid=50, gene=BLOCK):
    return RobotMemory(rid, State.SEARCH, gene, P)


def localize_among(others, at, gene=BLOCK):
    me = searcher(gene=gene)
    inbox, sensed = sense(at, others)
    me, _, _ = step(me, inbox, [])  # learn heartbeats, sense nothing yet
    return localize(me, sensed)


def centroid(tags):
    pts = [pos(t) for t in tags]
    return sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts)


class TestLocalize:
    def test_targets_lowest_ts_active(self):
        tags = [(0, 0), (1, 0), (0, 1)]
        a = placed(1, (0, 0), 4, State.ACTIVE)
        b = placed(2, (1, 0), 5, State.ACTIVE)
        s = placed(3, (0, 1), 3)
        others = [(a, pos(a.tag)), (b, pos(b.tag)), (s, pos(s.tag))]
        # first free slot around the TS-4 robot in canonical order
        assert localize_among(others, centroid(tags)) == (-1, 1)
        b = replace(b, ts=3)
        others[1] = (b, pos(b.tag))
        assert localize_among(others, centroid(tags)) == (1, 1)

    def test_zero_flag_slot_excluded(self):
        gene = compile_gene(Bitmap.from_rows([[1, 1], [1, 0]]))  # origin falls back
        ones = gene.ones()
        mems = [placed(i + 1, t, 2 if i else 1, State.ACTIVE if i == 0 else State.STABLE, gene)
                for i, t in enumerate(ones[:2])]
        others = [(m, pos(m.tag)) for m in mems]
        slot = localize_among(others, centroid(ones[:2]), gene)
        assert slot is None or gene.flag(slot) == 1
        assert slot == ones[2]

    def test_no_survivor_when_all_slots_full(self):
        center = placed(1, (0, 0), 1, State.ACTIVE)
        others = [(center, pos((0, 0)))] + ring_of((0, 0))
        assert localize_among(others, (0.3 * D, 0.2 * D)) is None

    def test_needs_two_placed_neighbors(self):
        a = placed(1, (0, 0), 1, State.ACTIVE)
        assert localize_among([(a, pos((0, 0)))], (0.5 * D, -0.8 * D)) is None

    def test_needs_an_active_neighbor(self):
        a, b = placed(1, (0, 0), 1), placed(2, (0, 1), 2)
        others = [(a, pos(a.tag)), (b, pos(b.tag))]
        assert localize_among(others, centroid([(0, 0), (0, 1)])) is None


def xy_tag(X, Y):
    """Tag for a point written in the (X, Y) convention of the worked example."""
    return (-Y, X)


class TestThreeNeighbourReplay:
    """R1 at (0, 0), R2 at (1, 0) and R3 at (0, -1) in (X, Y) coordinates;
    the newcomer R4 may sit at (1, 1) or (0, -1), and (0, -1) is taken."""

    def setup_method(self):
        gene = compile_gene(Bitmap.from_rows([[1] * 3] * 3))
        self.gene = gene
        self.r1 = placed(1, xy_tag(0, 0), 1, State.ACTIVE, gene)
        self.r2 = placed(2, xy_tag(1, 0), 2, State.INACTIVE, gene)
        self.r3 = placed(3, xy_tag(0, -1), 2, State.INACTIVE, gene)

    def test_mapping_keeps_adjacency(self):
        for a, b in [((0, 0), (1, 0)), ((0, 0), (0, -1)), ((1, 0), (1, 1)), ((0, 0), (1, 1))]:
            assert xy_tag(*b) in neighbor_tags(xy_tag(*a))
        common = set(neighbor_tags(xy_tag(0, 0))) & set(neighbor_tags(xy_tag(1, 0)))
        assert common == {xy_tag(1, 1), xy_tag(0, -1)}

    def test_localizes_at_one_one(self):
        others = [(m, pos(m.tag)) for m in (self.r1, self.r2, self.r3)]
        near_slot = pos(xy_tag(1, 1))
        at = (near_slot[0] + 0.3 * D, near_slot[1] + 0.2 * D)
        assert localize_among(others, at, self.gene) == xy_tag(1, 1)

    def test_search_step_docks_and_places(self):
        others = [(m, pos(m.tag)) for m in (self.r1, self.r2, self.r3)]
        me = searcher(gene=self.gene)
        target = pos(xy_tag(1, 1))
        x, y = target[0] + 0.4 * D, target[1] - 0.3 * D
        for _ in range(200):
            inbox, sensed = sense((x, y), others)
            me, out, cmd = step(me, inbox, sensed)
            if me.state != State.SEARCH:
                break
            assert cmd.kind == "move"
            assert me.dock is None or me.dock.target != xy_tag(0, -1)
            n = math.hypot(cmd.dx, cmd.dy)
            k = min(1.0, 0.33 / n) if n else 0.0
            x, y = x + k * cmd.dx, y + k * cmd.dy
        assert me.state == State.INACTIVE
        assert me.tag == xy_tag(1, 1)
        assert me.ts == assign_ts([1, 2, 2])
        assert me.nn_target == self.gene.nn(me.tag)


# ---------------------------------------------------------------- formation states


class TestInactive:
    def neighbor(self, state):
        return placed(2, (0, 1), 1, state)

    def test_active_then_stable_neighbor_activates(self):
        me = placed(1, (0, 0), 2, State.INACTIVE)
        for state in (State.ACTIVE, State.STABLE):
            inbox, sensed = sense(pos((0, 0)), [(self.neighbor(state), pos((0, 1)))])
            me, _, _ = step(me, inbox, sensed)
        assert me.state == State.ACTIVE

    def test_neighbor_staying_active_keeps_it_inactive(self):
        me = placed(1, (0, 0), 2, State.INACTIVE)
        inbox, sensed = sense(pos((0, 0)), [(self.neighbor(State.ACTIVE), pos((0, 1)))])
        for _ in range(1000):
            me, _, _ = step(me, inbox, sensed)
        assert me.state == State.INACTIVE

    def test_transition_survives_lost_heartbeats(self):
        me = placed(1, (0, 0), 2, State.INACTIVE)
        inbox, sensed = sense(pos((0, 0)), [(self.neighbor(State.ACTIVE), pos((0, 1)))])
        me, _, _ = step(me, inbox, sensed)
        for _ in range(5):  # the neighbour's last Active heartbeats are lost
            me, _, _ = step(me, [], sensed)
        inbox, sensed = sense(pos((0, 0)), [(self.neighbor(State.STABLE), pos((0, 1)))])
        me, _, _ = step(me, inbox, sensed)
        assert me.state == State.ACTIVE


class TestActive:
    def test_quasi_guard_has_priority(self):
        me = placed(1, (0, 0), 5, State.ACTIVE)
        ring = ring_of((0, 0))
        ring[0] = (placed(99, ring[0][0].tag, 2, State.ACTIVE), ring[0][1])
        inbox, sensed = sense(pos((0, 0)), ring)
        new, _, _ = step(me, inbox, sensed)
        assert new.state == State.QUASI
        assert new.quasi_timer == P.quasi_wait

    def test_full_count_stabilizes(self):
        me = placed(1, (0, 0), 5, State.ACTIVE)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0), ts=6))
        assert step(me, inbox, sensed)[0].state == State.STABLE

    def test_short_count_waits(self):
        me = placed(1, (0, 0), 5, State.ACTIVE)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0), skip=[(0, -1)]))
        assert step(me, inbox, sensed)[0].state == State.ACTIVE


class TestQuasi:
    def test_countdown(self):
        me = replace(placed(1, (0, 0), 3, State.QUASI), quasi_timer=3)
        me, _, _ = step(me, [], [])
        assert (me.state, me.quasi_timer) == (State.QUASI, 2)

    def test_expiry(self):
        me = replace(placed(1, (0, 0), 3, State.QUASI), quasi_timer=1)
        me, _, _ = step(me, [], [])
        assert (me.state, me.quasi_timer) == (State.ACTIVE, 0)

    def test_chain_settles(self):
        """Three robots in a row, all Active with TS 1, 2, 3: the later ones
        defer until the one before them is Stable, then follow."""
        gene = compile_gene(Bitmap.from_rows([[1, 1, 1]]))
        tags = [(0, -1), (0, 0), (0, 1)]
        mems = [placed(i + 1, t, i + 1, State.ACTIVE, gene) for i, t in enumerate(tags)]
        seen_quasi = False
        for _ in range(10 * P.quasi_wait):
            beats = list(mems)
            nxt = []
            for m in mems:
                others = [(o, pos(o.tag)) for o in beats if o.id != m.id]
                inbox, sensed = sense(pos(m.tag), others)
                new, _, _ = step(m, inbox, sensed)
                seen_quasi |= new.state == State.QUASI
                nxt.append(new)
            mems = nxt
            if all(m.state == State.STABLE for m in mems):
                break
        assert seen_quasi
        assert [m.state for m in mems] == [State.STABLE] * 3


# ---------------------------------------------------------------- election


def run_election(ids, loss=0.0, seed=0, ticks=None):
    """Fully connected Danger robots; returns the per-tick leader sets."""
    rng = random.Random(seed)
    ticks = ticks or 2 * P.election_timeout
    mems = {}
    for k, i in enumerate(ids):
        m = placed(i, (0, k - 1), 3, State.DANGER)
        mems[i] = replace(m, election=ElectionMemory(i, None, P.election_timeout))
    pending, history = [], []
    for _ in range(ticks):
        inbox = {i: [] for i in mems}
        for msg in pending:
            for i in mems:
                if i != msg.sender_id and rng.random() >= loss:
                    inbox[i].append(msg)
        pending = []
        for i in sorted(mems):
            new, out, _ = step(mems[i], inbox[i], [])
            mems[i] = new
            pending.extend(m for m in out if m.kind == Kind.ELECTION_ID)
        history.append({i for i, m in mems.items() if m.state == State.LEADER})
    return history


class TestDangerElection:
    def test_minimum_wins(self):
        history = run_election([12, 5, 30])
        assert history[-1] == {5}

    def test_single_robot_leads_after_timeout(self):
        history = run_election([8])
        first = next(t for t, h in enumerate(history) if h)
        assert history[first] == {8}
        assert first == P.election_timeout - 1

    @pytest.mark.parametrize("seed", range(100))
    def test_lossy_election_is_safe_and_live(self, seed):
        ids = random.Random(seed).sample(range(1, 500), 5)
        history = run_election(ids, loss=0.2, seed=seed)
        assert all(len(h) <= 1 for h in history)
        assert history[-1] == {min(ids)}

    def test_lower_id_makes_candidate_back_off(self):
        m = replace(placed(9, (0, 0), 3, State.DANGER), election=ElectionMemory(9, None, 2))
        msg = Message(4, Kind.ELECTION_ID, Election(Scope.DANGER, 0, 4))
        for _ in range(5):
            m, _, _ = step(m, [msg], [])
        assert m.state == State.DANGER
        assert m.election.candidate == 4


# ---------------------------------------------------------------- new shape


class TestNewGene:
    def shared(self, co_seeds=()):
        small = generate_scaled_gene(BLOCK, 7)
        return small, gene_messages(77, 1, small, (0, 0), co_seeds, P.chunk_size)

    def test_robot_inside_new_shape_goes_inactive(self):
        small, msgs = self.shared()
        me = placed(1, small.ones()[0], 3)
        me, _, _ = step(me, msgs, [])
        assert me.state == State.INACTIVE
        assert me.epoch == 1
        assert me.nn_target == small.nn(me.tag)
        assert me.gene.ones() == small.ones()

    def test_robot_outside_new_shape_queues(self):
        small, msgs = self.shared()
        outside = next(t for t in BLOCK.ones() if small.flag(t) == 0)
        me = placed(1, outside, 3)
        me, _, _ = step(me, msgs, [])
        assert me.state == State.QUEUED
        assert me.tag is None and me.ts is None and me.nn_target is None

    def test_co_seeds_get_ts_two(self):
        small, msgs = self.shared(co_seeds=(1,))
        tag = next(t for t in neighbor_tags((0, 0)) if small.flag(t))
        me, _, _ = step(placed(1, tag, 9), msgs, [])
        assert (me.state, me.ts) == (State.INACTIVE, 2)

    def test_incomplete_gene_is_not_adopted(self):
        small, msgs = self.shared()
        me = placed(1, (0, 0), 3)
        inbox, sensed = sense(pos((0, 0)), ring_of((0, 0)))
        me, _, _ = step(me, inbox + msgs[-1:], sensed)  # notice without its chunks
        assert me.state == State.STABLE and me.epoch == 0

    def test_chunks_are_relayed_once(self):
        small, msgs = self.shared()
        me = placed(1, small.ones()[0], 3)
        _, out, _ = step(me, msgs, [])
        relayed = [m for m in out if m.kind in (Kind.GENE_CHUNK, Kind.NEW_SHAPE_NOTICE)]
        assert len(relayed) == len(msgs)
        assert all(m.sender_id == 1 for m in relayed)


# ---------------------------------------------------------------- ts


class TestAssignTs:
    def test_two_neighbors(self):
        assert assign_ts([1, 2]) == 3

    def test_single_neighbor(self):
        assert assign_ts([7]) == 8

    def test_requires_a_value(self):
        with pytest.raises(ValueError):
            assign_ts([None])
