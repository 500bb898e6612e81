"""Drive one scenario to completion and write its artifacts.

A run ends when every fragment has converged, when every fragment has
either converged or reported a terminal diagnostic, or at ``max_ticks``.
Damage entries given relative to convergence are scheduled the first time
the whole swarm converges; a run never ends while damage is still pending.

Artifacts written to the output directory:

``report.txt``
    ``key value`` header lines, one ``fragment`` line and zero or more
    ``regeneration`` lines of space-separated ``key=value`` pairs, and a
    closing ``status <word> exit <code>`` line.  Fields:

    - ``scenario``, ``bitmap``, ``seed``, ``loss_prob``, ``robots``,
      ``gene_ones``: the inputs.
    - ``ticks``: ticks simulated; ``first_converged``: first tick at which
      the whole swarm was converged (``-`` if never).
    - ``damage_ticks``: comma-separated ticks at which damage was applied.
    - ``violations``: illegal transitions, overlaps and duplicate tags seen
      by the monitor; ``min_separation``: closest approach of two robots.
    - ``messages_sent`` / ``messages_delivered``: broadcast counters.
    - ``watchdog``: ``ok`` or ``stalled`` (no state change or motion for
      the watchdog window).
    - ``fragment``: ``index size epoch gene_ones placed stable_fraction
      bijection rms_error converged diagnostic``.
    - ``regeneration``: ``tick leader fragment_size census segregated
      scaled_ones danger leaders`` for each leader that finished a census;
      ``danger`` lists the fragment's robots that had entered Danger by the
      leader's election, ``leaders`` every robot of the fragment that became
      Leader since the damage.
``trace.log``
    ``tick id state tag ts x y`` per robot per tick (``-`` for absent tag/ts).
``frames/NNNNNN.svg``
    Sampled frames; ``final_shape.svg`` and ``stable_fraction.svg``.
``gene.txt``
    The compiled gene of the scenario bitmap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .engine import (
    ConvergenceReport,
    World,
    build_world,
    detect_convergence,
    fragment_of,
    fragments,
)
from .gene import Gene, compile_gene, parse_bitmap, serialize_gene
from .protocol import State
from .scenario import Scenario

EXIT_CONVERGED = 0
EXIT_INPUT_ERROR = 1
EXIT_MAX_TICKS = 2
EXIT_TERMINAL = 3

STATUS_WORDS = {
    EXIT_CONVERGED: "converged",
    EXIT_MAX_TICKS: "max_ticks",
    EXIT_TERMINAL: "terminal",
}


@dataclass(frozen=True)
class RegenerationRecord:
    tick: int
    leader: int
    fragment_size: int
    census: int
    segregated: int
    scaled_ones: int
    danger: tuple[int, ...]
    leaders: tuple[int, ...]


@dataclass
class RunResult:
    scenario: Scenario
    gene: Gene
    world: World
    report: ConvergenceReport
    exit_code: int
    first_converged: Optional[int] = None
    damage_ticks: list[int] = field(default_factory=list)
    samples: list[tuple[int, float]] = field(default_factory=list)
    regenerations: list[RegenerationRecord] = field(default_factory=list)

    @property
    def status(self) -> str:
        return STATUS_WORDS[self.exit_code]


def load_gene(path: Path) -> Gene:
    """Read and compile a bitmap file; gene errors propagate unchanged."""
    return compile_gene(parse_bitmap(Path(path).read_text()))


class _RegenerationWatch:
    """Observer noting each leader's census once it is available, together
    with the leaders of its fragment since the last damage and the robots
    that had entered Danger by the time this leader was elected."""

    def __init__(self):
        self.records: list[RegenerationRecord] = []
        self.since = 0
        self._done: set[tuple[int, int]] = set()

    def __call__(self, world: World) -> None:
        fresh = []
        for rid, robot in world.robots.items():
            mem = robot.mem
            c = mem.census
            if mem.state != State.LEADER or c is None or c.count is None:
                continue
            if c.new_gene is None and c.phase != "failed":
                continue
            if (rid, self.since) in self._done:
                continue
            self._done.add((rid, self.since))
            fresh.append((rid, c))
        if not fresh:
            return
        where = fragment_of(world)
        comps = fragments(world)
        for rid, c in sorted(fresh, key=lambda rc: rc[0]):
            members = set(comps[where[rid]])
            recent = [t for t in world.transitions if t.tick >= self.since and t.robot in members]
            leaders = sorted({t.robot for t in recent if t.new == State.LEADER})
            elected = min((t.tick for t in recent if t.robot == rid and t.new == State.LEADER),
                          default=world.tick)
            # robots that were in the running when this leader won
            danger = sorted({t.robot for t in recent if t.new == State.DANGER and t.tick <= elected})
            self.records.append(RegenerationRecord(
                tick=world.tick, leader=rid, fragment_size=len(members), census=c.count,
                segregated=c.segregated,
                scaled_ones=c.new_gene.total_ones if c.new_gene is not None else 0,
                danger=tuple(danger), leaders=tuple(leaders),
            ))


def run_scenario(scn: Scenario, out_dir: Optional[Path] = None, check_every: int = 50,
                 figures: bool = True) -> RunResult:
    """Simulate ``scn``; write artifacts to ``out_dir`` when given.

    Convergence is checked every ``check_every`` ticks, so reported ticks
    are multiples of it unless ``max_ticks`` intervenes.
    """
    gene = load_gene(scn.bitmap)
    fixed = [s.event(s.at_tick) for s in scn.damage if s.at_tick is not None]
    relative = [s for s in scn.damage if s.after_converged is not None]
    world = build_world(gene, scn.robot_count, scn.seed, scn.params(), scn.comm(),
                        damage=fixed, seed_tag=scn.seed_tag)
    watch = _RegenerationWatch()
    world.observers.append(watch)

    trace_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gene.txt").write_text(serialize_gene(gene))
        if scn.trace:
            trace_fh = open(out_dir / "trace.log", "w")
            trace_fh.write("# tick id state tag ts x y\n")
            world.trace = trace_fh.write
        if scn.frames_every and figures:
            from .render import write_frame

            frames = out_dir / "frames"
            every = scn.frames_every

            def snapshot(w: World) -> None:
                if w.tick % every == 0:
                    write_frame(w, frames / f"{w.tick:06d}.svg")

            world.observers.append(snapshot)

    damage_ticks: list[int] = []
    samples: list[tuple[int, float]] = []
    first_converged = None
    exit_code = EXIT_MAX_TICKS
    try:
        while world.tick < scn.max_ticks:
            queued = len(world.damage)
            world.step()
            if len(world.damage) < queued:
                damage_ticks.append(world.tick - 1)
                watch.since = world.tick - 1
            if world.tick % check_every and world.tick < scn.max_ticks:
                continue
            report = detect_convergence(world)
            total = len(world.robots)
            stable = sum(1 for r in world.robots.values() if r.mem.state == State.STABLE)
            samples.append((world.tick, stable / total if total else 0.0))
            if report.converged:
                if first_converged is None:
                    first_converged = world.tick
                if relative:
                    for spec in relative:
                        world.damage.append(spec.event(world.tick + spec.after_converged))
                    world.damage.sort(key=lambda e: e.at_tick)
                    relative = []
                    continue
            if world.damage or relative:
                continue
            if report.converged:
                exit_code = EXIT_CONVERGED
                break
            if report.terminal:
                exit_code = EXIT_TERMINAL
                break
    finally:
        if trace_fh is not None:
            trace_fh.close()
    report = detect_convergence(world)
    result = RunResult(scn, gene, world, report, exit_code, first_converged, damage_ticks,
                       samples, watch.records)
    if out_dir is not None:
        (out_dir / "report.txt").write_text(format_report(result))
        if figures:
            from .render import write_final_shape, write_stable_fraction

            write_final_shape(world, out_dir / "final_shape.svg")
            write_stable_fraction(samples, out_dir / "stable_fraction.svg", damage_ticks)
    return result


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def format_report(result: RunResult) -> str:
    scn, world, rep = result.scenario, result.world, result.report
    lines = [
        "# etswarm run report",
        f"scenario {scn.name}",
        f"bitmap {Path(scn.bitmap).name}",
        f"seed {scn.seed}",
        f"loss_prob {_num(scn.loss_prob)}",
        f"robots {len(world.robots)}",
        f"gene_ones {result.gene.total_ones}",
        f"ticks {world.tick}",
        f"first_converged {result.first_converged if result.first_converged is not None else '-'}",
        f"damage_ticks {','.join(map(str, result.damage_ticks)) or '-'}",
        f"violations {len(world.violations)}",
        f"min_separation {_num(world.min_separation) if math.isfinite(world.min_separation) else '-'}",
        f"messages_sent {world.sent}",
        f"messages_delivered {world.delivered}",
        f"watchdog {rep.watchdog}",
    ]
    for k, f in enumerate(rep.fragments):
        lines.append(
            f"fragment index={k} size={f.size} epoch={f.epoch} gene_ones={f.gene_ones} "
            f"placed={f.placed} stable_fraction={_num(f.stable_fraction)} "
            f"bijection={str(f.bijection).lower()} rms_error={_num(f.rms_error)} "
            f"converged={str(f.converged).lower()} diagnostic={f.diagnostic or '-'}"
        )
    for r in result.regenerations:
        lines.append(
            f"regeneration tick={r.tick} leader={r.leader} fragment_size={r.fragment_size} "
            f"census={r.census} segregated={r.segregated} scaled_ones={r.scaled_ones} "
            f"danger={','.join(map(str, r.danger)) or '-'} "
            f"leaders={','.join(map(str, r.leaders)) or '-'}"
        )
    lines.append(f"status {result.status} exit {result.exit_code}")
    return "\n".join(lines) + "\n"
