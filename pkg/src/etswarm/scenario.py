"""Scenario files: TOML tables describing one simulation run.

A scenario names the target bitmap and pins every knob the run depends on,
so that a scenario plus a seed fully determines the outcome::

    bitmap = "t_shape.pbm"        # relative to this file, or a bundled shape
    seed = 7
    max_ticks = 6000
    # robot_count = 30            # default: one robot per set cell

    [comm]
    radius = 7.0
    loss_prob = 0.0

    [lattice]
    d = 3.3

    [timers]
    queue_release = 50
    quasi_wait = 20
    election_timeout = 128

    [[damage]]
    kind = "cut"                  # or "remove" with ids = [...]
    after_converged = 50          # or at_tick = 2000
    point = [-1.65, 0.0]
    direction = [0.0, 1.0]
    side = "separate"             # or "remove"

    [outputs]
    dir = "runs/t_shape"
    trace = false
    frames_every = 0              # 0 disables SVG frames
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import tomli

from .engine import CommModel, DamageEvent
from .protocol import Params


class ScenarioError(ValueError):
    """The scenario file is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class DamageSpec:
    """A damage event whose tick may be relative to first convergence."""

    kind: str = "cut"
    at_tick: Optional[int] = None
    after_converged: Optional[int] = None
    point: tuple[float, float] = (0.0, 0.0)
    direction: tuple[float, float] = (0.0, 1.0)
    side: str = "separate"
    ids: tuple[int, ...] = ()
    separation: Optional[float] = None

    def event(self, tick: int) -> DamageEvent:
        return DamageEvent(tick, self.kind, self.point, self.direction, self.side,
                           self.ids, self.separation)


@dataclass(frozen=True)
class Scenario:
    bitmap: Path
    name: str = "scenario"
    robot_count: Optional[int] = None
    seed: int = 0
    loss_prob: float = 0.0
    radius: float = 7.0
    d: float = 3.3
    queue_release: int = 50
    quasi_wait: int = 20
    election_timeout: int = 128
    damage: tuple[DamageSpec, ...] = ()
    max_ticks: int = 10000
    out_dir: Optional[Path] = None
    trace: bool = False
    frames_every: int = 0
    seed_tag: Optional[tuple[int, int]] = None

    def params(self) -> Params:
        return Params(d=self.d, quasi_wait=self.quasi_wait, queue_release=self.queue_release,
                      election_timeout=self.election_timeout)

    def comm(self) -> CommModel:
        return CommModel(self.radius, self.loss_prob)

    def with_overrides(self, **changes: Any) -> "Scenario":
        """Copy with every non-``None`` keyword applied."""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


def bundled_bitmap(name: str) -> Optional[Path]:
    """Path of a shape shipped with the package (``t_shape``, ``dumbbell``,
    ``starfish``), with or without the ``.pbm`` suffix."""
    stem = name[:-4] if name.endswith(".pbm") else name
    candidate = resources.files("etswarm") / "data" / f"{stem}.pbm"
    return Path(str(candidate)) if candidate.is_file() else None


def _pair(value, key: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(f"{key} must be a two-element array")
    return float(value[0]), float(value[1])


def _damage(entry: dict) -> DamageSpec:
    kind = entry.get("kind", "cut")
    if kind not in ("cut", "remove"):
        raise ScenarioError(f"unknown damage kind {kind!r}")
    at, after = entry.get("at_tick"), entry.get("after_converged")
    if (at is None) == (after is None):
        raise ScenarioError("each damage entry needs exactly one of at_tick / after_converged")
    side = entry.get("side", "separate")
    if side not in ("separate", "remove"):
        raise ScenarioError(f"unknown damage side {side!r}")
    return DamageSpec(
        kind=kind,
        at_tick=None if at is None else int(at),
        after_converged=None if after is None else int(after),
        point=_pair(entry.get("point", (0.0, 0.0)), "point"),
        direction=_pair(entry.get("direction", (0.0, 1.0)), "direction"),
        side=side,
        ids=tuple(int(i) for i in entry.get("ids", ())),
        separation=None if entry.get("separation") is None else float(entry["separation"]),
    )


def parse_scenario(text: str, base: Path = Path("."), name: str = "scenario") -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"cannot parse scenario: {exc}") from None
    if "bitmap" not in raw:
        raise ScenarioError("scenario needs a 'bitmap' entry")
    bitmap = base / raw["bitmap"]
    if not bitmap.is_file():
        bitmap = bundled_bitmap(raw["bitmap"]) or bitmap
    comm, lattice = raw.get("comm", {}), raw.get("lattice", {})
    timers, outputs = raw.get("timers", {}), raw.get("outputs", {})
    try:
        scn = Scenario(
            bitmap=bitmap,
            name=name,
            robot_count=None if raw.get("robot_count") is None else int(raw["robot_count"]),
            seed=int(raw.get("seed", 0)),
            loss_prob=float(comm.get("loss_prob", 0.0)),
            radius=float(comm.get("radius", 7.0)),
            d=float(lattice.get("d", 3.3)),
            queue_release=int(timers.get("queue_release", 50)),
            quasi_wait=int(timers.get("quasi_wait", 20)),
            election_timeout=int(timers.get("election_timeout", 128)),
            damage=tuple(_damage(e) for e in raw.get("damage", [])),
            max_ticks=int(raw.get("max_ticks", 10000)),
            out_dir=None if outputs.get("dir") is None else base / outputs["dir"],
            trace=bool(outputs.get("trace", False)),
            frames_every=int(outputs.get("frames_every", 0)),
            seed_tag=None if raw.get("seed_tag") is None else tuple(int(v) for v in raw["seed_tag"]),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario value: {exc}") from None
    validate(scn)
    return scn


def validate(scn: Scenario) -> None:
    if scn.max_ticks <= 0:
        raise ScenarioError("max_ticks must be positive")
    if not 0.0 <= scn.loss_prob <= 1.0:
        raise ScenarioError("loss_prob must lie in [0, 1]")
    if scn.d <= 0:
        raise ScenarioError("d must be positive")
    if scn.radius <= 1.5 * scn.d:
        raise ScenarioError("comm radius must exceed 1.5 d")
    if scn.frames_every < 0:
        raise ScenarioError("frames_every cannot be negative")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario(text, path.parent, path.stem)
