from pathlib import Path

import pytest

from etswarm.scenario import (
    Scenario,
    ScenarioError,
    bundled_bitmap,
    load_scenario,
    parse_scenario,
)

FULL = """
bitmap = "t_shape.pbm"
seed = 11
max_ticks = 900
robot_count = 30
seed_tag = [1, -2]

[comm]
radius = 8.0
loss_prob = 0.25

[lattice]
d = 3.0

[timers]
queue_release = 40
quasi_wait = 15
election_timeout = 100

[[damage]]
kind = "cut"
after_converged = 50
point = [-0.8, 0.0]
direction = [0.0, 1.0]

[[damage]]
kind = "remove"
at_tick = 300
ids = [4, 9]

[outputs]
dir = "out"
trace = true
frames_every = 25
"""


def test_every_field_parsed(tmp_path):
    scn = parse_scenario(FULL, tmp_path, "full")
    assert scn.bitmap == bundled_bitmap("t_shape")
    assert (scn.name, scn.seed, scn.max_ticks, scn.robot_count, scn.seed_tag) == \
        ("full", 11, 900, 30, (1, -2))
    assert (scn.radius, scn.loss_prob, scn.d) == (8.0, 0.25, 3.0)
    params = scn.params()
    assert (params.queue_release, params.quasi_wait, params.election_timeout, params.d) == \
        (40, 15, 100, 3.0)
    cut, remove = scn.damage
    assert (cut.after_converged, cut.at_tick, cut.point, cut.side) == (50, None, (-0.8, 0.0), "separate")
    assert remove.event(300).ids == (4, 9)
    assert (scn.out_dir, scn.trace, scn.frames_every) == (tmp_path / "out", True, 25)


def test_defaults(tmp_path):
    scn = parse_scenario('bitmap = "t_shape.pbm"\n', tmp_path)
    assert scn == Scenario(bundled_bitmap("t_shape"))


def test_local_bitmap_preferred(tmp_path):
    (tmp_path / "t_shape.pbm").write_text("111\n111\n")
    assert parse_scenario('bitmap = "t_shape.pbm"\n', tmp_path).bitmap == tmp_path / "t_shape.pbm"


def test_overrides_skip_none(tmp_path):
    scn = parse_scenario(FULL, tmp_path)
    new = scn.with_overrides(seed=3, loss_prob=None, trace=None)
    assert (new.seed, new.loss_prob, new.trace) == (3, 0.25, True)


@pytest.mark.parametrize("text", [
    "seed = 1\n",
    'bitmap = "t_shape.pbm"\nseed = "x"\n',
    'bitmap = "t_shape.pbm"\n[comm]\nradius = 4.0\n',
    'bitmap = "t_shape.pbm"\n[[damage]]\nkind = "cut"\n',
    'bitmap = "t_shape.pbm"\n[[damage]]\nat_tick = 3\nafter_converged = 4\n',
    'bitmap = "t_shape.pbm"\n[[damage]]\nat_tick = 3\nside = "left"\n',
    'bitmap = "t_shape.pbm"\n[[damage]]\nat_tick = 3\npoint = [1]\n',
    'bitmap = "t_shape.pbm"\n[outputs]\nframes_every = -1\n',
    "bitmap = \n",
])
def test_invalid(text, tmp_path):
    with pytest.raises(ScenarioError):
        parse_scenario(text, tmp_path)


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario(Path("/nonexistent/scenario.toml"))


def test_shipped_scenarios_load(scenario_dir):
    for path in sorted(scenario_dir.glob("*.toml")):
        scn = load_scenario(path)
        assert scn.bitmap.is_file(), path
        assert scn.name == path.stem
