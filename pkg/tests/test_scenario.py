import pytest

from pbecc.harness.scenario import (ScenarioError, bundled_scenarios, load_scenario, parse_scenario,
                                    scenario_to_dict)

BASE = """\
name: t
duration_s: 2.0
seed: 1
cells:
  - id: c
    prbs: 50
    rw: 720
links:
  l: {rate_mbps: 100, delay_ms: 10}
flows:
  - id: f
    algorithm: pbe
    link: l
"""

EXPECTED = ["controlled_competition", "fig2_ca_trigger", "idle_prb_absorption", "internet_bottleneck",
            "mobility", "multi_flow_fairness", "rtt_fairness", "tcp_friendliness"]


def test_minimal_scenario_parses():
    s = parse_scenario(BASE)
    assert s.seed == 1 and s.flow("f").cells == ["c"]
    assert s.cells[0].ber.values() == [0.0]
    assert scenario_to_dict(s)["links"]["l"]["rate_mbps"] == 100


def test_error_names_field_and_line():
    with pytest.raises(ScenarioError) as e:
        parse_scenario(BASE.replace("prbs: 50", "prbs: -5"))
    assert e.value.path == "cells[0].prbs" and e.value.line == 6
    assert "line 6" in str(e.value)


def test_seed_is_mandatory():
    with pytest.raises(ScenarioError, match="seed"):
        parse_scenario(BASE.replace("seed: 1\n", ""))


@pytest.mark.parametrize("old,new,field", [
    ("algorithm: pbe", "algorithm: cubic", "flows[0].algorithm"),
    ("link: l", "link: nowhere", "flows[0].link"),
    ("rw: 720", "rw: {mode: linear, points: [[0.5, 720]]}", "cells[0].rw.points"),
    ("rw: 720", "rw: 720\n    ber: 1.5", "cells[0].ber"),
    ("duration_s: 2.0", "duration_s: 2.0\nbogus: 1", "bogus"),
    ("rw: 720", "rw: fast", "cells[0].rw"),
])
def test_validation_errors(old, new, field):
    with pytest.raises(ScenarioError) as e:
        parse_scenario(BASE.replace(old, new))
    assert e.value.path == field


def test_yaml_syntax_error_has_line():
    with pytest.raises(ScenarioError) as e:
        parse_scenario("name: [unclosed\nseed: 1\n")
    assert e.value.line is not None


def test_cbr_schedule_in_mbps():
    text = BASE.replace("algorithm: pbe", "algorithm: cbr\n    schedule: [[0, 40], [3, 6]]")
    assert parse_scenario(text).flow("f").schedule == [(0.0, 40e6), (3.0, 6e6)]


def test_linear_timeline():
    text = BASE.replace("rw: 720", "rw: {mode: linear, points: [[0, 720], [1, 360]]}")
    rw = parse_scenario(text).cells[0].rw
    assert rw.at(500_000) == pytest.approx(540)


def test_bundled_set_and_all_parse():
    assert bundled_scenarios() == EXPECTED
    for name in EXPECTED:
        s = load_scenario(name)
        assert s.name == name and s.flows


def test_missing_scenario():
    with pytest.raises(FileNotFoundError):
        load_scenario("no_such_scenario")


def test_with_helpers_copy():
    s = parse_scenario(BASE)
    t = s.with_seed(5).with_algorithm("f", "bbr")
    assert (s.seed, s.flow("f").algorithm) == (1, "pbe")
    assert (t.seed, t.flow("f").algorithm) == (5, "bbr")
