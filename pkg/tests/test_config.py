from pathlib import Path

import pytest

from lightarena.config import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from lightarena.swarm import BehaviorParams

SCENARIOS = sorted((Path(__file__).parents[1] / "src" / "lightarena" / "scenarios").glob("*.yaml"))


def test_empty_document_gives_defaults():
    cfg = parse_scenario({})
    assert cfg.run.tick_rate == 30.0 and cfg.run.duration == 300 and cfg.robots.count == 1
    assert cfg.dt == pytest.approx(1 / 30)


@pytest.mark.parametrize("doc, path", [
    ({"bogus": 1}, "bogus"),
    ({"field": {"speed": 1}}, "field.speed"),
    ({"run": {"tick_rate": 0}}, "run.tick_rate"),
    ({"run": {"duration": 0}}, "run.duration"),
    ({"tiles": {"noise_amplitude": 1.5}}, "tiles.noise_amplitude"),
    ({"run": {"mode": "frames_in"}}, "run.frames_dir"),
    ({"robots": {"placement": "explicit", "count": 2, "positions": [[10, 10]]}}, "robots.positions"),
    ({"robots": {"behavior": "dance"}}, "robots.behavior"),
    ({"objects": [{"id": "a", "shape": "star", "geometry": [1, 2, 3]}]}, "objects[0]"),
])
def test_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as e:
        parse_scenario(doc)
    assert e.value.path == path and str(e.value).startswith(path)


def test_diffusion_stability_error():
    with pytest.raises(ConfigError) as e:
        parse_scenario({"field": {"cell_size_mm": 10, "diffusion_d": 1000}, "run": {"tick_rate": 30}})
    assert e.value.path == "field.diffusion_d"
    # same diffusion is stable at a higher tick rate
    parse_scenario({"field": {"cell_size_mm": 10, "diffusion_d": 1000}, "run": {"tick_rate": 120}})


def test_headless_mode_alias():
    cfg = parse_scenario({"run": {"mode": "headless"}})
    assert cfg.run.mode == "closed_loop" and cfg.run.headless


def test_with_overrides_revalidates():
    cfg = parse_scenario({})
    assert cfg.with_overrides(duration=5).run.duration == 5
    with pytest.raises(ConfigError):
        cfg.with_overrides(tick_rate=-1)


def test_derived_parameters():
    cfg = parse_scenario({"arena": {"width_mm": 2048, "height_mm": 1536}, "robots": {"radius": 20},
                          "field": {"cell_size_mm": 20}})
    assert cfg.robot_radius_px() == pytest.approx(10.0)
    hp = cfg.hough_params()
    assert hp.r_min <= 10 <= hp.r_max
    assert cfg.tracker_params().gate_radius == pytest.approx(15.0)
    assert isinstance(cfg.behavior_params(), BehaviorParams)
    assert cfg.field_grid() == (103, 77)  # partial cells at the far edges count


def test_relative_paths_resolve_against_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("logs: {dir: out}\n")
    cfg = load_scenario(p)
    assert cfg.resolve(cfg.logs.dir) == tmp_path / "out" and cfg.name == "s"


def test_yaml_syntax_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("run: [unclosed\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_scenario(p)


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
def test_bundled_scenarios_load(path):
    cfg = load_scenario(path)
    assert isinstance(cfg, ScenarioConfig) and cfg.name == path.stem
