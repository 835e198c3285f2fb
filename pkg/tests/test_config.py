import pytest

from stokespec.config import ConfigError, ScenarioKind, config_from_dict, load_config


def base(**extra):
    d = {"kind": "btb", "seed": 1}
    d.update(extra)
    return d


def test_defaults_follow_hardware_numbers():
    cfg = config_from_dict(base())
    assert cfg.kind is ScenarioKind.BTB
    assert cfg.psi.aom_frequency == 27.1e6
    assert cfg.scan.target_rbw == 30e3
    assert cfg.scan.scan_count == 512
    assert cfg.wdm.frame_period == 5e-6
    assert cfg.wdm.gap_width_ghz == 125.0
    assert cfg.spans.span_counts == [1, 2, 5, 10, 20]


def test_seed_is_mandatory():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"kind": "btb"})
    assert exc.value.path == "seed"
    with pytest.raises(ConfigError):
        config_from_dict(base(seed=-1))


@pytest.mark.parametrize(
    "data, path",
    [
        (base(kind="nope"), "kind"),
        (base(bogus={}), "bogus"),
        (base(scan={"scan_cnt": 3}), "scan.scan_cnt"),
        (base(scan={"scan_count": "many"}), "scan.scan_count"),
        (base(scan={"sample_rate": 50e6}), "scan"),
        (base(noise={"rms_amplitude": 0.5}), "noise"),
        (base(spans={"span_counts": [1, 0]}), "spans.span_counts"),
        (base(wdm={"channel_count": 0}), "wdm"),
        (base(oracle={"epsilon": 2.0}), "oracle.epsilon"),
        (base(am={"band": [3e7, 2e7]}), "am.band"),
        (base(workers=0), "workers"),
        (base(psi="x"), "psi"),
    ],
)
def test_validation_messages_carry_field_paths(data, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "distance_sweep"\nseed = 3\noutput_dir = "out"\n[spans]\nspan_counts = [1, 4]\n')
    cfg = load_config(p)
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.spans.span_counts == [1, 4]
    assert cfg.to_dict()["kind"] == "distance_sweep"


def test_bad_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("kind = \n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_shipped_example_configs_load():
    from pathlib import Path

    configs = sorted((Path(__file__).parents[1] / "configs").glob("*.toml"))
    assert {load_config(p).kind for p in configs} == set(ScenarioKind)
