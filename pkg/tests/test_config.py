import pytest

from radarmotion.config import DEFAULTS, ConfigError, flatten, load_config, make_config


def test_defaults_valid_and_resolved_n1():
    cfg = make_config()
    assert cfg["gst.blocks"] == 4 and cfg["eval.k"] == 10 and cfg["sampler.ddim_steps"] == 60
    assert cfg["codec.n2"] == 3 and cfg.n1 == 20
    assert make_config({"pipeline.H": 4, "pipeline.F": 6}).n1 == 10


def test_toml_nested_and_dotted_keys(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 4\n"gst.blocks" = 2\n[sampler]\nreverse_rule = "paper-literal"\n')
    cfg = load_config(p)
    assert cfg["seed"] == 4 and cfg["gst.blocks"] == 2 and cfg["sampler.reverse_rule"] == "paper-literal"
    assert flatten({"a": {"b": {"c": 1}}, "d": 2}) == {"a.b.c": 1, "d": 2}
    again = tmp_path / "again.toml"
    again.write_text(cfg.to_toml())
    assert load_config(again).values == cfg.values


def test_profiles():
    body = make_config(profile="mmbody-like")
    assert (body["pipeline.H"], body["pipeline.F"], body["pipeline.window"]) == (8, 16, 4)
    assert body["pipeline.pad_to"] == 256  # desk-scale default unless set
    fi = make_config({"pipeline.pad_to": 5000}, profile="mmfi-like")
    assert (fi["pipeline.H"], fi["pipeline.F"], fi["pipeline.window"], fi["pipeline.pad_to"]) == (5, 10, 5, 5000)


@pytest.mark.parametrize("key,value", [
    ("gst.blocks", 3), ("gst.d_model", 30), ("codec.n1", 40), ("codec.n2", 9),
    ("sampler.ddim_steps", 500), ("sampler.reverse_rule", "other"), ("sim.dropout", 1.0),
    ("pipeline.split", 1.5), ("fdm.lr", 0.0), ("eval.k", 0), ("sim.frames", 10),
    ("gst.s_blocks", "yes"), ("seed", 1.5), ("no.such_key", 1),
])
def test_invalid_values_name_the_key(key, value):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        make_config({key: value})


def test_bad_profile_and_file(tmp_path):
    with pytest.raises(ConfigError, match="profile"):
        make_config(profile="nope")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_replace_keeps_validation():
    cfg = make_config()
    assert cfg.replace(eval__k=3)["eval.k"] == 3
    assert cfg.replace(**{"eval.k": 5})["eval.k"] == 5
    with pytest.raises(ConfigError):
        cfg.replace(eval__k=0)
    assert set(DEFAULTS) == set(cfg.values)
