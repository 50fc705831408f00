import pytest

from peginhole.config import DEFAULTS, dump_config, load_config, parse_lines, parse_value
from peginhole.errors import ConfigError


def test_defaults_round_trip_through_text():
    assert parse_lines(dump_config(DEFAULTS)) == DEFAULTS


@pytest.mark.parametrize("key,raw,want", [
    ("seed", " 7 ", 7),
    ("train.lr", "2e-4", 2e-4),
    ("train.resume", "Yes", True),
    ("eval.traces", "off", False),
    ("eval.initial_errors", "0.15, 0.3", (0.15, 0.3)),
    ("eval.dof_modes", "6dof,", ("6dof",)),
    ("train.data", "/tmp/x", "/tmp/x"),
])
def test_values_follow_the_default_type(key, raw, want):
    assert parse_value(key, raw) == want


@pytest.mark.parametrize("key,raw", [("seed", "1.5"), ("train.lr", "fast"), ("train.resume", "maybe"),
                                     ("eval.initial_errors", "0.1,x"), ("no.such", "1")])
def test_bad_values_rejected(key, raw):
    with pytest.raises(ConfigError):
        parse_value(key, raw)


def test_comments_blanks_and_malformed_lines():
    assert parse_lines("# top\n\nseed = 4  # trailing\n") == {"seed": 4}
    with pytest.raises(ConfigError, match="line 2"):
        parse_lines("seed = 1\njust words\n")


def test_precedence(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("seed = 1\neval.trials = 3\n")
    cfg = load_config(str(f), ["seed=2"])
    assert cfg["seed"] == 2 and cfg["eval.trials"] == 3
    assert load_config(str(f), ["seed=2"], seed=9)["seed"] == 9
    assert load_config()["seed"] == DEFAULTS["seed"]
    with pytest.raises(ConfigError):
        load_config(None, ["seed"])
