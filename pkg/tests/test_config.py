import pytest
from hypothesis import given, settings, strategies as st

from stable_sde.config import COMMANDS, ConfigError, RunConfig
from stable_sde.rng import SEED_ENV_VAR

GOOD = """
[model]
alpha = 1.5
entries = [["1 + 0.1*sin(x2)", "0"], ["0", "1"]]
region = [[-5, 5], [-5, 5]]

[scheme]
mode = "jump-adapted"
beta = 0.2
dt = 0.01

[run]
seed = 7
n = 123

[task]
x0 = [0.1, 0.2]
domain = { kind = "box", half_widths = [1.0, 0.5] }
"""


def test_load_and_views():
    cfg = RunConfig.from_toml("exit-time", GOOD)
    assert cfg.dimension == 2 and cfg.seed == 7 and cfg.n == 123
    assert cfg.params().alpha == 1.5
    assert cfg.scheme().truncation.beta == 0.2
    assert cfg.domain(cfg.task["domain"]).half_widths == (1.0, 0.5)
    assert cfg.field().region == ((-5.0, 5.0), (-5.0, 5.0))


def test_round_trip_identical():
    cfg = RunConfig.from_toml("exit-time", GOOD)
    again = RunConfig.from_toml("exit-time", cfg.to_toml())
    assert again.resolved() == cfg.resolved()
    assert again.hash == cfg.hash


@pytest.mark.parametrize("text,fragment", [
    ("[model]\nalfa = 1", "unknown key"),
    ("[modle]\nalpha = 1", "unknown section"),
    ("[model]\nalpha = 2.5", "alpha"),
    ("[scheme]\nmode = \"jump-adapted\"", "beta is required"),
    ("[scheme]\nbeta = 0.1", "only applies"),
    ("[scheme]\ndt = -1.0", "positive"),
    ("[run]\nn = 0", "run.n"),
    ("[model]\nentries = [[\"1/x1\"]]", "division"),
    ("[task]\nx0 = [0.0, 1.0]", "coordinates"),
    ("[task]\ndomain = { kind = \"torus\" }", "ball"),
    ("[output]\nformats = [\"csv\"]", "json"),
    ("not toml ][", "invalid TOML"),
])
def test_validation_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig.from_toml("exit-time", text)


def test_overrides_take_precedence():
    cfg = RunConfig.from_toml("exit-time", GOOD, {"run.seed": 99, "model.alpha": 0.8})
    assert cfg.seed == 99 and cfg.params().alpha == 0.8
    with pytest.raises(ConfigError, match="unknown setting"):
        RunConfig.build("exit-time", None, {"run.sead": 1})


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "31")
    assert RunConfig.build("sample").seed == 31
    assert RunConfig.build("sample", {"run": {"seed": 4}}).seed == 4


def test_hash_ignores_output_directory_and_threads():
    a = RunConfig.build("sample", None, {"output.directory": "a", "run.threads": 1})
    b = RunConfig.build("sample", None, {"output.directory": "b"})
    c = RunConfig.build("sample", None, {"run.n": 11})
    assert a.hash == b.hash != c.hash


def test_every_command_has_valid_defaults():
    for cmd in COMMANDS:
        RunConfig.build(cmd, {"model": {"dimension": 2}} if cmd in ("steering", "tube") else None)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.05, 1.95), scale=st.floats(0.1, 10), dt=st.floats(1e-5, 1.0),
       seed=st.integers(0, 2**62), n=st.integers(1, 10**7),
       jump=st.booleans(), beta=st.floats(1e-3, 5.0), r=st.floats(0.1, 3.0),
       x0=st.lists(st.floats(-0.05, 0.05), min_size=2, max_size=2))
def test_round_trip_property(alpha, scale, dt, seed, n, jump, beta, r, x0):
    data = {"model": {"alpha": alpha, "scale": scale, "dimension": 2},
            "scheme": {"dt": dt, "mode": "jump-adapted" if jump else "fixed"},
            "run": {"seed": seed, "n": n},
            "task": {"x0": x0, "domain": {"kind": "ball", "radius": r}}}
    if jump:
        data["scheme"]["beta"] = beta
    cfg = RunConfig.build("exit-time", data)
    again = RunConfig.from_toml("exit-time", cfg.to_toml())
    assert again.resolved() == cfg.resolved()
