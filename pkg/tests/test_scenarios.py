import pytest

from edgebench.scenarios import CANONICAL, ConfigError, Scenario, Settings, canonical, load_config


def test_canonical_grid():
    grid = {(p, s, n) for p, s, n in CANONICAL.values()}
    expected = {(pl, sc, n) for n in (1, 10) for pl, sc in
                [("hybrid", "small"), ("hybrid", "medium"), ("hybrid", "large"), ("local", "none")]}
    assert grid == expected
    assert list(CANONICAL) == ["I", "II", "III", "IV", "V", "VI", "VII", "VIII"]


def test_local_requires_no_anonymizer():
    with pytest.raises(ConfigError):
        Scenario("X", platform="local", scheme="small")
    with pytest.raises(ConfigError):
        Scenario("X", producers=0)
    with pytest.raises(ConfigError):
        Scenario("X", scheme="huge")


def test_settings_selection_and_overrides():
    s = Settings(scenarios=["i", "III", "all"], producers=4, sim_time=True)
    built = s.build()
    assert [b.id for b in built] == ["I", "III", "II", "IV", "V", "VI", "VII", "VIII"]
    assert all(b.producers == 4 and b.sim_time for b in built)
    with pytest.raises(ConfigError):
        Settings(scenarios=["XI"]).build()
    assert Settings(netem=False).build()[0].links is None


def test_paper_scale():
    (s,) = Settings(scenarios=["I"], paper_scale=True).build()
    assert (s.duration_s, s.repetitions) == (600.0, 10)


def test_platform_override_switches_scheme():
    (s,) = Settings(scenarios=["I"], platform="local").build()
    assert (s.platform, s.scheme) == ("local", "none")


def test_config_file(tmp_path):
    path = tmp_path / "bench.ini"
    path.write_text(
        "[run]\n"
        "scenario = I, IX\n"
        "duration = 5\n"
        "sim_time = yes\n"
        "\n"
        "[scenario.IX]\n"
        "scheme = medium\n"
        "producers = 3\n"
        "\n"
        "[links.uplink]\n"
        "base_delay_ms = 10\n"
    )
    settings = load_config(path)
    a, b = settings.build()
    assert (a.id, b.id, b.scheme, b.producers, b.duration_s) == ("I", "IX", "medium", 3, 5.0)
    assert b.sim_time
    assert b.link("uplink_5g").base_delay_ms == 10
    assert b.link("downlink_5g").base_delay_ms == 7.5


@pytest.mark.parametrize(
    "text,line",
    [
        ("[run]\nduration = 5\nbogus = 1\n", 3),
        ("[run]\n\nrepetitions = many\n", 3),
        ("[scenario.X]\nscheme = gigantic\n", 2),
        ("[links.uplink]\njitter = 1\n", 2),
        ("[stuff]\n", 1),
    ],
)
def test_config_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=rf"bad.ini:{line}:"):
        load_config(path)


def test_replace_and_link_identity():
    s = canonical("III", links=None)
    assert not s.netem
    assert s.link("wan").base_delay_ms == 0
    assert s.replace(producers=2).producers == 2
