import copy
import textwrap

import pytest

from iwlions.config import load_config, parse_config
from iwlions.errors import ConfigError
from iwlions.oracles import SUITES, builtin_config, builtin_config_path

try:
    import tomllib as toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as toml

NAMES = ["frozen", "classic", "full_gaussian", "conditional_m2", "common_noise_loading", "mixed_derivative"]


def _raw(name):
    with open(builtin_config_path(name), "rb") as fh:
        return toml.load(fh)


@pytest.mark.parametrize("name", NAMES)
def test_builtin_configs_round_trip(name):
    cfg = builtin_config(name)
    assert parse_config(cfg.to_dict()) == cfg
    assert cfg.schema_version == 1


def test_suites_listed():
    assert list(SUITES) == ["projection", "classic", "full", "conditional", "ablation"]


def test_overrides():
    cfg = builtin_config("full_gaussian")
    c2 = cfg.with_overrides(seed=7, M=[16, 32], R=3)
    assert (c2.seed, c2.M, c2.R, c2.N) == (7, (16, 32), 3, cfg.N)
    with pytest.raises(ConfigError):
        cfg.with_overrides(M=[32, 16])
    with pytest.raises(ConfigError):
        cfg.with_overrides(fault="drop-everything")


@pytest.mark.parametrize("mutate, key", [
    (lambda d: d.update(theorem="IW-strong"), "theorem"),
    (lambda d: d.update(colour="blue"), "colour"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d.update(T=-1.0), "T"),
    (lambda d: d.update(seed=-3), "seed"),
    (lambda d: d.update(R=0), "R"),
    (lambda d: d["ladder"].update(M=[1024, 256]), "ladder.M"),
    (lambda d: d["ladder"].update(design="diagonal"), "ladder.design"),
    (lambda d: d["field"].update(kind="brownian-sheet"), "field.kind"),
    (lambda d: d["field"].update(mode="single"), "field.mode"),
    (lambda d: d["cloud"].update(sigma=1.0), "cloud.sigma"),
    (lambda d: d["cloud"].update(b={"kind": "wavelet"}), "cloud.b.kind"),
    (lambda d: d["tolerances"].update(rms_min=0.1), "tolerances.rms_min"),
])
def test_schema_errors_name_the_key(mutate, key):
    data = copy.deepcopy(_raw("conditional_m2"))
    mutate(data)
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert exc.value.key == key


def test_load_reports_key_and_line(tmp_path):
    text = textwrap.dedent("""\
        schema_version = 1
        theorem = "IW-classic"

        [ladder]
        M = [64]

        [field]
        kind = "wobbly"
        """)
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.key == "field.kind" and exc.value.line == 8
    assert "line 8" in str(exc.value) and "field.kind" in str(exc.value)


def test_toml_syntax_error_has_line(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text('theorem = "IW-classic"\nM = [1, 2\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.line is not None


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.toml")
