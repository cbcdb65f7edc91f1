import numpy as np
import pytest

from rigged.specfile import (
    FIXTURES,
    AnalysisConfig,
    SpecFileError,
    load_config,
    load_fixture,
    load_spec,
    parse_spec_text,
)

DINT = """\
[system]
name = "double integrator"
n = 2
m = 1
f = ["q2", "w1"]
linear = true

[points.origin]
q = [0.0, 0.0]
w = [0.0]
stable = true
"""


def test_parse_double_integrator():
    sf = parse_spec_text(DINT)
    assert sf.spec.table.names == ("t", "q1", "q2", "w1")
    assert sf.spec.linear_part is not None
    assert np.allclose(sf.spec.linear_part.A, [[0, 1], [0, 0]])
    assert np.allclose(sf.spec.linear_part.B, [[0], [1]])
    (p,) = sf.points
    assert p.name == "origin" and p.coords == (0.0, 0.0, 0.0, 0.0) and p.stable
    assert sf.config == AnalysisConfig()


def test_default_domain_is_unit_box():
    sf = parse_spec_text(DINT)
    assert sf.spec.state_domain == ((-1.0, 1.0), (-1.0, 1.0))
    assert sf.spec.time_domain == (0.0, 1.0)


def test_unknown_identifier_reports_line():
    text = DINT.replace('f = ["q2", "w1"]', 'f = ["q2", "w3"]').replace("linear = true\n", "")
    with pytest.raises(SpecFileError) as info:
        parse_spec_text(text, "bad.toml")
    assert info.value.line == 5
    assert "w3" in str(info.value)
    assert str(info.value).startswith("bad.toml:5:")


def test_wrong_f_length_reports_line():
    text = DINT.replace('f = ["q2", "w1"]', 'f = ["q2"]')
    with pytest.raises(SpecFileError) as info:
        parse_spec_text(text)
    assert info.value.line == 5


def test_toml_syntax_error():
    with pytest.raises(SpecFileError) as info:
        parse_spec_text("[system\nn = 1\n")
    assert "syntax error" in str(info.value)


def test_missing_system_section():
    with pytest.raises(SpecFileError):
        parse_spec_text("[domain]\nt = [0.0, 1.0]\n")


def test_point_dimension_checked():
    text = DINT.replace("q = [0.0, 0.0]", "q = [0.0]")
    with pytest.raises(SpecFileError) as info:
        parse_spec_text(text)
    assert info.value.line == 9


def test_nonlinear_system_marked_linear_rejected():
    text = DINT.replace('"q2", "w1"', '"q2^2", "w1"')
    with pytest.raises(SpecFileError):
        parse_spec_text(text)


def test_config_section_overrides_and_unknown_keys():
    sf = parse_spec_text(DINT + "\n[config]\nseed = 3\nrank_tol = 1e-7\n")
    assert sf.config.seed == 3 and sf.config.rank_tol == 1e-7
    with pytest.raises(SpecFileError) as info:
        parse_spec_text(DINT + "\n[config]\nbogus = 1\n")
    assert info.value.line == 14
    with pytest.raises(SpecFileError):
        parse_spec_text(DINT + "\n[config]\nrho = 1.5\n")


def test_config_digest_tracks_values():
    a, b = AnalysisConfig(), AnalysisConfig(seed=1)
    assert a.digest() == AnalysisConfig().digest()
    assert a.digest() != b.digest()


def test_load_config_file(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("ode_tol = 1e-6\nmutate_bracket = true\n")
    cfg = load_config(path)
    assert cfg.ode_tol == 1e-6 and cfg.mutate_bracket


def test_load_spec_missing_file(tmp_path):
    with pytest.raises(SpecFileError):
        load_spec(tmp_path / "nope.toml")


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_load(name):
    sf = load_fixture(name)
    assert sf.points
    assert len(sf.source_hash) == 16


def test_source_hash_is_stable():
    assert parse_spec_text(DINT).source_hash == parse_spec_text(DINT).source_hash
    assert parse_spec_text(DINT).source_hash != parse_spec_text(DINT + "\n").source_hash
