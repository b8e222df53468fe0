import pydantic
import pytest

from app.config import RunConfig, Settings


def test_run_config_defaults():
    config = RunConfig()
    assert config.gamma_ev == 0.3
    assert config.eta_ev == 0.2
    assert config.window_ev == 50.0
    assert config.epsilon_in == (1.0, 0.0, 0.0)
    assert config.shots == 2000
    assert (config.aleph, config.beth, config.aleph_mu) == (13, 13, 13)


def test_load_from_file_and_override(tmp_path):
    path = tmp_path / "run.env"
    path.write_text(
        "RIXS_RUN_OMEGA_IN_EV=[548.5, 551.9, 553.0]\n"
        "RIXS_RUN_GAMMA_EV=0.5\n"
        "RIXS_RUN_EPSILON_OUT=[0.0, 1.0, 0.0]\n"
        "RIXS_RUN_CVS=false\n"
        "RIXS_RUN_SHOTS=100\n",
        encoding="utf-8",
    )

    config = RunConfig.load(str(path), shots=300, seed=None)

    assert config.omega_in_ev == [548.5, 551.9, 553.0]
    assert config.gamma_ev == 0.5
    assert config.epsilon_out == (0.0, 1.0, 0.0)
    assert config.cvs is False
    assert config.shots == 300
    assert config.seed == 0


def test_dump_round_trip(tmp_path):
    original = RunConfig.load(
        omega_in_ev=[27.0, 28.5], lambda_ha=5.0, epsilon_in=(0.0, 0.0, 1.0), axis="ground_plus_energy"
    )
    path = tmp_path / "effective.env"
    original.dump(str(path))

    again = RunConfig.load(str(path))

    assert again.model_dump() == original.model_dump()
    assert "RIXS_RUN_THC_FACTORS" not in path.read_text(encoding="utf-8")


@pytest.mark.parametrize("field, value", [
    ("gamma_ev", 0.0),
    ("shots", 0),
    ("epsilon_in", (0.0, 0.0, 0.0)),
    ("qpe_window", "hann"),
    ("axis", "sideways"),
    ("diag_mode", "partial"),
])
def test_invalid_run_config(field, value):
    with pytest.raises(pydantic.ValidationError):
        RunConfig(**{field: value})


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("RIXS_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("RIXS_DENSE_DIAG_LIMIT", "123")

    settings = Settings(_env_file=None)

    assert settings.log_level == "DEBUG"
    assert settings.dense_diag_limit == 123
    assert settings.log_base == "e"
