import dataclasses

import pytest

from mtcra import config as config_mod
from mtcra.config import ConfigError, ExperimentConfig

MINIMAL = "policy = dqn\nn_devices_list = 50, 100\n"


def test_defaults_match_table_values():
    c = ExperimentConfig()
    assert c.rho == 0.2
    assert c.arrival_rate == 0.05
    assert (c.p_min, c.p_max) == (0.001, 0.9)
    assert c.horizon is None and c.env_config(100).horizon == 20 and c.env_config(500).horizon == 100
    assert c.history_size == 5
    assert c.learning_rate == 1e-4
    assert (c.epsilon_start, c.epsilon_min) == (0.5, 0.1)
    assert (c.beta_start, c.beta_end) == (1.0, 15.0)
    assert tuple(c.hidden) == (150, 100)
    assert c.batch_size == 8
    assert c.episodes == 50 and c.train_episodes == 50


def test_default_roundtrip_is_lossless():
    c = ExperimentConfig()
    again = ExperimentConfig.from_text(c.to_text())
    assert again == c
    assert again.to_text() == c.to_text()


def test_every_field_has_a_key():
    attrs = {a for a, _ in config_mod._KEYS.values()}
    assert attrs == {f.name for f in dataclasses.fields(ExperimentConfig)}


def test_minimal_file_uses_defaults():
    c = ExperimentConfig.from_text(MINIMAL + "# note\n\nreward.gamma = 0.5  # trailing\n")
    assert c.n_devices_list == (50, 100)
    assert c.gamma == 0.5
    assert c.dqn_config().reward.gamma == 0.5


def test_sub_configs_built_from_fields():
    c = ExperimentConfig.from_text(MINIMAL + "eb.sigma = 3\nenv.horizon = 7\ndqn.hidden = 16, 8\n")
    assert c.eb_config(symmetric=True).sigma == 3.0
    assert c.env_config(50).horizon == 7
    assert c.dqn_config().hidden == (16, 8)


@pytest.mark.parametrize("text, key", [
    ("policy = dqn\n", "n_devices_list"),
    ("n_devices_list = 5\n", "policy"),
    (MINIMAL + "reward.gama = 1\n", "reward.gama"),
    (MINIMAL + "episodes = many\n", "episodes"),
    (MINIMAL + "policy = dqn\n", "policy"),
    (MINIMAL + "env.per_slot_arrivals = maybe\n", "env.per_slot_arrivals"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text(text)
    assert info.value.key == key
    assert key in str(info.value)


@pytest.mark.parametrize("line, section", [
    ("reward.gamma = 0", "reward"),
    ("eb.p_min = 0.95", "eb"),
    ("schedule.epsilon_min = 0.9", "schedule"),
    ("env.arrival_rate = 2", "env"),
    ("dqn.batch_size = 0", "dqn"),
])
def test_sub_config_invariants_reported_by_section(line, section):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text(MINIMAL + line + "\n")
    assert info.value.key == section


def test_bad_policy_and_line_format():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("policy = aloha\nn_devices_list = 5\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(MINIMAL + "just words\n")


def test_overrides():
    c = ExperimentConfig().with_overrides(seed=4, output_dir=None)
    assert c.seed == 4 and c.output_dir == "runs"
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(seed=-1)
