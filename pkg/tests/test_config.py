import pytest

from popdescent.errors import ConfigError
from popdescent.harness.config import ExperimentConfig, dump_config, load_config, parse_config


def test_defaults():
    cfg = ExperimentConfig().validate()
    assert cfg.popdescent.population_size == 5
    assert cfg.popdescent.elite == 3
    assert cfg.popdescent.learning_rate == 0.001
    assert cfg.popdescent.batch_size == 64
    assert cfg.ablation.population_size == 10 and cfg.ablation.elite == 5
    assert cfg.sensitivity.values == [0.01, 0.05, 0.001]
    assert cfg.report.ema == 0.1


def test_parse_types():
    cfg = parse_config(
        """
        [experiment]
        mode = ablation
        seeds = 3, 4
        [popdescent]
        iterations = 7
        learning_rate = 0.02
        [model]
        hidden = 16, 8
        """
    )
    assert cfg.experiment.mode == "ablation"
    assert cfg.experiment.seeds == [3, 4]
    assert cfg.popdescent.iterations == 7
    assert cfg.popdescent.learning_rate == 0.02
    assert cfg.model.hidden == [16, 8]


@pytest.mark.parametrize(
    "text",
    [
        "[popdescent]\nitterations = 3\n",
        "[nonsense]\nx = 1\n",
        "[popdescent]\niterations = three\n",
        "iterations = 3\n",
    ],
)
def test_rejects_bad_files(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize(
    "overrides",
    [
        {"experiment__seeds": []},
        {"experiment__seeds": [1, 1]},
        {"popdescent__elite": 5},
        {"popdescent__elite": 0},
        {"experiment__mode": "race"},
        {"experiment__methods": ["hyperband"]},
        {"ablation__variants": ["dropout"]},
        {"report__ema": 0.0},
        {"popdescent__nothing": 1},
    ],
)
def test_rejects_invalid(overrides):
    with pytest.raises(ConfigError):
        load_config(**overrides)


def test_round_trip(tmp_path):
    cfg = load_config(experiment__seeds=[9, 8], grid__learning_rates=[0.1, 0.01], model__regularize="all")
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again == cfg


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.ini"))
    assert files
    for path in files:
        load_config(path)
