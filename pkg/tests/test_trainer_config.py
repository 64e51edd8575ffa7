import pytest

from lder.trainer_config import (
    TRAINER_FIELDS,
    CcpConfig,
    DcaConfig,
    SgdConfig,
    build_config,
    config_to_dict,
    schema_items,
    validate_config,
    with_seed,
)


def test_defaults() -> None:
    assert build_config("sgd") == SgdConfig()
    assert build_config("dca") == DcaConfig()
    assert build_config("dccp", seed=7) == CcpConfig(seed=7)


def test_overrides_are_normalized() -> None:
    cfg = build_config("sgd", {"sgd.lr": "0.5", "sgd.epochs": "12", "sgd.lr-decay": "yes"})
    assert cfg.learning_rate == 0.5
    assert cfg.epochs == 12
    assert cfg.lr_decay is True


def test_flags_of_other_trainers_are_ignored() -> None:
    cfg = build_config("dca", {"sgd.lr": "0.5", "dca.max-outer": 3})
    assert cfg == DcaConfig(max_outer=3)


@pytest.mark.parametrize(
    "trainer,overrides",
    [
        ("sgd", {"sgd.lr": "-0.1"}),
        ("sgd", {"sgd.epochs": "0"}),
        ("sgd", {"sgd.momentum": "1.0"}),
        ("sgd", {"sgd.lr": "nan"}),
        ("sgd", {"sgd.lr-decay": "maybe"}),
        ("dca", {"dca.epsilon": "0"}),
        ("dccp", {"dccp.mu": "1"}),
        ("dccp", {"dccp.t0": "100", "dccp.t-max": "10"}),
        ("dccp", {"dccp.unknown": "1"}),
        ("dccp", {"dccp.init": "newton"}),
        ("dccp", {"dccp.restarts": "0"}),
        ("dccp", {"dccp.init-outer": "0"}),
    ],
)
def test_invalid_overrides(trainer: str, overrides: dict) -> None:
    with pytest.raises(ValueError):
        build_config(trainer, overrides)


def test_unknown_trainer() -> None:
    with pytest.raises(ValueError):
        build_config("newton")


def test_validate_and_seed_helpers() -> None:
    with pytest.raises(ValueError):
        validate_config("dca", DcaConfig(max_outer=0))
    cfg = with_seed(CcpConfig(), 5)
    assert cfg.seed == 5
    assert config_to_dict(cfg)["t_max"] == 1e4


def test_schema_lists_every_flag() -> None:
    items = schema_items()
    assert [item["flag"] for item in items] == [f"--{flag}" for flag in TRAINER_FIELDS]
    lr = next(item for item in items if item["flag"] == "--sgd.lr")
    assert lr["default_value"] == 0.01
    assert lr["trainer"] == "sgd"


def test_start_options() -> None:
    cfg = build_config("dccp", {"dccp.init": " DCA ", "dccp.restarts": "3", "dccp.init-outer": "40"})
    assert (cfg.init, cfg.restarts, cfg.init_outer) == ("dca", 3, 40)
    assert build_config("dccp", {"dccp.init": "random"}).init == "random"
    init = next(item for item in schema_items() if item["flag"] == "--dccp.init")
    assert init["choices"] == ["random", "sgd", "dca"]
    assert init["default_value"] == "dca"
    with pytest.raises(ValueError):
        validate_config("dccp", CcpConfig(init="lbfgs"))
