import pytest

from src.config import ConfigError, RunConfig, load_run_config


def test_ablation_subsets_accept_branch_lists():
    config = RunConfig.from_dict({"ablation_subsets": [[], ["stys"], ["stys", "knowd"]]})
    assert config.ablation_subsets == ((), ("stys",), ("stys", "knowd"))


def test_flat_ablation_subsets_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"ablation_subsets": ["stys", "knowd"]})


def test_unknown_branch_in_ablation_subset_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("ablation_subsets:\n  - [stys]\n  - [stys, style]\n")
    with pytest.raises(ConfigError, match="style"):
        load_run_config(str(path))
    with pytest.raises(ConfigError):
        RunConfig(ablation_subsets=(("dista", "knowd"), ("gate",))).replace()


def test_unknown_keys_and_modes_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"optimizer": "sgd"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"mode": "sideways"})
