import numpy as np
import pytest
import yaml

from memg.config import ConfigError, build_config, default_config, derive_seed, load_config, rated_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg.portfolio.ess.capacity_max == 1200.0
    assert cfg.td3.gamma == 0.95
    assert cfg.td3.buffer_size == 36000 and cfg.td3.tau == 0.001
    assert cfg.gan.beta1 == 0.5 and cfg.gan.beta2 == 0.999
    assert cfg.microgrid.tariff.gas_price == pytest.approx(0.35 / 9.7)
    assert cfg.microgrid.tariff.carbon_tax == 0.0316
    assert cfg.horizon == 24 and cfg.microgrid.dt == 1.0
    assert cfg.resolved == default_config().resolved


def test_overrides_apply(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"seed": 9, "td3": {"gamma": 0.9, "hidden": [32]}, "grid": {"p_max_kw": 100}}))
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.td3.gamma == 0.9 and cfg.td3.hidden == (32,)
    assert cfg.microgrid.p_grid_max == 100.0


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"devices": {"ess": {"soc_min": 0.95}}}, "devices.ess"),
        ({"td3": {"gamma_typo": 0.9}}, "td3.gamma_typo"),
        ({"nonsense": 1}, "nonsense"),
        ({"td3": {"gamma": "high"}}, "td3.gamma"),
        ({"td3": {"gamma": 1.0}}, "td3"),
        ({"devices": {"chp": {"efficiency": [1.5]}}}, "devices.chp"),
        ({"gan": {"noise": "cauchy"}}, "gan"),
        ({"td3": {"batch_size": 2.5}}, "td3.batch_size"),
        ({"devices": {"gb": {"efficiency": []}}}, "devices.gb.efficiency"),
    ],
)
def test_rejections_name_the_field(raw, field):
    with pytest.raises(ConfigError) as err:
        build_config(raw)
    assert field in str(err.value)


def test_invalid_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("td3: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)


def test_non_mapping_top_level():
    with pytest.raises(ConfigError):
        build_config([1, 2])


def test_rated_config_is_degree_zero():
    cfg = rated_config(default_config())
    pf = cfg.portfolio
    for poly in (pf.chp.efficiency, pf.chp.heat_ratio, pf.gb.efficiency, pf.ec.efficiency, pf.ac.efficiency):
        assert len(poly.coefficients) == 1


def test_with_seed_updates_resolved():
    cfg = default_config().with_seed(42)
    assert cfg.seed == 42 and cfg.resolved["seed"] == 42
    assert default_config().seed == 0


def test_resolved_round_trips():
    cfg = build_config({"seed": 3, "gan": {"epochs": 10}})
    again = build_config(cfg.resolved)
    assert again.resolved == cfg.resolved and again.gan == cfg.gan


def test_derive_seed():
    assert derive_seed(7, "td3") == derive_seed(7, "td3")
    seeds = {derive_seed(7, c) for c in ("td3", "gan", "profiles", "generate")}
    assert len(seeds) == 4
    assert derive_seed(7, "td3") != derive_seed(8, "td3")
    assert 0 <= derive_seed(-1, "x") < 2**64
    np.random.default_rng(derive_seed(7, "td3"))
