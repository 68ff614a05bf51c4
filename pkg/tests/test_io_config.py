import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from lsanav import io
from lsanav.agent import ModelConfig
from lsanav.config import RunConfig, build_env
from lsanav.errors import ConfigError
from lsanav.env import generate_synthetic_env, save_episodes, generate_episodes, SyntheticFeatures

floats = st.floats(allow_nan=False, allow_infinity=True, width=64)


@given(st.lists(arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4), elements=floats),
                min_size=0, max_size=4))
def test_bundle_round_trip(tmp_path_factory, arrs):
    path = tmp_path_factory.mktemp("b") / "x.bin"
    named = [(f"a{i}", a) for i, a in enumerate(arrs)]
    io.write_bundle(path, {"format": "test/1", "extra": [1, 2]}, named)
    header, back = io.read_bundle(path, "test/1")
    assert header["extra"] == [1, 2]
    assert header["dtype"] == "float64" and header["endianness"] == "little"
    for name, a in named:
        assert back[name].shape == a.shape
        assert np.array_equal(back[name], a)


def test_bundle_layout(tmp_path):
    path = tmp_path / "x.bin"
    io.write_bundle(path, {"format": "t/1"}, [("w", np.array([[1.0, 2.0]])), ("b", np.array([3.0]))])
    raw = path.read_bytes()
    head, body = raw.split(b"\n", 1)
    assert json.loads(head)["arrays"] == [{"name": "w", "shape": [1, 2]}, {"name": "b", "shape": [1]}]
    assert body == np.array([1.0, 2.0, 3.0], dtype="<f8").tobytes()


def test_bundle_rejects_bad_input(tmp_path):
    path = tmp_path / "x.bin"
    io.write_bundle(path, {"format": "t/1"}, [("w", np.ones(3))])
    with pytest.raises(ConfigError):
        io.read_bundle(path, "other/1")
    raw = path.read_bytes()
    for bad in (raw[:-8], raw[:-3], raw + b"\0" * 8, b"no header"):
        (tmp_path / "bad.bin").write_bytes(bad)
        with pytest.raises(ConfigError):
            io.read_bundle(tmp_path / "bad.bin")


def test_json_is_canonical(tmp_path):
    io.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, None]})
    io.write_json(tmp_path / "b.json", {"a": [1.5, None], "b": 1})
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_config_round_trip_and_defaults():
    cfg = RunConfig()
    assert cfg.model.dropout == 0.7 and cfg.model.iterations == 3 and cfg.train.batch_size == 8
    assert cfg.model.mask == "3x3"
    back = RunConfig.from_doc(json.loads(io.dumps(cfg.to_doc())))
    assert back.to_doc() == cfg.to_doc()


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"env": {"seeds": 3}},
    {"model": {"mask": "2x2"}},
    {"model": {"d_angle": 6}},
    {"model": {"dropout": 1.0}},
    {"train": {"lr": -1}},
    {"model": []},
    [],
])
def test_config_rejects_invalid(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_doc(doc)


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")


def test_with_seed_overrides_every_seed():
    cfg = RunConfig().with_seed(123)
    assert cfg.env.seed == cfg.model.init_seed == cfg.train.seed == 123


def test_build_env_from_files(tmp_path):
    g = generate_synthetic_env(4, n_nodes=8)
    g.save(tmp_path / "graph.json")
    save_episodes(tmp_path / "eps.json", generate_episodes(g, 6, 2))
    SyntheticFeatures(g, 8, 1).export_fixture(tmp_path / "feat.bin")
    doc = {
        "env": {"graph_file": "graph.json", "episodes_file": "eps.json", "features_file": "feat.bin"},
        "model": {"d_image": 8, "d_angle": 4, "d_hidden": 8},
    }
    cfg = RunConfig.from_doc(doc)
    env, episodes = build_env(cfg, tmp_path)
    assert env.graph.to_doc() == g.to_doc() and len(episodes) == 6
    assert env.features.d_image == 8
    cfg.model = ModelConfig(d_image=6, d_angle=4, d_hidden=8)
    with pytest.raises(ConfigError):
        build_env(cfg, tmp_path)
