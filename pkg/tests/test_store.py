import dataclasses
import os

import numpy as np
import pytest

from dpmask import nn, store
from dpmask.store import ModelKey, ModelStore, atomic_write_text, config_hash


def _key(**kw):
    base = dict(arch="custom", pool_stride=1, optimizer="dpsgd", sigma=1.3, clip_norm=5.0,
                epochs=3, learning_rate=0.05, batch_size=50, seed=1, data_tag="abc",
                per_example_noise=False)
    base.update(kw)
    return ModelKey(**base)


def test_atomic_write_creates_and_replaces(tmp_path):
    p = tmp_path / "sub" / "x.csv"
    atomic_write_text(p, "one\n")
    atomic_write_text(p, "two\n")
    assert p.read_text() == "two\n"
    assert list(p.parent.glob("*.tmp")) == []


def test_atomic_write_failure_leaves_old_content(tmp_path, monkeypatch):
    p = tmp_path / "x.csv"
    atomic_write_text(p, "old\n")

    def boom(src, dst):
        raise OSError("disk on fire")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(p, "new\n")
    monkeypatch.undo()
    assert p.read_text() == "old\n"
    assert list(tmp_path.iterdir()) == [p]  # no temp litter


def test_config_hash_sensitive_to_every_training_field():
    base = _key()
    seen = {base.hash()}
    for field in dataclasses.fields(ModelKey):
        bumped = {
            "arch": "lenet", "pool_stride": 2, "optimizer": "sgd", "sigma": 2.0,
            "clip_norm": 9.0, "epochs": 4, "learning_rate": 0.01, "batch_size": 51,
            "seed": 2, "data_tag": "zzz", "per_example_noise": True,
        }[field.name]
        h = dataclasses.replace(base, **{field.name: bumped}).hash()
        assert h not in seen, f"changing {field.name} did not change the hash"
        seen.add(h)


def test_model_store_trains_once(tmp_path):
    calls = []

    def train_fn():
        calls.append(1)
        model = nn.build_model(nn.architecture("custom"), seed=5)
        model.metadata.update(arch="custom", optimizer="dpsgd", sigma=1.3, clip_norm=5.0,
                              epochs=3)
        return model

    st = ModelStore(tmp_path / "models")
    key = _key()
    m1, cached1 = st.get(key, train_fn)
    m2, cached2 = st.get(key, train_fn)
    assert (cached1, cached2) == (False, True)
    assert len(calls) == 1
    for a, b in zip(m1.params, m2.params):
        np.testing.assert_array_equal(a, b)
    assert m2.metadata["cache_key"] == key.hash()


def test_model_store_distinct_keys_do_not_collide(tmp_path):
    st = ModelStore(tmp_path)

    def fn_for(seed):
        def fn():
            m = nn.build_model(nn.architecture("custom"), seed=seed)
            m.metadata.update(arch="custom", optimizer="sgd", epochs=0)
            return m
        return fn

    a, _ = st.get(_key(seed=1), fn_for(1))
    b, _ = st.get(_key(seed=2), fn_for(2))
    assert any(not np.array_equal(x, y) for x, y in zip(a.params, b.params))


def test_config_hash_is_stable():
    assert config_hash({"a": 1, "b": "x"}) == config_hash({"b": "x", "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
