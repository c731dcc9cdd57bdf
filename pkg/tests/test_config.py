from __future__ import annotations

import json

import pytest

from cardioagent.config import build_engine, deep_merge, load_config
from cardioagent.errors import ConfigError
from cardioagent.tools.remote import MockRemoteTools


def test_shipped_defaults():
    cfg = load_config()
    assert cfg.n == 3
    assert cfg.discussion().max_rounds == 2 and cfg.discussion().T == 4
    assert cfg.max_revisions == 5 and cfg.ecg_band == (0.5, 40.0)
    assert cfg.chunking().chunk_size == 1000 and cfg.chunking().overlap == 200
    assert cfg.filter_config().threshold == 0.05
    assert cfg.validate() == []


def test_overrides_propagate():
    cfg = load_config(overrides={"retrieval": {"n": 5}, "discussion": {"max_rounds": 3}})
    assert cfg.retriever().n == 5
    assert cfg.discussion().T == 6
    engine = build_engine(cfg)
    assert engine.retriever.n == 5 and engine.discussion.T == 6
    assert load_config().n == 3


def test_toml_file_with_relative_paths(tmp_path):
    (tmp_path / "fx.json").write_text(json.dumps({"view_classifier": {"c": {"view": "A4C"}}}))
    (tmp_path / "cfg.toml").write_text(
        '[retrieval]\nn = 2\n[tools]\nbackend = "mock"\nfixtures = "fx.json"\n'
    )
    cfg = load_config(tmp_path / "cfg.toml")
    assert cfg.n == 2 and cfg.source.endswith("cfg.toml")
    assert isinstance(cfg.remote_tools(), MockRemoteTools)
    assert cfg.chunking().chunk_size == 1000


def test_json_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"discussion": {"max_rounds": 1}}))
    assert load_config(p).discussion().T == 2


def test_models_replaced_wholesale():
    merged = deep_merge({"models": {"chief": 1, "planner": 2}, "a": {"b": 1, "c": 2}}, {"models": {"chief": 3}, "a": {"b": 5}})
    assert merged == {"models": {"chief": 3}, "a": {"b": 5, "c": 2}}


@pytest.mark.parametrize(
    "content,suffix",
    [("{not json", ".json"), ("[1, 2]", ".json"), ("a = [", ".toml")],
)
def test_bad_files(tmp_path, content, suffix):
    p = tmp_path / f"c{suffix}"
    p.write_text(content)
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize(
    "over,attr",
    [
        ({"retrieval": {"n": 0}}, "n"),
        ({"planner": {"max_revisions": -1}}, "max_revisions"),
        ({"ecg": {"band": [40, 1]}}, "ecg_band"),
    ],
)
def test_invalid_values(over, attr):
    with pytest.raises(ConfigError):
        getattr(load_config(overrides=over), attr)


def test_invalid_sections():
    with pytest.raises(ConfigError):
        load_config(overrides={"discussion": {"max_rounds": 0}}).discussion()
    with pytest.raises(ConfigError):
        load_config(overrides={"chunking": {"chunk_size": 100, "overlap": 100}}).chunking()
    with pytest.raises(ConfigError):
        load_config(overrides={"tools": {"backend": "ftp"}}).remote_tools()
    with pytest.raises(ConfigError):
        load_config(overrides={"tools": {"backend": "http"}}).remote_tools()
    with pytest.raises(ConfigError):
        load_config(overrides={"paths": {"corpus": None}}).retriever()
    assert load_config(overrides={"tools": {"backend": "none"}}).remote_tools() is None


def test_missing_role_named():
    cfg = load_config(overrides={"models": {"chief": {"backend": "mock", "rules": [{"response": "ok"}]}}})
    with pytest.raises(ConfigError, match="planner"):
        cfg.gateway()


def test_validate_collects_problems(tmp_path):
    cfg = load_config(overrides={"retrieval": {"n": 0}, "paths": {"corpus": str(tmp_path / "nowhere")}})
    problems = cfg.validate()
    assert any("retrieval.n" in p for p in problems)
    assert any("paths.corpus" in p for p in problems)
