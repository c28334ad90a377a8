from config import load_config
from src.logs import configure_logging, log_entry

import logging
import json
import pytest


def test_defaults_are_packaged():
    config = load_config()
    assert config["betas"] == pytest.approx([1 / 14, 1.0, 12.0])
    assert config["max_refinement_iters"] == 15
    assert config["kmeans"]["n_init"] == 10


def test_user_file_merges_over_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"seed": 3, "kmeans": {"n_init": 2}}))
    config = load_config(str(path))

    assert config["seed"] == 3
    assert config["kmeans"] == {"n_init": 2, "max_iter": 300, "tol": 1e-6}


def test_non_object_file_is_rejected(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_config(str(path))


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("MULCH_WORKERS", "3")
    monkeypatch.setenv("MULCH_LOG_FILE", str(tmp_path / "env.log"))
    config = load_config()
    assert config["workers"] == 3
    assert config["log_file"] == str(tmp_path / "env.log")


def test_log_entries_are_json_lines(tmp_path):
    log_file = tmp_path / "mulch.log"
    logger = configure_logging(str(log_file))
    try:
        log_entry("fit", {"K": 2, "log_likelihood": -12.5})
        log_entry("refine", {"changes": 0}, logging.DEBUG)
    finally:
        for handler in logger.handlers:
            handler.flush()

    entries = [json.loads(line) for line in log_file.read_text().splitlines()]
    assert len(entries) == 1
    assert entries[0]["component"] == "fit"
    assert entries[0]["metadata"] == {"K": 2, "log_likelihood": -12.5}
    assert "timestamp" in entries[0]
