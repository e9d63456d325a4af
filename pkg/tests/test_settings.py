#!/usr/bin/env python3

"""Tests the saved command line defaults."""

from __future__ import annotations

import json

import pytest

from mpgmres.settings import DEFAULTS, load_settings, save_settings, settings_path
from mpgmres.util import ConfigError


def test_defaults_without_file(config_dir):
    settings = load_settings()
    assert dict(settings) == DEFAULTS
    assert settings_path() == str(config_dir / "settings.json")


def test_saved_file(config_dir):
    """Only the known keys get saved, unset ones keep their defaults."""
    save_settings({"m": 30, "tol": 1e-8, "reps": None, "colour": "red"})
    settings_file = config_dir / "settings.json"
    assert settings_file.is_file()
    with open(settings_file, encoding="utf-8") as fp:
        s: dict = json.load(fp)
    assert set(s.keys()) == set(DEFAULTS)
    assert s["m"] == 30
    assert s["tol"] == 1e-8
    assert s["reps"] == DEFAULTS["reps"]
    assert load_settings()["m"] == 30


def test_missing_keys_fall_back(config_dir):
    (config_dir / "settings.json").write_text(json.dumps({"m": 12}))
    settings = load_settings()
    assert settings["m"] == 12
    assert settings["trials"] == DEFAULTS["trials"]


def test_int_accepted_for_float(config_dir):
    (config_dir / "settings.json").write_text(json.dumps({"tol": 0}))
    assert load_settings()["tol"] == 0


@pytest.mark.parametrize("value", ["fifty", 2.5, True, None])
def test_wrong_type_is_rejected(config_dir, value):
    (config_dir / "settings.json").write_text(json.dumps({"m": value}))
    with pytest.raises(ConfigError, match="m="):
        load_settings()
