#!/usr/bin/env python3

"""
mpgmres.settings
~~~~~~~~~~~~~~~~

User defaults for the command line, kept as JSON in the user config dir.
"""

from __future__ import annotations

import logging
import os
from typing import Any, Dict, Mapping

import appdirs
import easysettings

from mpgmres.util import ConfigError

log = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "m": 50,
    "tol": 1e-10,
    "max_iters": 20000,
    "reps": 1000,
    "trials": 3,
    "warmup": 50,
    "seed": 0,
    "out": "",
}


def settings_path() -> str:
    """Path of ``settings.json``, the config dir is created if needed."""
    configdir = appdirs.user_config_dir("mpgmres", "mpgmres")
    if not os.path.exists(configdir):
        log.info("Config dir doesn't exist, creating it...")
        os.makedirs(configdir)
    return os.path.join(configdir, "settings.json")


def load_settings() -> easysettings.JSONSettings:
    """Saved defaults, with `DEFAULTS` filling in whatever is missing.

    Raises:
        ConfigError: A saved value has the wrong type.
    """
    log.debug("Loading settings")
    settings = easysettings.load_json_settings(
        settings_path(), default=dict(DEFAULTS)
    )
    for key, default in DEFAULTS.items():
        value = settings.setdefault(key, default)
        expected = (int, float) if isinstance(default, float) else type(default)
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigError(
                f"Saved setting {key}={value!r} should be a {type(default).__name__}"
            )
    return settings


def save_settings(values: Mapping[str, Any]) -> None:
    """Stores the known keys of `values` as the new defaults.

    Raises:
        ConfigError: The settings file couldn't be written.
    """
    log.debug("Called with values=%s", values)
    settings = load_settings()
    for key in DEFAULTS:
        if values.get(key) is not None:
            settings[key] = values[key]
    try:
        settings.save()
    except IOError as e:
        log.error("Failed to save settings: %r", e)
        raise ConfigError(f"Failed to save settings due to {e!r}") from e
    log.info("Saved defaults to %s", settings_path())
