"""Run configuration: plain-text key=value files, environment, flag overrides.

Precedence, lowest to highest: built-in defaults, config file, environment
variables prefixed ``CATDESK_``, command-line flags.  Unknown keys are
rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

ENV_PREFIX = "CATDESK_"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    alphabet: int = 3          # number of labels
    d_in: int = 2
    d_h: int = 8
    lm_order: int = 2
    alpha: float = 0.01        # auxiliary CTC weight
    twin_scale: float = 0.005  # config key "lambda"
    chunk_size: int = 40
    left_context: int = 10
    right_context: int = 10
    jitter_fraction: float = 0.25
    lr: float = 1e-3
    epochs: int = 30
    beam: float = 16.0
    frame_shift_ms: float = 10.0
    sampling_factor: int = 3
    data_dir: str = "data"
    work_dir: str = "work"

    # config-file key -> dataclass field
    KEY_MAP = {
        "lambda": "twin_scale",
    }

    @classmethod
    def field_for_key(cls, key: str) -> str:
        name = cls.KEY_MAP.get(key, key)
        if name not in {f.name for f in fields(cls)} or name == "KEY_MAP":
            raise ConfigError(f"unknown config key {key!r}")
        return name

    def apply(self, key: str, raw: str) -> None:
        name = self.field_for_key(key)
        current = getattr(self, name)
        try:
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None
        setattr(self, name, value)


def _config_keys() -> list[str]:
    reverse = {v: k for k, v in RunConfig.KEY_MAP.items()}
    return [reverse.get(f.name, f.name) for f in fields(RunConfig)]


def load_config(path: str | None = None, env: dict | None = None,
                overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                cfg.apply(key, value)
    env = os.environ if env is None else env
    for key in _config_keys():
        env_key = ENV_PREFIX + key.upper().replace("-", "_")
        if env_key in env:
            cfg.apply(key, env[env_key])
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg.apply(key, str(value))
    return cfg


__all__ = ["ConfigError", "ENV_PREFIX", "RunConfig", "load_config"]
