"""Layered configuration: shipped defaults <- file <- environment <- flags.

The shipped TOML defines the key namespace. User files may only set keys
that exist there (plus the open-ended state-parameter tables), with the same
value types.
"""

from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .alignment import FusionConfig
from .channels import HChannelConfig, MChannelConfig, RChannelConfig
from .intent import AxisConstants, StateParams, UIImpactPrior

ENV_CONFIG = "UIXPOSE_CONFIG"
ENV_PROVIDER_URL = "UIXPOSE_PROVIDER_URL"
ENV_PROVIDER_TOKEN = "UIXPOSE_PROVIDER_TOKEN"

# tables whose keys are user-defined (indicator names, keywords)
_OPEN_TABLES = (
    ("state_params", "alpha_add", "*"),
    ("state_params", "beta_mul", "*"),
    ("state_params", "keywords"),
)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


def _open(path: tuple[str, ...]) -> bool:
    for pattern in _OPEN_TABLES:
        if len(pattern) == len(path) and all(p in ("*", q) for p, q in zip(pattern, path)):
            return True
    return False


def _check_value(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = (isinstance(value, list) and len(value) == len(default)
              and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value))
        value = [float(v) for v in value] if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__} like {default!r}, got {value!r}")
    return value


def merge(base: dict, override: Mapping, path: tuple[str, ...] = ()) -> dict:
    """Deep-merge ``override`` into a copy of ``base``, validating keys and types."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        sub = (*path, k)
        key = ".".join(sub)
        if _open(path):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(key, f"expected a number, got {v!r}")
            out[k] = float(v)
            continue
        if k not in out:
            if _open(sub) and isinstance(v, Mapping):
                out[k] = merge({}, v, sub)
                continue
            raise ConfigError(key, "unknown key")
        if isinstance(out[k], dict):
            if not isinstance(v, Mapping):
                raise ConfigError(key, "expected a table")
            out[k] = merge(out[k], v, sub)
        else:
            out[k] = _check_value(key, out[k], v)
    return out


def default_data() -> dict:
    text = resources.files("ibalign").joinpath("data", "default_config.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def read_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid TOML: {exc}") from None


def _dotted(overrides: Mapping[str, Any]) -> dict:
    tree: dict = {}
    for dotted, value in overrides.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


@dataclass
class Config:
    data: dict

    def _build(self, key: str, fn, raw):
        try:
            return fn(raw)
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(key, str(exc)) from None

    @property
    def prior(self) -> UIImpactPrior:
        prior = self._build("prior", UIImpactPrior.from_mapping, self.data["prior"])
        if prior.missing():
            raise ConfigError("prior", f"missing classes {prior.missing()}")
        return prior

    @property
    def constants(self) -> AxisConstants:
        return self._build("constants", AxisConstants.from_mapping, self.data["constants"])

    @property
    def state_params(self) -> StateParams:
        return self._build("state_params", StateParams.from_mapping, self.data["state_params"])

    @property
    def streams(self) -> dict:
        return dict(self.data["streams"])

    @property
    def h(self) -> HChannelConfig:
        return self._build("channels.h", lambda d: HChannelConfig(**d), self.data["channels"]["h"])

    @property
    def m(self) -> MChannelConfig:
        d = dict(self.data["channels"]["m"])
        d["alpha"] = tuple(d["alpha"])
        return self._build("channels.m", lambda x: MChannelConfig(**x), d)

    @property
    def r(self) -> RChannelConfig:
        d = dict(self.data["channels"]["r"])
        d["alpha"] = tuple(d["alpha"])
        d["gamma"] = tuple(d["gamma"])
        return self._build("channels.r", lambda x: RChannelConfig(**x), d)

    @property
    def fusion(self) -> FusionConfig:
        return self._build("fusion", lambda d: FusionConfig(**d), self.data["fusion"])

    @property
    def provider(self) -> dict:
        return dict(self.data["provider"])

    def validate(self) -> "Config":
        """Build every typed section once so errors surface before any work."""
        for name in ("prior", "constants", "state_params", "h", "m", "r", "fusion"):
            getattr(self, name)
        if self.provider["kind"] not in ("builtin", "remote", "replay"):
            raise ConfigError("provider.kind", "must be builtin, remote or replay")
        return self

    def snapshot(self) -> dict:
        """Resolved config for reports, with secrets removed."""
        d = copy.deepcopy(self.data)
        if d["provider"].get("token"):
            d["provider"]["token"] = "<redacted>"
        return d


def load_config(
    path: str | Path | None = None,
    *,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> Config:
    env = os.environ if env is None else env
    data = default_data()
    path = path or env.get(ENV_CONFIG) or None
    if path:
        data = merge(data, read_file(path))
    from_env = {}
    if env.get(ENV_PROVIDER_URL):
        from_env["provider.url"] = env[ENV_PROVIDER_URL]
    if env.get(ENV_PROVIDER_TOKEN):
        from_env["provider.token"] = env[ENV_PROVIDER_TOKEN]
    data = merge(data, _dotted(from_env))
    if overrides:
        data = merge(data, _dotted({k: v for k, v in overrides.items() if v is not None}))
    return Config(data).validate()
