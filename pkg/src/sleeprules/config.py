"""Engine configuration loaded from JSON, with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .annotators import DetectorConfig
from .errors import ConfigError
from .profile import ProfileConfig
from .signal_io import Role
from .stager import Stage, StagerConfig

__all__ = ["EngineConfig", "CONFIG_ENV_VAR", "load_config", "resolve_config"]

CONFIG_ENV_VAR = "SLEEPRULES_CONFIG"


def _coerce(cls, value: Any, ftype: str, name: str):
    """Convert a JSON value to the dataclass field's declared type."""
    if "tuple[Role" in ftype:
        return tuple(Role(v) for v in value)
    if ftype.startswith("tuple"):
        return tuple(float(v) for v in value)
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} must be true or false")
        return value
    if ftype == "int":
        return int(value)
    if ftype == "float":
        return float(value)
    if ftype == "Stage":
        return Stage.parse(value)
    return value


def _build(cls, doc: Mapping | None, section: str):
    if doc is None:
        return cls()
    if not isinstance(doc, Mapping):
        raise ConfigError(f"'{section}' must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        try:
            kwargs[name] = _coerce(cls, value, str(known[name].type), name)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{name}: {exc}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' settings: {exc}") from None


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (Role, Stage)):
        return value.value
    return value


@dataclass(frozen=True)
class EngineConfig:
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    stager: StagerConfig = field(default_factory=StagerConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    roles: Mapping[str, tuple[str, ...]] | None = None
    output_dir: str | None = None

    @property
    def kcomplex_enabled(self) -> bool:
        return self.stager.kcomplex_enabled

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EngineConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("configuration must be a JSON object")
        known = {"detectors", "stager", "profile", "roles", "output_dir", "kcomplex_enabled"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        detectors = _build(DetectorConfig, doc.get("detectors"), "detectors")
        stager = _build(StagerConfig, doc.get("stager"), "stager")
        profile = _build(ProfileConfig, doc.get("profile"), "profile")
        if "kcomplex_enabled" in doc:
            flag = doc["kcomplex_enabled"]
            if not isinstance(flag, bool):
                raise ConfigError("kcomplex_enabled must be true or false")
            detectors = dataclasses.replace(detectors, kcomplex_enabled=flag)
            stager = dataclasses.replace(stager, kcomplex_enabled=flag)
        elif detectors.kcomplex_enabled != stager.kcomplex_enabled:
            raise ConfigError("detectors.kcomplex_enabled and stager.kcomplex_enabled disagree")
        roles = doc.get("roles")
        if roles is not None:
            if not isinstance(roles, Mapping):
                raise ConfigError("'roles' must map role names to pattern lists")
            bad = sorted(k for k in roles if k not in Role.__members__ and k not in {r.value for r in Role})
            if bad:
                raise ConfigError(f"unknown roles: {', '.join(bad)}")
            roles = {k: tuple([v] if isinstance(v, str) else v) for k, v in roles.items()}
        out = doc.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_dir must be a string")
        return cls(detectors, stager, profile, roles, out)

    def to_dict(self) -> dict:
        return {
            "detectors": {k: _plain(v) for k, v in dataclasses.asdict(self.detectors).items()},
            "stager": {k: _plain(v) for k, v in dataclasses.asdict(self.stager).items()},
            "profile": {k: _plain(v) for k, v in dataclasses.asdict(self.profile).items()},
            "roles": {k: list(v) for k, v in self.roles.items()} if self.roles is not None else None,
            "output_dir": self.output_dir,
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        doc = self.to_dict()
        doc.pop("output_dir")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def load_config(path) -> EngineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return EngineConfig.from_dict(doc)


def resolve_config(path=None, environ: Mapping[str, str] | None = None) -> EngineConfig:
    """Explicit path first, then ``$SLEEPRULES_CONFIG``, then defaults."""
    environ = os.environ if environ is None else environ
    if path is None:
        path = environ.get(CONFIG_ENV_VAR) or None
    return load_config(path) if path is not None else EngineConfig()
