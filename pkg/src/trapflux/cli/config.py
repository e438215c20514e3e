"""Experiment configuration schema.

Configs are YAML files with the sections ``system``, ``bath``,
``propagation``, ``initial``, ``analysis`` and an optional ``sweep``.  Site
numbers in configs are 1-based, matching the physical site numbering; the library API
is 0-based.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..bath import BathAttachment, SpectralDensity, load_spectral_density
from ..model import (DEFAULT_COUPLING_VALUES, DEFAULT_UNITS, InitialCondition, SystemHamiltonian,
                     build_excitonic_chain, embed_cavity)
from ..simulation import Problem
from ..tempo import TruncationPolicy


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CavityConfig(_Strict):
    energy: float = 0.0
    lifetime: float = math.inf
    coupling: float = 181.5


class SystemConfig(_Strict):
    n_sites: int = Field(3, ge=1)
    site_energy: float = 0.0
    coupling: float = -181.5
    losses: dict[int, float] = Field(default_factory=dict)
    lifetime_convention: Literal["angular", "population"] = "angular"
    cavity: CavityConfig | None = None

    @field_validator("losses")
    @classmethod
    def _positive(cls, v):
        for site, T in v.items():
            if not T > 0:
                raise ValueError(f"lifetime of site {site} must be positive")
        return v


class BathConfig(_Strict):
    form: Literal["ohmic-exponential", "tabulated", "none"] = "ohmic-exponential"
    xi: float = Field(0.121, ge=0)
    omega_c: float = Field(900.0, gt=0)
    table: str | None = None
    temperature: float = Field(300.0, gt=0)
    sites: list[int] | None = None
    # coupling-operator eigenvalues: (excitation on the bath's site, elsewhere)
    coupling_values: tuple[float, float] = DEFAULT_COUPLING_VALUES

    @model_validator(mode="after")
    def _table(self):
        if self.form == "tabulated" and not self.table:
            raise ValueError("tabulated bath needs 'table'")
        return self


class PropagationConfig(_Strict):
    engine: Literal["tempo", "pathsum", "bare"] = "tempo"
    dt: float = Field(0.01, gt=0)
    t_final: float = Field(1.0, gt=0)
    memory: int | None = Field(None, ge=1)
    svd_cutoff: float = Field(1e-12, gt=0, lt=1)
    max_bond: int | None = Field(256, ge=1)
    path_budget: int = Field(10**8, ge=1)


class InitialConfig(_Strict):
    site: int = Field(1, ge=1)


class AnalysisConfig(_Strict):
    fit_window: tuple[float | None, float | None] = (None, None)
    r2_threshold: float = Field(0.995, gt=0, le=1)


class SweepConfig(_Strict):
    parameter: str
    values: list[Any] = Field(min_length=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    system: SystemConfig = SystemConfig()
    bath: BathConfig = BathConfig()
    propagation: PropagationConfig = PropagationConfig()
    initial: InitialConfig = InitialConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    sweep: SweepConfig | None = None

    @model_validator(mode="after")
    def _sites(self):
        n = self.system.n_sites
        for site in self.system.losses:
            if not 1 <= site <= n:
                raise ValueError(f"system.losses: site {site} outside 1..{n}")
        for site in self.bath.sites or []:
            if not 1 <= site <= n:
                raise ValueError(f"bath.sites: site {site} outside 1..{n} (the cavity has no bath)")
        n_states = n + (self.system.cavity is not None)
        if self.initial.site > n_states:
            raise ValueError(f"initial.site {self.initial.site} outside 1..{n_states}")
        return self

    # -- conversion to library objects ------------------------------------

    def build_system(self) -> SystemHamiltonian:
        s = self.system
        losses = {site - 1: T for site, T in s.losses.items()}
        chain = build_excitonic_chain(s.n_sites, s.site_energy, s.coupling, losses, DEFAULT_UNITS,
                                      s.lifetime_convention)
        if s.cavity is None:
            return chain
        c = s.cavity
        return embed_cavity(chain, c.energy, c.lifetime, c.coupling, DEFAULT_UNITS,
                            s.lifetime_convention)

    def build_spectral_density(self, base: Path | None = None) -> SpectralDensity | None:
        b = self.bath
        if b.form == "none":
            return None
        if b.form == "tabulated":
            path = Path(b.table)
            if base is not None and not path.is_absolute():
                path = base / path
            return load_spectral_density(path)
        return SpectralDensity.ohmic(b.xi, b.omega_c)

    def build_problem(self, base: Path | None = None) -> Problem:
        system = self.build_system()
        sd = self.build_spectral_density(base)
        sites = self.bath.sites if self.bath.sites is not None else range(1, self.system.n_sites + 1)
        values = tuple(self.bath.coupling_values)
        baths = () if sd is None else tuple(BathAttachment(j - 1, sd, values) for j in sites)
        rho0 = InitialCondition(self.initial.site - 1).density(system.n_states)
        return Problem(system, baths, self.bath.temperature, rho0, self.propagation.t_final)

    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.propagation.svd_cutoff, self.propagation.max_bond)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _format_errors(exc) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc or '<root>'}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> ExperimentConfig:
    from pydantic import ValidationError
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides or []:
        apply_override(data, item)
    return parse_config(data)


def apply_override(data: dict, item: str) -> None:
    """Apply ``dotted.key=value`` in place; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must have the form key.path=value")
    key, raw = item.split("=", 1)
    set_path(data, key.strip(), yaml.safe_load(raw))


def set_path(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = value


def dump_config(cfg: ExperimentConfig) -> str:
    """YAML text that parses back to an equal config."""
    data = cfg.model_dump(mode="python")
    return yaml.safe_dump(_plain(data), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def sweep_points(cfg: ExperimentConfig) -> list[tuple[Any, ExperimentConfig]]:
    """One config per sweep value (the sweep block is dropped from each point)."""
    if cfg.sweep is None:
        return [(None, cfg)]
    base = cfg.model_dump(mode="python")
    base.pop("sweep")
    out = []
    for value in cfg.sweep.values:
        data = copy.deepcopy(base)
        set_path(data, cfg.sweep.parameter, value)
        out.append((value, parse_config(data)))
    return out
