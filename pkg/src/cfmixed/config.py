"""Experiment configuration and its YAML loader.

The file mirrors :class:`ExperimentConfig` field names; nested ``network``
and ``ofdm`` sections mirror :class:`NetworkConfig` and :class:`OfdmConfig`.
Validation errors name the offending line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .rate import SCHEMES
from .timing import CoherenceBlock, OfdmConfig
from .topology import NetworkConfig

PRECODERS = ("MR", "LMMSE")
CLUSTERERS = ("distance", "fixed")
SWEEP_PARAMETERS = ("M", "M0", "Q", "K", "num_subcarriers")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    M0: int = 20
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    precoders: list = field(default_factory=lambda: list(PRECODERS))
    clusterers: list = field(default_factory=lambda: ["distance"])
    num_drops: int = 100
    realizations_per_drop: int = 500
    base_seed: int = 0
    output_path: str = "results"
    ul_power: float = 0.1
    ap_power: float = 0.2
    uplink_reference: str = "nearest"
    psi_mode: str = "matrix"
    normalization_realizations: int = 500
    mr_method: str = "montecarlo"
    force_synchronous: bool = False
    batch_size: int = 100

    def __post_init__(self):
        if self.num_drops < 1 or self.realizations_per_drop < 1:
            raise ValueError("num_drops and realizations_per_drop must be >= 1")
        if not 1 <= self.M0 <= self.network.num_aps:
            raise ValueError("M0 must lie in [1, num_aps]")
        for name, allowed in (("schemes", SCHEMES), ("precoders", PRECODERS),
                              ("clusterers", CLUSTERERS)):
            chosen = getattr(self, name)
            bad = [c for c in chosen if c not in allowed]
            if bad or not chosen:
                raise ValueError(f"{name} must be a non-empty subset of {list(allowed)}")
            # canonical order, no duplicates
            setattr(self, name, [c for c in allowed if c in chosen])
        if self.uplink_reference not in ("nearest", "zero"):
            raise ValueError("uplink_reference must be 'nearest' or 'zero'")
        if self.psi_mode not in ("matrix", "scalar"):
            raise ValueError("psi_mode must be 'matrix' or 'scalar'")
        if self.mr_method not in ("montecarlo", "closed_form"):
            raise ValueError("mr_method must be 'montecarlo' or 'closed_form'")
        if self.ul_power <= 0 or self.ap_power <= 0:
            raise ValueError("powers must be positive")
        if self.normalization_realizations < 1 or self.batch_size < 1:
            raise ValueError("normalization_realizations and batch_size must be >= 1")
        if self.ofdm.coherence_block.tau <= self.ofdm.coherence_block.n_sub:
            raise ValueError("coherence block leaves no downlink channel uses")

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def with_parameter(self, name: str, value) -> ExperimentConfig:
        """Copy with one sweepable parameter changed."""
        if name == "M":
            return self.replace(network=dataclasses.replace(self.network, antennas_per_ap=int(value)))
        if name == "Q":
            return self.replace(network=dataclasses.replace(self.network, num_aps=int(value)))
        if name == "K":
            return self.replace(network=dataclasses.replace(self.network, num_users=int(value)))
        if name == "M0":
            return self.replace(M0=int(value))
        if name == "num_subcarriers":
            return self.replace(ofdm=dataclasses.replace(self.ofdm, num_subcarriers=int(value)))
        raise ConfigError(f"unknown sweep parameter {name!r}; expected one of {list(SWEEP_PARAMETERS)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- YAML loading ------------------------------------------------------------

_SECTIONS = {
    "network": NetworkConfig,
    "ofdm": OfdmConfig,
    "coherence_block": CoherenceBlock,
}


def _scalar(node, expected, where):
    value = yaml.safe_load(yaml.serialize(node))
    line = node.start_mark.line + 1
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e-13" (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                pass
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is str:
        ok = isinstance(value, str)
    elif expected is list:
        ok = isinstance(value, list)
    elif expected == "int|null":
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    else:
        ok = True
    if not ok:
        name = expected if isinstance(expected, str) else expected.__name__
        raise ConfigError(f"{where}:{line}: expected {name}, got {value!r}")
    return value


def _field_types(cls):
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        t = t.replace(" ", "")
        if f.name in _SECTIONS:
            out[f.name] = _SECTIONS[f.name]
        elif t in ("int|None", "Optional[int]"):
            out[f.name] = "int|null"
        else:
            out[f.name] = {"int": int, "float": float, "bool": bool, "str": str,
                           "list": list}.get(t, object)
    return out


def _build(cls, node, where):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{where}:{node.start_mark.line + 1}: expected a mapping")
    types = _field_types(cls)
    kwargs = {}
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in types:
            raise ConfigError(f"{where}:{line}: unknown field {key!r} in {cls.__name__}")
        if key in kwargs:
            raise ConfigError(f"{where}:{line}: duplicate field {key!r}")
        expected = types[key]
        if isinstance(expected, type) and dataclasses.is_dataclass(expected):
            kwargs[key] = _build(expected, value_node, where)
        else:
            kwargs[key] = _scalar(value_node, expected, where)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}:{node.start_mark.line + 1}: {cls.__name__}: {exc}") from None


def parse_config(text: str, where: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{where}:{line}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        return ExperimentConfig()
    return _build(ExperimentConfig, node, where)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
