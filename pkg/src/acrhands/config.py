"""JSON run configuration; every tunable default can be overridden, unknown keys are errors."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .aggregation import InteractionConfig
from .attention_maps import MAP_SIZE, KernelConfig
from .errors import FormatError
from .fitting import FitConfig
from .losses import LossWeights
from .synth import SynthConfig


@dataclass(frozen=True)
class RigConfig:
    seed: int = 0
    n_vertices: int = 778
    path: Optional[str] = None  # .npz rig replacing the generated toy rig


@dataclass(frozen=True)
class RunConfig:
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fit: FitConfig = field(default_factory=FitConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    map_size: int = MAP_SIZE

    def rigs(self):
        from .hand_model import load_rig, rig_pair
        from .synth import default_rigs
        if self.rig.path:
            return rig_pair(load_rig(self.rig.path))
        return default_rigs(self.rig.seed, self.rig.n_vertices)


_TUPLE_FIELDS = {("synth", "scale_range"), ("fit", "terms")}


def build_section(cls, section: str, doc: Any):
    if not isinstance(doc, Mapping):
        raise FormatError(f"config section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise FormatError(f"unknown keys in config section {section!r}: {unknown}")
    values = {k: tuple(v) if (section, k) in _TUPLE_FIELDS else v for k, v in doc.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"config section {section!r}: {exc}") from None


def config_from_dict(doc: Mapping) -> RunConfig:
    if not isinstance(doc, Mapping):
        raise FormatError("config must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - set(sections))
    if unknown:
        raise FormatError(f"unknown config sections: {unknown}")
    values = {}
    for name, value in doc.items():
        if name == "map_size":
            if not isinstance(value, int) or value < 4:
                raise FormatError("map_size must be an integer >= 4")
            values[name] = value
        else:
            values[name] = build_section(sections[name].default_factory().__class__, name, value)
    if "map_size" in values:
        # one map size for the whole run; the top-level key wins
        values["synth"] = dataclasses.replace(values.get("synth", SynthConfig()), map_size=values["map_size"])
    elif "synth" in values:
        values["map_size"] = values["synth"].map_size
    return RunConfig(**values)


def load_config(path=None) -> RunConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
