"""JSON model-config files. Unknown keys are rejected, not ignored."""

from __future__ import annotations

import json

from .errors import FormatError
from .model import ModelConfig, StageSpec

_TOP_KEYS = {"stages", "m", "num_classes", "resolution", "pos_embed", "seed"}
_STAGE_KEYS = {"depth", "heads", "channels", "ffn_ratio_pixel",
               "ffn_ratio_semantic", "patch_size", "kind"}
_STAGE_REQUIRED = _STAGE_KEYS - {"kind"}


def config_from_dict(raw: dict) -> ModelConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    if "stages" not in raw:
        raise FormatError("config missing required key 'stages'")
    stages = []
    for i, s in enumerate(raw["stages"]):
        extra = set(s) - _STAGE_KEYS
        if extra:
            raise FormatError(f"stage {i + 1}: unknown keys {sorted(extra)}")
        missing = _STAGE_REQUIRED - set(s)
        if missing:
            raise FormatError(f"stage {i + 1}: missing keys {sorted(missing)}")
        kind = s.get("kind", "dual" if i < 2 else "merge")
        stages.append(StageSpec(depth=s["depth"], heads=s["heads"],
                                channels=s["channels"],
                                ffn_ratio_pixel=s["ffn_ratio_pixel"],
                                ffn_ratio_semantic=s["ffn_ratio_semantic"],
                                patch_size=s["patch_size"], kind=kind))
    cfg = ModelConfig(stages=stages,
                      m=raw.get("m", 32),
                      num_classes=raw.get("num_classes", 1000),
                      resolution=raw.get("resolution", 224),
                      pos_embed=raw.get("pos_embed", True),
                      seed=raw.get("seed", 0))
    cfg.validate()
    return cfg


def load_model_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError("config root must be a JSON object")
    return config_from_dict(raw)
