"""Checked-in scenario presets, graph transcriptions and matrix fixtures."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .. import dynamics as dyn

PRESET_DIR = Path(__file__).resolve().parent
_WRAPPER_KEYS = {"description", "window", "threshold", "tail_fraction", "scenario"}


def preset_dir() -> Path:
    return Path(os.environ.get("SIGNED_CONSENSUS_PRESETS", PRESET_DIR))


def list_presets(base: Path | None = None) -> list[str]:
    base = preset_dir() if base is None else Path(base)
    return sorted(p.stem for p in base.glob("*.json"))


@dataclass
class Preset:
    name: str
    spec: dyn.ScenarioSpec
    description: str = ""
    window: int | None = None
    threshold: float = 1e-3
    tail_fraction: float = 0.2


def parse_value(text: str):
    """JSON literal when possible (numbers, lists, booleans), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(scenario: dict, overrides: dict) -> dict:
    """Gain names go into "gains"; anything else replaces a top-level key."""
    out = dict(scenario)
    gains = dict(out.get("gains", {}))
    gain_keys = set(dyn.GainParameters.__dataclass_fields__)
    for key, value in overrides.items():
        if key in gain_keys:
            gains[key] = value
        else:
            out[key] = value
    out["gains"] = gains
    return out


def parse_config(data: dict, name: str, base_dir, overrides: dict | None = None) -> Preset:
    """Accept a bare scenario dict or the preset wrapper around one."""
    if "scenario" in data:
        unknown = set(data) - _WRAPPER_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        scenario = data["scenario"]
    else:
        scenario, data = data, {}
    scenario = apply_overrides(scenario, overrides or {})
    spec = dyn.spec_from_json(scenario, base_dir)
    spec.name = spec.name or name
    return Preset(name, spec, data.get("description", ""), data.get("window"),
                  float(data.get("threshold", 1e-3)), float(data.get("tail_fraction", 0.2)))


def load_config(path, overrides: dict | None = None) -> Preset:
    path = Path(path)
    return parse_config(json.loads(path.read_text()), path.stem, path.parent, overrides)


def load_preset(name: str, overrides: dict | None = None, base: Path | None = None) -> Preset:
    base = preset_dir() if base is None else Path(base)
    path = base / f"{name}.json"
    if not path.is_file():
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(list_presets(base))}")
    return load_config(path, overrides)


def load_matrix_file(path):
    """(kind, data): ("matrix", 2-D list) or ("product", list of 2-D lists)."""
    import numpy as np

    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        data = {"matrix": data}
    if not isinstance(data, dict) or len(data) != 1 or not ({"matrix", "matrices"} & set(data)):
        raise ValueError('matrix file must hold {"matrix": [[...]]} or {"matrices": [...]}')
    if "matrix" in data:
        F = np.array(data["matrix"], dtype=float)
        if F.ndim != 2 or F.shape[0] != F.shape[1] or not np.all(np.isfinite(F)):
            raise ValueError("matrix must be square and finite")
        return "matrix", F
    Fs = [np.array(m, dtype=float) for m in data["matrices"]]
    if not Fs or any(F.ndim != 2 or F.shape != Fs[0].shape or F.shape[0] != F.shape[1] for F in Fs):
        raise ValueError("matrices must be square and of one size")
    return "product", Fs


def matrix_fixture(name: str):
    return load_matrix_file(PRESET_DIR / "matrices" / f"{name}.json")[1]
