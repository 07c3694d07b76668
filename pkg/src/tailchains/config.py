"""Experiment configuration: JSON schema, loading and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError

_POS = {"type": "number", "exclusiveMinimum": 0}
_SPECTRAL = {
    "oneOf": [
        {"const": "uniform"},
        {
            "type": "object",
            "required": ["points", "weights"],
            "properties": {
                "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
    ]
}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["type", "d", "alpha"],
    "properties": {
        "type": {"enum": ["ar1", "kesten"]},
        "d": {"type": "integer", "minimum": 1},
        "alpha": _POS,
        "burn_in": {"type": "integer", "minimum": 0},
        "A": {"oneOf": [{"type": "number"}, {"type": "array"}]},
        "innovation": {
            "type": "object",
            "properties": {
                "name": {"enum": ["pareto-symmetric"]},
                "scale": _POS,
                "spectral": _SPECTRAL,
            },
        },
        "radial": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["lognormal", "loguniform", "log-uniform", "point"]},
                "mu": {"type": "number"},
                "sigma": _POS,
                "lo": _POS,
                "hi": _POS,
                "r": _POS,
                "normalize": {"type": "boolean"},
            },
        },
        "rotation": {"enum": ["haar", "identity"]},
        "additive": {
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"enum": ["zero", "normal"]}, "scale": _POS},
        },
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "ar1"}}}, "then": {"required": ["A"]}},
        {"if": {"properties": {"type": {"const": "kesten"}}}, "then": {"required": ["radial"]}},
    ],
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "model"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "model": MODEL_SCHEMA,
        "simulation": {
            "type": "object",
            "properties": {"n": {"type": "integer", "minimum": 1}, "burn_in": {"type": "integer", "minimum": 0}},
        },
        "thresholds": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 100},
        },
        "horizons": {
            "type": "object",
            "properties": {"s": {"type": "integer", "minimum": 0}, "t": {"type": "integer", "minimum": 0}},
        },
        "bftc": {"type": "object", "properties": {"n": {"type": "integer", "minimum": 2}}},
        "windows_per_threshold": {"type": "integer", "minimum": 10},
        "n_perm": {"type": "integer", "minimum": 100},
        "gate_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "output_dir": {"type": "string"},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    model: dict
    name: str = "experiment"
    n: int = 1_000_000
    burn_in: int | None = None
    thresholds: tuple[float, ...] = (99.0, 99.9)
    s: int = 2
    t: int = 2
    bftc_n: int = 20_000
    windows_per_threshold: int = 2000
    n_perm: int = 999
    gate_level: float = 0.001
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        problems = validate_dict(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        sim = cfg.get("simulation", {})
        hor = cfg.get("horizons", {})
        return cls(
            seed=int(cfg["seed"]),
            model=cfg["model"],
            name=cfg.get("name", "experiment"),
            n=int(sim.get("n", 1_000_000)),
            burn_in=sim.get("burn_in"),
            thresholds=tuple(float(q) for q in cfg.get("thresholds", (99.0, 99.9))),
            s=int(hor.get("s", 2)),
            t=int(hor.get("t", 2)),
            bftc_n=int(cfg.get("bftc", {}).get("n", 20_000)),
            windows_per_threshold=int(cfg.get("windows_per_threshold", 2000)),
            n_perm=int(cfg.get("n_perm", 999)),
            gate_level=float(cfg.get("gate_level", 0.001)),
            output_dir=cfg.get("output_dir", "out"),
            raw=cfg,
        )


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def _leaf_errors(err: jsonschema.ValidationError):
    # report the innermost failures of oneOf/anyOf instead of the umbrella error
    if err.context:
        for sub in err.context:
            yield from _leaf_errors(sub)
    else:
        yield err


def validate_dict(cfg) -> list[str]:
    """Schema problems as ``"<json pointer>: <message>"``; empty when valid."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        seen = set()
        for leaf in _leaf_errors(err):
            msg = f"{_pointer(leaf.absolute_path)}: {leaf.message}"
            if msg not in seen:
                seen.add(msg)
                out.append(msg)
    return out


def validate_config(path) -> list[str]:
    """Validate a config file; ``OSError`` if unreadable."""
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        return [f"/: invalid JSON ({exc.msg} at line {exc.lineno})"]
    return validate_dict(cfg)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def bundled_config_names() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("tailchains") / "configs").iterdir() if p.name.endswith(".json"))


def bundled_config_path(name: str) -> Path:
    name = name[:-5] if name.endswith(".json") else name
    p = resources.files("tailchains") / "configs" / f"{name}.json"
    if not p.is_file():
        raise ConfigError(f"no bundled config named {name!r} (have {', '.join(bundled_config_names())})")
    return Path(str(p))


def resolve_model(ref: str) -> dict:
    """A model dict from a bundled config name, a model JSON file or an experiment config file."""
    path = Path(ref)
    if not path.exists():
        path = bundled_config_path(ref)
    doc = json.loads(path.read_text())
    return doc["model"] if "model" in doc else doc
