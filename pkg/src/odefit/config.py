"""Run configuration: one strict JSON document with echoed defaults.

A run file has five sections -- ``data``, ``model``, ``pipeline``,
``scenario``, ``output`` -- and every key is optional.  Omitted keys are
filled from the defaults below, unknown keys are rejected with the dotted
path of the offender, and the fully resolved document is embedded in every
artifact a run produces, so any results file can be reproduced from its own
header alone.

The ``scenario`` sweep axes (``methods``, ``variants``, ``n_grid``,
``sigma_grid``, ``seeds``) default to ``null``, meaning "use the published
grid for this scenario id"; they are concrete lists after resolution.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .bench import ScenarioSettings, default_settings
from .pipeline import PipelineConfig


class ConfigError(ValueError):
    """Unparseable document, unknown key, or ill-typed value."""


# Keys of PipelineConfig that describe the model itself rather than how it
# is trained; they live in the "model" section of a run file.
_MODEL_KEYS = (
    "rhs_kind", "n_max", "basis_variant", "widths",
    "kernel_lengthscale", "kernel_lam", "pilots_per_dim", "pilot_inflate",
)

_SCENARIO_IDS = ("S1", "S2", "S3", "S4")


def _split_pipeline_defaults():
    d = PipelineConfig().to_dict()
    model = {k: d.pop(k) for k in _MODEL_KEYS}
    return model, d


def default_document() -> dict:
    """The full defaults tree (deep copy; mutate freely)."""
    model, pipe = _split_pipeline_defaults()
    doc = {
        "data": {
            "n_obs": 35,
            "sigma": 0.0,
            "seed": 0,
            "x0": [1.0, 1.0],
            "span": [0.0, 7.0],
        },
        "model": model,
        "pipeline": pipe,
        "scenario": {
            "id": "S2",
            # null = the scenario id's published grid (see bench.default_settings)
            "methods": None,
            "variants": None,
            "n_grid": None,
            "sigma_grid": None,
            "seeds": None,
            "x0": [1.0, 1.0],
            "span": [0.0, 7.0],
            "n_eval": 200,
            "eval_h_max": 0.01,
            "workers": 1,
            "pretrain_region": [[0.25, 0.25], [7.0, 7.0]],
            "pretrain_grid": 50,
        },
        "output": {
            "directory": "out",
            "formats": ["csv", "png"],
        },
    }
    return copy.deepcopy(doc)


def _type_ok(value, default) -> bool:
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, (list, tuple)):
        return isinstance(value, list)
    return True


def _merge(user: dict, defaults: dict, path: str) -> dict:
    out = {}
    for key, value in user.items():
        dotted = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be an object")
            out[key] = _merge(value, defaults[key], dotted)
            continue
        if not _type_ok(value, defaults[key]):
            raise ConfigError(
                f"config key {dotted} has wrong type: expected "
                f"{type(defaults[key]).__name__}, got {type(value).__name__}")
        out[key] = value
    for key, value in defaults.items():
        if key not in out:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """A fully resolved run document plus converters into library types."""

    doc: dict

    @property
    def data(self) -> dict:
        return self.doc["data"]

    @property
    def output(self) -> dict:
        return self.doc["output"]

    @property
    def scenario(self) -> dict:
        return self.doc["scenario"]

    def pipeline_config(self) -> PipelineConfig:
        merged = dict(self.doc["pipeline"])
        merged.update(self.doc["model"])
        try:
            return PipelineConfig.from_dict(merged)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def scenario_settings(self) -> ScenarioSettings:
        sc = self.doc["scenario"]
        overrides = {
            key: tuple(sc[key])
            for key in ("methods", "variants", "n_grid", "sigma_grid", "seeds")
            if sc[key] is not None
        }
        overrides.update(
            x0=tuple(sc["x0"]),
            span=tuple(sc["span"]),
            n_eval=sc["n_eval"],
            eval_h_max=sc["eval_h_max"],
            workers=sc["workers"],
            pretrain_region=tuple(tuple(v) for v in sc["pretrain_region"]),
            pretrain_grid=sc["pretrain_grid"],
            pipeline=self.pipeline_config(),
        )
        try:
            return default_settings(sc["id"], **overrides)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def to_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"


def parse_config(doc) -> RunConfig:
    """Validate a decoded document and resolve every default.

    Accepts a dict (or None for an all-defaults run).  After this call the
    scenario sweep axes are concrete lists, never null.
    """
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    resolved = _merge(doc, default_document(), "")
    sc = resolved["scenario"]
    if sc["id"] not in _SCENARIO_IDS:
        raise ConfigError(
            f"config key scenario.id must be one of {', '.join(_SCENARIO_IDS)}")
    cfg = RunConfig(resolved)
    # Constructing the library types surfaces cross-key errors (bad rhs_kind,
    # bad variant, segment_target < 2, ...) at load time, not at run time.
    cfg.pipeline_config()
    settings = cfg.scenario_settings()
    for key in ("methods", "variants", "n_grid", "sigma_grid", "seeds"):
        if sc[key] is None:
            sc[key] = list(getattr(settings, key))
    return cfg


def load_config(path) -> RunConfig:
    """Read and resolve a JSON run file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    return parse_config(doc)
