"""Flat key=value run configuration.

One option per line, `key = value`. Blank lines and `#` comments are
ignored. Training options use the bare field name (`lr = 1e-3`), solver
options the `solver.` prefix (`solver.max_iter = 30`), and model options
the `model.` prefix (`model.atoms2d = 64`). Unknown keys are errors, not
warnings, so typos cannot silently fall back to defaults.
"""

import dataclasses

from .errors import ConfigError
from .model import ModelConfig
from .solver import SolverConfig
from .train import TrainConfig


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


_TRAIN_FIELDS = {n: t for n, t in _field_types(TrainConfig).items() if n != "solver"}
_SOLVER_FIELDS = _field_types(SolverConfig)
_MODEL_FIELDS = _field_types(ModelConfig)


def _convert(key, raw, typ):
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config_text(text):
    """Returns (TrainConfig, ModelConfig) built from defaults plus overrides."""
    train_kw, solver_kw, model_kw = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key.startswith("solver."):
            name = key[len("solver.") :]
            table, fields = solver_kw, _SOLVER_FIELDS
        elif key.startswith("model."):
            name = key[len("model.") :]
            table, fields = model_kw, _MODEL_FIELDS
        else:
            name = key
            table, fields = train_kw, _TRAIN_FIELDS
        if name not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in table:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        table[name] = _convert(key, raw, fields[name])
    train_cfg = TrainConfig(solver=SolverConfig(**solver_kw), **train_kw)
    model_cfg = ModelConfig(**model_kw)
    try:
        train_cfg.validate()
        model_cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return train_cfg, model_cfg


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def _render(val):
    # repr keeps float round trips exact; strings stay bare for re-parsing
    return val if isinstance(val, str) else repr(val)


def config_text(train_cfg, model_cfg):
    """Render configs back to parseable text (full round trip)."""
    lines = []
    for name in _TRAIN_FIELDS:
        lines.append(f"{name} = {_render(getattr(train_cfg, name))}")
    for name in _SOLVER_FIELDS:
        lines.append(f"solver.{name} = {_render(getattr(train_cfg.solver, name))}")
    for name in _MODEL_FIELDS:
        lines.append(f"model.{name} = {_render(getattr(model_cfg, name))}")
    return "\n".join(lines) + "\n"
