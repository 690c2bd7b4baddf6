"""Campaign configuration: YAML loading and validation.

Every key is declared below; unknown keys, wrong types and out-of-range
values raise :class:`~graspbo.exceptions.ConfigError` naming the field path
and, when the value came from a file, its line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigError
from .heuristics import ARMS
from .hand import HandModel

EPS_PATHS = ("exact", "support")
NORMALIZATION_MODES = ("fixed", "running")
KERNELS = ("matern52", "squared_exponential")


@dataclass(frozen=True)
class NoiseSection:
    sigma_pos: float = 1e-3
    sigma_ang: float = 0.02
    sigma_y: float = 0.0


@dataclass(frozen=True)
class FrictionSection:
    mu: float = 0.5
    cone_edges: int = 8


@dataclass(frozen=True)
class NormalizationSection:
    mode: str = "fixed"
    calibration_samples: int = 200
    calibration_seed: int = 0


@dataclass(frozen=True)
class GPSection:
    kernel: str = "matern52"
    n_hyper_samples: int = 10
    n_burnin: int = 20
    n_warm_burnin: int = 3
    refit_every: int = 1


@dataclass(frozen=True)
class AcquisitionSection:
    n_candidates: int = 1024
    n_starts: int = 8


@dataclass(frozen=True)
class SuccessSection:
    k_trials: int = 20
    min_closure_rate: float = 0.9
    eps_min: float = 0.05


@dataclass(frozen=True)
class CheckSection:
    min_gap: float = 0.1
    min_reach: float = 0.9
    sweep_metrics: tuple = (4,)


@dataclass(frozen=True)
class CampaignConfig:
    """One experiment: scene, hand, arms, weights, BO budget and seeds."""

    object: Any = "bottle"
    hand: dict = field(default_factory=dict)
    arms: tuple = ("gr",)
    weights: tuple = (0.0, 1.0, 0.0, 0.0)
    lam: float = 0.1
    alpha: float = 0.1
    n0: int = 20
    iters: int = 50
    seeds: tuple = tuple(range(10))
    noise: NoiseSection = field(default_factory=NoiseSection)
    friction: FrictionSection = field(default_factory=FrictionSection)
    normalization: NormalizationSection = field(default_factory=NormalizationSection)
    gp: GPSection = field(default_factory=GPSection)
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    success: SuccessSection = field(default_factory=SuccessSection)
    check: CheckSection = field(default_factory=CheckSection)
    eps_path: str = "exact"
    volume_samples: int = 2048
    table_height: float = 0.0
    capability_threshold: float = 0.1
    pregrasp_offset: float = 0.10
    threshold: float = 0.5
    sweep_arm: str = "gr"
    timing: bool = False
    workers: int = 1
    out: str = "runs"

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

class _Ctx:
    def __init__(self, lines: dict):
        self.lines = lines

    def fail(self, path: tuple, msg: str):
        name = ".".join(str(p) for p in path) or "<root>"
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{name}: {msg}{where}")


def _number(ctx, path, v, lo=None, hi=None, lo_open=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(path, f"expected a number, got {v!r}")
    if integer and not isinstance(v, int):
        ctx.fail(path, f"expected an integer, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        ctx.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        ctx.fail(path, f"must be <= {hi}, got {v!r}")
    return int(v) if integer else float(v)


def _choice(ctx, path, v, options):
    if v not in options:
        ctx.fail(path, f"expected one of {list(options)}, got {v!r}")
    return v


def _mapping(ctx, path, v):
    if not isinstance(v, dict):
        ctx.fail(path, f"expected a mapping, got {type(v).__name__}")
    return v


def _int_list(ctx, path, v):
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        ctx.fail(path, "expected a non-empty list of integers")
    out = tuple(_number(ctx, path + (i,), s, integer=True) for i, s in enumerate(v))
    if len(set(out)) != len(out):
        ctx.fail(path, "seeds must be distinct")
    return out


def _section(ctx, path, raw, cls, checks: dict):
    raw = _mapping(ctx, path, raw)
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in raw.items():
        if k not in names:
            ctx.fail(path + (k,), f"unknown key; allowed: {sorted(names)}")
        kw[k] = checks[k](ctx, path + (k,), v)
    return cls(**kw)


def _pos(ctx, p, v):
    return _number(ctx, p, v, lo=0, lo_open=True)


def _nonneg(ctx, p, v):
    return _number(ctx, p, v, lo=0)


def _posint(ctx, p, v):
    return _number(ctx, p, v, lo=1, integer=True)


def _nonnegint(ctx, p, v):
    return _number(ctx, p, v, lo=0, integer=True)


def _unit(ctx, p, v):
    return _number(ctx, p, v, lo=0, hi=1)


_SECTIONS = {
    "noise": (NoiseSection, {"sigma_pos": _nonneg, "sigma_ang": _nonneg, "sigma_y": _nonneg}),
    "friction": (FrictionSection, {"mu": _nonneg,
                                   "cone_edges": lambda c, p, v: _number(c, p, v, lo=3, integer=True)}),
    "normalization": (NormalizationSection, {
        "mode": lambda c, p, v: _choice(c, p, v, NORMALIZATION_MODES),
        "calibration_samples": _posint, "calibration_seed": _nonnegint}),
    "gp": (GPSection, {"kernel": lambda c, p, v: _choice(c, p, v, KERNELS),
                       "n_hyper_samples": _posint, "n_burnin": _nonnegint,
                       "n_warm_burnin": _nonnegint, "refit_every": _posint}),
    "acquisition": (AcquisitionSection, {"n_candidates": _posint, "n_starts": _nonnegint}),
    "success": (SuccessSection, {"k_trials": _posint, "min_closure_rate": _unit, "eps_min": _nonneg}),
    "check": (CheckSection, {"min_gap": _nonneg, "min_reach": _unit,
                             "sweep_metrics": lambda c, p, v: tuple(
                                 _number(c, p + (i,), m, lo=1, hi=4, integer=True)
                                 for i, m in enumerate(v if isinstance(v, list) else [v]))}),
}


def _arms(ctx, path, v):
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list) or not v:
        ctx.fail(path, "expected an arm name or a non-empty list of arm names")
    out = tuple(_choice(ctx, path + (i,), a, ARMS) for i, a in enumerate(v))
    if len(set(out)) != len(out):
        ctx.fail(path, "arms must be distinct")
    return out


def _weights(ctx, path, v):
    if not isinstance(v, list) or len(v) != 4:
        ctx.fail(path, "expected a list of four weights (iso, eps, vol, uni)")
    w = tuple(_nonneg(ctx, path + (i,), x) for i, x in enumerate(v))
    if abs(sum(w) - 1.0) > 1e-9:
        ctx.fail(path, f"weights must sum to 1, got {sum(w)!r}")
    return w


def _object(ctx, path, v):
    from .geom import OBJECT_LIBRARY

    if isinstance(v, str):
        return _choice(ctx, path, v, sorted(OBJECT_LIBRARY))
    raw = _mapping(ctx, path, v)
    for k in raw:
        if k not in ("name", "primitives", "center"):
            ctx.fail(path + (k,), "unknown key; allowed: ['center', 'name', 'primitives']")
    if "primitives" not in raw:
        ctx.fail(path, "a custom object needs a 'primitives' list")
    return raw


def _hand(ctx, path, v):
    raw = _mapping(ctx, path, v)
    names = {f.name for f in dataclasses.fields(HandModel)}
    out = {}
    for k, x in raw.items():
        if k not in names:
            ctx.fail(path + (k,), f"unknown hand parameter; allowed: {sorted(names)}")
        out[k] = tuple(x) if isinstance(x, list) else x
    try:
        HandModel(**out)
    except (TypeError, ValueError) as err:
        ctx.fail(path, str(err))
    return out


_TOP = {
    "object": _object,
    "hand": _hand,
    "arms": _arms,
    "weights": _weights,
    "lambda": _pos,
    "alpha": _pos,
    "n0": _posint,
    "iters": _nonnegint,
    "seeds": _int_list,
    "eps_path": lambda c, p, v: _choice(c, p, v, EPS_PATHS),
    "volume_samples": _posint,
    "table_height": lambda c, p, v: _number(c, p, v),
    "capability_threshold": _unit,
    "pregrasp_offset": _pos,
    "threshold": lambda c, p, v: _number(c, p, v),
    "sweep_arm": lambda c, p, v: _choice(c, p, v, ARMS),
    "timing": lambda c, p, v: v if isinstance(v, bool) else c.fail(p, "expected true or false"),
    "workers": _posint,
    "out": lambda c, p, v: v if isinstance(v, str) else c.fail(p, "expected a path string"),
}


def validate(data: dict, lines: dict | None = None) -> CampaignConfig:
    """Build a :class:`CampaignConfig` from a plain mapping."""
    ctx = _Ctx(lines or {})
    if data is None:
        data = {}
    _mapping(ctx, (), data)
    kw = {}
    for key, value in data.items():
        path = (key,)
        if key in _SECTIONS:
            cls, checks = _SECTIONS[key]
            kw[key] = _section(ctx, path, value, cls, checks)
        elif key in _TOP:
            kw["lam" if key == "lambda" else key] = _TOP[key](ctx, path, value)
        else:
            allowed = sorted(set(_TOP) | set(_SECTIONS))
            ctx.fail(path, f"unknown key; allowed: {allowed}")
    return CampaignConfig(**kw)


def _node_lines(node, path: tuple, out: dict) -> None:
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _node_lines(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _node_lines(v, path + (i,), out)


def loads(text: str) -> CampaignConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"<file>: not valid YAML: {err}") from err
    lines: dict = {}
    if node is not None:
        _node_lines(node, (), lines)
    return validate(data, lines)


def load(path) -> CampaignConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err}") from err
    return loads(text)
