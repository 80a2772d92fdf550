"""INI run configuration: parsing, validation and serialisation."""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .elliptic import EllipticConfig
from .fields import DensityField, GridSpec, read_snapshot
from .jko import BACKENDS, W2StepConfig
from .model import ModelParams
from .potentials import EntropySpec, ReactionSpec, ThresholdReport
from .scenarios import PRESETS, make_initial
from .scheme import SchemeConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending ``[section].key``."""


# key -> (type, required, default)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "domain": {"dim": (int, False, 1), "lengths": ("floats", False, (1.0,)), "cells": ("ints", True, None)},
    "model": {"chi": (float, False, 0.0), "lambda_screen": (float, False, 1.0),
              "bc": (str, False, "neumann_screened"), "lambda": (float, False, 1.01)},
    "entropy": {"kind": (str, False, "boltzmann"), "m": (float, False, 2.0), "delta": (float, False, None)},
    "reaction": {"alpha": (float, True, None), "beta": (float, True, None), "r": (float, True, None)},
    "scheme": {"tau": (float, True, None), "t_final": (float, True, None),
               "backend": (str, False, "quantile_1d"), "outer_iters": (int, False, 3),
               "eps_schedule": ("floats", False, None), "enforce_thresholds": (bool, False, True),
               "max_sinkhorn": (int, False, 200)},
    "init": {"preset": (str, False, None), "csv": (str, False, None), "value": (float, False, None),
             "base": (float, False, None), "amplitude": (float, False, None), "mode": (int, False, None),
             "center": ("floats", False, None), "width": (float, False, None), "height": (float, False, None),
             "floor": (float, False, None), "separation": (float, False, None)},
    "output": {"dir": (str, False, "out"), "save_every": (int, False, 0), "formats": ("strs", False, ("csv",))},
}

_FORMATS = ("csv", "json")


def _parse_value(kind, raw: str, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("floats", "ints", "strs"):
            parts = [p for p in raw.replace(",", " ").split() if p]
            conv = {"floats": float, "ints": int, "strs": str}[kind]
            if not parts:
                raise ValueError("empty list")
            return tuple(conv(p) for p in parts)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``values`` maps section -> key -> value (defaults filled in)."""

    values: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # ------------------------------------------------------------------ build objects
    def grid(self) -> GridSpec:
        d = self["domain"]
        cells = d["cells"]
        lengths = d["lengths"]
        dim = d["dim"]
        if len(cells) == 1:
            cells = cells * dim
        if len(lengths) == 1:
            lengths = lengths * dim
        if len(cells) != dim or len(lengths) != dim:
            raise ConfigError("[domain].cells: length of cells/lengths does not match dim")
        try:
            return GridSpec(tuple(float(x) for x in lengths), tuple(int(n) for n in cells))
        except ValueError as exc:
            raise ConfigError(f"[domain]: {exc}") from None

    def reaction(self) -> ReactionSpec:
        r = self["reaction"]
        try:
            return ReactionSpec(r["alpha"], r["beta"], r["r"])
        except ValueError as exc:
            raise ConfigError(f"[reaction]: {exc}") from None

    def entropy(self) -> EntropySpec:
        e = self["entropy"]
        try:
            return EntropySpec(e["kind"], e["m"], e["delta"])
        except ValueError as exc:
            raise ConfigError(f"[entropy]: {exc}") from None

    def model(self) -> ModelParams:
        m = self["model"]
        try:
            ell = EllipticConfig(m["bc"], m["lambda_screen"])
            return ModelParams(self.grid(), m["chi"], ell, self.entropy(), self.reaction())
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[model]: {exc}") from None

    def scheme(self) -> SchemeConfig:
        s = self["scheme"]
        try:
            w2 = W2StepConfig(s["backend"], s["tau"], outer_fixed_point_iters=s["outer_iters"],
                              eps_schedule=s["eps_schedule"], max_sinkhorn=s["max_sinkhorn"])
            return SchemeConfig(self.model(), s["tau"], s["t_final"], w2,
                                enforce_thresholds=s["enforce_thresholds"], lam=self["model"]["lambda"])
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[scheme]: {exc}") from None

    def initial(self) -> DensityField:
        init = self["init"]
        grid = self.grid()
        if init["csv"] is not None:
            path = Path(init["csv"])
            path = path if path.is_absolute() else self.base_dir / path
            try:
                rho = read_snapshot(path)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"[init].csv: {exc}") from None
            same = rho.grid.cells == grid.cells and all(
                abs(a - b) <= 1e-9 * b for a, b in zip(rho.grid.lengths, grid.lengths))
            if not same:
                raise ConfigError("[init].csv: snapshot grid does not match [domain]")
            return DensityField(grid, rho.values)
        params = {k: v for k, v in init.items() if k not in ("preset", "csv") and v is not None}
        if "center" in params:
            params["center"] = tuple(params["center"])
        try:
            return make_initial(init["preset"], grid, self.reaction(), **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[init]: {exc}") from None

    # ------------------------------------------------------------------ serialisation
    def to_ini(self) -> str:
        out = io.StringIO()
        for sec, keys in _SCHEMA.items():
            out.write(f"[{sec}]\n")
            for key in keys:
                v = self.values[sec][key]
                if v is not None:
                    out.write(f"{key} = {_fmt(v)}\n")
            out.write("\n")
        return out.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def parse(text: str, base_dir: Path | str = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                   inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    unknown = [s for s in cp.sections() if s not in _SCHEMA]
    if unknown:
        raise ConfigError(f"[{unknown[0]}]: unknown section")
    values: dict = {}
    for sec, keys in _SCHEMA.items():
        present = dict(cp[sec]) if cp.has_section(sec) else {}
        for k in present:
            if k not in keys:
                raise ConfigError(f"[{sec}].{k}: unknown key")
        values[sec] = {}
        for key, (kind, required, default) in keys.items():
            where = f"[{sec}].{key}"
            if key in present:
                values[sec][key] = _parse_value(kind, present[key], where)
            elif required:
                raise ConfigError(f"{where}: missing required key")
            else:
                values[sec][key] = default
    init = values["init"]
    if (init["preset"] is None) == (init["csv"] is None):
        raise ConfigError("[init].preset: give exactly one of preset or csv")
    if init["preset"] is not None and init["preset"] not in PRESETS:
        raise ConfigError(f"[init].preset: unknown preset {init['preset']!r}")
    if values["scheme"]["backend"] not in BACKENDS:
        raise ConfigError(f"[scheme].backend: must be one of {', '.join(BACKENDS)}")
    bad = [f for f in values["output"]["formats"] if f not in _FORMATS]
    if bad:
        raise ConfigError(f"[output].formats: unknown format {bad[0]!r}")
    if values["output"]["save_every"] < 0:
        raise ConfigError("[output].save_every: must be nonnegative")
    cfg = RunConfig(values, Path(base_dir))
    # build everything once so errors surface at load time
    cfg.scheme()
    return cfg


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"file: {exc}") from None
    return parse(text, path.parent)


def thresholds_json(report: ThresholdReport, F: ReactionSpec, rho0_linf: float, **kw) -> str:
    """Report JSON with the inputs that produced it, so it can be loaded back."""
    payload = {"inputs": {"alpha": F.alpha, "beta": F.beta, "r": F.r, "rho0_linf": rho0_linf,
                          "chi": report.chi, "lambda": report.lam},
               "report": json.loads(report.to_json())}
    return json.dumps(payload, **kw)


def load_thresholds_json(text: str) -> tuple[ReactionSpec, ThresholdReport]:
    data = json.loads(text)
    inp = data["inputs"]
    return ReactionSpec(inp["alpha"], inp["beta"], inp["r"]), ThresholdReport(**data["report"])
