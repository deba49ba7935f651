"""Experiment configuration: structured text parsing, validation, hashing.

The config format is line-based: ``[section]`` headers followed by
``key = value`` pairs whose values are JSON fragments (numbers, strings,
booleans, nested lists).  parse -> serialize -> parse is the identity, and
the canonical serialization is what gets hashed into artifact stamps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

from .errors import ConfigError

DEFAULT_DELTA_GRID = (0.02, 0.04, 0.08, 0.12, 0.2)
DEFAULT_EPS_GRID = (0.1, 0.2, 0.3, 0.4)


@dataclass
class ExperimentConfig:
    """All knobs of a batch experiment run."""

    model: str = "heisenberg"
    x0: Optional[list] = None            # None -> origin of the model space
    delta_grid: list = field(default_factory=lambda: list(DEFAULT_DELTA_GRID))
    n_paths: int = 200_000
    steps_per_sub: int = 256
    seed: int = 1234
    eps_grid: list = field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    rho: float = 6.0
    r: float = 0.5
    p_exponent: float = 4.0
    centering: str = "x0+bdelta"
    output_dir: str = "hypodens-out"
    v_convention: str = "appendix-b"
    qp_convention: str = "p-block"
    model_tables: Optional[dict] = None  # inline polynomial model spec

    def validate(self):
        from .decomp import V_CONVENTIONS
        from .density import CENTERINGS

        def bad(fieldname, msg):
            raise ConfigError(msg, field=fieldname)

        if not self.delta_grid:
            bad("delta_grid", "delta grid must be non-empty")
        if any(d <= 0.0 for d in self.delta_grid):
            bad("delta_grid", "all delta values must be positive")
        if self.n_paths < 1:
            bad("n_paths", "path count must be at least 1")
        if self.steps_per_sub < 8:
            bad("steps_per_sub", "steps_per_sub must be at least 8")
        if not self.eps_grid:
            bad("eps_grid", "epsilon grid must be non-empty")
        if any(not 0.0 < e <= 1.0 for e in self.eps_grid):
            bad("eps_grid", "epsilon values must lie in (0, 1]")
        if self.rho <= 0.0:
            bad("rho", "rho must be positive")
        if self.r <= 0.0:
            bad("r", "ball radius r must be positive")
        if self.p_exponent < 2.0:
            bad("p_exponent", "tail exponent p must be at least 2")
        if self.centering not in CENTERINGS:
            bad("centering", f"centering must be one of {CENTERINGS}")
        if self.v_convention not in V_CONVENTIONS:
            bad("v_convention", f"V convention must be one of {V_CONVENTIONS}")
        if self.qp_convention not in ("p-block", "i-block"):
            bad("qp_convention", "qp convention must be 'p-block' or 'i-block'")
        if self.model_tables is not None:
            for req in ("n", "d", "sigma"):
                if req not in self.model_tables:
                    bad("model_tables", f"inline model spec misses '{req}'")
        return self

    def build_model(self):
        from .fields import get_model, model_from_tables

        if self.model_tables is not None:
            mt = self.model_tables
            return model_from_tables(
                int(mt["n"]), int(mt["d"]), mt["sigma"], mt.get("b"),
                name=str(mt.get("name", self.model)))
        try:
            return get_model(self.model)
        except KeyError as exc:
            raise ConfigError(str(exc), field="model") from None

    def x0_vector(self, model):
        import numpy as np
        if self.x0 is None:
            return np.zeros(model.n)
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (model.n,):
            raise ConfigError(
                f"x0 has length {x0.size}, model dimension is {model.n}", field="x0")
        return x0


def _to_sections(cfg):
    exp = {}
    for f in dc_fields(ExperimentConfig):
        if f.name == "model_tables":
            continue
        exp[f.name] = getattr(cfg, f.name)
    sections = {"experiment": exp}
    if cfg.model_tables is not None:
        sections["model"] = cfg.model_tables
    return sections


def serialize_config(cfg):
    """Canonical text form of a config; stable key order, JSON values."""
    lines = []
    for name, table in _to_sections(cfg).items():
        lines.append(f"[{name}]")
        for key in sorted(table):
            lines.append(f"{key} = {json.dumps(table[key])}")
        lines.append("")
    return "\n".join(lines)


def parse_config_text(text):
    """Parse config text into an ExperimentConfig (line-precise errors)."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigError("empty section name", line=lineno)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        if current is None:
            raise ConfigError("key outside any [section]", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            sections[current][key] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid value: {exc.msg}", line=lineno,
                              field=key) from None
    return config_from_sections(sections)


def config_from_sections(sections):
    known = {f.name for f in dc_fields(ExperimentConfig)}
    kwargs = {}
    for key, value in sections.get("experiment", {}).items():
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", field=key)
        kwargs[key] = value
    if "model" in sections:
        kwargs["model_tables"] = sections["model"]
    return ExperimentConfig(**kwargs).validate()


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")


def config_hash(cfg):
    """Short stable hash of the canonical serialization.

    The output directory is excluded: the hash identifies the experiment, and
    artifacts written to different directories from the same experiment must
    compare byte-identical.
    """
    sections = _to_sections(cfg)
    sections["experiment"].pop("output_dir", None)
    lines = []
    for name, table in sections.items():
        lines.append(f"[{name}]")
        for key in sorted(table):
            lines.append(f"{key} = {json.dumps(table[key])}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]
