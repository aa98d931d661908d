"""Validated run configuration: cell specifications and pipeline configs."""

import json
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, GeometryError, MaterialError, PeriodicityError
from .microstructure import (
    CellGrid,
    InclusionSpec,
    Phase,
    chiral_S,
    constant_field,
    laminate,
    two_phase,
)
from .tensor_core import make_diagonal_A, make_isotropic_K

__all__ = [
    "CellSpec",
    "PipelineConfig",
    "load_json_text",
    "parse_model",
    "load_cell_spec",
    "load_pipeline_config",
    "build_field",
    "build_field_located",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IsotropicSpec(_Strict):
    lam: float
    mu: float


class KSpec(_Strict):
    """Exactly one of: isotropic moduli, a scalar (identity action) or full data."""

    isotropic: Optional[IsotropicSpec] = None
    scalar: Optional[float] = None
    data: Optional[list] = None

    @model_validator(mode="after")
    def _one(self):
        if sum(v is not None for v in (self.isotropic, self.scalar, self.data)) != 1:
            raise ValueError("give exactly one of 'isotropic', 'scalar', 'data'")
        return self


class ASpec(_Strict):
    diagonal: Optional[float] = None
    data: Optional[list] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.diagonal is None) == (self.data is None):
            raise ValueError("give exactly one of 'diagonal', 'data'")
        return self


class SSpec(_Strict):
    scalar: Optional[float] = None
    data: Optional[list] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.scalar is None) == (self.data is None):
            raise ValueError("give exactly one of 'scalar', 'data'")
        return self


class PhaseSpec(_Strict):
    K: KSpec
    A: ASpec
    S: Optional[SSpec] = None


class LaminateSpec(_Strict):
    direction: int = 0
    fraction: float = 0.5


class InclusionModel(_Strict):
    shape: Literal["ball", "box", "slab"]
    center: List[float]
    radius: float = 0.0
    half_widths: Optional[List[float]] = None
    smoothing_width: float = 0.0
    axis: int = 0


class ChiralSpec(_Strict):
    amplitude: float
    pitch: int = 1


class CellSpec(_Strict):
    d: int = Field(ge=1, le=3)
    N: int = Field(ge=4)
    kind: Literal["constant", "laminate", "two_phase"]
    phases: List[PhaseSpec] = Field(min_length=1, max_length=2)
    laminate: Optional[LaminateSpec] = None
    inclusion: Optional[InclusionModel] = None
    chiral: Optional[ChiralSpec] = None

    @model_validator(mode="after")
    def _consistent(self):
        need = 1 if self.kind == "constant" else 2
        if len(self.phases) != need:
            raise ValueError(f"kind {self.kind!r} needs {need} phase(s)")
        if self.kind == "two_phase" and self.inclusion is None:
            raise ValueError("kind 'two_phase' needs an 'inclusion'")
        if self.N % 2:
            raise ValueError("N must be even")
        return self


class SolverSpec(_Strict):
    rel_tol: float = Field(default=1e-9, gt=0)
    max_iter: int = Field(default=5000, ge=1)


class ConvergeSpec(_Strict):
    eps: List[float] = Field(min_length=1)
    load: str = "const:1"
    elements_per_period: int = Field(default=16, ge=8)


class PipelineConfig(_Strict):
    cell: CellSpec
    regime: Literal["hs1", "hs2", "HS1", "HS2"]
    epsilon: float = Field(gt=0, lt=1)
    pprime: float = 2.0
    qprime: float = 2.0
    solver: SolverSpec = SolverSpec()
    converge: Optional[ConvergeSpec] = None
    seed: int = 0


def _position_of(text, loc):
    """1-based (line, col) of the last key on the error path, or None.

    Keys are searched in path order, so ``phases.1.K`` lands inside the
    second phase; a list index skips that many occurrences of the next key.
    """
    pos, found = 0, None
    parts = list(loc)
    for i, part in enumerate(parts):
        if isinstance(part, int):
            nxt = next((p for p in parts[i + 1:] if isinstance(p, str)), None)
            for _ in range(part if nxt else 0):
                j = text.find(f'"{nxt}"', pos)
                if j < 0:
                    break
                pos = j + 1
            continue
        j = text.find(f'"{part}"', pos)
        if j < 0:
            continue
        found, pos = j, j + 1
    if found is None:
        return None
    line = text.count("\n", 0, found) + 1
    col = found - (text.rfind("\n", 0, found) + 1) + 1
    return line, col


def load_json_text(text, source="<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc


def parse_model(model, text, source="<config>"):
    """Parse JSON text into ``model``; errors name line:col of the offending key."""
    obj = load_json_text(text, source)
    try:
        return model.model_validate(obj)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            at = _position_of(text, err["loc"])
            where = f"{source}:{at[0]}:{at[1]}" if at else source
            msgs.append(f"{where}: {loc}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def load_cell_spec(path, with_text=False):
    text = _read(path)
    spec = parse_model(CellSpec, text, str(path))
    return (spec, text) if with_text else spec


def load_pipeline_config(path, with_text=False):
    text = _read(path)
    cfg = parse_model(PipelineConfig, text, str(path))
    return (cfg, text) if with_text else cfg


def _identity4(d):
    I = np.eye(d)
    return np.einsum("ik,jl->ijkl", I, I)


def _phase(spec, d):
    k = spec.K
    if k.isotropic is not None:
        K = make_isotropic_K(k.isotropic.lam, k.isotropic.mu, d).data
    elif k.scalar is not None:
        K = k.scalar * _identity4(d)
    else:
        K = np.asarray(k.data, dtype=float)
    A = make_diagonal_A(spec.A.diagonal, d).data if spec.A.diagonal is not None \
        else np.asarray(spec.A.data, dtype=float)
    S = None
    if spec.S is not None:
        if spec.S.scalar is not None:
            if d != 1:
                raise ConfigError("a scalar S is only meaningful for d = 1")
            S = np.full((1,) * 5, spec.S.scalar)
        else:
            S = np.asarray(spec.S.data, dtype=float)
    for name, arr, order in (("K", K, 4), ("A", A, 6), ("S", S, 5)):
        if arr is not None and arr.shape != (d,) * order:
            raise ConfigError(f"phase {name} has shape {arr.shape}, expected {(d,) * order}")
    return Phase(K, A, S)


def build_field(spec):
    """CoefficientField described by a validated CellSpec."""
    grid = CellGrid(spec.d, spec.N)
    phases = [_phase(p, spec.d) for p in spec.phases]
    if spec.kind == "constant":
        field_ = constant_field(grid, phases[0])
    elif spec.kind == "laminate":
        lam = spec.laminate or LaminateSpec()
        field_ = laminate(grid, lam.direction, lam.fraction, phases[0], phases[1])
    else:
        inc = spec.inclusion
        field_ = two_phase(
            grid,
            InclusionSpec(inc.shape, tuple(inc.center), inc.radius,
                          tuple(inc.half_widths) if inc.half_widths else (),
                          inc.smoothing_width, inc.axis),
            phases[0],
            phases[1],
        )
    if spec.chiral is not None:
        field_ = field_.with_S(field_.S + chiral_S(grid, spec.chiral.amplitude, spec.chiral.pitch))
    return field_


def build_field_located(spec, text, source, prefix=()):
    """build_field, with construction errors pointing into the cell JSON text.

    ``prefix`` is the path of the cell spec inside the document, e.g.
    ``("cell",)`` for a pipeline config.
    """
    try:
        return build_field(spec)
    except (GeometryError, PeriodicityError, MaterialError, ConfigError) as exc:
        if isinstance(exc, MaterialError) or (isinstance(exc, ConfigError) and "phase" in str(exc)):
            section = "phases"
        elif isinstance(exc, PeriodicityError):
            section = "chiral"
        else:
            section = "inclusion" if spec.kind == "two_phase" else "laminate"
        at = _position_of(text, tuple(prefix) + (section,)) or _position_of(text, tuple(prefix))
        where = f"{source}:{at[0]}:{at[1]}" if at else source
        raise type(exc)(f"{where}: {section}: {exc}") from exc
