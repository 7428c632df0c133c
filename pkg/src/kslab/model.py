"""Coefficient functions and source law of the chemotaxis system.

The system couples a density u and a chemical v through a diffusion
coefficient D(v) > 0, a nondecreasing bounded sensitivity S(v) >= 0, and an
optional sub-logistic source f(u) = r*u - mu*u^2 / ln^p(u+e).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import InvalidCoefficientError, ValidationError

_FAMILIES = ("constant", "exponential-decay", "saturating-increasing", "tabulated-smooth")

# slope tolerance for the S' >= 0 probe (finite differences on [0, V_max])
_SLOPE_TOL = 1e-8
_DEGENERATE_FLOOR = 1e-6


def log_ue(u):
    """ln(u + e) evaluated as 1 + log1p(u/e) to keep precision near u = 0."""
    return 1.0 + np.log1p(np.asarray(u, dtype=float) / math.e)


@dataclass(frozen=True)
class CoefficientSpec:
    """One of the four closed-form / tabulated coefficient families.

    Parameters per family:
      constant:               value
      exponential-decay:      scale * exp(-rate * v)
      saturating-increasing:  scale * v / (half + v)
      tabulated-smooth:       nodes, values (cubic-spline interpolated)
    """

    family: str
    value: float = 1.0
    scale: float = 1.0
    rate: float = 1.0
    half: float = 1.0
    nodes: Optional[tuple] = None
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(f"unknown coefficient family {self.family!r}")
        if self.family == "tabulated-smooth":
            if self.nodes is None or self.values is None:
                raise ValidationError("tabulated-smooth requires nodes and values")
            nodes = tuple(float(x) for x in self.nodes)
            values = tuple(float(x) for x in self.values)
            if len(nodes) != len(values) or len(nodes) < 4:
                raise ValidationError("tabulated-smooth needs >= 4 matching nodes/values")
            object.__setattr__(self, "nodes", nodes)
            object.__setattr__(self, "values", values)
            object.__setattr__(self, "_spline", CubicSpline(nodes, values, bc_type="natural"))

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "constant":
            return np.full_like(v, self.value) if v.ndim else float(self.value)
        if self.family == "exponential-decay":
            out = self.scale * np.exp(-self.rate * v)
        elif self.family == "saturating-increasing":
            out = self.scale * v / (self.half + v)
        else:
            out = self._spline(v)
        return out if out.ndim else float(out)


def eval_D(spec: CoefficientSpec, v):
    """Evaluate a diffusion coefficient; must be strictly positive."""
    out = spec(v)
    if np.ndim(out) == 0:
        if out <= 0.0:
            raise InvalidCoefficientError(f"diffusion coefficient nonpositive at v={float(v):g}: D={out:g}")
        return out
    bad = out <= 0.0
    if bad.any():
        v_bad = float(np.asarray(v, dtype=float)[bad].flat[0])
        raise InvalidCoefficientError(f"diffusion coefficient nonpositive at v={v_bad:g}")
    return out


def eval_S(spec: CoefficientSpec, v):
    """Evaluate a sensitivity coefficient; scalar calls also probe S' >= 0."""
    out = spec(v)
    if np.ndim(out) == 0:
        h = 1e-6
        lo = max(0.0, float(v) - h)
        slope = (spec(float(v) + h) - spec(lo)) / (float(v) + h - lo)
        if slope < -_SLOPE_TOL:
            raise InvalidCoefficientError(
                f"sensitivity has negative slope {slope:g} at v={float(v):g}"
            )
    return out


def _finite_diff_richardson(spec: CoefficientSpec, v: float, h: float):
    """Second-difference ratio at step h and h/2 (C^2 smoothness probe)."""
    d2 = lambda s: spec(v + s) - 2.0 * spec(v) + spec(v - s)
    return d2(h), d2(h / 2.0)


@dataclass(frozen=True)
class SourceSpec:
    """Sub-logistic source f(u) = r*u - mu*u^2 / ln^p(u+e)."""

    r: float
    mu: float
    p: float

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValidationError(f"source requires mu > 0, got mu={self.mu}")
        if not self.p > 0.0:
            raise ValidationError(f"source requires p > 0, got p={self.p}")


def eval_f(spec: SourceSpec, u):
    """Source value r*u - mu*u^2 / ln^p(u+e); vanishes exactly at u = 0."""
    u = np.asarray(u, dtype=float)
    out = spec.r * u - spec.mu * u * u / log_ue(u) ** spec.p
    return out if out.ndim else float(out)


def dfdu_max(spec: SourceSpec, u_max: float) -> float:
    """Finite-difference bound on |f'| over [0, u_max] (source stiffness)."""
    us = np.linspace(0.0, max(u_max, 1e-30), 257)
    h = max(u_max, 1.0) * 1e-7
    up, dn = us + h, np.maximum(us - h, 0.0)
    d = (eval_f(spec, up) - eval_f(spec, dn)) / (up - dn)
    return float(np.max(np.abs(d)))


def homogeneous_steady_state(spec: SourceSpec) -> Optional[float]:
    """Positive root of f, i.e. of r*ln^p(u+e) = mu*u; None when r <= 0."""
    if spec.r <= 0.0:
        return None
    g = lambda u: spec.r * float(log_ue(u)) ** spec.p - spec.mu * u
    lo, hi = 0.0, 1.0
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            return None
    try:
        u_star = brentq(g, lo, hi, xtol=1e-15, rtol=8.9e-16)
    except ValueError:
        return None
    return float(u_star)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    witness: Optional[float] = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    regime: str
    warnings: tuple = ()

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _probe_regime(diffusion: CoefficientSpec, V_max: float, samples: int) -> str:
    vs = np.linspace(0.0, V_max, samples)
    d = np.asarray(diffusion(vs), dtype=float)
    decreasing_at_end = d[-1] <= d[-2]
    if d.min() < _DEGENERATE_FLOOR or (decreasing_at_end and d[-1] < 10 * _DEGENERATE_FLOOR):
        return "degenerate"
    # also degenerate when the sampled inf keeps dropping toward zero at V_max
    if decreasing_at_end and d[-1] < 1e-3 and d[-1] < 0.5 * d[0]:
        return "degenerate"
    return "nondegenerate"


@dataclass(frozen=True)
class ModelSpec:
    """Full coefficient set of the system, with a certified regime tag."""

    diffusion: CoefficientSpec
    sensitivity: CoefficientSpec
    source: Optional[SourceSpec] = None
    probe_vmax: float = 50.0
    probe_samples: int = 2001
    regime: str = field(init=False, default="")

    def __post_init__(self):
        object.__setattr__(
            self, "regime", _probe_regime(self.diffusion, self.probe_vmax, self.probe_samples)
        )


def validate_model(spec: ModelSpec, V_max: float, samples: int) -> ValidationReport:
    """Sample-based check of positivity/smoothness of D, monotone bounded S,
    and the source constraints; failures become report entries, not errors."""
    if not V_max > 0 or samples < 2:
        raise ValidationError("validate_model requires V_max > 0 and samples >= 2")
    vs = np.linspace(0.0, V_max, samples)
    checks = []
    warnings = []

    d = np.asarray(spec.diffusion(vs), dtype=float)
    ok = bool(np.isfinite(d).all() and (d > 0.0).all())
    witness = None if ok else float(vs[np.argmin(d)])
    checks.append(ConditionCheck("D positive and finite on [0, V_max]", ok, witness))

    s = np.asarray(spec.sensitivity(vs), dtype=float)
    ok = bool(np.isfinite(s).all())
    checks.append(ConditionCheck("S finite on [0, V_max] (W^{1,inf} proxy: bounded values)", ok))

    slopes = np.diff(s) / np.diff(vs)
    ok = bool((slopes >= -_SLOPE_TOL * max(1.0, np.abs(s).max())).all())
    witness = None if ok else float(vs[np.argmin(slopes)])
    checks.append(ConditionCheck("S nondecreasing (finite-difference slope >= 0)", ok, witness))
    ok = bool(np.isfinite(slopes).all() and np.abs(slopes).max() < 1e12)
    checks.append(ConditionCheck("S slope bounded (W^{1,inf} proxy)", ok))

    # C^2 probe: centered second differences at h and h/2 should Richardson
    # with ratio ~4 wherever the second derivative is nonzero
    for name, coeff in (("D", spec.diffusion), ("S", spec.sensitivity)):
        probe_ok = True
        h = max(V_max, 1.0) * 1e-3
        for v0 in np.linspace(h, V_max - h, 9) if V_max > 2 * h else []:
            c1, c2 = _finite_diff_richardson(coeff, float(v0), h)
            if not (math.isfinite(c1) and math.isfinite(c2)):
                probe_ok = False
                break
            if abs(c1) > 1e-8 * max(1.0, abs(coeff(float(v0)))):
                ratio = c1 / c2 if c2 != 0 else float("inf")
                if not (2.0 < ratio < 8.0):
                    probe_ok = False
                    break
        checks.append(ConditionCheck(f"{name} twice-differentiable (smoothness probe)", probe_ok))

    if spec.source is not None:
        src = spec.source
        checks.append(ConditionCheck("source mu > 0", src.mu > 0, src.mu))
        checks.append(ConditionCheck("source p > 0", src.p > 0, src.p))
        checks.append(ConditionCheck("f(0) = 0", eval_f(src, 0.0) == 0.0))

    regime = _probe_regime(spec.diffusion, V_max, samples)
    if spec.source is not None and regime == "degenerate" and spec.source.p >= 0.5:
        warnings.append(
            f"degenerate diffusion with p={spec.source.p:g} >= 1/2: outside the "
            "boundedness hypothesis for degenerate runs"
        )
    return ValidationReport(checks=tuple(checks), regime=regime, warnings=tuple(warnings))
