"""Functional diagnostics evaluated on solver states and time series.

Tracks mass, the weighted entropy y(t) = int u ln^k(u+e) + 1/2 int |grad v|^2,
L^q norms, the windowed dissipation integral, the doubling ladder of L^q
norms toward sup u, and the numeric blow-up proxy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError, WindowTooShortError
from .grid import Field, Grid, grad_sq_integral, integrate, laplacian_neumann
from .model import log_ue
from .stepper import State


@dataclass(frozen=True)
class DiagnosticsConfig:
    k: float = 1.0
    q_list: tuple = ()
    tau: float = 1.0
    cadence: float = 0.01
    blowup_max_u: float = 1e6
    blowup_dt_floor: float = 1e-12

    def __post_init__(self):
        if self.k <= 0 or self.tau <= 0 or self.cadence <= 0:
            raise ValidationError("diagnostics require k > 0, tau > 0, cadence > 0")
        object.__setattr__(self, "q_list", tuple(float(q) for q in self.q_list))

    def admissible_k_warning(self, p: float, regime: str) -> Optional[str]:
        """The entropy exponent must sit in (p, 2-p), or (1+p, 2-p) for
        degenerate diffusion, for the energy bound to be meaningful."""
        lo = 1.0 + p if regime == "degenerate" else p
        hi = 2.0 - p
        if not (lo < self.k < hi):
            return f"k={self.k:g} outside admissible interval ({lo:g}, {hi:g}) for regime {regime}"
        return None


CSV_FIXED_COLUMNS = (
    "t",
    "mass",
    "energy_y",
    "sup_u",
    "sup_v",
    "grad_v_sq",
    "lap_v_sq",
    "dissipation_density",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    energy_y: float
    sup_u: float
    sup_v: float
    grad_v_sq: float
    lap_v_sq: float
    dissipation_density: float
    lq_norms: tuple = ()
    clamped_mass: float = 0.0
    blowup: bool = False
    blowup_reason: Optional[str] = None

    def csv_row(self) -> str:
        cells = [
            repr(self.t),
            repr(self.mass),
            repr(self.energy_y),
            repr(self.sup_u),
            repr(self.sup_v),
            repr(self.grad_v_sq),
            repr(self.lap_v_sq),
            repr(self.dissipation_density),
        ]
        cells.extend(repr(x) for x in self.lq_norms)
        cells.append(repr(self.clamped_mass))
        cells.append("1" if self.blowup else "0")
        return ",".join(cells)

    @staticmethod
    def csv_header(q_list: Sequence[float]) -> str:
        cols = list(CSV_FIXED_COLUMNS) + [f"u_l{q:g}" for q in q_list] + ["clamped_mass", "blowup"]
        return ",".join(cols)


def energy_y(s: State, k: float) -> float:
    """int u ln^k(u+e) + 1/2 int |grad v|^2."""
    g = s.u.grid
    return integrate(g.field(s.u.values * log_ue(s.u.values) ** k), g) + 0.5 * grad_sq_integral(
        s.v, g
    )


def lq_norm(u: Field, g: Grid, q: float) -> float:
    """||u||_{L^q}, computed in max-factored form to dodge overflow."""
    a = u.values
    sup = float(np.max(np.abs(a)))
    if sup == 0.0:
        return 0.0
    scaled = np.abs(a) / sup
    return sup * float(integrate(g.field(scaled**q), g)) ** (1.0 / q)


def dissipation_density(s: State, k: float, p: float) -> float:
    """int u^2 ln^{k-p}(u+e) on the current state."""
    g = s.u.grid
    a = s.u.values
    return integrate(g.field(a * a * log_ue(a) ** (k - p)), g)


def lap_v_sq(s: State) -> float:
    g = s.v.grid
    lap = laplacian_neumann(s.v, g)
    return integrate(g.field(lap.values**2), g)


def make_record(s: State, d: DiagnosticsConfig, p: float = 0.0) -> DiagnosticsRecord:
    g = s.u.grid
    flag, reason = detect_blowup(s, d, s.last_dt if s.last_dt > 0 else d.blowup_dt_floor * 10)
    if np.isfinite(s.u.values).all() and np.isfinite(s.v.values).all():
        return DiagnosticsRecord(
            t=s.t,
            mass=integrate(s.u, g),
            energy_y=energy_y(s, d.k),
            sup_u=float(s.u.values.max()),
            sup_v=float(s.v.values.max()),
            grad_v_sq=grad_sq_integral(s.v, g),
            lap_v_sq=lap_v_sq(s),
            dissipation_density=dissipation_density(s, d.k, p),
            lq_norms=tuple(lq_norm(s.u, g, q) for q in d.q_list),
            clamped_mass=s.clamped_mass,
            blowup=flag,
            blowup_reason=reason,
        )
    nan = float("nan")
    return DiagnosticsRecord(
        t=s.t, mass=nan, energy_y=nan, sup_u=nan, sup_v=nan, grad_v_sq=nan,
        lap_v_sq=nan, dissipation_density=nan, lq_norms=tuple(nan for _ in d.q_list),
        clamped_mass=s.clamped_mass, blowup=True, blowup_reason="nonfinite",
    )


def dissipation_window(
    series: Sequence[DiagnosticsRecord], tau: float, k: float, p: float
) -> float:
    """Supremum over window starts of the trapezoid time integral of
    (dissipation_density + lap_v_sq) over [t, t + tau].

    k and p are the exponents the series was recorded with; they are
    accepted for interface clarity and sanity (records already hold the
    pointwise integrand values)."""
    if len(series) < 2:
        raise WindowTooShortError("need at least two records")
    ts = np.array([r.t for r in series])
    if np.any(np.diff(ts) < 0):
        raise ValidationError("series must be time-sorted")
    span = ts[-1] - ts[0]
    if tau > span + 1e-12:
        raise WindowTooShortError(f"window tau={tau:g} exceeds series span {span:g}")
    vals = np.array([r.dissipation_density + r.lap_v_sq for r in series])
    # cumulative trapezoid, then evaluate I(t+tau) - I(t) for every start
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts))])

    def cum_at(t: float) -> float:
        j = np.searchsorted(ts, t)
        if j == 0:
            return float(cum[0])
        if j >= len(ts):
            return float(cum[-1])
        if ts[j] == t:
            return float(cum[j])
        frac = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        seg = 0.5 * (vals[j - 1] + (vals[j - 1] + frac * (vals[j] - vals[j - 1]))) * (
            t - ts[j - 1]
        )
        return float(cum[j - 1] + seg)

    best = -math.inf
    starts = [t for t in ts if t <= ts[-1] - tau + 1e-12]
    if not starts:
        starts = [ts[0]]
    for t0 in starts:
        best = max(best, cum_at(min(t0 + tau, ts[-1])) - cum_at(t0))
    return float(best)


def moser_ladder(u: Field, g: Grid, q0: float, levels: int) -> Tuple[list, float]:
    """L^q norms at q = q0 * 2^j for j = 0..levels, plus sup u.

    Normalized norms ||u||_q / |Omega|^{1/q} must be nondecreasing in q."""
    if q0 <= 2.0:
        raise ValidationError("ladder requires q0 > 2")
    if np.any(u.values < 0):
        raise ValidationError("ladder requires u >= 0")
    sup = float(u.values.max())
    ladder = []
    prev = -math.inf
    for j in range(levels + 1):
        q = q0 * 2.0**j
        uq = lq_norm(u, g, q)
        ladder.append((q, uq))
        norm = uq / g.measure ** (1.0 / q)
        if norm < prev * (1.0 - 1e-10):
            raise ValidationError(f"normalized L^q norms not nondecreasing at q={q:g}")
        prev = norm
    return ladder, sup


def detect_blowup(
    s: State, d: DiagnosticsConfig, last_dt: float
) -> Tuple[bool, Optional[str]]:
    """Numeric proxy for loss of classical existence: threshold crossing,
    a non-finite cell value, or time-step collapse after retries."""
    if not (np.isfinite(s.u.values).all() and np.isfinite(s.v.values).all()):
        return True, "nonfinite"
    if float(s.u.values.max()) > d.blowup_max_u:
        return True, "threshold"
    if last_dt < d.blowup_dt_floor:
        return True, "dt-collapse"
    return False, None
