"""Executable checks of the interpolation, truncation, and sequence bounds
used by the boundedness analysis, run on synthetic discrete fields.

Each check fits the smallest constant that works on one ensemble and then
revalidates it, with x1.5 slack, on a fresh ensemble drawn from a different
seed (guarding against overfitting the constant to the sample)."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .grid import Field, Grid, grad_pow_integral, integrate
from .model import log_ue

_GENERATORS = ("band-limited-trig", "gaussian-bumps", "two-valued", "worst-case-spike")

GAUGES = {
    "log": lambda s: log_ue(s),
    "sqrt": lambda s: np.sqrt(np.asarray(s, dtype=float)),
    "linear": lambda s: np.asarray(s, dtype=float),
}


@dataclass(frozen=True)
class FieldEnsemble:
    grid: Grid
    generator: str
    count: int
    seed: int

    def __post_init__(self):
        if self.generator not in _GENERATORS:
            raise ValidationError(f"unknown generator {self.generator!r}")
        if self.count < 1:
            raise ValidationError("ensemble count must be positive")

    def with_seed(self, seed: int) -> "FieldEnsemble":
        return FieldEnsemble(self.grid, self.generator, self.count, seed)

    def fields(self) -> List[Field]:
        rng = np.random.default_rng(self.seed)
        return [self._one(rng) for _ in range(self.count)]

    def _coords(self):
        g = self.grid
        if g.geometry == "rectangle":
            x, y = g.cell_centers()
            return x / g.Lx, y / g.Ly
        r = g.cell_centers()
        return r / g.R, None

    def _one(self, rng) -> Field:
        g = self.grid
        xs, ys = self._coords()
        if self.generator == "band-limited-trig":
            f = np.zeros(g.shape)
            for m in range(5):
                for n in range(5 if ys is not None else 1):
                    amp = rng.normal() / (1.0 + m + n)
                    term = np.cos(math.pi * m * xs)
                    if ys is not None:
                        term = term * np.cos(math.pi * n * ys)
                    f = f + amp * term
            f = f - f.min()
        elif self.generator == "gaussian-bumps":
            f = np.zeros(g.shape)
            for _ in range(3):
                cx = rng.uniform(0.2, 0.8)
                sig = rng.uniform(0.05, 0.25)
                amp = rng.uniform(0.5, 2.0)
                if ys is not None:
                    cy = rng.uniform(0.2, 0.8)
                    f = f + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sig**2))
                else:
                    f = f + amp * np.exp(-((xs - cx) ** 2) / (2 * sig**2))
        elif self.generator == "two-valued":
            lo = rng.uniform(0.0, 1.0)
            hi = rng.uniform(1.0, 5.0)
            f = np.where(rng.random(g.shape) < 0.5, lo, hi)
        else:  # worst-case-spike
            f = np.full(g.shape, 1e-3)
            flat = f.reshape(-1)
            idx = rng.integers(0, flat.size)
            flat[idx] = 1.0 / float(np.min(g.cell_volumes))
            f = flat.reshape(g.shape)
        return g.field(f)


@dataclass(frozen=True)
class InequalityReport:
    lemma: str
    ensemble: str
    parameters: dict
    fitted_constant: float
    min_margin: float
    witness: Optional[dict] = None
    passed: bool = True

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=float)


def _lp(f: Field, g: Grid, p: float) -> float:
    a = np.abs(f.values)
    sup = float(a.max())
    if sup == 0.0:
        return 0.0
    return sup * integrate(g.field((a / sup) ** p), g) ** (1.0 / p)


def _grad_lr(f: Field, g: Grid, r: float) -> float:
    return grad_pow_integral(f, g, r) ** (1.0 / r)


def _ensemble_tag(e: FieldEnsemble) -> str:
    g = e.grid
    size = f"{g.nx}x{g.ny}" if g.geometry == "rectangle" else f"{g.nr}"
    return f"{e.generator}[{e.count}] on {g.geometry} {size} (seed {e.seed})"


def _fit_and_revalidate(
    e: FieldEnsemble, lhs_rhs: Callable[[Field], Tuple[float, float]], lemma: str, params: dict
) -> InequalityReport:
    """Fit C = max lhs/rhs over the ensemble, then require
    lhs <= 1.5 * C * rhs on a disjoint-seed ensemble."""
    c_fit = 0.0
    for f in e.fields():
        lhs, rhs = lhs_rhs(f)
        if rhs <= 0.0:
            if lhs > 0.0:
                raise ValidationError(f"{lemma}: zero right-hand side with nonzero left")
            continue
        c_fit = max(c_fit, lhs / rhs)
    fresh = e.with_seed(e.seed + 104729)
    min_margin = math.inf
    witness = None
    for i, f in enumerate(fresh.fields()):
        lhs, rhs = lhs_rhs(f)
        margin = 1.5 * c_fit * rhs - lhs
        if margin < min_margin:
            min_margin = margin
            witness = {"field_index": i, "lhs": lhs, "rhs": rhs}
    return InequalityReport(
        lemma=lemma,
        ensemble=_ensemble_tag(e),
        parameters=params,
        fitted_constant=c_fit,
        min_margin=float(min_margin),
        witness=witness,
        passed=min_margin >= 0.0,
    )


def check_gn(e: FieldEnsemble, p: float, q: float, r: float, s: float) -> InequalityReport:
    """Gagliardo-Nirenberg form: ||f||_p^p <= C (||grad f||_r^{pa}
    ||f||_q^{p(1-a)} + ||f||_s^p), with a determined by the exponents (n=2)."""
    if r < 1.0 or not (0.0 < q <= p < math.inf) or s <= 0.0:
        raise ValidationError("need r >= 1, 0 < q <= p < inf, s > 0")
    n = 2.0
    denom = 1.0 / q + 1.0 / n - 1.0 / r
    if denom == 0.0:
        raise ValidationError("degenerate exponent combination")
    a = (1.0 / q - 1.0 / p) / denom
    if not (0.0 <= a <= 1.0):
        raise ValidationError(f"interpolation exponent a={a:g} outside [0, 1]")
    g = e.grid

    def lhs_rhs(f: Field):
        lhs = _lp(f, g, p) ** p
        rhs = _grad_lr(f, g, r) ** (p * a) * _lp(f, g, q) ** (p * (1 - a)) + _lp(f, g, s) ** p
        return lhs, rhs

    return _fit_and_revalidate(
        e, lhs_rhs, "gagliardo-nirenberg", {"p": p, "q": q, "r": r, "s": s, "a": a}
    )


def check_eta_interpolation(e: FieldEnsemble, etas: Sequence[float]) -> InequalityReport:
    """int f^2 <= C eta int |grad f|^2 + (C/eta) (int |f|)^2 with a single C
    uniform over the ensemble and the whole eta grid (n=2)."""
    etas = [float(x) for x in etas]
    if not etas:
        raise ValidationError("eta list must be nonempty")
    if any(not (0.0 < x < 1.0) for x in etas):
        raise ValidationError("all eta must lie in (0, 1)")
    g = e.grid

    def lhs_rhs_eta(f: Field, eta: float):
        lhs = integrate(g.field(f.values**2), g)
        rhs = eta * grad_pow_integral(f, g, 2.0) + (1.0 / eta) * integrate(
            g.field(np.abs(f.values)), g
        ) ** 2
        return lhs, rhs

    c_fit = 0.0
    for f in e.fields():
        for eta in etas:
            lhs, rhs = lhs_rhs_eta(f, eta)
            if rhs > 0.0:
                c_fit = max(c_fit, lhs / rhs)
    fresh = e.with_seed(e.seed + 104729)
    min_margin = math.inf
    witness = None
    for i, f in enumerate(fresh.fields()):
        for eta in etas:
            lhs, rhs = lhs_rhs_eta(f, eta)
            margin = 1.5 * c_fit * rhs - lhs
            if margin < min_margin:
                min_margin = margin
                witness = {"field_index": i, "eta": eta, "lhs": lhs, "rhs": rhs}
    return InequalityReport(
        lemma="eta-interpolation",
        ensemble=_ensemble_tag(e),
        parameters={"etas": etas},
        fitted_constant=c_fit,
        min_margin=float(min_margin),
        witness=witness,
        passed=min_margin >= 0.0,
    )


def cutoff(s, N: float):
    """Three-branch truncation: 0 below N, 2(|s|-N) up to 2N, |s| beyond."""
    a = np.abs(np.asarray(s, dtype=float))
    return np.where(a <= N, 0.0, np.where(a <= 2 * N, 2.0 * (a - N), a))


@dataclass(frozen=True)
class TruncationReport:
    q: float
    N: float
    gauge: str
    pointwise_identities_ok: bool
    low_part_lhs: float  # int |u - xi(u)|^{q+1}
    low_part_rhs: float  # (2N)^q int u
    tail_lhs: float  # int xi(u)
    tail_rhs: float  # (1/G(N)) int u G(u)
    assembled_lhs: float  # int u^{q+1}
    assembled_rhs_unit: float  # rhs evaluated with constant 1
    proof_inequalities_ok: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=float)


def check_truncation(u: Field, q: float, N: float, gauge: str = "log") -> TruncationReport:
    """Verify the truncation construction behind the L^{q+1} interpolation
    bound: pointwise cutoff identities, the two proof inequalities, and the
    assembled right-hand side (with unit constant, to be fitted per grid)."""
    if N <= 0.0:
        raise ValidationError("truncation level N must be positive")
    if q <= 0.0:
        raise ValidationError("exponent q must be positive")
    if gauge not in GAUGES:
        raise ValidationError(f"unknown gauge {gauge!r}")
    g = u.grid
    a = u.values
    if np.any(a < 0):
        raise ValidationError("truncation check requires u >= 0")
    G = GAUGES[gauge]
    xi = cutoff(a, N)
    identities = bool(np.all(xi >= 0) and np.all(xi <= a) and np.all(a - xi <= 2 * N + 1e-12))
    mass = integrate(u, g)
    low_lhs = integrate(g.field(np.abs(a - xi) ** (q + 1.0)), g)
    low_rhs = (2.0 * N) ** q * mass
    tail_lhs = integrate(g.field(xi), g)
    GN = float(G(N))
    tail_rhs = integrate(g.field(a * np.asarray(G(a))), g) / GN
    assembled_lhs = integrate(g.field(a ** (q + 1.0)), g)
    grad_term = grad_pow_integral(g.field(a ** (q / 2.0)), g, 2.0)
    assembled_rhs_unit = (
        grad_term * integrate(g.field(a * np.asarray(G(a))), g) / GN
        + mass ** (q + 1.0)
        + (2.0 * N) ** q * mass
    )
    tol = 1e-12 * max(1.0, low_rhs, tail_rhs)
    proof_ok = low_lhs <= low_rhs + tol and tail_lhs <= tail_rhs + tol
    return TruncationReport(
        q=q,
        N=N,
        gauge=gauge,
        pointwise_identities_ok=identities,
        low_part_lhs=low_lhs,
        low_part_rhs=low_rhs,
        tail_lhs=tail_lhs,
        tail_rhs=tail_rhs,
        assembled_lhs=assembled_lhs,
        assembled_rhs_unit=assembled_rhs_unit,
        proof_inequalities_ok=proof_ok,
    )


def check_truncation_ensemble(
    e: FieldEnsemble, q: float, N: float, gauge: str = "log"
) -> InequalityReport:
    """Fit the single constant multiplying the assembled right-hand side on
    one ensemble and revalidate with x1.5 slack on a fresh seed; the two
    proof inequalities must hold with no fitted constant at all."""
    for f in e.fields():
        rep = check_truncation(f, q, N, gauge)
        if not (rep.pointwise_identities_ok and rep.proof_inequalities_ok):
            raise ValidationError("truncation proof inequality violated on fitting ensemble")

    def lhs_rhs(f: Field):
        rep = check_truncation(f, q, N, gauge)
        return rep.assembled_lhs, rep.assembled_rhs_unit

    report = _fit_and_revalidate(
        e, lhs_rhs, "truncation-interpolation", {"q": q, "N": N, "gauge": gauge}
    )
    for f in e.with_seed(e.seed + 104729).fields():
        rep = check_truncation(f, q, N, gauge)
        if not (rep.pointwise_identities_ok and rep.proof_inequalities_ok):
            return dataclasses.replace(report, passed=False)
    return report


@dataclass(frozen=True)
class SequenceReport:
    K: int
    sup_u: float
    bound: float
    relative_margin: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=float)


def check_sequence_lemma(
    a: Sequence[float], b: Sequence[float], u1: float, K: int
) -> SequenceReport:
    """Iterate u_{k+1} = a_k + b_k u_k and verify sup_k u_k <= a*b + b*u1
    with a = sum a_k, b = prod b_k (all over k <= K)."""
    a = [float(x) for x in a][:K]
    b = [float(x) for x in b][:K]
    if len(a) < K or len(b) < K:
        raise ValidationError(f"need at least K={K} terms in both sequences")
    if any(x <= 0 for x in a):
        raise ValidationError("sequence a must be positive")
    if any(x < 1.0 for x in b):
        raise ValidationError("sequence b must satisfy b_k >= 1")
    if u1 <= 0:
        raise ValidationError("u1 must be positive")
    u = float(u1)
    sup_u = u
    for k in range(K):
        u = a[k] + b[k] * u
        sup_u = max(sup_u, u)
    bound = math.fsum(a) * math.prod(b) + math.prod(b) * u1
    rel = (bound - sup_u) / max(abs(bound), 1.0)
    return SequenceReport(
        K=K, sup_u=sup_u, bound=bound, relative_margin=rel, passed=rel >= -1e-12
    )


@dataclass(frozen=True)
class LogDominationReport:
    exponents: dict
    c_eps: dict  # epsilon -> finite c(epsilon)
    tail_certified: bool
    passed: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=float)


def check_log_domination(
    a1: float,
    b1: float,
    a2: float,
    b2: float,
    u_grid: Sequence[float],
    eps_list: Sequence[float] = (0.1,),
) -> LogDominationReport:
    """For a1 < a2 the difference u^{a1} ln^{b1}(u+e) - eps u^{a2} ln^{b2}(u+e)
    is bounded above; report the grid supremum c(eps) and certify the tail by
    geometric continuation past the grid maximum."""
    if a1 >= a2:
        raise ValidationError("need a1 < a2")
    u_grid = np.asarray([float(x) for x in u_grid], dtype=float)
    if u_grid.size == 0 or np.any(u_grid < 0):
        raise ValidationError("u_grid must be nonempty and nonnegative")
    if any(eps <= 0 for eps in eps_list):
        raise ValidationError("epsilon values must be positive")
    u_max = max(float(u_grid.max()), 1.0)
    tail = np.geomspace(u_max, u_max * 1e6, 400)
    c_eps = {}
    tail_ok = True
    for eps in eps_list:
        phi = lambda u: u**a1 * log_ue(u) ** b1 - eps * u**a2 * log_ue(u) ** b2
        vals = phi(u_grid)
        tail_vals = phi(tail)
        c = max(0.0, float(vals.max()), float(tail_vals.max()))
        if not math.isfinite(c):
            tail_ok = False
        # the difference must be decreasing and negative far out
        if not (tail_vals[-1] <= tail_vals[-2] and tail_vals[-1] <= 0.0):
            tail_ok = False
        c_eps[float(eps)] = c
    return LogDominationReport(
        exponents={"a1": a1, "b1": b1, "a2": a2, "b2": b2},
        c_eps=c_eps,
        tail_certified=tail_ok,
        passed=tail_ok and all(math.isfinite(c) for c in c_eps.values()),
    )
