"""Semi-implicit time stepping for the coupled (u, v) system.

Each step solves the chemical stage implicitly, then advances the density
with implicit diffusion (coefficients frozen at faces from the fresh
chemical field), explicit upwind chemotaxis, and a Patankar-weighted source
that keeps the density nonnegative for any step size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .errors import PositivityError, SolverStallError, ValidationError
from .grid import (
    Field,
    Grid,
    _face_diffs,
    _face_means,
    _rect_div,
    _radial_div,
    chemotactic_divergence,
    diffusive_face_coeffs,
)
from .model import ModelSpec, dfdu_max, eval_D, eval_f, log_ue

try:  # fused CG inner loop; the pure-numpy path remains the fallback
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class State:
    u: Field
    v: Field
    t: float = 0.0
    step_count: int = 0
    last_dt: float = 0.0
    clamped_mass: float = 0.0

    def __post_init__(self):
        if self.u.grid is not self.v.grid:
            raise ValidationError("u and v must live on the same grid")


@dataclass(frozen=True)
class StepOptions:
    cfl_safety: float = 0.4
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    linear_tol: float = 1e-8
    max_linear_iters: int = 5000
    scheme: str = "upwind"  # chemotaxis: upwind | central
    source_treatment: str = "patankar"  # patankar | explicit
    face_averaging: str = "arithmetic"  # arithmetic | harmonic
    max_retries: int = 20

    def __post_init__(self):
        if not (0.0 < self.cfl_safety <= 1.0):
            raise ValidationError("cfl_safety must be in (0, 1]")
        if not (0.0 < self.dt_min <= self.dt_max):
            raise ValidationError("need 0 < dt_min <= dt_max")
        if self.linear_tol <= 0.0:
            raise ValidationError("linear_tol must be positive")


def _pcg(apply_op, b, diag, tol, maxiter, x0):
    """Preconditioned conjugate gradients with the diagonal preconditioner.

    Terminates at relative residual ||b - A x|| <= tol * ||b||."""
    x = x0.copy()
    r = b - apply_op(x)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0
    target = tol * bnorm
    z = r / diag
    p = z.copy()
    rz = float((r * z).sum())
    rnorm = float(np.linalg.norm(r))
    for _ in range(maxiter):
        if rnorm <= target:
            return x, rnorm / bnorm
        Ap = apply_op(p)
        alpha = rz / float((p * Ap).sum())
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        z = r / diag
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    if rnorm <= target:
        return x, rnorm / bnorm
    raise SolverStallError(
        f"linear solver stalled at relative residual {rnorm / bnorm:.3e} "
        f"after {maxiter} iterations",
        residual=rnorm / bnorm,
    )


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _pcg_rect_kernel(x, cfx, cfy, onepalpha, b, diag, hx, hy, tol, maxiter):
        """Diagonally preconditioned CG on the volume-scaled rectangle
        operator, with the matrix application fused into the iteration.

        Returns (relative residual, iterations); x is updated in place."""
        nx, ny = x.shape
        vol = hx * hy

        def apply_op(w, out):
            for i in range(nx):
                for j in range(ny):
                    acc = vol * onepalpha[i, j] * w[i, j]
                    if i + 1 < nx:
                        acc -= hy * cfx[i, j] * (w[i + 1, j] - w[i, j]) / hx
                    if i > 0:
                        acc += hy * cfx[i - 1, j] * (w[i, j] - w[i - 1, j]) / hx
                    if j + 1 < ny:
                        acc -= hx * cfy[i, j] * (w[i, j + 1] - w[i, j]) / hy
                    if j > 0:
                        acc += hx * cfy[i, j - 1] * (w[i, j] - w[i, j - 1]) / hy
                    out[i, j] = acc
            return out

        r = np.empty_like(x)
        apply_op(x, r)
        bnorm = 0.0
        for i in range(nx):
            for j in range(ny):
                r[i, j] = b[i, j] - r[i, j]
                bnorm += b[i, j] * b[i, j]
        bnorm = math.sqrt(bnorm)
        if bnorm == 0.0:
            x[:, :] = 0.0
            return 0.0, 0
        target = tol * bnorm
        z = r / diag
        p = z.copy()
        rz = 0.0
        rnorm = 0.0
        for i in range(nx):
            for j in range(ny):
                rz += r[i, j] * z[i, j]
                rnorm += r[i, j] * r[i, j]
        rnorm = math.sqrt(rnorm)
        Ap = np.empty_like(x)
        for it in range(maxiter):
            if rnorm <= target:
                return rnorm / bnorm, it
            apply_op(p, Ap)
            pAp = 0.0
            for i in range(nx):
                for j in range(ny):
                    pAp += p[i, j] * Ap[i, j]
            alpha_cg = rz / pAp
            rz_new = 0.0
            rnorm = 0.0
            for i in range(nx):
                for j in range(ny):
                    x[i, j] += alpha_cg * p[i, j]
                    r[i, j] -= alpha_cg * Ap[i, j]
                    z[i, j] = r[i, j] / diag[i, j]
                    rz_new += r[i, j] * z[i, j]
                    rnorm += r[i, j] * r[i, j]
            rnorm = math.sqrt(rnorm)
            beta = rz_new / rz
            rz = rz_new
            for i in range(nx):
                for j in range(ny):
                    p[i, j] = z[i, j] + beta * p[i, j]
        return rnorm / bnorm, maxiter


def _helmholtz_core(g: Grid, face_coeffs, alpha, rhs, tol, maxiter, x0=None):
    """Solve w + alpha*w - div(coeff grad w) = rhs, volume-scaled SPD form.

    face_coeffs: per-axis face coefficient arrays; alpha scalar or cell array."""
    alpha = np.asarray(alpha, dtype=float)
    if g.geometry == "rectangle":
        vol = g.hx * g.hy
        cfx, cfy = face_coeffs

        def apply_op(x):
            Fx = cfx * _face_diffs(x, 0) / g.hx
            Fy = cfy * _face_diffs(x, 1) / g.hy
            return vol * ((1.0 + alpha) * x - _rect_div(Fx, Fy, g))

        diag = np.full(g.shape, vol) * (1.0 + alpha)
        padx = np.zeros((g.nx + 1, g.ny))
        padx[1:-1] = cfx
        diag = diag + (padx[1:] + padx[:-1]) * vol / g.hx**2
        pady = np.zeros((g.nx, g.ny + 1))
        pady[:, 1:-1] = cfy
        diag = diag + (pady[:, 1:] + pady[:, :-1]) * vol / g.hy**2
        b = vol * rhs
        if _HAVE_NUMBA:
            x = np.array(rhs if x0 is None else x0, dtype=float)
            onepalpha = np.broadcast_to(1.0 + alpha, g.shape).astype(float)
            rel, _iters = _pcg_rect_kernel(
                x,
                np.ascontiguousarray(cfx, dtype=float),
                np.ascontiguousarray(cfy, dtype=float),
                onepalpha,
                b,
                diag,
                g.hx,
                g.hy,
                tol,
                maxiter,
            )
            if rel > tol:
                raise SolverStallError(
                    f"linear solver stalled at relative residual {rel:.3e} "
                    f"after {maxiter} iterations",
                    residual=rel,
                )
            return x, rel
    else:
        r_cell = (np.arange(g.nr) + 0.5) * g.hr
        r_face = np.arange(1, g.nr) * g.hr
        vol = 2.0 * math.pi * r_cell * g.hr
        (cf,) = face_coeffs

        def apply_op(x):
            F = cf * _face_diffs(x, 0) / g.hr
            return vol * ((1.0 + alpha) * x - _radial_div(F, g))

        diag = vol * (1.0 + alpha)
        pad = np.zeros(g.nr + 1)
        pad[1:-1] = 2.0 * math.pi * r_face * cf
        diag = diag + (pad[1:] + pad[:-1]) / g.hr
        b = vol * rhs
    if x0 is None:
        x0 = rhs.copy()
    return _pcg(apply_op, b, diag, tol, maxiter, x0)


def _coeff_faces(g: Grid, coeff: Union[float, Field]) -> list:
    axes = (0, 1) if g.geometry == "rectangle" else (0,)
    if np.isscalar(coeff):
        c = float(coeff)
        if c < 0.0:
            raise ValidationError("helmholtz coefficient must be nonnegative")
        out = []
        for ax in axes:
            shape = list(g.shape)
            shape[ax] -= 1
            out.append(np.full(shape, c))
        return out
    a = coeff.values
    return [np.asarray(_face_means(a, ax)) for ax in axes]


def solve_helmholtz(
    g: Grid,
    coeff: Union[float, Field],
    alpha: float,
    rhs: Field,
    tol: float = 1e-10,
    max_iters: int = 5000,
) -> Field:
    """Solve w - div(coeff grad w) + alpha*w = rhs with Neumann boundaries."""
    if np.ndim(alpha) == 0 and alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    faces = _coeff_faces(g, coeff)
    x, _ = _helmholtz_core(g, faces, alpha, rhs.values, tol, max_iters)
    return g.field(x)


def _clamp_tolerance(scale: float) -> float:
    return 1e-12 * max(1.0, scale)


def step(s: State, m: ModelSpec, dt: float, o: StepOptions) -> State:
    """Advance one IMEX step: implicit v-stage, then the u-stage with
    implicit diffusion, explicit chemotaxis, and the configured source."""
    g = s.u.grid
    un = s.u.values
    vn = s.v.values

    # chemical stage: (1 + dt) v - dt lap v = v^n + dt u^n
    rhs_v = vn + dt * un
    v_new, _ = _helmholtz_core(
        g, _coeff_faces(g, dt), dt, rhs_v, o.linear_tol, o.max_linear_iters, x0=vn.copy()
    )
    v_tol = _clamp_tolerance(float(np.max(np.abs(rhs_v))))
    if v_new.min() < -v_tol:
        raise PositivityError(f"v-stage produced min v = {v_new.min():.3e}")
    np.clip(v_new, 0.0, None, out=v_new)
    v_field = g.field(v_new)

    # density stage
    d_faces = diffusive_face_coeffs(v_field, m.diffusion, g, o.face_averaging)
    d_faces = [dt * c for c in d_faces]
    chem = chemotactic_divergence(s.u, v_field, m.sensitivity, g, o.scheme).values
    rhs_u = un - dt * chem
    alpha_u: Union[float, np.ndarray] = 0.0
    clamped = s.clamped_mass
    if m.source is not None:
        src = m.source
        if o.source_treatment == "explicit":
            rhs_u = rhs_u + dt * eval_f(src, un)
        elif o.source_treatment == "patankar":
            # production explicit, destruction implicit in u^{n+1}
            destr = src.mu * un / log_ue(un) ** src.p
            if src.r >= 0.0:
                rhs_u = rhs_u + dt * src.r * un
            else:
                destr = destr - src.r
            alpha_u = dt * destr
        else:
            raise ValidationError(f"unknown source treatment {o.source_treatment!r}")

    u_new, _ = _helmholtz_core(
        g, d_faces, alpha_u, rhs_u, o.linear_tol, o.max_linear_iters, x0=un.copy()
    )
    u_tol = _clamp_tolerance(float(np.max(np.abs(rhs_u))))
    if u_new.min() < -u_tol:
        raise PositivityError(f"u-stage produced min u = {u_new.min():.3e} at dt={dt:.3e}")
    neg = u_new < 0.0
    if neg.any():
        vols = g.cell_volumes
        clamped += float((-u_new[neg] * (np.broadcast_to(vols, u_new.shape)[neg])).sum())
        u_new = np.where(neg, 0.0, u_new)

    return State(
        u=g.field(u_new),
        v=v_field,
        t=s.t + dt,
        step_count=s.step_count + 1,
        last_dt=dt,
        clamped_mass=clamped,
    )


def adapt_dt(s: State, m: ModelSpec, o: StepOptions) -> float:
    """CFL-limited step from the chemotactic face speeds, plus a stiffness
    cap when the source is treated explicitly."""
    g = s.u.grid
    av = s.v.values
    speeds = []
    if g.geometry == "rectangle":
        axes = ((0, g.hx), (1, g.hy))
    else:
        axes = ((0, g.hr),)
    dt = o.dt_max
    for ax, h in axes:
        w = np.abs(np.asarray(m.sensitivity(_face_means(av, ax))) * _face_diffs(av, ax) / h)
        wmax = float(w.max()) if w.size else 0.0
        if wmax > 0.0:
            dt = min(dt, o.cfl_safety * h / wmax)
    if m.source is not None and o.source_treatment == "explicit":
        stiff = dfdu_max(m.source, float(s.u.values.max()))
        if stiff > 0.0:
            dt = min(dt, 0.5 / stiff)
    return float(min(max(dt, o.dt_min), o.dt_max))


def run(cfg, on_record=None):
    """Execute a configured run; see the harness module for RunConfig and
    the returned RunResult (this is a thin re-export to keep the time loop
    close to the scheme it drives)."""
    from . import harness

    return harness.execute_run(cfg, on_record=on_record)
