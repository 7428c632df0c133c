"""Cell-centered finite-volume grids with homogeneous Neumann boundaries.

Two geometries: a rectangle (nx x ny cells) and an axisymmetric radial disk
(nr annular cells). All divergence-form operators are conservative: boundary
faces carry zero flux, so constants are annihilated exactly and the discrete
integral of any operator output telescopes to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import GridMismatchError, InvalidCoefficientError, ValidationError
from .model import CoefficientSpec, eval_D


@dataclass(frozen=True, eq=False)
class Grid:
    geometry: str  # "rectangle" | "radial-disk"
    Lx: float = 0.0
    Ly: float = 0.0
    nx: int = 0
    ny: int = 0
    R: float = 0.0
    nr: int = 0

    @staticmethod
    def rectangle(Lx: float, Ly: float, nx: int, ny: int) -> "Grid":
        if Lx <= 0 or Ly <= 0:
            raise ValidationError("rectangle lengths must be positive")
        if nx < 4 or ny < 4:
            raise ValidationError("rectangle needs at least 4 cells per direction")
        return Grid("rectangle", Lx=float(Lx), Ly=float(Ly), nx=int(nx), ny=int(ny))

    @staticmethod
    def radial_disk(R: float, nr: int) -> "Grid":
        if R <= 0:
            raise ValidationError("disk radius must be positive")
        if nr < 4:
            raise ValidationError("radial grid needs at least 4 cells")
        return Grid("radial-disk", R=float(R), nr=int(nr))

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def hr(self) -> float:
        return self.R / self.nr

    @property
    def shape(self) -> tuple:
        if self.geometry == "rectangle":
            return (self.nx, self.ny)
        return (self.nr,)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volumes(self) -> np.ndarray:
        if self.geometry == "rectangle":
            return np.full(self.shape, self.hx * self.hy)
        r = (np.arange(self.nr) + 0.5) * self.hr
        return 2.0 * math.pi * r * self.hr

    @property
    def measure(self) -> float:
        if self.geometry == "rectangle":
            return self.Lx * self.Ly
        return math.pi * self.R * self.R

    def cell_centers(self):
        """Cell-center coordinates: (x, y) meshgrid arrays or radii."""
        if self.geometry == "rectangle":
            x = (np.arange(self.nx) + 0.5) * self.hx
            y = (np.arange(self.ny) + 0.5) * self.hy
            return np.meshgrid(x, y, indexing="ij")
        return (np.arange(self.nr) + 0.5) * self.hr

    def field(self, values) -> "Field":
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            values = np.broadcast_to(values, self.shape).copy()
        return Field(values, self)


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )


def _check(f: Field, g: Grid) -> np.ndarray:
    if f.grid is not g:
        raise GridMismatchError("field does not belong to this grid")
    return f.values


def integrate(f: Field, g: Grid) -> float:
    """Discrete integral over the domain: sum of cell values x cell volumes."""
    a = _check(f, g)
    if g.geometry == "rectangle":
        return float(a.sum() * g.hx * g.hy)
    return float((a * g.cell_volumes).sum())


def _face_means(a: np.ndarray, axis: int) -> np.ndarray:
    if axis == 0:
        return 0.5 * (a[1:] + a[:-1])
    return 0.5 * (a[:, 1:] + a[:, :-1])


def _face_diffs(a: np.ndarray, axis: int) -> np.ndarray:
    if axis == 0:
        return a[1:] - a[:-1]
    return a[:, 1:] - a[:, :-1]


def _rect_div(Fx: np.ndarray, Fy: np.ndarray, g: Grid) -> np.ndarray:
    """Divergence of interior-face fluxes, zero flux on boundary faces."""
    out = np.zeros((g.nx, g.ny))
    out[:-1, :] += Fx / g.hx
    out[1:, :] -= Fx / g.hx
    out[:, :-1] += Fy / g.hy
    out[:, 1:] -= Fy / g.hy
    return out


def _radial_div(F: np.ndarray, g: Grid) -> np.ndarray:
    """Axisymmetric divergence (1/r)(r F)_r with zero flux at r=0 and r=R."""
    r_face = np.arange(1, g.nr) * g.hr
    r_cell = (np.arange(g.nr) + 0.5) * g.hr
    out = np.zeros(g.nr)
    weighted = r_face * F
    out[:-1] += weighted
    out[1:] -= weighted
    return out / (r_cell * g.hr)


def _divergence(face_flux_fn, g: Grid) -> np.ndarray:
    if g.geometry == "rectangle":
        Fx = face_flux_fn(0)
        Fy = face_flux_fn(1)
        return _rect_div(Fx, Fy, g)
    return _radial_div(face_flux_fn(0), g)


def laplacian_neumann(f: Field, g: Grid) -> Field:
    """5-point (rectangle) or axisymmetric 3-point conservative Laplacian."""
    a = _check(f, g)
    if g.geometry == "rectangle":
        return g.field(_rect_div(_face_diffs(a, 0) / g.hx, _face_diffs(a, 1) / g.hy, g))
    return g.field(_radial_div(_face_diffs(a, 0) / g.hr, g))


def diffusive_face_coeffs(v: Field, D: CoefficientSpec, g: Grid, averaging: str = "arithmetic"):
    """D evaluated at faces from the cell field v; arithmetic mean of v by
    default, harmonic mean of D(v) as the degenerate-run option."""
    a = _check(v, g)
    axes = (0, 1) if g.geometry == "rectangle" else (0,)
    out = []
    for ax in axes:
        if averaging == "arithmetic":
            c = eval_D(D, _face_means(a, ax))
        elif averaging == "harmonic":
            dv = eval_D(D, a)
            left = dv[:-1] if ax == 0 else dv[:, :-1]
            right = dv[1:] if ax == 0 else dv[:, 1:]
            c = 2.0 * left * right / (left + right)
        else:
            raise ValidationError(f"unknown face averaging {averaging!r}")
        c = np.asarray(c)
        if (c <= 0.0).any():
            raise InvalidCoefficientError("nonpositive diffusion coefficient at a face")
        out.append(c)
    return out


def diffusive_divergence(
    u: Field, v: Field, D: CoefficientSpec, g: Grid, averaging: str = "arithmetic"
) -> Field:
    """div(D(v) grad u) in conservative face-flux form."""
    a = _check(u, g)
    _check(v, g)
    coeffs = diffusive_face_coeffs(v, D, g, averaging)
    if g.geometry == "rectangle":
        Fx = coeffs[0] * _face_diffs(a, 0) / g.hx
        Fy = coeffs[1] * _face_diffs(a, 1) / g.hy
        return g.field(_rect_div(Fx, Fy, g))
    F = coeffs[0] * _face_diffs(a, 0) / g.hr
    return g.field(_radial_div(F, g))


def _face_velocity(v: np.ndarray, S: CoefficientSpec, axis: int, h: float) -> np.ndarray:
    return np.asarray(S(_face_means(v, axis))) * _face_diffs(v, axis) / h


def _advective_flux(u: np.ndarray, w: np.ndarray, axis: int, scheme: str) -> np.ndarray:
    if scheme == "central":
        u_face = _face_means(u, axis)
    elif scheme == "upwind":
        left = u[:-1] if axis == 0 else u[:, :-1]
        right = u[1:] if axis == 0 else u[:, 1:]
        u_face = np.where(w > 0.0, left, right)
    else:
        raise ValidationError(f"unknown chemotaxis scheme {scheme!r}")
    return u_face * w


def chemotactic_divergence(
    u: Field, v: Field, S: CoefficientSpec, g: Grid, scheme: str = "upwind"
) -> Field:
    """div(u S(v) grad v): face velocity w = S(v_face) dv/dn, donor-cell
    upwinding of u by the sign of w (or arithmetic mean in central mode)."""
    au = _check(u, g)
    av = _check(v, g)
    if g.geometry == "rectangle":
        wx = _face_velocity(av, S, 0, g.hx)
        wy = _face_velocity(av, S, 1, g.hy)
        Fx = _advective_flux(au, wx, 0, scheme)
        Fy = _advective_flux(au, wy, 1, scheme)
        return g.field(_rect_div(Fx, Fy, g))
    w = _face_velocity(av, S, 0, g.hr)
    F = _advective_flux(au, w, 0, scheme)
    return g.field(_radial_div(F, g))


def _face_weights_1d(n_cells: int, h: float) -> np.ndarray:
    """Quadrature widths for the n_cells-1 interior faces along one axis.

    Voronoi widths extended to the boundary: interior width h, the two
    extreme faces get 1.5h, so the widths sum to the full side length."""
    w = np.full(n_cells - 1, h)
    w[0] += 0.5 * h
    w[-1] += 0.5 * h
    return w


def grad_pow_integral(v: Field, g: Grid, power: float) -> float:
    """Face-quadrature approximation of the integral of |grad v|^power,
    componentwise: sum over interior faces of |dv/dn|^power x face volume."""
    a = _check(v, g)
    total = 0.0
    if g.geometry == "rectangle":
        dx = np.abs(_face_diffs(a, 0)) / g.hx
        wx = _face_weights_1d(g.nx, g.hx)
        total += float((dx**power * wx[:, None]).sum() * g.hy)
        dy = np.abs(_face_diffs(a, 1)) / g.hy
        wy = _face_weights_1d(g.ny, g.hy)
        total += float((dy**power * wy[None, :]).sum() * g.hx)
        return total
    d = np.abs(_face_diffs(a, 0)) / g.hr
    r_face = np.arange(1, g.nr) * g.hr
    w = _face_weights_1d(g.nr, g.hr)
    return float((d**power * 2.0 * math.pi * r_face * w).sum())


def grad_sq_integral(v: Field, g: Grid) -> float:
    """Integral of |grad v|^2 over interior faces; zero for constants."""
    return grad_pow_integral(v, g, 2.0)


# --- field snapshot format (shared with the harness) -----------------------

_MAGIC = "KSFIELD v1"


def write_snapshot(f: Field, t: float, path) -> None:
    """Header line 'KSFIELD v1 <geometry> <nx> <ny> <t>' then row-major
    little-endian float64 cell values."""
    g = f.grid
    if g.geometry == "rectangle":
        nx, ny = g.nx, g.ny
    else:
        nx, ny = g.nr, 1
    header = f"{_MAGIC} {g.geometry} {nx} {ny} {t!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path, g: Grid) -> Tuple[Field, float]:
    """Reload a snapshot onto its grid; bit-identical round trip."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").rstrip("\n")
        raw = fh.read()
    parts = header.split()
    if parts[:2] != _MAGIC.split():
        raise ValidationError(f"bad snapshot header: {header!r}")
    geometry, nx, ny, t = parts[2], int(parts[3]), int(parts[4]), float(parts[5])
    if geometry != g.geometry:
        raise GridMismatchError(f"snapshot geometry {geometry} != grid {g.geometry}")
    expect = (g.nx, g.ny) if g.geometry == "rectangle" else (g.nr, 1)
    if (nx, ny) != expect:
        raise GridMismatchError(f"snapshot shape {(nx, ny)} != grid {expect}")
    values = np.frombuffer(raw, dtype="<f8").astype(float).reshape(g.shape)
    return g.field(values), t
