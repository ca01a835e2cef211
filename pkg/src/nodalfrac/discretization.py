"""Graded radial grids, P1 hat basis and the discrete forms on ``B_R``.

Unknowns are the nodal values at ``r_0 = 0, ..., r_{N-1}``; the value at
``r_N = R`` is pinned to zero by the exterior condition.  The stiffness
matrix holds the Gagliardo form of the hats over ``B_R x B_R`` plus the two
exterior strips, folded into a weighted mass term on ``B_R``.  The mass
form is lumped (``w_i = |S| int phi_i r^(n-1)``).  The ``L^p`` functional
integrates the P1 interpolants of the nodal parts ``u+`` and ``u-`` exactly
per element and adds them, so ``|u|_p^p = |u+|_p^p + |u-|_p^p`` holds
identically.  Lumping ``|u|^p`` instead would overweight one-node spikes and
let the discrete Sobolev quotient drop below ``S_s`` at the origin.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import backend as _backend
from .constants import Params, c_ns, sphere_area
from .errors import AssemblyError, ConfigurationError, ConvergenceError, DomainError
from .kernel import tail_weight
from .quadrature import (QuadOrders, far_pairs, far_points, form_prefactor,
                         gauss_jacobi01, gauss_legendre01, same_points, touch_points)

log = logging.getLogger(__name__)

__all__ = [
    "RadialGrid", "RadialFn", "FormMatrices", "build_grid", "grid_from_nodes",
    "assemble_forms", "lp_norm", "gagliardo_norm", "l2_inner", "first_eigenvalue",
    "first_eigenpair", "apply_operator", "dump_forms", "load_forms", "LpFunctional",
]

MIN_NODES = 16


def _grading(x, g_in, g_out):
    x = np.asarray(x, dtype=float)
    lo = 0.5 * (2.0 * x) ** g_in
    hi = 1.0 - 0.5 * (2.0 * (1.0 - x)) ** g_out
    return np.where(x <= 0.5, lo, hi)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes ``0 = r_0 < ... < r_N = R`` of a radial P1 mesh."""

    nodes: np.ndarray
    n: int
    gamma_inner: float = 1.0
    gamma_outer: float = 1.0
    quad_points: int = 8

    def __post_init__(self):
        r = np.asarray(self.nodes, dtype=float)
        if r.ndim != 1 or len(r) < 3:
            raise ConfigurationError("grid needs at least two elements")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ConfigurationError("grid nodes must start at 0 and increase strictly")
        r.setflags(write=False)
        object.__setattr__(self, "nodes", r)

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def R(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def scaled(self, t: float) -> "RadialGrid":
        return RadialGrid(self.nodes * t, self.n, self.gamma_inner, self.gamma_outer,
                          self.quad_points)


def build_grid(params: Params, N: int = 256, gamma_inner: float = 2.0,
               gamma_outer: float = 2.0) -> RadialGrid:
    """Two-sided graded mesh ``r_i = R psi(i/N)`` refined toward 0 and toward R."""
    if N < MIN_NODES:
        raise ConfigurationError(f"N must be at least {MIN_NODES}, got {N}")
    if gamma_inner < 1 or gamma_outer < 1:
        raise ConfigurationError("grading exponents must be >= 1")
    x = np.arange(N + 1) / N
    r = params.R * _grading(x, gamma_inner, gamma_outer)
    r[0] = 0.0
    r[-1] = params.R
    return RadialGrid(r, params.n, gamma_inner, gamma_outer)


def grid_from_nodes(nodes, n: int) -> RadialGrid:
    return RadialGrid(np.asarray(nodes, dtype=float), n)


@dataclass(frozen=True, eq=False)
class RadialFn:
    """Nodal values of a P1 function on ``grid``; zero for ``r >= R``."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape == (self.grid.N,):
            v = np.append(v, 0.0)
        if v.shape != (self.grid.N + 1,):
            raise DomainError(f"expected {self.grid.N + 1} nodal values, got {v.shape}")
        if v[-1] != 0.0:
            raise DomainError("value at r = R must vanish")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: RadialGrid, f) -> "RadialFn":
        v = np.asarray(f(grid.nodes), dtype=float).copy()
        v[-1] = 0.0
        return cls(grid, v)

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "RadialFn":
        return cls(grid, np.zeros(grid.N + 1))

    @property
    def interior(self) -> np.ndarray:
        """Unknowns ``u_0 .. u_{N-1}``."""
        return self.values[:-1]

    @property
    def plus(self) -> "RadialFn":
        return RadialFn(self.grid, np.maximum(self.values, 0.0))

    @property
    def minus(self) -> "RadialFn":
        return RadialFn(self.grid, np.maximum(-self.values, 0.0))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, self.grid.nodes, self.values, right=0.0)

    def __neg__(self):
        return RadialFn(self.grid, -self.values)

    def scaled(self, c: float) -> "RadialFn":
        return RadialFn(self.grid, c * self.values)


class LpFunctional:
    """``u -> int |I u+|^p + |I u-|^p`` over ``B_R`` with per-element Gauss rules.

    ``I`` is P1 interpolation.  Arguments are the ``N + 1`` nodal values or the
    ``N`` unknowns (the value at ``R`` is then taken as zero).
    """

    def __init__(self, grid: RadialGrid, q: int = 8):
        x, w = gauss_legendre01(q)
        r = grid.nodes[:-1, None] + grid.h[:, None] * x
        self.x = x
        self.wt = sphere_area(grid.n) * w * grid.h[:, None] * r ** (grid.n - 1)
        self.N = grid.N

    def _full(self, u):
        u = np.asarray(u, dtype=float)
        return np.append(u, 0.0) if u.shape == (self.N,) else u

    def _vals(self, v):
        return v[:-1, None] * (1.0 - self.x) + v[1:, None] * self.x

    def parts(self, u, p):
        """``(|u+|_p^p, |u-|_p^p)``."""
        u = self._full(u)
        out = []
        for v in (np.maximum(u, 0.0), np.maximum(-u, 0.0)):
            out.append(float(np.sum(self.wt * self._vals(v) ** p)))
        return tuple(out)

    def __call__(self, u, p):
        a, b = self.parts(u, p)
        return a + b

    def grad(self, u, p):
        """Gradient of ``|u|_p^p`` w.r.t. the unknowns (nodes with u_i = 0 get the one-sided value 0)."""
        u = self._full(u)
        g = np.zeros(self.N + 1)
        for v, sgn in ((np.maximum(u, 0.0), 1.0), (np.maximum(-u, 0.0), -1.0)):
            d = p * self.wt * self._vals(v) ** (p - 1)
            gv = np.zeros(self.N + 1)
            gv[:-1] += d @ (1.0 - self.x)
            gv[1:] += d @ self.x
            g += sgn * np.where(sgn * u > 0, gv, 0.0)
        return g[:-1]

    def hess(self, u, p):
        """Hessian on the unknowns (tridiagonal, dense storage)."""
        u = self._full(u)
        H = np.zeros((self.N + 1, self.N + 1))
        k = np.arange(self.N)
        for v, sgn in ((np.maximum(u, 0.0), 1.0), (np.maximum(-u, 0.0), -1.0)):
            act = (sgn * u > 0).astype(float)
            d = p * (p - 1) * self.wt * self._vals(v) ** (p - 2)
            aa = d @ (1.0 - self.x) ** 2
            bb = d @ (self.x * (1.0 - self.x))
            cc = d @ self.x ** 2
            H[k, k] += aa * act[k]
            H[k + 1, k + 1] += cc * act[k + 1]
            H[k, k + 1] += bb * act[k] * act[k + 1]
            H[k + 1, k] += bb * act[k] * act[k + 1]
        return H[:-1, :-1]


@dataclass(eq=False)
class FormMatrices:
    """Discrete forms on the hat span.

    ``stiffness`` and ``mass`` act on the ``N`` unknowns; ``lp_weights`` has one
    entry per node including ``r_N``.
    """

    grid: RadialGrid
    params: Params
    stiffness: np.ndarray
    mass: np.ndarray
    lp_weights: np.ndarray
    quad_tol: float = 1e-8
    backend: str = _backend.NAME
    _chol: tuple | None = field(default=None, repr=False)
    _lam1: float | None = field(default=None, repr=False)
    _lp: LpFunctional | None = field(default=None, repr=False)

    @property
    def lp(self) -> LpFunctional:
        if self._lp is None:
            self._lp = LpFunctional(self.grid)
        return self._lp

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def mass_diag(self) -> np.ndarray:
        return np.diag(self.mass)

    def chol(self):
        if self._chol is None:
            try:
                self._chol = cho_factor(self.stiffness, lower=True)
            except np.linalg.LinAlgError as exc:
                raise AssemblyError("stiffness matrix is not positive definite") from exc
        return self._chol

    def solve(self, b):
        """``stiffness^{-1} b``."""
        return cho_solve(self.chol(), b)

    def quad(self, u, v=None) -> float:
        u = _vec(u, self.N)
        v = u if v is None else _vec(v, self.N)
        return float(u @ self.stiffness @ v)


def _vec(u, N):
    if isinstance(u, RadialFn):
        return u.interior
    u = np.asarray(u, dtype=float)
    return u[:N] if u.shape == (N + 1,) else u


def _nodal_weights(grid: RadialGrid) -> np.ndarray:
    n = grid.n
    x, w = gauss_legendre01(n // 2 + 2)  # exact for degree n polynomials
    a = grid.nodes[:-1, None]
    h = grid.h[:, None]
    r = a + h * x
    rw = r ** (n - 1) * w * h
    out = np.zeros(grid.N + 1)
    out[:-1] += np.sum(rw * (1.0 - x), axis=1)
    out[1:] += np.sum(rw * x, axis=1)
    return sphere_area(n) * out


def _tail_matrix(grid: RadialGrid, n: int, s: float) -> np.ndarray:
    """``C |S| int phi_i phi_j tau r^(n-1)`` with ``tau = int_{|y|>R} |x - y|^{-n-2s}``."""
    N = grid.N
    R = grid.R
    r_nodes = grid.nodes
    h = grid.h
    out = np.zeros((N + 1, N + 1))
    x, w = gauss_legendre01(10)
    a = r_nodes[:-2, None]
    hh = h[:-1, None]
    r = a + hh * x
    tau = tail_weight(r.ravel(), R, n, s).reshape(r.shape) / (R - r) ** (2 * s)
    base = w * hh * tau * r ** (n - 1)
    k = np.arange(N - 1)
    out[k, k] += np.sum(base * (1 - x) ** 2, axis=1)
    out[k + 1, k + 1] += np.sum(base * x ** 2, axis=1)
    off = np.sum(base * x * (1 - x), axis=1)
    out[k, k + 1] += off
    out[k + 1, k] += off
    # last element: phi_{N-1} = z = (R - r)/h, weight z^(2-2s) absorbs the tail singularity
    z, wz = gauss_jacobi01(16, 2.0 - 2.0 * s)
    hl = h[-1]
    rl = R - hl * z
    out[N - 1, N - 1] += np.sum(wz * hl ** (1 - 2 * s) * tail_weight(rl, R, n, s) * rl ** (n - 1))
    out = c_ns(n, s) * sphere_area(n) * out[:N, :N]
    if not np.all(np.isfinite(out)):
        raise AssemblyError("exterior tail produced non-finite entries")
    return out


def _pair_matrix(grid: RadialGrid, n: int, s: float, orders: QuadOrders, acc,
                 chunk: int = 1_000_000) -> np.ndarray:
    edges = grid.nodes
    N = grid.N
    h = grid.h
    out = np.zeros((N + 1, N + 1))
    k, r, rho, w, d = same_points(edges, orders, s)
    c = d / h[k]
    acc.pair_accumulate(r, rho, w, np.ascontiguousarray(np.stack([k, k + 1], 1)),
                        np.ascontiguousarray(np.stack([c, -c], 1)), float(n), s, out)
    tri1, tri2 = touch_points(edges, orders, s)
    for (k, r, rho, w, P, Q), first in ((tri1, True), (tri2, False)):
        idx = np.ascontiguousarray(np.stack([k, k + 1, k + 2], 1))
        if first:
            coef = np.stack([P, P * (Q - 1), -P * Q], 1)
        else:
            coef = np.stack([P * Q, P * (1 - Q), -P], 1)
        acc.pair_accumulate(r, rho, w, idx, np.ascontiguousarray(coef), float(n), s, out)
    for order, (kk, ll) in far_pairs(edges, orders).items():
        step = max(1, chunk // (order * order))
        for i in range(0, len(kk), step):
            k, l, r, rho, w, X, Y = far_points(edges, kk[i:i + step], ll[i:i + step], order)
            idx = np.ascontiguousarray(np.stack([k, k + 1, l, l + 1], 1))
            coef = np.ascontiguousarray(np.stack([1 - X, X, Y - 1, -Y], 1))
            acc.pair_accumulate(r, rho, w, idx, coef, float(n), s, out)
    return form_prefactor(n, s) * out[:N, :N]


def assemble_forms(grid: RadialGrid, params: Params, quad_tol: float = 1e-8,
                   orders: QuadOrders | None = None, backend: str | None = None) -> FormMatrices:
    """Assemble stiffness (with exterior tail), lumped mass and ``L^p`` weights."""
    if grid.n != params.n:
        raise ConfigurationError("grid and params disagree on the dimension")
    if abs(grid.R - params.R) > 1e-12 * params.R:
        raise ConfigurationError("grid radius differs from params.R")
    n, s = params.n, params.s
    orders = orders or QuadOrders.from_tol(quad_tol)
    acc = _backend.get(backend)
    A = _pair_matrix(grid, n, s, orders, acc) + _tail_matrix(grid, n, s)
    A = 0.5 * (A + A.T)
    wts = _nodal_weights(grid)
    forms = FormMatrices(grid, params, A, np.diag(wts[:-1]), wts, quad_tol,
                         backend or _backend.NAME)
    forms.chol()
    return forms


def lp_norm(u, p: float, forms: FormMatrices | None = None, grid: RadialGrid | None = None) -> float:
    """``int_{B_R} |u|^p`` of the P1 interpolant of each nodal part (returns the p-th power).

    Raw arrays of ``N + 1`` values may carry a non-zero value at ``R``.
    """
    if isinstance(u, RadialFn):
        grid = u.grid
        vals = u.values
    else:
        vals = np.asarray(u, dtype=float)
        grid = grid or forms.grid
    lp = forms.lp if forms is not None and forms.grid is grid else LpFunctional(grid)
    return lp(vals, p)


def gagliardo_norm(u, forms: FormMatrices) -> float:
    """``||u||_s^2 = u^T A u``."""
    return forms.quad(u)


def l2_inner(u, v, forms: FormMatrices) -> float:
    return float(np.sum(forms.mass_diag * _vec(u, forms.N) * _vec(v, forms.N)))


def first_eigenpair(forms: FormMatrices, tol: float = 1e-10, max_iter: int = 1000):
    """Smallest eigenpair of ``A v = lam M v`` by inverse power iteration.

    Returns ``(lam, v)`` with ``v`` a positive RadialFn normalised in the mass norm.
    """
    m = forms.mass_diag
    A = forms.stiffness
    x = np.ones(forms.N)
    for it in range(max_iter):
        y = forms.solve(m * x)
        y /= np.sqrt(np.sum(m * y * y))
        lam = float(y @ A @ y)
        # generalised residual in the dual mass norm
        res = np.sqrt(np.sum((A @ y - lam * m * y) ** 2 / m))
        if res <= tol * lam:
            break
        x = y
    else:
        raise ConvergenceError(f"inverse iteration stagnated after {max_iter} steps")
    if y[0] < 0:
        y = -y
    forms._lam1 = lam
    return lam, RadialFn(forms.grid, y)


def first_eigenvalue(forms: FormMatrices, tol: float = 1e-10) -> float:
    if forms._lam1 is None:
        first_eigenpair(forms, tol)
    return forms._lam1


def apply_operator(u, forms: FormMatrices) -> RadialFn:
    """``M^{-1} A u``: discrete Riesz representative of ``(-Delta)^s u``."""
    m = forms.mass_diag
    if np.any(m <= 0):
        raise AssemblyError("singular mass matrix")
    v = forms.stiffness @ _vec(u, forms.N) / m
    return RadialFn(forms.grid, v)


def dump_forms(forms: FormMatrices, path, fmt: str = "csv") -> None:
    """Write the forms; layout documented in the README.

    ``csv``: header ``N,n,s,R`` then a data row, then the N stiffness rows, one
    row of mass diagonal and one row of the N+1 ``L^p`` weights.  ``binary``:
    little-endian float64, header ``[N, n, s, R]`` followed by the same blocks
    in row-major order.
    """
    p = forms.params
    head = np.array([forms.N, p.n, p.s, p.R], dtype="<f8")
    if fmt == "binary":
        with open(path, "wb") as fh:
            for block in (head, forms.stiffness, forms.mass_diag, forms.lp_weights):
                fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
        return
    if fmt != "csv":
        raise ConfigurationError(f"unknown dump format {fmt!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("N,n,s,R\n")
        fh.write(f"{forms.N},{p.n},{p.s!r},{p.R!r}\n")
        for row in forms.stiffness:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
        fh.write(",".join(repr(float(v)) for v in forms.mass_diag) + "\n")
        fh.write(",".join(repr(float(v)) for v in forms.lp_weights) + "\n")


def load_forms(path, fmt: str = "csv"):
    """Read back a dump as ``(header, stiffness, mass_diag, lp_weights)``."""
    if fmt == "binary":
        raw = np.fromfile(path, dtype="<f8")
        N = int(raw[0])
        head = raw[:4]
        A = raw[4:4 + N * N].reshape(N, N)
        m = raw[4 + N * N:4 + N * N + N]
        w = raw[4 + N * N + N:]
        return head, A, m, w
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = np.array([float(v) for v in lines[1].split(",")])
    N = int(head[0])
    A = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:2 + N]])
    m = np.array([float(v) for v in lines[2 + N].split(",")])
    w = np.array([float(v) for v in lines[3 + N].split(",")])
    return head, A, m, w
