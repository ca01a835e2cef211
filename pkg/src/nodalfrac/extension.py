"""Extension of radial functions to the half space ``{(x, y): y > 0}``.

Everything is sampled on an ``(r, y)`` tensor grid.  The extension is computed by
integrating the radialised Poisson kernel against the P1 data element by
element.  For small ``y`` the kernel is a spike of width ``y`` centred at
``rho = r``, so each element integral uses ``rho - r = y sinh(xi)``, which turns
the spike into a smooth bump of unit width.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import backend
from .constants import Params, d_s, p_ns, sphere_area
from .discretization import RadialFn
from .errors import ConfigurationError, DomainError
from .quadrature import gauss_legendre01

__all__ = [
    "ExtensionField", "TraceResult", "extension_grid", "extension_kernel_radial", "extend",
    "extension_energy", "neumann_trace", "nodal_regions", "nodal_regions_two_levels",
    "dump_field",
]


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """``W = E_s u`` on ``r_nodes x y_nodes``; row ``j`` holds level ``y_nodes[j]``."""

    r_nodes: np.ndarray
    y_nodes: np.ndarray
    W: np.ndarray
    params: Params
    source: RadialFn

    def __post_init__(self):
        for a in (self.r_nodes, self.y_nodes, self.W):
            a.setflags(write=False)

    @property
    def shape(self):
        return self.W.shape


@dataclass(frozen=True)
class TraceResult:
    """Weighted Neumann trace tested against the hat functions.

    ``values`` is the mass representation ``(int T phi_i) / w_i``, directly
    comparable with :func:`~nodalfrac.discretization.apply_operator`.
    """

    values: RadialFn
    resolved: np.ndarray        # nodes at least 10 y_1 away from the origin and from R
    low_confidence: np.ndarray  # the two level pairs disagree by more than rel_tol

    @property
    def confident(self) -> bool:
        return not bool(np.any(self.low_confidence & self.resolved))


def extension_grid(u: RadialFn, r_max_factor: float = 4.0, y_min_factor: float = 1e-3,
                   y_ratio: float = 1.3, y_max_factor: float = 5.0, outer_points: int = 48):
    """Default sampling: data nodes plus element midpoints, then a geometric run out to ``r_max``.

    The ``y`` levels are ``0, y1, y1 q, y1 q^2, ...`` up to ``y_max``.
    """
    nodes = u.grid.nodes
    R = u.grid.R
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    inner = np.sort(np.concatenate([nodes, mids]))
    h_last = nodes[-1] - nodes[-2]
    outer = R + np.geomspace(h_last, (r_max_factor - 1.0) * R, outer_points)
    r = np.concatenate([inner, outer])
    y1 = y_min_factor * R
    k = int(math.ceil(math.log(y_max_factor / y_min_factor) / math.log(y_ratio)))
    y = np.concatenate([[0.0], y1 * y_ratio ** np.arange(k + 1)])
    return r, y


def extension_kernel_radial(r, rho, y, params: Params):
    """Radialised Poisson kernel; ``int kernel(r, rho, y) rho^(n-1) d rho = 1``."""
    r, rho, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, rho, y)))
    if np.any(y <= 0):
        raise DomainError("the extension kernel needs y > 0")
    n, s = params.n, params.s
    out = backend.poisson_values(np.ascontiguousarray(r.ravel()), np.ascontiguousarray(rho.ravel()),
                                 np.ascontiguousarray(y.ravel()), float(n), s,
                                 p_ns(n, s) * sphere_area(n))
    out = np.asarray(out).reshape(r.shape)
    return out[()] if out.ndim == 0 else out


def extend(u: RadialFn, params: Params, r_nodes=None, y_nodes=None, q: int = 10,
           backend_name: str | None = None) -> ExtensionField:
    """Sample ``E_s u`` on a tensor grid (defaults from :func:`extension_grid`).

    The level ``y = 0`` stores the trace ``u`` itself (zero for ``r >= R``).
    """
    if u.grid.n != params.n:
        raise DomainError("grid dimension does not match params")
    if r_nodes is None or y_nodes is None:
        r0, y0 = extension_grid(u)
        r_nodes = r0 if r_nodes is None else np.asarray(r_nodes, dtype=float)
        y_nodes = y0 if y_nodes is None else np.asarray(y_nodes, dtype=float)
    r_nodes = np.asarray(r_nodes, dtype=float)
    y_nodes = np.asarray(y_nodes, dtype=float)
    if np.any(y_nodes < 0) or np.any(np.diff(y_nodes) <= 0):
        raise ConfigurationError("y levels must be increasing and non-negative")
    impl = backend.get(backend_name)
    n, s = params.n, params.s
    scale = p_ns(n, s) * sphere_area(n)
    nodes = u.grid.nodes
    vals = u.values
    a, b = nodes[:-1], nodes[1:]
    keep = (vals[:-1] != 0) | (vals[1:] != 0)
    a, b, va, vb = a[keep], b[keep], vals[:-1][keep], vals[1:][keep]
    x, w = gauss_legendre01(q)
    W = np.zeros((y_nodes.size, r_nodes.size))
    if a.size == 0:
        return ExtensionField(r_nodes, y_nodes, W, params, u)
    for j, y in enumerate(y_nodes):
        if y == 0:
            W[j] = np.where(r_nodes < u.grid.R, u(np.minimum(r_nodes, u.grid.R)), 0.0)
            continue
        # xi-range of every element seen from every target radius
        lo = np.arcsinh((a[None, :] - r_nodes[:, None]) / y)
        hi = np.arcsinh((b[None, :] - r_nodes[:, None]) / y)
        xi = lo[..., None] + (hi - lo)[..., None] * x  # (nr, ne, q)
        rho = r_nodes[:, None, None] + y * np.sinh(xi)
        rho = np.clip(rho, a[None, :, None], b[None, :, None])
        jac = y * np.cosh(xi) * (hi - lo)[..., None] * w
        lam = (rho - a[None, :, None]) / (b - a)[None, :, None]
        f = va[None, :, None] * (1.0 - lam) + vb[None, :, None] * lam
        rr = np.broadcast_to(r_nodes[:, None, None], rho.shape)
        K = impl.poisson_values(np.ascontiguousarray(rr.ravel()), np.ascontiguousarray(rho.ravel()),
                                np.full(rho.size, y), float(n), s, scale)
        K = np.asarray(K).reshape(rho.shape)
        W[j] = np.sum(K * f * rho ** (n - 1) * jac, axis=(1, 2))
    return ExtensionField(r_nodes, y_nodes, W, params, u)


def _far_field_energy(field: ExtensionField, panels: int = 48) -> float:
    """Energy outside the box for the point-mass far field ``m P(x, y)``.

    Beyond a few radii of the support the extension is close to the total
    mass times the Poisson kernel at the origin, whose gradient is explicit.
    """
    p = field.params
    n, s = p.n, p.s
    u = field.source
    m = _mass(u)
    if m == 0.0:
        return 0.0
    r_max = field.r_nodes[-1]
    y_max = field.y_nodes[-1]
    c = m * p_ns(n, s)

    def dens(r, y):
        X2 = r * r + y * y
        e = -(n + 2 * s) / 2
        W_r = c * y ** (2 * s) * 2 * e * r * X2 ** (e - 1)
        W_y = c * (2 * s * y ** (2 * s - 1) * X2 ** e + y ** (2 * s) * 2 * e * y * X2 ** (e - 1))
        return d_s(s) * sphere_area(n) * r ** (n - 1) * y ** (1 - 2 * s) * (W_r ** 2 + W_y ** 2)

    x, w = gauss_legendre01(16)

    def box(r0, r1, y0, y1):
        # geometric panels in both directions, clipped below at the box edges
        def pan(a0, a1):
            if a0 == 0.0:
                e = np.concatenate([[0.0], np.geomspace(1e-6 * a1, a1, panels)])
            else:
                e = np.geomspace(a0, a1, panels + 1)
            pts = (e[:-1, None] + np.diff(e)[:, None] * x).ravel()
            wts = (np.diff(e)[:, None] * w).ravel()
            return pts, wts
        rp, rw = pan(r0, r1)
        yp, yw = pan(y0, y1)
        return float(rw @ dens(rp[:, None], yp[None, :]) @ yw)

    big = 1e3 * max(r_max, y_max)
    return box(r_max, big, 0.0, big) + box(0.0, r_max, y_max, big)


def _mass(u: RadialFn) -> float:
    n = u.grid.n
    x, w = gauss_legendre01(n // 2 + 2)
    a = u.grid.nodes[:-1, None]
    h = u.grid.h[:, None]
    r = a + h * x
    v = u.values[:-1, None] * (1 - x) + u.values[1:, None] * x
    return sphere_area(n) * float(np.sum(v * r ** (n - 1) * w * h))


def extension_energy(field: ExtensionField):
    """``d_s int y^(1-2s) |grad W|^2`` over the sampled box; returns ``(value, remainder)``.

    With ``t = y^(2s)`` the vertical part becomes ``2s int W_t^2 dt``, and near the
    trace ``W`` is affine in ``t``, so differences in ``t`` are used for it.  The
    radial part uses the exact cell integrals of ``y^(1-2s)`` and ``r^(n-1)``.
    """
    r = field.r_nodes
    y = field.y_nodes
    W = field.W
    if r.size < 3 or y.size < 3:
        raise ConfigurationError("need at least three samples in r and in y")
    p = field.params
    n, s = p.n, p.s
    if not np.any(W):
        return 0.0, 0.0
    area = sphere_area(n)
    # radial cell weights int r^(n-1) over [r_i, r_i+1] split to the two ends
    rn = r ** n / n
    cell_r = np.diff(rn)
    node_r = np.zeros(r.size)
    node_r[:-1] += 0.5 * cell_r
    node_r[1:] += 0.5 * cell_r
    t = y ** (2 * s)
    dWt = np.diff(W, axis=0) ** 2 / np.diff(t)[:, None]
    vert = 2 * s * float(np.sum(dWt @ node_r))
    wy = np.diff(y ** (2 - 2 * s)) / (2 - 2 * s)
    Wr2 = np.diff(W, axis=1) ** 2 / np.diff(r) ** 2
    Wr2 = 0.5 * (Wr2[1:] + Wr2[:-1])
    horiz = float(wy @ Wr2 @ cell_r)
    value = d_s(s) * area * (vert + horiz)
    return value, _far_field_energy(field)


def _slope(W0, W1, W2, y1, y2, s):
    # W - u = A t + B y^2 near the trace; the y^2 term is the local correction
    t1, t2 = y1 ** (2 * s), y2 ** (2 * s)
    Y1, Y2 = y1 * y1, y2 * y2
    return ((W1 - W0) * Y2 - (W2 - W0) * Y1) / (t1 * Y2 - t2 * Y1)


def neumann_trace(field: ExtensionField, rel_tol: float = 0.05, max_sub: int = 64) -> TraceResult:
    """``-d_s lim y^(1-2s) W_y`` in weak form, from the smallest positive levels of ``field``.

    For s > 1/2 the pointwise trace of a P1 function has integrable spikes at
    every node, so it is integrated against each hat function with a composite
    midpoint rule of cell width about ``y_1``; the extension itself smooths
    the spikes at that scale.
    """
    p = field.params
    s, n = p.s, p.n
    y = field.y_nodes
    if y.size < 4 or y[0] != 0:
        raise ConfigurationError("need the trace level y = 0 and three positive levels")
    u = field.source
    g = u.grid
    if not np.any(u.values):
        return TraceResult(RadialFn.zeros(g), np.ones(g.N + 1, bool), np.zeros(g.N + 1, bool))
    m = np.clip(np.ceil(g.h / y[1]).astype(int), 2, max_sub)
    el = np.repeat(np.arange(g.N), m)
    k = np.arange(el.size) - np.repeat(np.cumsum(m) - m, m)
    x = (k + 0.5) / m[el]
    rq = g.nodes[el] + g.h[el] * x
    W = extend(u, p, rq, y[:4]).W
    c = -d_s(s) * 2 * s
    T = c * _slope(W[0], W[1], W[2], y[1], y[2], s)
    T2 = c * _slope(W[0], W[2], W[3], y[2], y[3], s)
    wt = sphere_area(n) * rq ** (n - 1) * g.h[el] / m[el]
    w_nodes = np.zeros(g.N + 1)
    np.add.at(w_nodes, el, wt * (1 - x))
    np.add.at(w_nodes, el + 1, wt * x)

    def rep(vals):
        b = np.zeros(g.N + 1)
        np.add.at(b, el, vals * wt * (1 - x))
        np.add.at(b, el + 1, vals * wt * x)
        return b[:-1] / w_nodes[:-1]

    v1, v2 = rep(T), rep(T2)
    resolved = np.zeros(g.N + 1, bool)
    resolved[:-1] = (g.nodes[:-1] >= 10 * y[1]) & (g.nodes[:-1] <= g.R - 10 * y[1])
    scale = np.max(np.abs(v1[resolved[:-1]])) if np.any(resolved) else np.max(np.abs(v1))
    flag = np.zeros(g.N + 1, bool)
    flag[:-1] = np.abs(v1 - v2) > rel_tol * scale
    return TraceResult(RadialFn(g, v1), resolved, flag)


def nodal_regions(field: ExtensionField, zero_tol: float | None = None) -> int:
    """Connected components (4-neighbourhood) of ``{W > tol}`` and ``{W < -tol}``."""
    W = field.W if isinstance(field, ExtensionField) else np.asarray(field, dtype=float)
    sup = float(np.max(np.abs(W))) if W.size else 0.0
    if sup == 0.0:
        return 0
    tol = 1e-6 * sup if zero_tol is None else zero_tol
    cross = ndimage.generate_binary_structure(2, 1)
    _, npos = ndimage.label(W > tol, structure=cross)
    _, nneg = ndimage.label(W < -tol, structure=cross)
    return int(npos + nneg)


def nodal_regions_two_levels(u: RadialFn, params: Params, zero_tol: float | None = None):
    """Region count on the default sampling and on one with halved ``y`` ratio exponent.

    Returns ``(coarse, fine, agree)``; flood fill can merge regions through
    necks thinner than a cell, so a disagreement is reported, not resolved.
    """
    r, y = extension_grid(u)
    c = nodal_regions(extend(u, params, r, y), zero_tol)
    r2 = np.sort(np.concatenate([r, 0.5 * (r[1:] + r[:-1])]))
    y2 = np.sort(np.concatenate([y, np.sqrt(y[1:] * np.maximum(y[:-1], y[1] / 1.3))]))
    f = nodal_regions(extend(u, params, r2, y2), zero_tol)
    return c, f, c == f


def dump_field(field: ExtensionField, path) -> None:
    """CSV with columns ``r,y,W``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["r", "y", "W"])
        for j, yv in enumerate(field.y_nodes):
            for i, rv in enumerate(field.r_nodes):
                wr.writerow([repr(float(rv)), repr(float(yv)), repr(float(field.W[j, i]))])
