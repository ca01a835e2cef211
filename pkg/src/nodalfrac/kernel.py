"""Radially reduced kernels.

For radial functions the sphere integral of ``|r e1 - rho w|^{-(n+2s)}``
reduces to a Gauss hypergeometric function.  After Euler's transformation
the kernel factorises as::

    k(r, rho) = |S^{n-1}| F(t^2) r_>^{2+2s-n} (r + rho)^{-1-2s} |r - rho|^{-1-2s},
    F(z) = 2F1(-s, n/2 - s - 1; n/2; z),   t = r_< / r_>,

where ``F`` is bounded and continuous on ``[0, 1]``.  The pair quadrature
works with the smooth factor ``g = k (r rho)^{n-1} |r - rho|^{1+2s} / |S^{n-1}|``
which simplifies to ``F(t^2) r_<^{n-1} (1 + t)^{-1-2s}``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import hyp2f1, roots_legendre

from .constants import p_ns, sphere_area
from .errors import DomainError

__all__ = [
    "hyp_factor", "smooth_factor", "angular_kernel", "angular_kernel_quadrature",
    "poisson_kernel_radial", "tail_weight",
]


def hyp_factor(z, n, s):
    return hyp2f1(-s, n / 2 - s - 1, n / 2, z)


def smooth_factor(r, rho, n, s):
    """``g(r, rho)``; the pair weight is ``|S^{n-1}| g |r - rho|^{-1-2s}``."""
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    lo = np.minimum(r, rho)
    hi = np.maximum(r, rho)
    t = np.divide(lo, hi, out=np.zeros(np.broadcast(lo, hi).shape), where=hi > 0)
    return hyp_factor(t * t, n, s) * lo ** (n - 1) * (1.0 + t) ** (-1 - 2 * s)


def angular_kernel(r, rho, n, s):
    """``k(r, rho) = int_{S^{n-1}} |r e1 - rho w|^{-(n+2s)} dw`` in closed form.

    The diagonal ``r == rho`` is not integrable pointwise and is flagged by
    returning ``inf``; element-pair quadrature never samples it.
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(r <= 0) or np.any(rho <= 0):
        raise DomainError("angular kernel needs r, rho > 0")
    g = smooth_factor(r, rho, n, s)
    d = np.abs(r - rho)
    with np.errstate(divide="ignore"):
        out = sphere_area(n) * g * d ** (-1 - 2 * s) / (r * rho) ** (n - 1)
    out = np.where(d == 0, np.inf, out)
    return out[()] if out.ndim == 0 else out


def angular_kernel_quadrature(r, rho, n, s, epsrel=1e-12):
    """Same kernel by adaptive polar-angle quadrature with the sin^(n-2) weight.

    Near the diagonal the integrand peaks at ``theta ~ |r - rho| / sqrt(r rho)``;
    the interval is split there so the adaptive rule resolves the peak.
    """
    r = float(r)
    rho = float(rho)
    if r <= 0 or rho <= 0:
        raise DomainError("angular kernel needs r, rho > 0")
    if r == rho:
        return math.inf
    nu = (n + 2 * s) / 2

    def f(th):
        # r^2 + rho^2 - 2 r rho cos = (r - rho)^2 + 4 r rho sin^2(th/2)
        q = (r - rho) ** 2 + 4 * r * rho * math.sin(th / 2) ** 2
        return q ** (-nu) * math.sin(th) ** (n - 2)

    width = abs(r - rho) / math.sqrt(r * rho)
    pts = sorted({min(c * width, math.pi / 2) for c in (0.5, 1.0, 4.0, 16.0, 64.0)})
    total = 0.0
    lo = 0.0
    for hi in pts + [math.pi]:
        if hi > lo:
            total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)[0]
            lo = hi
    return sphere_area(n - 1) * total


def poisson_kernel_radial(r, rho, y, n, s):
    """Radialised extension kernel ``p_ns y^2s int_S (y^2 + |r e1 - rho w|^2)^{-(n+2s)/2} dw``.

    ``y^2 + r^2 + rho^2 - 2 r rho cos`` is rewritten as ``a^2 (1 - 2t cos + t^2)``
    with ``t < 1`` for ``y > 0``, which gives the same hypergeometric form as
    :func:`angular_kernel` without any singularity.
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("extension kernel needs y > 0")
    A = y * y + r * r + rho * rho
    B = 2.0 * r * rho
    root = np.sqrt((y * y + (r - rho) ** 2) * (y * y + (r + rho) ** 2))  # sqrt(A^2 - B^2)
    a2 = 0.5 * (A + root)
    t = B / (2.0 * a2)
    # 1 - t^2 = (2a^2 - B)(2a^2 + B) / (4 a^4), with 2a^2 - B = (r-rho)^2 + y^2 + root
    one_m_t2 = ((r - rho) ** 2 + y * y + root) * (2.0 * a2 + B) / (4.0 * a2 * a2)
    val = (sphere_area(n) * a2 ** (-(n + 2 * s) / 2) * one_m_t2 ** (-1 - 2 * s)
           * hyp_factor(t * t, n, s))
    return p_ns(n, s) * y ** (2 * s) * val


def tail_weight(r, R, n, s, q=8, panels=64):
    """Scaled tail ``(R - r)^{2s} int_R^inf k(r, rho) rho^{n-1} d rho`` for ``0 <= r < R``.

    Substituting ``rho - r = (R - r)(1 - t)^{-1/(2s)}`` removes both the
    endpoint singularity and the infinite range; the remaining integrand is
    bounded and tends to one.  Its only feature sits where ``rho - r ~ r``,
    i.e. at ``1 - t ~ ((R - r)/r)^{2s}``, so dyadic panels toward ``t = 1``
    resolve it for every ``r``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0) or np.any(r >= R):
        raise DomainError("tail weight needs 0 <= r < R")
    x, w = roots_legendre(q)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    # panel k covers 1 - t in [2^-(k+1), 2^-k]
    width = 2.0 ** -np.arange(1, panels + 1)
    omt = (width[:, None] * (1.0 + x[None, :])).ravel()  # 1 - t
    wt = (width[:, None] * w[None, :]).ravel()
    d0 = (R - r)[:, None]
    rho = r[:, None] + d0 * omt[None, :] ** (-1.0 / (2 * s))
    tt = r[:, None] / rho
    H = hyp_factor(tt * tt, n, s) * (1.0 + tt) ** (-1 - 2 * s)
    return sphere_area(n) / (2 * s) * (H @ wt + 2.0 ** -panels)
