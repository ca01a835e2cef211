"""Independent reference computations used only by the tests."""
import math

import numpy as np
from scipy import integrate

from nodalfrac.constants import c_ns, sphere_area
from scipy.special import hyp2f1
from scipy.stats import norm, qmc


def smooth_factor(r, rho, n, s):
    """Scalar ``g(r, rho)``; written out again here to keep the oracle self-contained."""
    lo, hi = (r, rho) if r < rho else (rho, r)
    if hi == 0.0:
        return 0.0
    t = lo / hi
    return hyp2f1(-s, n / 2 - s - 1, n / 2, t * t) * lo ** (n - 1) * (1 + t) ** (-1 - 2 * s)


def _K(r, rho, n, s):
    return smooth_factor(r, rho, n, s) * abs(rho - r) ** (-1 - 2 * s)


def form_bruteforce(f, breaks, n, s, epsrel=1e-9):
    """(C/2) |S|^2 int int (f(r) - f(rho))^2 g |r - rho|^{-1-2s} over [0, inf)^2.

    ``f`` is piecewise smooth with kinks at ``breaks`` and vanishes beyond
    ``breaks[-1]``.  Nested adaptive quadrature in (r, d = rho - r); the
    exterior is integrated directly, not through a tail weight.
    """
    breaks = np.asarray(breaks, dtype=float)
    top = breaks[-1]

    def inner(r):
        fr = f(r)
        cuts = [b - r for b in breaks if b > r]
        total = 0.0
        lo = 0.0
        for k, hi in enumerate(cuts):
            if k == 0:
                # leading piece: (f(r) - f(r + d))^2 / d^2 is smooth, weight d^(1-2s)
                g = lambda d: ((fr - f(r + d)) / d) ** 2 * smooth_factor(r, r + d, n, s) if d > 0 else 0.0
                total += integrate.quad(g, lo, hi, weight="alg", wvar=(1 - 2 * s, 0.0),
                                        epsabs=0, epsrel=epsrel, limit=200)[0]
            else:
                total += integrate.quad(lambda d: (fr - f(r + d)) ** 2 * _K(r, r + d, n, s),
                                        lo, hi, epsabs=0, epsrel=epsrel, limit=200)[0]
            lo = hi
        if fr != 0.0:
            total += fr * fr * integrate.quad(lambda d: _K(r, r + d, n, s), max(lo, top - r),
                                              np.inf, epsabs=0, epsrel=epsrel, limit=200)[0]
        return total

    pts = list(breaks)
    val = 0.0
    lo = 0.0
    for hi in pts:
        if hi > lo:
            val += integrate.quad(inner, lo, hi, epsabs=0, epsrel=epsrel, limit=200)[0]
            lo = hi
    return c_ns(n, s) * sphere_area(n) ** 2 * val  # factor 2 (mirror) times C/2


def eta_bruteforce(fplus, fminus, rz, top, breaks, n, s, epsrel=1e-10):
    """(C/2) int int u+(x) u-(y) |x - y|^{-n-2s} for u+ on [0, rz] and u- on [rz, top].

    Nested adaptive quadrature in (r, rho); the corner at (rz, rz) is
    integrable because both parts vanish linearly there.
    """
    inner_pts = [b for b in breaks if rz < b < top]
    outer_pts = [b for b in breaks if 0 < b < rz]

    def inner(r):
        return integrate.quad(lambda rho: fminus(rho) * _K(r, rho, n, s), rz, top,
                              points=inner_pts or None, epsabs=0, epsrel=epsrel, limit=400)[0]

    val = integrate.quad(lambda r: fplus(r) * inner(r), 0.0, rz, points=outer_pts or None,
                         epsabs=0, epsrel=epsrel, limit=400)[0]
    return 0.5 * c_ns(n, s) * sphere_area(n) ** 2 * val


def hat(nodes, i):
    nodes = np.asarray(nodes, dtype=float)

    def f(r):
        e = np.zeros(len(nodes))
        e[i] = 1.0
        return float(np.interp(r, nodes, e, right=0.0))
    return f


def monte_carlo_kernel(r, rho, n, s, log2_samples=22, seed=0):
    """Sphere average of |r e1 - rho w|^{-(n+2s)} from scrambled Sobol samples on S^{n-1}.

    Points are pushed through the normal inverse CDF and normalised, which
    gives uniform directions; randomised QMC brings the error near 1e-6 for
    n = 3 where plain sampling would need ~1e9 points.
    """
    eng = qmc.Sobol(n, scramble=True, seed=seed)
    w = norm.ppf(eng.random_base2(log2_samples))
    w /= np.linalg.norm(w, axis=1)[:, None]
    d2 = r * r + rho * rho - 2 * r * rho * w[:, 0]
    return sphere_area(n) * float(np.mean(d2 ** (-(n + 2 * s) / 2)))


def union_find_count(mask):
    """Connected components of a boolean grid with the 4-neighbourhood."""
    mask = np.asarray(mask, dtype=bool)
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    rows, cols = mask.shape
    for i in range(rows):
        for j in range(cols):
            if mask[i, j]:
                parent[(i, j)] = (i, j)
                if i > 0 and mask[i - 1, j]:
                    union((i, j), (i - 1, j))
                if j > 0 and mask[i, j - 1]:
                    union((i, j), (i, j - 1))
    return len({find(a) for a in parent})


def bisection_root(g, lo, hi, tol=1e-15, max_iter=300):
    glo = g(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def grid_search_max(F, center, width, levels=12, m=21):
    """Maximise F(a, b) by repeated grid zoom around the running best."""
    ca, cb = center
    for _ in range(levels):
        aa = np.linspace(ca - width, ca + width, m)
        bb = np.linspace(cb - width, cb + width, m)
        vals = np.array([[F(a, b) for b in bb] for a in aa])
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        ca, cb = aa[i], bb[j]
        width *= 0.25
    return ca, cb


def gamma_stirling(x):
    """Gamma by shifted Stirling series with reflection (independent of Lanczos)."""
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma_stirling(1 - x))
    shift = 1.0
    while x < 20:
        shift *= x
        x += 1
    z = 1.0 / x
    series = z / 12 - z ** 3 / 360 + z ** 5 / 1260 - z ** 7 / 1680 + z ** 9 / 1188
    return math.exp((x - 0.5) * math.log(x) - x + 0.5 * math.log(2 * math.pi) + series) / shift
