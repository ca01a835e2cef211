"""Special constants, standard bubbles and the fractional Sobolev constant.

All closed-form constants are ratios of Gamma values evaluated with the
Lanczos routine :func:`gamma_fn`.  The Sobolev constant has no closed form
here; it is obtained from the Gagliardo quotient of the unnormalised bubble
profile through the radial pair quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError, ToleranceError

__all__ = [
    "Params", "Bubble", "ConstantsTable", "gamma_fn", "c_ns", "d_s", "p_ns",
    "k_strauss", "sphere_area", "bubble_integral", "sobolev_constant",
    "sobolev_sandwich", "bubble_amplitude", "make_bubble", "bubble_value", "theory_mu",
    "constants_table", "fractional_laplacian_pointwise",
]

# Lanczos coefficients, g = 7, nine terms.
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993, 676.5203681218851, -1259.1392167224028,
    771.32342877765313, -176.61502916214059, 12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
)


def _sinpi(x: float) -> float:
    # exact reduction keeps relative accuracy next to the poles
    k = round(x)
    v = math.sin(math.pi * (x - k))
    return -v if k % 2 else v


def gamma_fn(x: float) -> float:
    """Gamma function via the Lanczos approximation with reflection.

    Raises :class:`DomainError` at the poles ``0, -1, -2, ...``.
    """
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise DomainError(f"Gamma has a pole at {x}")
    if x < 0.5:
        return math.pi / (_sinpi(x) * gamma_fn(1.0 - x))
    x -= 1.0
    acc = _LANCZOS[0]
    for i in range(1, len(_LANCZOS)):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def _check_s(s):
    if not 0.0 < s < 1.0:
        raise DomainError(f"fractional order s={s} must lie in (0, 1)")


def c_ns(n: int, s: float) -> float:
    """Normalisation of the singular-integral fractional Laplacian."""
    _check_s(s)
    if n < 1:
        raise DomainError("dimension must be >= 1")
    return 2.0 ** (2 * s) * gamma_fn(n / 2 + s) / (math.pi ** (n / 2) * abs(gamma_fn(-s)))


def d_s(s: float) -> float:
    """Constant in front of the weighted Dirichlet energy of the extension."""
    _check_s(s)
    return 2.0 ** (2 * s) / 2.0 * gamma_fn(s) / gamma_fn(1.0 - s)


def p_ns(n: int, s: float) -> float:
    """Normalisation of the extension Poisson kernel."""
    _check_s(s)
    return gamma_fn((n + 2 * s) / 2) / (math.pi ** (n / 2) * gamma_fn(s))


def k_strauss(n: int, s: float) -> float:
    """Constant of the radial Strauss inequality (needs s > 1/2, n >= 2)."""
    _check_s(s)
    if s <= 0.5:
        raise DomainError("the radial Strauss inequality fails for s <= 1/2")
    if n < 2:
        raise DomainError("the radial Strauss inequality needs n >= 2")
    num = gamma_fn(2 * s - 1) * gamma_fn((n - 2 * s) / 2) * gamma_fn(n / 2)
    den = (2.0 ** (2 * s) * math.pi ** (n / 2) * gamma_fn(s) ** 2
           * gamma_fn((n - 2 * (1 - s)) / 2))
    return num / den


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (so a ball has volume area*R^n/n)."""
    return 2.0 * math.pi ** (n / 2) / gamma_fn(n / 2)


@dataclass(frozen=True)
class Params:
    """Problem data: dimension, order, ball radius and linear coefficient."""

    n: int
    s: float
    R: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        _check_s(self.s)
        if self.n < 2:
            raise DomainError("dimension n must be >= 2")
        if not self.n > 2 * self.s:
            raise DomainError("need n > 2s")
        if not self.R > 0:
            raise DomainError("radius must be positive")
        if self.lam < 0:
            raise DomainError("lambda must be non-negative")

    @property
    def crit_exp(self) -> float:
        return 2.0 * self.n / (self.n - 2 * self.s)

    @property
    def beta(self) -> float:
        return 2.0 / (self.n - 2 * self.s)

    def with_lambda(self, lam: float) -> "Params":
        return Params(self.n, self.s, self.R, lam)

    def require_solver(self):
        """Existence of radial nodal solutions is only guaranteed for n > 6s."""
        if not self.n > 6 * self.s:
            raise DomainError(
                f"solver requires n > 6s (got n={self.n}, s={self.s}, 6s={6 * self.s:g})")


@lru_cache(maxsize=None)
def bubble_integral(n: int) -> float:
    """Integral of (1+|x|^2)^(-n) over R^n, by radial quadrature."""
    val, _ = integrate.quad(lambda r: (1.0 + r * r) ** (-n) * r ** (n - 1), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere_area(n) * val


def _sobolev_panels(n, s, n_panels, scale=1.0):
    # geometric panels; outer radius chosen so both neglected tails
    # (~ Rmax^-(n-2s) and ~ Rmax^-2s) stay below 1e-10
    expo = 10.0 / min(2 * s, n - 2 * s)
    rmax = scale * 10.0 ** min(expo, 30.0)
    rmin = scale * 1e-2
    return np.concatenate(([0.0], np.geomspace(rmin, rmax, n_panels)))


def _sobolev_quotient(n, s, mu, n_panels, orders):
    from .quadrature import gagliardo_of_function

    m = (n - 2 * s) / 2

    def prof(r):
        return (1.0 + (r / mu) ** 2) ** (-m)

    edges = _sobolev_panels(n, s, n_panels)
    gag = gagliardo_of_function(prof, edges, n, s, orders=orders)
    lcrit = mu ** n * bubble_integral(n)
    p = 2.0 * n / (n - 2 * s)
    return gag / lcrit ** (2.0 / p)


@lru_cache(maxsize=64)
def _sobolev_cached(n, s, quad_tol, mu, n_panels):
    from .quadrature import QuadOrders

    base = QuadOrders()
    value = _sobolev_quotient(n, s, mu, n_panels, base)
    check = _sobolev_quotient(n, s, mu, n_panels, base.refined())
    resid = abs(value - check) / abs(check)
    if resid > quad_tol:
        raise ToleranceError(
            f"Sobolev quotient not converged: residual {resid:.3e} > {quad_tol:.1e}", resid)
    return check


def sobolev_constant(n: int, s: float, quad_tol: float = 1e-7, mu: float = 1.0,
                     n_panels: int = 160) -> float:
    """Best fractional Sobolev constant from the bubble Gagliardo quotient.

    The quotient ``||u||_s^2 / |u|_{2*}^2`` of ``u(x) = (1+|x/mu|^2)^{-(n-2s)/2}``
    is evaluated with the radial pair quadrature on fixed geometric panels
    (panels do not move with ``mu``, so agreement across ``mu`` is a genuine
    accuracy check).  The result is cross-checked against a run with raised
    quadrature orders; a disagreement above ``quad_tol`` raises
    :class:`ToleranceError` carrying the achieved residual.
    """
    _check_s(s)
    if not n > 2 * s:
        raise DomainError("need n > 2s")
    return _sobolev_cached(int(n), float(s), float(quad_tol), float(mu), int(n_panels))


def sobolev_sandwich(S: float, lam: float, lam1: float) -> tuple[float, float]:
    """Bounds ``(1 - lam/lam1) S <= S_{s,lam} <= S`` for lam in [0, lam1)."""
    if not 0 <= lam < lam1:
        raise DomainError("need 0 <= lambda < lambda_1")
    return (1.0 - lam / lam1) * S, S


@dataclass(frozen=True)
class Bubble:
    """Standard bubble centred at the origin."""

    mu: float
    k: float
    center_radius: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("bubble scale must be positive")
        if self.center_radius != 0.0:
            raise DomainError("only bubbles centred at the origin are supported")


def bubble_amplitude(mu: float, n: int, s: float, S: float | None = None) -> float:
    """Amplitude k_mu making the bubble solve (-Delta)^s U = U^(2*-1)."""
    if S is None:
        S = sobolev_constant(n, s)
    p = 2.0 * n / (n - 2 * s)
    return (S ** (n / (2 * s)) * mu ** n / bubble_integral(n)) ** (1.0 / p)


def make_bubble(mu: float, n: int, s: float, S: float | None = None) -> Bubble:
    return Bubble(mu=mu, k=bubble_amplitude(mu, n, s, S))


def bubble_value(b: Bubble, r, params: Params):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be non-negative")
    return b.k * (b.mu ** 2 + r ** 2) ** (-(params.n - 2 * params.s) / 2)


def theory_mu(n: int, s: float, S: float | None = None) -> float:
    """Scale of the bubble normalised by U(0) = 1."""
    if S is None:
        S = sobolev_constant(n, s)
    return S ** (1.0 / (2 * s)) * bubble_integral(n) ** (-1.0 / n)


@dataclass(frozen=True)
class ConstantsTable:
    n: int
    s: float
    c_ns: float
    d_s: float
    p_ns: float
    omega_n: float
    s_sobolev: float
    k_strauss: float | None = None
    extras: dict = field(default_factory=dict, compare=False)

    def as_dict(self):
        return {
            "n": self.n, "s": self.s, "c_ns": self.c_ns, "d_s": self.d_s,
            "p_ns": self.p_ns, "omega_n": self.omega_n, "s_sobolev": self.s_sobolev,
            "k_strauss": self.k_strauss, **self.extras,
        }


def constants_table(n: int, s: float, quad_tol: float = 1e-7) -> ConstantsTable:
    S = sobolev_constant(n, s, quad_tol)
    return ConstantsTable(
        n=n, s=s, c_ns=c_ns(n, s), d_s=d_s(s), p_ns=p_ns(n, s), omega_n=sphere_area(n),
        s_sobolev=S, k_strauss=k_strauss(n, s) if s > 0.5 and n >= 2 else None,
        extras={"crit_exp": 2.0 * n / (n - 2 * s), "theory_mu": theory_mu(n, s, S),
                "bubble_integral": bubble_integral(n)},
    )


def fractional_laplacian_pointwise(f, r: float, n: int, s: float, epsrel: float = 1e-10):
    """Pointwise ``(-Delta)^s f(|x|)`` at ``|x| = r`` for a smooth radial profile.

    Uses the second-difference form ``C/2 int (2f(x) - f(x+z) - f(x-z)) |z|^{-n-2s} dz``
    in polar coordinates for ``z``.  The sphere average is done with
    Gauss-Gegenbauer nodes in ``cos(theta)``, the radial part with adaptive
    quadrature carrying the algebraic weight.  This route shares nothing with
    the pair quadrature, which makes it usable as an oracle.
    """
    from scipy.special import roots_jacobi

    a = (n - 3) / 2.0
    xg, wg = roots_jacobi(64, a, a)
    wg = wg * sphere_area(n - 1) if n > 1 else wg

    def sphere_avg(t):
        # int_{S^{n-1}} (f(r) - f(|x + t w|)) dw, using the symmetry w -> -w
        rad = np.sqrt(np.maximum(r * r + t * t + 2.0 * r * t * xg, 0.0))
        return np.dot(wg, f(r) - f(rad))

    # below t_floor the second difference loses digits; use its t -> 0 limit
    t_floor = 1e-4 * max(r, 1.0)
    g1 = sphere_avg(t_floor) / t_floor ** 2
    g2 = sphere_avg(2 * t_floor) / (2 * t_floor) ** 2
    g0 = (4.0 * g1 - g2) / 3.0

    def integrand(t):
        if t < t_floor:
            return g0
        return sphere_avg(t) / t ** 2

    cn = c_ns(n, s)
    # inner part carries t^(1-2s) explicitly, outer part decays like t^(-1-2s)
    split = max(r, 1.0)
    inner, _ = integrate.quad(integrand, 0.0, split, weight="alg", wvar=(1 - 2 * s, 0.0),
                              epsabs=0.0, epsrel=epsrel, limit=400)
    outer, _ = integrate.quad(lambda t: sphere_avg(t) * t ** (-1 - 2 * s), split, np.inf,
                              epsabs=0.0, epsrel=epsrel, limit=400)
    return cn * (inner + outer)
