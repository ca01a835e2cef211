"""Energy, Nehari projections and the nodal Nehari minimisation.

All quantities are evaluated in the discrete forms: ``||u||_s^2 = u^T A u``,
``|u|_2^2 = u^T M u`` with the lumped mass and ``|u|_p^p`` from
:class:`~nodalfrac.discretization.LpFunctional`.  Positive and negative parts
are taken nodewise, so the splittings ``|u|_p^p = |u+|_p^p + |u-|_p^p`` and
``(u+, u-)_s = -2 eta`` hold exactly.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import LinAlgWarning, cho_solve, solve, solve_triangular

from .constants import Params, k_strauss, sobolev_constant
from .discretization import FormMatrices, RadialFn, RadialGrid, first_eigenvalue
from .errors import ConvergenceError, DomainError, ProjectionError

log = logging.getLogger(__name__)

__all__ = [
    "EnergyReport", "NodalSolution", "SolverOptions", "energy", "eta", "nehari_project",
    "nodal_nehari_project", "minimize", "minimize_positive", "multistart", "make_initial",
    "sign_changes", "sobolev_lambda", "positive_level", "residual_norm", "strauss_ratio",
    "write_solution_csv", "write_report_json",
]


@dataclass
class EnergyReport:
    energy: float
    quotient: float
    gagliardo: float
    l2: float
    lcrit: float
    eta: float
    f_plus: float
    f_minus: float
    c_N_ref: float | None = None
    c_M: float | None = None
    lam: float = 0.0
    parts: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in d.items()}


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iters: int = 4000
    newton_tol: float = 1e-12
    armijo: float = 1e-4
    polish_below: float = 1e-3
    zero_tol: float = 1e-10
    max_restarts: int = 3
    seed: int = 0
    check_window: bool = True


@dataclass
class NodalSolution:
    u: RadialFn
    report: EnergyReport
    nodes: list
    residual_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def sign_count(self) -> int:
        return len(self.nodes)


def _interior(u, N):
    if isinstance(u, RadialFn):
        return np.array(u.interior)
    u = np.asarray(u, dtype=float)
    return u[:N].copy() if u.shape == (N + 1,) else u.copy()


class _Ctx:
    """Per-run cache of the discrete operators."""

    def __init__(self, params: Params, forms: FormMatrices):
        if params.lam < 0:
            raise DomainError("lambda must be non-negative")
        self.params = params
        self.forms = forms
        self.A = forms.stiffness
        self.m = forms.mass_diag
        self.lpf = forms.lp
        self.p = params.crit_exp
        self.lam = params.lam
        self.N = forms.N

    def check_lambda(self):
        lam1 = first_eigenvalue(self.forms)
        if self.lam >= lam1:
            raise DomainError(f"lambda = {self.lam:.6g} must lie below lambda_1 = {lam1:.6g}")
        return lam1

    def parts(self, u):
        up = np.maximum(u, 0.0)
        um = np.maximum(-u, 0.0)
        Aup = self.A @ up
        Aum = self.A @ um
        return dict(
            gag_plus=float(up @ Aup), gag_minus=float(um @ Aum),
            l2_plus=float(self.m @ (up * up)), l2_minus=float(self.m @ (um * um)),
            lcrit_plus=self.lpf(up, self.p), lcrit_minus=self.lpf(um, self.p),
            eta=max(0.0, -0.5 * float(up @ Aum)),
        )

    def energy(self, u):
        q = float(u @ self.A @ u) - self.lam * float(self.m @ (u * u))
        return 0.5 * q - self.lpf(u, self.p) / self.p

    def grad(self, u):
        return self.A @ u - self.lam * self.m * u - self.lpf.grad(u, self.p) / self.p

    def hess(self, u):
        return self.A - np.diag(self.lam * self.m) - self.lpf.hess(u, self.p) / self.p

    def residual(self, u, g=None):
        g = self.grad(u) if g is None else g
        d = cho_solve(self.forms.chol(), g)
        den = float(u @ self.A @ u)
        return math.sqrt(max(float(g @ d), 0.0) / den) if den > 0 else math.inf, d


def eta(u, forms: FormMatrices) -> float:
    """Interaction ``eta = -1/2 (u+)^T A (u-)``, clamped at zero."""
    v = _interior(u, forms.N)
    up = np.maximum(v, 0.0)
    um = np.maximum(-v, 0.0)
    return max(0.0, -0.5 * float(up @ forms.stiffness @ um))


def _fpm(pt, lam):
    out = []
    for sgn in ("plus", "minus"):
        den = pt[f"gag_{sgn}"] - lam * pt[f"l2_{sgn}"]
        if pt[f"lcrit_{sgn}"] == 0.0:
            out.append(0.0)
        else:
            out.append((pt[f"lcrit_{sgn}"] - 2 * pt["eta"]) / den)
    return out


def energy(u, params: Params, forms: FormMatrices, c_N: float | None = None) -> EnergyReport:
    ctx = _Ctx(params, forms)
    ctx.check_lambda()
    v = _interior(u, forms.N)
    gag = float(v @ ctx.A @ v)
    l2 = float(ctx.m @ (v * v))
    lcrit = ctx.lpf(v, ctx.p)
    num = gag - params.lam * l2
    J = num / lcrit ** (2 / ctx.p) if lcrit > 0 else math.nan
    pt = ctx.parts(v)
    fp, fm = _fpm(pt, params.lam)
    I = 0.5 * num - lcrit / ctx.p
    return EnergyReport(energy=I, quotient=J, gagliardo=gag, l2=l2, lcrit=lcrit,
                        eta=pt["eta"], f_plus=fp, f_minus=fm, c_N_ref=c_N, c_M=I,
                        lam=params.lam, parts=pt)


def nehari_project(u, params: Params, forms: FormMatrices):
    """Scale ``u`` onto the Nehari set; returns ``(t, t u)``."""
    ctx = _Ctx(params, forms)
    v = _interior(u, forms.N)
    num = float(v @ ctx.A @ v) - params.lam * float(ctx.m @ (v * v))
    den = ctx.lpf(v, ctx.p)
    if num <= 0 or den <= 0:
        raise ProjectionError("Nehari projection needs ||u||^2 - lam |u|_2^2 > 0 and u != 0")
    t = (num / den) ** (1.0 / (ctx.p - 2))
    return t, RadialFn(forms.grid, t * v)


def _solve_ab(pt, lam, p, x0, y0, max_iter=100, tol=1e-14):
    Bp = pt["gag_plus"] - lam * pt["l2_plus"]
    Bm = pt["gag_minus"] - lam * pt["l2_minus"]
    Lp, Lm, e2 = pt["lcrit_plus"], pt["lcrit_minus"], 2 * pt["eta"]
    q = p - 2

    def G(x, y):
        return np.array([(math.exp(q * x) * Lp - e2 * math.exp(y - x)) / Bp - 1.0,
                         (math.exp(q * y) * Lm - e2 * math.exp(x - y)) / Bm - 1.0])

    x, y = x0, y0
    g = G(x, y)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return x, y, g
        ex, ey = math.exp(q * x) * Lp, math.exp(q * y) * Lm
        cxy, cyx = e2 * math.exp(y - x), e2 * math.exp(x - y)
        J = np.array([[(q * ex + cxy) / Bp, -cxy / Bp],
                      [-cyx / Bm, (q * ey + cyx) / Bm]])
        step = np.linalg.solve(J, -g)
        t = 1.0
        n0 = np.max(np.abs(g))
        while t > 1e-10:
            xn, yn = x + t * step[0], y + t * step[1]
            try:
                gn = G(xn, yn)
            except OverflowError:
                gn = np.array([np.inf, np.inf])
            if np.max(np.abs(gn)) < (1 - 1e-4 * t) * n0 or np.max(np.abs(gn)) < tol:
                break
            t *= 0.5
        else:
            return x, y, g
        x, y, g = xn, yn, gn
    return x, y, g


def nodal_nehari_project(u, params: Params, forms: FormMatrices, rng=None,
                         restarts: int = 20, tol: float = 1e-13):
    """Find ``alpha, beta > 0`` with ``alpha u+ - beta u-`` on the nodal Nehari set."""
    ctx = _Ctx(params, forms)
    v = _interior(u, forms.N)
    pt = ctx.parts(v)
    if pt["lcrit_plus"] == 0.0 or pt["lcrit_minus"] == 0.0:
        raise DomainError("nodal projection needs a sign-changing function")
    Bp = pt["gag_plus"] - params.lam * pt["l2_plus"]
    Bm = pt["gag_minus"] - params.lam * pt["l2_minus"]
    if Bp <= 0 or Bm <= 0:
        raise ProjectionError("||u+-||^2 - lam |u+-|^2 must be positive (lambda < lambda_1)")
    q = ctx.p - 2
    x0 = math.log(Bp / pt["lcrit_plus"]) / q
    y0 = math.log(Bm / pt["lcrit_minus"]) / q
    rng = rng or np.random.default_rng(0)
    best = None
    for attempt in range(restarts + 1):
        if attempt == 0:
            xs, ys = x0, y0
        else:
            xs, ys = x0 + rng.normal(0, 1.0), y0 + rng.normal(0, 1.0)
        x, y, g = _solve_ab(pt, params.lam, ctx.p, xs, ys, tol=tol)
        res = float(np.max(np.abs(g)))
        if best is None or res < best[2]:
            best = (x, y, res)
        if res < tol * 10:
            break
    x, y, res = best
    if not res < 1e-12:
        raise ProjectionError(f"nodal Nehari system not solved (residual {res:.3g})")
    a, b = math.exp(x), math.exp(y)
    w = a * np.maximum(v, 0.0) - b * np.maximum(-v, 0.0)
    return a, b, RadialFn(forms.grid, w)


def residual_norm(u, params: Params, forms: FormMatrices) -> float:
    """``||A^{-1} I'(u)||_s / ||u||_s``."""
    return _Ctx(params, forms).residual(_interior(u, forms.N))[0]


def strauss_ratio(u, params: Params, forms: FormMatrices) -> float:
    """``sup r^{(n-2s)/2} |u| / (K_{n,s} ||u||_s^2)`` (needs s > 1/2)."""
    v = _interior(u, forms.N)
    r = forms.grid.nodes[:-1]
    lhs = float(np.max(r ** ((params.n - 2 * params.s) / 2) * np.abs(v)))
    return lhs / (k_strauss(params.n, params.s) * float(v @ forms.stiffness @ v))


def sign_changes(u, zero_tol: float = 1e-10, radii=None):
    """Count sign changes of nodal values; returns ``(count, node_radii)``."""
    if isinstance(u, RadialFn):
        vals = np.asarray(u.values)
        radii = u.grid.nodes
    else:
        vals = np.asarray(u, dtype=float)
        radii = np.arange(len(vals), dtype=float) if radii is None else np.asarray(radii)
    if vals.size == 0:
        return 0, []
    top = np.max(np.abs(vals))
    if top == 0:
        return 0, []
    keep = np.flatnonzero(np.abs(vals) > zero_tol * top)
    nodes = []
    for i, j in zip(keep[:-1], keep[1:]):
        if vals[i] * vals[j] < 0:
            ri, rj = radii[i], radii[j]
            nodes.append(float(ri + vals[i] / (vals[i] - vals[j]) * (rj - ri)))
    return len(nodes), nodes


def _profile(r, mu, R, n, s):
    e = (n - 2 * s) / 2
    return (1 + (r / mu) ** 2) ** (-e) - (1 + (R / mu) ** 2) ** (-e)


def make_initial(kind: str, params: Params, grid: RadialGrid, forms: FormMatrices | None = None,
                 mu_narrow: float = 0.05, mu_wide: float = 0.5, depth: float = 0.5) -> RadialFn:
    """Starting profiles; projected onto their constraint sets when ``forms`` is given.

    ``tower``: narrow truncated bubble minus ``depth`` times a wide one (both
    normalised to one at the origin); ``oscillatory``: ``cos(3 pi r / 2R)``
    which has one sign change and vanishes at ``R``; ``single_bubble``: a
    truncated bubble of scale ``mu_wide``.  Scales are fractions of ``R``.
    """
    r = grid.nodes
    R, n, s = params.R, params.n, params.s
    if kind == "tower":
        a = _profile(r, mu_narrow * R, R, n, s)
        b = _profile(r, mu_wide * R, R, n, s)
        v = a / a[0] - depth * b / b[0]
    elif kind == "oscillatory":
        v = np.cos(1.5 * np.pi * r / R)
    elif kind == "single_bubble":
        v = _profile(r, mu_wide * R, R, n, s)
    else:
        raise DomainError(f"unknown initial kind {kind!r}")
    v[-1] = 0.0
    u = RadialFn(grid, v)
    if forms is None:
        return u
    if kind == "single_bubble":
        return nehari_project(u, params, forms)[1]
    return nodal_nehari_project(u, params, forms)[2]


def sobolev_lambda(params: Params, forms: FormMatrices, init=None, gtol: float = 1e-12) -> float:
    """Discrete ``S_{s,lambda} = min J`` by L-BFGS in Cholesky-whitened variables."""
    ctx = _Ctx(params, forms)
    ctx.check_lambda()
    L = forms.chol()[0]
    L = np.tril(L)
    if init is None:
        r = forms.grid.nodes[:-1]
        init = np.cos(0.5 * np.pi * r / params.R)
    u0 = _interior(init, forms.N)
    z0 = L.T @ u0
    p = ctx.p

    def fun(z):
        u = solve_triangular(L.T, z, lower=False, check_finite=False)
        num = float(z @ z) - ctx.lam * float(ctx.m @ (u * u))
        Lp = ctx.lpf(u, p)
        J = num / Lp ** (2 / p)
        gu = (-2 * ctx.lam * ctx.m * u) / Lp ** (2 / p) \
            - num * (2 / p) * Lp ** (-2 / p - 1) * ctx.lpf.grad(u, p)
        gz = 2 * z / Lp ** (2 / p) + solve_triangular(L, gu, lower=True, check_finite=False)
        return J, gz

    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B",
                            options=dict(maxiter=20000, gtol=gtol, ftol=1e-15, maxcor=30))
    return float(res.fun)


def _descent(ctx: _Ctx, u, project, opts: SolverOptions, rng, one_sign: bool):
    """Preconditioned projected descent followed by a Newton polish."""
    I = ctx.energy(u)
    hist = [I]
    tau = 1.0
    res, d = ctx.residual(u)
    it = 0
    strauss = []
    next_polish = opts.polish_below
    while it < opts.max_iters and res > opts.tol:
        it += 1
        g = ctx.grad(u)
        res, d = ctx.residual(u, g)
        if res <= opts.tol:
            break
        if res < next_polish:
            un = _newton(ctx, u, opts)
            next_polish = 0.1 * res  # retry only after real progress
            if un is not None:
                In = ctx.energy(un)
                same_sign = (sign_changes(un, opts.zero_tol)[0] == sign_changes(u, opts.zero_tol)[0])
                if same_sign and In <= I + 1e-9 * abs(I):
                    u = project(un)
                    I = ctx.energy(u)
                    hist.append(I)
                    res, d = ctx.residual(u)
                    continue
                log.info("Newton polish rejected (energy %.6g -> %.6g)", I, In)
        slope = float(g @ d)
        accepted = False
        while tau > 1e-12:
            try:
                ut = project(u - tau * d)
            except (ProjectionError, DomainError):
                tau *= 0.5
                continue
            It = ctx.energy(ut)
            if It <= I - opts.armijo * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            break
        if It > I + 1e-13 * abs(I):
            raise ConvergenceError("energy increased along an accepted step")
        u, I = ut, It
        hist.append(I)
        if ctx.params.s > 0.5 and ctx.params.n >= 2:
            strauss.append(float(np.max(ctx.forms.grid.nodes[:-1] ** ((ctx.params.n - 2 * ctx.params.s) / 2)
                                        * np.abs(u))) / (k_strauss(ctx.params.n, ctx.params.s)
                                                         * float(u @ ctx.A @ u)))
        tau = min(2.0 * tau, 4.0)
    res, _ = ctx.residual(u)
    return u, I, res, it, hist, strauss


def _newton(ctx: _Ctx, u, opts: SolverOptions, max_iter: int = 30):
    v = u.copy()
    res, _ = ctx.residual(v)
    for _ in range(max_iter):
        if res < opts.newton_tol:
            return v
        g = ctx.grad(v)
        try:
            with warnings.catch_warnings():
                # the bubble core makes H badly scaled; the residual test decides
                warnings.simplefilter("ignore", LinAlgWarning)
                step = solve(ctx.hess(v), -g, assume_a="sym")
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while t > 1e-6:
            vn = v + t * step
            rn, _ = ctx.residual(vn)
            if rn < res:
                break
            t *= 0.5
        else:
            return v if res < opts.tol else None
        v, res = vn, rn
    return v if res < opts.tol else None


def _finish(ctx, u, I, res, it, hist, strauss, opts, c_N, warnings, one_sign):
    params, forms = ctx.params, ctx.forms
    U = RadialFn(forms.grid, u)
    rep = energy(U, params, forms, c_N)
    count, nodes = sign_changes(U, opts.zero_tol)
    sol = NodalSolution(U, rep, nodes, res, it, res <= opts.tol, hist, warnings,
                        dict(strauss_max=max(strauss) if strauss else None,
                             monotone=bool(np.all(np.diff(hist) <= 1e-12 * abs(hist[0]))),
                             origin_value=float(U.values[0])))
    return sol


def positive_level(params: Params, forms: FormMatrices, opts: SolverOptions | None = None) -> float:
    """``c_N = (s/n) S_{s,lambda}^{n/2s}`` with the discrete ``S_{s,lambda}``; cached on ``forms``."""
    cache = forms.__dict__.setdefault("_cN", {})
    key = float(params.lam)
    if key not in cache:
        S = sobolev_lambda(params, forms)
        cache[key] = params.s / params.n * S ** (params.n / (2 * params.s))
    return cache[key]


def minimize_positive(params: Params, forms: FormMatrices, init: RadialFn | None = None,
                      opts: SolverOptions | None = None) -> NodalSolution:
    """Least-energy positive solution by descent on the Nehari set."""
    opts = opts or SolverOptions()
    ctx = _Ctx(params, forms)
    ctx.check_lambda()
    if init is None:
        init = make_initial("single_bubble", params, forms.grid)
    u0 = _interior(init, forms.N)
    if not np.any(u0):
        raise DomainError("zero initial guess")
    u0 = np.abs(u0)

    def project(v):
        return _interior(nehari_project(v, params, forms)[1], forms.N)

    u = project(u0)
    rng = np.random.default_rng(opts.seed)
    u, I, res, it, hist, strauss = _descent(ctx, u, project, opts, rng, True)
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    return _finish(ctx, u, I, res, it, hist, strauss, opts, None, [], True)


def minimize(params: Params, forms: FormMatrices, init: RadialFn, opts: SolverOptions | None = None,
             c_N: float | None = None) -> NodalSolution:
    """Minimise the energy on the nodal Nehari set starting from ``init``."""
    opts = opts or SolverOptions()
    params.require_solver()
    ctx = _Ctx(params, forms)
    ctx.check_lambda()
    if params.lam <= 0:
        raise DomainError("lambda must lie in (0, lambda_1)")
    u0 = _interior(init, forms.N)
    if not np.any(u0):
        raise DomainError("zero initial guess")
    rng = np.random.default_rng(opts.seed)
    rngp = np.random.default_rng(opts.seed + 1)

    def project(v):
        return _interior(nodal_nehari_project(v, params, forms, rng=rngp)[2], forms.N)

    warnings = []
    start = u0
    for attempt in range(opts.max_restarts + 1):
        try:
            u = project(start)
            u, I, res, it, hist, strauss = _descent(ctx, u, project, opts, rng, False)
        except DomainError:
            u = None
        if u is not None and sign_changes(u, opts.zero_tol)[0] > 0:
            break
        warnings.append(f"iterate collapsed to one sign; restart {attempt + 1}")
        log.warning(warnings[-1])
        start = (_interior(make_initial("tower", params, forms.grid), forms.N)
                 * (1 + 0.1 * rng.standard_normal(forms.N)))
    else:
        raise ConvergenceError("iterates kept collapsing to one sign after restarts")
    if c_N is None and opts.check_window:
        c_N = positive_level(params, forms)
    sol = _finish(ctx, u, I, res, it, hist, strauss, opts, c_N, warnings, False)
    if c_N is not None:
        top = c_N + params.s / params.n * sobolev_constant(params.n, params.s) ** (params.n / (2 * params.s))
        sol.diagnostics["window"] = (2 * c_N, top)
        if not 2 * c_N < sol.report.energy < top:
            msg = f"energy {sol.report.energy:.8g} outside ({2 * c_N:.8g}, {top:.8g})"
            sol.warnings.append(msg)
            log.warning(msg)
    if not sol.converged:
        log.warning("nodal minimisation stopped at residual %.3g after %d steps", res, it)
    return sol


def multistart(params: Params, forms: FormMatrices, kinds=("tower", "oscillatory", "tower-wide"),
               opts: SolverOptions | None = None):
    """Run several starts; returns ``(best, all_solutions)`` keyed by lowest energy."""
    sols = []
    for kind in kinds:
        if kind == "tower-wide":
            init = make_initial("tower", params, forms.grid, mu_narrow=0.15, mu_wide=0.8)
        else:
            init = make_initial(kind, params, forms.grid)
        try:
            sols.append(minimize(params, forms, init, opts))
        except (ConvergenceError, ProjectionError) as exc:
            log.warning("start %s failed: %s", kind, exc)
    if not sols:
        raise ConvergenceError("every start failed")
    ok = [s for s in sols if s.converged] or sols
    return min(ok, key=lambda s: s.report.energy), sols


def write_solution_csv(sol: NodalSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["r", "u"])
        for r, v in zip(sol.u.grid.nodes, sol.u.values):
            wr.writerow([repr(float(r)), repr(float(v))])


def write_report_json(sol: NodalSolution, path, extra: dict | None = None) -> None:
    d = dict(sol.report.as_dict())
    d.update(nodes=sol.nodes, sign_count=sol.sign_count, residual_norm=sol.residual_norm,
             iterations=sol.iterations, converged=sol.converged, warnings=sol.warnings,
             diagnostics={k: v for k, v in sol.diagnostics.items()})
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
