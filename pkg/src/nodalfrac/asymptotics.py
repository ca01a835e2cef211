"""Parameter sweeps and the observables used to follow concentration as lambda -> 0.

A nodal solution is normalised so that ``u(0) >= 0``; the positive part then
sits at the origin and the negative part around it.  For each solve we keep

* ``M_plus``, ``M_minus``: sup norms of the two parts,
* ``t_lambda`` / ``tau_lambda``: last radius where ``u = M_plus`` / ``u = -M_minus``,
* ``r_lambda``: the first node,
* ``Q = M_plus / M_minus`` and ``sigma = M_plus^beta r_lambda`` with ``beta = 2/(n - 2s)``.

Trend checks are strict monotonicity tests.  The limits behind them only hold
along subsequences, so a failed trend is reported as inconclusive.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.interpolate import PchipInterpolator

from .constants import Params, sobolev_constant, theory_mu
from .discretization import RadialFn, assemble_forms, build_grid, first_eigenvalue
from .errors import ConvergenceError, DomainError, ProjectionError
from .solver import (EnergyReport, NodalSolution, SolverOptions, make_initial, minimize,
                     positive_level)

log = logging.getLogger(__name__)

__all__ = [
    "SweepRecord", "BubbleFit", "Profile", "SRecord", "record_from_solution", "sweep_lambda",
    "trend_report", "energy_limits_check", "rescale_positive", "bubble_fit", "origin_check",
    "sweep_s", "zero_structure_check", "write_sweep_csv", "write_summary_json",
]

PASS, INCONCLUSIVE, SKIPPED = "pass", "inconclusive", "skipped"


@dataclass
class SweepRecord:
    lam: float
    lambda_frac: float
    M_plus: float
    M_minus: float
    t_lambda: float
    r_lambda: float
    tau_lambda: float
    Q: float
    sigma: float
    energies: EnergyReport
    sign_count: int
    origin_value: float
    boundary_ratio_max: float
    converged: bool = True
    nodes: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def row(self) -> dict:
        e = self.energies
        return dict(
            lambda_frac=self.lambda_frac, lam=self.lam, M_plus=self.M_plus, M_minus=self.M_minus,
            t_lambda=self.t_lambda, r_lambda=self.r_lambda, tau_lambda=self.tau_lambda,
            Q=self.Q, sigma=self.sigma, sign_count=self.sign_count,
            origin_value=self.origin_value, boundary_ratio_max=self.boundary_ratio_max,
            energy=e.energy, eta=e.eta, gagliardo_plus=e.parts.get("gag_plus"),
            gagliardo_minus=e.parts.get("gag_minus"), lcrit_plus=e.parts.get("lcrit_plus"),
            lcrit_minus=e.parts.get("lcrit_minus"), converged=self.converged,
            flags=";".join(self.flags),
        )


@dataclass(frozen=True)
class Profile:
    """Samples of a rescaled profile on ``[0, x_max]``; no boundary condition attached."""

    x: np.ndarray
    values: np.ndarray
    truncated: bool = False


@dataclass(frozen=True)
class BubbleFit:
    mu_hat: float
    sup_error: float
    theory_mu: float
    converged: bool = True

    @property
    def rel_mu_error(self) -> float:
        return abs(self.mu_hat / self.theory_mu - 1.0)


@dataclass
class SRecord:
    s: float
    sign_count: int
    report: EnergyReport
    converged: bool
    nodes: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def _last_index(mask) -> int:
    return int(np.flatnonzero(mask)[-1])


def record_from_solution(sol: NodalSolution, params: Params, lambda_frac: float,
                         boundary_band: float = 0.1) -> SweepRecord:
    """Extract the observables; the solution is flipped if needed so that ``u(0) >= 0``."""
    u = sol.u
    if u.values[0] < 0:
        u = -u
    r = u.grid.nodes
    v = u.values
    M_plus = float(max(v.max(), 0.0))
    M_minus = float(max(-v.min(), 0.0))
    flags = []
    t_l = float(r[_last_index(v == M_plus)]) if M_plus > 0 else math.nan
    tau = float(r[_last_index(v == -M_minus)]) if M_minus > 0 else math.nan
    nodes = [float(x) for x in sol.nodes]
    r_l = nodes[0] if nodes else math.nan
    Q = M_plus / M_minus if M_minus > 0 else math.inf
    sigma = M_plus ** params.beta * r_l if nodes else math.nan
    R = params.R
    band = (r < R) & (r >= (1 - boundary_band) * R)
    ratio = np.abs(v[band]) / (R - r[band]) ** params.s
    if not sol.converged:
        flags.append("not converged")
    if sol.sign_count == 1 and not t_l < r_l < tau:
        flags.append("ordering t < r < tau violated")
    return SweepRecord(
        lam=params.lam, lambda_frac=lambda_frac, M_plus=M_plus, M_minus=M_minus,
        t_lambda=t_l, r_lambda=r_l, tau_lambda=tau, Q=Q, sigma=sigma, energies=sol.report,
        sign_count=sol.sign_count, origin_value=float(v[0]),
        boundary_ratio_max=float(ratio.max()) if ratio.size else math.nan,
        converged=sol.converged, nodes=nodes, flags=flags,
    )


def sweep_lambda(params_base: Params, lambda_fracs, forms=None, opts: SolverOptions | None = None,
                 init: str | RadialFn = "tower", N: int = 256, gamma_inner: float = 6.0,
                 gamma_outer: float = 2.0, keep_solutions: bool = False):
    """Warm-started solves along a decreasing list of ``lambda / lambda_1``.

    Returns the records, or ``(records, solutions)`` with ``keep_solutions``.
    """
    fracs = [float(x) for x in lambda_fracs]
    if any(not 0 < f < 1 for f in fracs):
        raise DomainError("every lambda fraction must lie in (0, 1)")
    if any(b >= a for a, b in zip(fracs, fracs[1:])):
        raise DomainError("lambda fractions must be strictly decreasing")
    params_base.require_solver()
    if forms is None:
        grid = build_grid(params_base, N, gamma_inner, gamma_outer)
        forms = assemble_forms(grid, params_base)
    lam1 = first_eigenvalue(forms)
    records, sols = [], []
    start = init
    for frac in fracs:
        p = params_base.with_lambda(frac * lam1)
        if isinstance(start, str):
            start = make_initial(start, p, forms.grid)
        try:
            sol = minimize(p, forms, start, opts, c_N=positive_level(p, forms))
        except (ConvergenceError, ProjectionError) as exc:
            log.warning("lambda_frac %.4g failed: %s", frac, exc)
            continue
        rec = record_from_solution(sol, p, frac)
        records.append(rec)
        sols.append(sol)
        start = sol.u
    return (records, sols) if keep_solutions else records


def _strict(seq, increasing: bool) -> str:
    a = np.asarray(seq, dtype=float)
    if a.size < 2 or not np.all(np.isfinite(a)):
        return SKIPPED
    d = np.diff(a)
    ok = np.all(d > 0) if increasing else np.all(d < 0)
    return PASS if ok else INCONCLUSIVE


def trend_report(records, n: int, s: float) -> dict:
    """Monotone trends along a sweep ordered by decreasing lambda.

    Only records with exactly one sign change enter; others are skipped with a note.
    """
    one = [r for r in records if r.sign_count == 1]
    out = {"used": [r.lambda_frac for r in one],
           "skipped": [r.lambda_frac for r in records if r.sign_count != 1]}
    if len(one) < 2:
        out["note"] = "fewer than two one-node records; no trend verdict"
        return out
    level = sobolev_constant(n, s) ** (n / (2 * s))
    gp = [abs(r.energies.parts["gag_plus"] - level) for r in one]
    gm = [abs(r.energies.parts["gag_minus"] - level) for r in one]
    out.update(
        M_plus=_strict([r.M_plus for r in one], True),
        M_minus=_strict([r.M_minus for r in one], True),
        r_lambda=_strict([r.r_lambda for r in one], False),
        tau_lambda=_strict([r.tau_lambda for r in one], False),
        Q=_strict([r.Q for r in one], True),
        sigma=_strict([r.sigma for r in one], True),
        eta=_strict([r.energies.eta for r in one], False),
        gap_plus=_strict(gp, False),
        gap_minus=_strict(gm, False),
        gaps_plus=gp, gaps_minus=gm,
    )
    return out


def energy_limits_check(records, n: int, s: float) -> dict:
    """Gaps of the energy pieces to their limits, per record and as trends.

    Targets: ``||u+-||_s^2`` and ``|u+-|_p^p`` toward ``S^{n/2s}``,
    ``lam |u+-|_2^2`` toward 0, ``eta`` decreasing, and the energy toward
    ``2 (s/n) S^{n/2s}``.
    """
    S = sobolev_constant(n, s)
    level = S ** (n / (2 * s))
    rows = []
    for r in records:
        pt = r.energies.parts
        rows.append(dict(
            lambda_frac=r.lambda_frac,
            gag_plus=abs(pt["gag_plus"] - level), gag_minus=abs(pt["gag_minus"] - level),
            lcrit_plus=abs(pt["lcrit_plus"] - level), lcrit_minus=abs(pt["lcrit_minus"] - level),
            l2_plus=r.lam * pt["l2_plus"], l2_minus=r.lam * pt["l2_minus"],
            eta=pt["eta"], energy=abs(r.energies.energy - 2 * s / n * level),
        ))
    out = {"level": level, "rows": rows}
    if len(rows) < 3:
        out["note"] = "fewer than three records; no trend verdict"
        return out
    out["trends"] = {k: _strict([row[k] for row in rows], False)
                     for k in rows[0] if k != "lambda_frac"}
    return out


def rescale_positive(record: SweepRecord, u: RadialFn, params: Params, x_max: float | None = None,
                     points: int = 400) -> Profile:
    """``x -> u+(x / M^beta) / M`` on ``[0, x_max]`` (default ``20 theory_mu``).

    Nodal values are joined by a shape-preserving cubic (PCHIP); piecewise-linear
    joins would put an O(h^2) kink error on top of the profile, which grows as
    the bubble moves into coarser relative resolution.
    """
    if record.sign_count < 1 or not record.M_plus > 0:
        raise DomainError("rescaling needs a nodal record with a positive part")
    if u.values[0] < 0:
        u = -u
    if x_max is None:
        x_max = 20.0 * theory_mu(params.n, params.s)
    M = record.M_plus
    k = M ** params.beta
    x = np.linspace(0.0, x_max, points)
    r = np.minimum(x / k, params.R)
    f = PchipInterpolator(u.grid.nodes, u.values)
    vals = np.maximum(f(r), 0.0) / M
    return Profile(x, vals, bool(x_max > k * params.R))


def _bubble(x, mu, e):
    return (1.0 + (x / mu) ** 2) ** (-e)


def bubble_fit(profile: Profile, params: Params, mu0: float | None = None) -> BubbleFit:
    """Least-squares scale of ``(1 + |x/mu|^2)^{-(n-2s)/2}`` against ``profile``."""
    e = (params.n - 2 * params.s) / 2
    mu_t = theory_mu(params.n, params.s)
    x = np.asarray(profile.x, dtype=float)
    y = np.asarray(profile.values, dtype=float)
    if abs(np.max(y) - 1.0) > 1e-6:
        raise DomainError("profile must be normalised to a maximum of one")
    x0 = math.log(mu0 if mu0 else mu_t)
    res = optimize.least_squares(lambda z: _bubble(x, math.exp(z[0]), e) - y, [x0],
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=500)
    mu = math.exp(res.x[0])
    sup = float(np.max(np.abs(_bubble(x, mu, e) - y)))
    return BubbleFit(mu, sup, mu_t, bool(res.success))


def origin_check(records, s: float | None = None, factor: float = 0.5) -> dict:
    """Is ``|u(0)|`` bounded away from zero along the sweep?

    Passes when ``min |u(0)| > factor * max |u(0)|``.  A monotone decrease
    toward smaller lambda is reported as a decaying trend.
    """
    vals = [abs(r.origin_value) for r in records]
    out = {"values": vals, "min": min(vals) if vals else None, "max": max(vals) if vals else None}
    if s is not None and s <= 0.5:
        out["note"] = "non-vanishing at the origin is only claimed for s > 1/2"
    if len(vals) < 2:
        out["verdict"] = None
        return out
    out["passed"] = bool(min(vals) > factor * max(vals))
    d = np.diff(vals)
    if np.all(d < 0):
        out["trend"] = "decaying"
    elif np.all(d > 0):
        out["trend"] = "growing"
    else:
        out["trend"] = "mixed"
    out["verdict"] = PASS if out["passed"] else "fail"
    return out


def sweep_s(params_base: Params, s_list, lambda_frac: float, opts: SolverOptions | None = None,
            N: int = 256, gamma_inner: float = 6.0, gamma_outer: float = 2.0,
            init: str = "tower", jump: float = 0.10):
    """Warm-started continuation in ``s`` at a fixed ``lambda / lambda_{1,s}``."""
    out = []
    start = None
    prev = None
    for s in s_list:
        p0 = Params(params_base.n, float(s), params_base.R)
        p0.require_solver()
        grid = build_grid(p0, N, gamma_inner, gamma_outer)
        forms = assemble_forms(grid, p0)
        p = p0.with_lambda(lambda_frac * first_eigenvalue(forms))
        if start is None or not np.array_equal(start.grid.nodes, grid.nodes):
            start = make_initial(init, p, grid)
        flags = []
        try:
            sol = minimize(p, forms, start, opts, c_N=positive_level(p, forms))
        except (ConvergenceError, ProjectionError) as exc:
            log.warning("s = %.4g failed: %s", s, exc)
            out.append(SRecord(float(s), 0, None, False, [], [f"failed: {exc}"]))
            continue
        if not sol.converged:
            flags.append("not converged")
        if prev is not None and abs(sol.report.energy / prev - 1) > jump:
            flags.append("energy jump; possible branch switch")
        prev = sol.report.energy
        out.append(SRecord(float(s), sol.sign_count, sol.report, sol.converged, sol.nodes, flags))
        start = RadialFn(grid, sol.u.values)
    return out


def zero_structure_check(solution: NodalSolution, zero_tol: float = 1e-10) -> dict:
    """Small values of ``u`` in ``(0, R)`` must sit within one cell of a node.

    A run of small values reaching ``R`` is the Dirichlet boundary layer
    (``u ~ (R - r)^s`` on a mesh graded toward ``R``) and is ignored.
    """
    u = solution.u
    r = u.grid.nodes
    v = u.values
    sup = float(np.max(np.abs(v)))
    h = u.grid.h
    tiny = np.abs(v) <= zero_tol * sup
    end = len(v) - 1
    while end > 1 and tiny[end - 1]:
        end -= 1
    small = np.flatnonzero(tiny[1:end]) + 1
    nodes = np.asarray(solution.nodes, dtype=float)
    bad = []
    for i in small:
        reach = max(h[i - 1], h[i])
        if nodes.size == 0 or np.min(np.abs(nodes - r[i])) > reach:
            bad.append(int(i))
    plateaus = []
    for i in bad:
        if plateaus and plateaus[-1][1] == i - 1:
            plateaus[-1][1] = i
        else:
            plateaus.append([i, i])
    return {
        "passed": not bad,
        "origin_value": float(v[0]),
        "origin_vanishes": bool(abs(v[0]) <= zero_tol * sup),
        "sign_count": solution.sign_count,
        "offending_radii": [(float(r[a]), float(r[b])) for a, b in plateaus],
    }


def write_sweep_csv(records, path) -> None:
    if not records:
        with open(path, "w") as fh:
            fh.write("lambda_frac\n")
        return
    rows = [r.row() for r in records]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def write_summary_json(summary: dict, path) -> None:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, float)):
            o = float(o)
            return o if math.isfinite(o) else None
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, EnergyReport):
            return clean(o.as_dict())
        if hasattr(o, "__dataclass_fields__"):
            return clean(asdict(o))
        return o
    with open(path, "w") as fh:
        json.dump(clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
