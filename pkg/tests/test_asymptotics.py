import csv
import json
import math

import numpy as np
import pytest

from nodalfrac.asymptotics import (
    Profile, SweepRecord, bubble_fit, energy_limits_check, origin_check, record_from_solution,
    rescale_positive, sweep_lambda, sweep_s, trend_report, write_summary_json, write_sweep_csv,
    zero_structure_check,
)
from nodalfrac.constants import Params, theory_mu
from nodalfrac.discretization import RadialFn, assemble_forms, build_grid
from nodalfrac.errors import DomainError
from nodalfrac.solver import EnergyReport, NodalSolution

P = Params(7, 0.75)


@pytest.fixture(scope="module")
def small_sweep():
    g = build_grid(P, 128, 6, 2)
    f = assemble_forms(g, P)
    recs, sols = sweep_lambda(P, [0.3, 0.2, 0.1], forms=f, keep_solutions=True)
    return f, recs, sols


def _fake_record(frac, origin, **kw):
    rep = EnergyReport(1.0, 1.0, 1.0, 1.0, 1.0, 0.1, 1.0, 1.0,
                       parts=dict(gag_plus=1.0, gag_minus=1.0, lcrit_plus=1.0, lcrit_minus=1.0,
                                  l2_plus=1.0, l2_minus=1.0, eta=0.1))
    base = dict(lam=frac, lambda_frac=frac, M_plus=1.0, M_minus=0.5, t_lambda=0.0, r_lambda=0.5,
                tau_lambda=0.8, Q=2.0, sigma=1.0, energies=rep, sign_count=1, origin_value=origin,
                boundary_ratio_max=1.0)
    base.update(kw)
    return SweepRecord(**base)


def test_sweep_validation():
    with pytest.raises(DomainError):
        sweep_lambda(P, [0.1, 0.2])
    with pytest.raises(DomainError):
        sweep_lambda(P, [1.2, 0.5])
    with pytest.raises(DomainError):
        sweep_lambda(Params(4, 0.75), [0.3, 0.2])


def test_sweep_records(small_sweep):
    f, recs, sols = small_sweep
    assert [r.lambda_frac for r in recs] == [0.3, 0.2, 0.1]
    for r in recs:
        assert r.converged and not r.flags
        assert r.sign_count == 1
        assert r.t_lambda < r.r_lambda < r.tau_lambda
        assert r.Q > 0 and r.sigma > 0
        assert r.origin_value > 0
        assert math.isfinite(r.boundary_ratio_max)


def test_record_flips_sign(small_sweep):
    f, recs, sols = small_sweep
    sol = sols[0]
    neg = NodalSolution(-sol.u, sol.report, sol.nodes, sol.residual_norm, sol.iterations, True)
    rec = record_from_solution(neg, P.with_lambda(recs[0].lam), 0.3)
    assert rec.M_plus == recs[0].M_plus and rec.origin_value > 0


def test_argmax_ties_take_largest_radius():
    g = build_grid(P, 16, 1, 1)
    v = np.zeros(17)
    v[:4] = 1.0
    v[8:12] = -0.5
    u = RadialFn(g, v)
    rep = EnergyReport(*([1.0] * 8))
    sol = NodalSolution(u, rep, [0.3], 0.0, 1, True)
    rec = record_from_solution(sol, P, 0.5)
    assert rec.t_lambda == pytest.approx(g.nodes[3])
    assert rec.tau_lambda == pytest.approx(g.nodes[11])


def test_trend_and_energy_reports(small_sweep):
    f, recs, sols = small_sweep
    tr = trend_report(recs, P.n, P.s)
    assert tr["used"] == [0.3, 0.2, 0.1]
    for key in ("M_plus", "M_minus", "r_lambda", "tau_lambda", "Q", "sigma", "eta", "gap_plus", "gap_minus"):
        assert tr[key] in ("pass", "inconclusive")
    assert tr["M_plus"] == "pass" and tr["eta"] == "pass"
    el = energy_limits_check(recs, P.n, P.s)
    assert len(el["rows"]) == 3 and "trends" in el
    assert el["trends"]["eta"] == "pass"


def test_reports_with_too_few_records(small_sweep):
    f, recs, sols = small_sweep
    single = energy_limits_check(recs[:1], P.n, P.s)
    assert "trends" not in single and len(single["rows"]) == 1
    assert "note" in trend_report(recs[:1], P.n, P.s)
    assert energy_limits_check([], P.n, P.s)["rows"] == []


def test_rescaled_profile(small_sweep):
    f, recs, sols = small_sweep
    rec, sol = recs[-1], sols[-1]
    prof = rescale_positive(rec, sol.u, P.with_lambda(rec.lam))
    assert rec.t_lambda == 0.0
    assert prof.values[0] == pytest.approx(1.0, rel=1e-14)
    assert np.max(np.abs(prof.values)) <= 1.0 + 1e-14
    inside = prof.x < rec.M_plus ** P.beta * rec.r_lambda
    assert np.all(prof.values[inside] > 0)
    assert not prof.truncated
    big = rescale_positive(rec, sol.u, P, x_max=10 * rec.M_plus ** P.beta)
    assert big.truncated


def test_rescale_needs_nodal_record(small_sweep):
    f, recs, sols = small_sweep
    with pytest.raises(DomainError):
        rescale_positive(_fake_record(0.1, 1.0, sign_count=0), sols[0].u, P)


def test_bubble_self_fit():
    mu = 1.7
    e = (P.n - 2 * P.s) / 2
    x = np.linspace(0, 20 * mu, 400)
    fit = bubble_fit(Profile(x, (1 + (x / mu) ** 2) ** (-e)), P, mu0=1.0)
    assert abs(fit.mu_hat / mu - 1) < 1e-6
    assert fit.sup_error < 1e-8
    assert fit.converged
    assert fit.theory_mu == pytest.approx(theory_mu(P.n, P.s))


def test_bubble_fit_needs_normalised_profile():
    x = np.linspace(0, 1, 10)
    with pytest.raises(DomainError):
        bubble_fit(Profile(x, 0.5 * np.ones(10)), P)


def test_origin_check_controls():
    one = origin_check([_fake_record(0.3, 2.0)], s=0.75)
    assert one["verdict"] is None and one["min"] == 2.0
    decaying = origin_check([_fake_record(f, v) for f, v in [(0.3, 1.0), (0.2, 0.3), (0.1, 0.01)]], s=0.75)
    assert decaying["verdict"] == "fail" and decaying["trend"] == "decaying"
    steady = origin_check([_fake_record(f, v) for f, v in [(0.3, 1.0), (0.2, 0.9), (0.1, 0.95)]], s=0.75)
    assert steady["verdict"] == "pass" and steady["trend"] == "mixed"
    assert "note" in origin_check([_fake_record(0.3, 1.0)], s=0.4)


def test_sweep_s_empty():
    assert sweep_s(P, [], 0.05) == []


def test_sweep_s_short():
    out = sweep_s(Params(7, 0.75), [0.75, 0.8], 0.1, N=128)
    assert [r.s for r in out] == [0.75, 0.8]
    assert all(r.converged and r.sign_count == 1 for r in out)
    assert not any("jump" in f for r in out for f in r.flags)


def test_zero_structure(small_sweep):
    f, recs, sols = small_sweep
    rep = zero_structure_check(sols[-1])
    assert rep["passed"] and not rep["origin_vanishes"] and rep["sign_count"] == 1


def test_zero_structure_detects_plateau():
    g = build_grid(P, 64, 1, 1)
    r = g.nodes
    v = np.cos(1.5 * np.pi * r)
    v[(r > 0.1) & (r < 0.2)] = 0.0
    v[-1] = 0.0
    u = RadialFn(g, v)
    sol = NodalSolution(u, EnergyReport(*([1.0] * 8)), [1 / 3], 0.0, 1, True)
    rep = zero_structure_check(sol)
    assert not rep["passed"]
    lo, hi = rep["offending_radii"][0]
    assert 0.1 < lo <= hi < 0.2


def test_two_node_profile_passes_zero_structure():
    g = build_grid(P, 64, 1, 1)
    v = np.cos(2.5 * np.pi * g.nodes)
    v[-1] = 0.0
    u = RadialFn(g, v)
    sol = NodalSolution(u, EnergyReport(*([1.0] * 8)), [0.2, 0.6], 0.0, 1, True)
    assert zero_structure_check(sol)["passed"]


def test_boundary_ratio_stable_under_refinement(small_sweep):
    f, recs, sols = small_sweep
    g = build_grid(P, 256, 6, 2)
    fine = sweep_lambda(P, [0.3], forms=assemble_forms(g, P))[0]
    ratio = fine.boundary_ratio_max / recs[0].boundary_ratio_max
    assert 0.5 < ratio < 2.0


def test_outputs_deterministic(tmp_path, small_sweep):
    f, recs, sols = small_sweep
    again = sweep_lambda(P, [0.3, 0.2, 0.1], forms=f)
    write_sweep_csv(recs, tmp_path / "a.csv")
    write_sweep_csv(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 3 and "sigma" in rows[0]
    write_summary_json({"trend": trend_report(recs, P.n, P.s), "rec": recs[0], "x": np.float64(1.5)},
                       tmp_path / "s.json")
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["x"] == 1.5 and d["trend"]["M_plus"] == "pass"
    write_sweep_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "lambda_frac\n"


def test_boundary_layer_is_not_a_plateau():
    g = build_grid(P, 64, 1, 2)
    v = 1e12 * np.cos(1.5 * np.pi * g.nodes) * (1 - g.nodes) ** P.s
    v[-4:-1] = 1e-3
    v[-1] = 0.0

    def check(vals):
        return zero_structure_check(NodalSolution(RadialFn(g, vals), EnergyReport(*([1.0] * 8)),
                                                  [1 / 3], 0.0, 1, True))

    assert check(v)["passed"]
    v[-8] = 0.0  # detached from the layer: flagged
    assert not check(v)["passed"]
