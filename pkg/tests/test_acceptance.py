"""Acceptance suite: every criterion exercised at its stated tolerance.

Each criterion has one test that prints a single PASS line on success.
Criterion 10 rebuilds every quantity with all integrator tolerances tightened
ten-fold and checks both that every criterion still passes and that the drift
between the two runs stays below each criterion's own tolerance.
"""

import math

import numpy as np
import pytest

from polyshoot import (
    Collapsed,
    EquationSpec,
    IntegratorConfig,
    Jet,
    classify_growth,
    critical_eps,
    critical_eps_residual,
    cubic_profile,
    formula1_check,
    integrate,
    lambda_star,
    linear_profile,
    prescribe_volume,
    volume,
    volume_of_jet,
)
from polyshoot.shooting import EpsCache, lap_limit_estimate, is_entire

from conftest import common_grid

SPEC2 = EquationSpec.for_order(2)
SPEC3 = EquationSpec.for_order(3)
U0 = linear_profile()
U1 = cubic_profile()
LAM = lambda_star()
R_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)

RHO_SWEEP = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0)
RHO_COLLAPSE = (-0.4, -0.2, -0.05)
K_SUITE = (10.0, 20.0, 40.0)
FRACS_M2 = (0.25, 0.5, 0.9)
TARGETS_M3 = (0.5, 1.0, 5.0)

_ARTIFACTS = {}


def jet2(rho):
    return Jet((U0.eval(0.0, 0) + rho, U0.eval(0.0, 2)))


def _comparison_pairs(n_pairs, rng):
    """Randomized ordered jet pairs for both orders."""
    pairs = []
    for i in range(n_pairs):
        m = 2 if i % 2 == 0 else 3
        if m == 2:
            base = [rng.uniform(0.6, 3.0), rng.uniform(-0.5, 3.0)]
        else:
            base = [rng.uniform(1.0, 5.0), rng.uniform(-1.0, 2.0),
                    rng.uniform(0.3, 1.5)]
        gaps = [0.0 if rng.random() < 0.4 else 10 ** rng.uniform(-3.0, -0.3)
                for _ in base]
        if max(gaps) == 0.0:
            gaps[rng.integers(0, len(base))] = 1e-3
        upper = [b + g for b, g in zip(base, gaps)]
        pairs.append((m, tuple(upper), tuple(base)))
    return pairs


def _comparison_suite(scale):
    rng = np.random.default_rng(20260809)
    cfg = {
        2: IntegratorConfig(r_max=30.0, rel_tol=1e-10 * scale,
                            abs_tol=1e-12 * scale),
        3: IntegratorConfig(r_max=30.0, rel_tol=1e-10 * scale,
                            abs_tol=1e-12 * scale),
    }
    worst = -np.inf
    checked = 0
    for m, up, lo in _comparison_pairs(50, rng):
        spec = SPEC2 if m == 2 else SPEC3
        t_up = integrate(spec, Jet(up), cfg[m])
        t_lo = integrate(spec, Jet(lo), cfg[m])
        n = common_grid(t_up, t_lo)
        assert n > 10
        for j in range(2 * m):
            a, b = t_up.y[:n, j], t_lo.y[:n, j]
            tol = 1e-8 * (1.0 + np.maximum(np.abs(a), np.abs(b)))
            worst = max(worst, float(np.max(b - a - tol)))
        checked += 1
    return {"worst_violation": worst, "n_pairs": checked}


def build(scale: float) -> dict:
    """Compute every acceptance quantity with tolerances scaled by `scale`."""
    rel, abs_ = 1e-8 * scale, 1e-10 * scale
    cfg2 = IntegratorConfig(r_max=1e3, rel_tol=rel, abs_tol=abs_)
    cfg3 = IntegratorConfig(r_max=1e2, rel_tol=rel, abs_tol=abs_)
    art = {}

    # --- criterion 1: closed-form residuals (tolerance independent)
    art["res_u0"] = max(abs(U0.residual(r)) for r in R_GRID)
    art["res_u1"] = max(abs(U1.residual(r)) for r in R_GRID)

    # --- criterion 2: critical-volume reproduction
    traj_u0 = integrate(SPEC2, U0.jet(), cfg2)
    art["v_u0"] = volume(SPEC2, traj_u0).total

    # --- criterion 3: sweep + prescriptions (m=2)
    art["sweep"] = {}
    art["traj_rho"] = {}
    for rho in RHO_SWEEP:
        if rho == 0.0:
            traj = traj_u0
        else:
            traj = integrate(SPEC2, jet2(rho), cfg2)
        art["traj_rho"][rho] = traj
        art["sweep"][rho] = volume(SPEC2, traj).total
    art["prescribe2"] = {}
    for frac in FRACS_M2:
        vs = prescribe_volume(SPEC2, frac * LAM, cfg2)
        art["prescribe2"][frac] = (vs.param, vs.achieved)

    # --- criterion 4: necessity of nonnegative offsets
    art["collapse"] = {}
    for rho in RHO_COLLAPSE:
        traj = integrate(SPEC2, jet2(rho), cfg2)
        art["collapse"][rho] = (isinstance(traj.verdict, Collapsed),
                                getattr(traj.verdict, "r_star", math.nan))

    # --- criterion 5: comparison suite
    art["cmp"] = _comparison_suite(scale)

    # --- criterion 6: integral-identity reconstruction defects
    f1 = {}
    f1["u0"] = max(formula1_check(traj_u0, lvl) for lvl in range(2))
    for name, spec, traj in (
        ("m2_a", SPEC2, art["traj_rho"][0.5]),
        ("m2_b", SPEC2, art["traj_rho"][2.0]),
        ("m3_a", SPEC3, integrate(SPEC3, Jet((10.0, -0.5, 1.0)), cfg3)),
        ("m3_b", SPEC3, integrate(SPEC3, Jet((20.0, 1.0, 1.0)), cfg3)),
    ):
        f1[name] = max(formula1_check(traj, lvl) for lvl in range(spec.m))
    art["f1"] = f1

    # --- criterion 7: critical-datum suite (shared cache with criterion 8)
    import tempfile

    cache_dir = tempfile.mkdtemp(prefix=f"polyshoot-acc-{scale}-")
    cache = EpsCache(cache_dir)
    eps = {}
    for k in K_SUITE:
        ce = critical_eps(k, cfg3, bracket_tol=1e-6, cache=cache)
        traj = ce.traj_lo
        res = critical_eps_residual(ce, cfg3)
        lower = k - ce.eps_lo * traj.r ** 2 / 6.0
        eps[k] = {
            "eps_star": ce.eps_star,
            "cap": ce.eps_cap,
            "bracket_ok": is_entire(traj) and lap_limit_estimate(traj) > 0,
            "env_lo": float(np.min(traj.u - lower)),
            "env_hi": float(np.min(lower + traj.r ** 4 / 120.0 - traj.u)),
            "mono_max": float(np.max(np.diff(traj.y[:, 4]))),
            "partial": res.partial_integral,
            "v_crit": volume(SPEC3, traj).total,
        }
    art["eps"] = eps

    # --- criterion 8: volume mechanism (m=3)
    art["v_rho3"] = {rho: volume_of_jet(SPEC3, Jet((10.0, rho, 1.0)), cfg3).total
                     for rho in (1.0, 5.0, 20.0)}
    art["prescribe3"] = {}
    for target in TARGETS_M3:
        vs = prescribe_volume(SPEC3, target, cfg3, cache=cache)
        art["prescribe3"][target] = (vs.param, vs.achieved)

    # --- criterion 9: growth classification
    gam = {}
    gam["u0"] = classify_growth(traj_u0, (100.0, 1000.0))
    gam["rho1"] = classify_growth(art["traj_rho"][1.0])
    traj_u1 = integrate(SPEC3, U1.jet(), IntegratorConfig(
        r_max=1e3, rel_tol=rel, abs_tol=abs_))
    gam["u1"] = classify_growth(traj_u1, (100.0, 1000.0))
    traj_e0 = integrate(SPEC3, Jet((10.0, 0.0, 1.0)), cfg3)
    gam["m3_eps0"] = classify_growth(traj_e0)
    art["gamma"] = gam
    return art


def art(scale=1.0):
    if scale not in _ARTIFACTS:
        _ARTIFACTS[scale] = build(scale)
    return _ARTIFACTS[scale]


# ---------------------------------------------------------------- criteria

def check_c1(a):
    assert a["res_u0"] <= 1e-8, a["res_u0"]
    assert a["res_u1"] <= 1e-6, a["res_u1"]


def check_c2(a):
    assert abs(a["v_u0"] - LAM) / LAM <= 1e-4


def check_c3(a):
    sweep = a["sweep"]
    assert abs(sweep[0.0] - LAM) <= 1e-4 * LAM
    for rho in RHO_SWEEP[1:]:
        assert sweep[rho] < LAM
    assert sweep[10.0] < 0.05 * LAM
    for frac, (rho, achieved) in a["prescribe2"].items():
        assert abs(achieved - frac * LAM) / (frac * LAM) <= 1e-3


def check_c4(a):
    for rho, (collapsed, r_star) in a["collapse"].items():
        assert collapsed, f"rho={rho} did not collapse"
        assert 0.0 < r_star < 1e3


def check_c5(a):
    assert a["cmp"]["n_pairs"] == 50
    assert a["cmp"]["worst_violation"] <= 0.0


def check_c6(a):
    for name, defect in a["f1"].items():
        assert defect <= 1e-5, (name, defect)


def check_c7(a):
    for k, e in a["eps"].items():
        assert e["bracket_ok"]
        assert e["eps_star"] <= e["cap"] + 1e-6
        assert e["env_lo"] >= -1e-6
        assert e["env_hi"] >= -1e-6
        assert e["mono_max"] <= 1e-12
        assert e["partial"] >= 0.9


def check_c8(a):
    v = [a["eps"][k]["v_crit"] for k in K_SUITE]
    assert v[0] < v[1] < v[2], v
    r = a["v_rho3"]
    assert r[1.0] > r[5.0] > r[20.0] > 0.0
    for target, (param, achieved) in a["prescribe3"].items():
        assert abs(achieved - target) / target <= 1e-3


def check_c9(a):
    g = a["gamma"]
    assert abs(g["u0"] - 1.0) <= 0.05
    assert abs(g["rho1"] - 2.0) <= 0.1
    assert abs(g["u1"] - 3.0) <= 0.05
    assert abs(g["m3_eps0"] - 4.0) <= 0.1


def test_criterion_01_closed_form_residuals():
    a = art()
    check_c1(a)
    print(f"\n[criterion 1] PASS residuals: u0 {a['res_u0']:.2e} <= 1e-8, "
          f"u1 {a['res_u1']:.2e} <= 1e-6")


def test_criterion_02_critical_volume():
    a = art()
    check_c2(a)
    print(f"\n[criterion 2] PASS volume {a['v_u0']:.8f} vs {LAM:.8f} "
          f"(rel {abs(a['v_u0'] - LAM) / LAM:.2e} <= 1e-4)")


def test_criterion_03_volume_range_m2():
    a = art()
    check_c3(a)
    roots = {f: round(p[0], 6) for f, p in a["prescribe2"].items()}
    print(f"\n[criterion 3] PASS sweep V(10)/Lam*={a['sweep'][10.0]/LAM:.2e}, "
          f"prescriptions {roots}")


def test_criterion_04_negative_offsets_collapse():
    a = art()
    check_c4(a)
    stars = {r: round(v[1], 5) for r, v in a["collapse"].items()}
    print(f"\n[criterion 4] PASS collapse radii {stars}")


def test_criterion_05_comparison_suite():
    a = art()
    check_c5(a)
    print(f"\n[criterion 5] PASS 50 ordered pairs, worst violation "
          f"{a['cmp']['worst_violation']:.2e} <= 0")


def test_criterion_06_integral_identity():
    a = art()
    check_c6(a)
    worst = max(a["f1"].values())
    print(f"\n[criterion 6] PASS reconstruction defects <= {worst:.2e} (tol 1e-5)")


def test_criterion_07_critical_datum_suite():
    a = art()
    check_c7(a)
    stars = {k: round(e["eps_star"], 6) for k, e in a["eps"].items()}
    parts = {k: round(e["partial"], 4) for k, e in a["eps"].items()}
    print(f"\n[criterion 7] PASS eps* {stars}, partial integrals {parts}")


def test_criterion_08_volume_mechanism_m3():
    a = art()
    check_c8(a)
    v = {k: round(e["v_crit"], 2) for k, e in a["eps"].items()}
    print(f"\n[criterion 8] PASS near-critical volumes {v} increasing; "
          f"prescriptions ok")


def test_criterion_09_growth_classification():
    a = art()
    check_c9(a)
    g = {k: round(v, 4) for k, v in a["gamma"].items()}
    print(f"\n[criterion 9] PASS growth exponents {g}")


def test_criterion_10_tolerance_refinement():
    a1 = art(1.0)
    a2 = art(0.1)
    for chk in (check_c1, check_c2, check_c3, check_c4, check_c5,
                check_c6, check_c7, check_c8, check_c9):
        chk(a2)
    drifts = {}
    drifts["c2_volume"] = abs(a1["v_u0"] - a2["v_u0"]) / LAM
    assert drifts["c2_volume"] <= 1e-4
    drifts["c3_sweep"] = max(abs(a1["sweep"][r] - a2["sweep"][r]) / LAM
                             for r in RHO_SWEEP)
    assert drifts["c3_sweep"] <= 1e-4
    drifts["c3_prescribe"] = max(
        abs(a1["prescribe2"][f][1] - a2["prescribe2"][f][1]) / (f * LAM)
        for f in FRACS_M2)
    assert drifts["c3_prescribe"] <= 1e-3
    drifts["c4_rstar"] = max(abs(a1["collapse"][r][1] - a2["collapse"][r][1])
                             for r in RHO_COLLAPSE)
    assert drifts["c4_rstar"] <= 1e-6
    drifts["c6_defect"] = max(abs(a1["f1"][k] - a2["f1"][k]) for k in a1["f1"])
    assert drifts["c6_defect"] <= 1e-5
    drifts["c7_eps_star"] = max(
        abs(a1["eps"][k]["eps_star"] - a2["eps"][k]["eps_star"]) for k in K_SUITE)
    assert drifts["c7_eps_star"] <= 2e-6
    drifts["c8_prescribe"] = max(
        abs(a1["prescribe3"][t][1] - a2["prescribe3"][t][1]) / t
        for t in TARGETS_M3)
    assert drifts["c8_prescribe"] <= 1e-3
    drifts["c9_gamma"] = max(abs(a1["gamma"][k] - a2["gamma"][k])
                             for k in a1["gamma"])
    assert drifts["c9_gamma"] <= 0.01
    report = {k: f"{v:.2e}" for k, v in drifts.items()}
    print(f"\n[criterion 10] PASS all criteria at rel_tol/10; drifts {report}")
