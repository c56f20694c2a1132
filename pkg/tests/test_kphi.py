import json
import math
from fractions import Fraction

import numpy as np
import pytest

from macaevlab import kphi
from macaevlab.errors import CertificateError, DomainError, InvertedSandwich
from macaevlab.groups import FiniteFunction, FreeAbelian, FreeGroup, ball, difference, invert, parse_group_spec
from macaevlab.kphi import (
    AnalyticDualFamily,
    build_f2_witness,
    build_halfline_certificate,
    certificate_from_json,
    certificate_to_json,
    certify_lower,
    divergence_defects,
    k4_constant,
    minimize_upper,
    objective,
    sandwich,
    truncate_positive,
)
from macaevlab.norms import MACAEV, TRACE, NormingFunction, dual_plus_full_scan, gauge_norm, pairing

F2 = parse_group_spec("free:2")
Z = parse_group_spec("zd:1")


def exact_h(n):
    return float(sum(Fraction(1, k) for k in range(1, n + 1)))


def z_ramp(N):
    return FiniteFunction(FreeAbelian(1), {(x,): 1 - abs(x) / N for x in range(-N + 1, N)})


def random_feasible(rng, spec, R):
    b = ball(spec.symmetrized(), R, with_adjacency=False)
    vals = rng.uniform(-1, 1, len(b))
    vals[0] = 1.0
    return FiniteFunction(spec.group, dict(zip(b.elements, vals)))


# --- objective -------------------------------------------------------------


def test_objective_delta_free2():
    assert objective(FiniteFunction.delta(FreeGroup(2)), F2, MACAEV) == 1.5


@pytest.mark.parametrize("N", [8, 64, 512])
def test_objective_z_ramp_closed_form(N):
    assert math.isclose(objective(z_ramp(N), Z, MACAEV), exact_h(2 * N) / N, rel_tol=1e-12)


def test_objective_z_ramp_trace():
    assert objective(z_ramp(8), Z, TRACE) == pytest.approx(2.0, rel=1e-12)


def test_objective_needs_generators():
    with pytest.raises(ValueError):
        objective(z_ramp(4), [], MACAEV)


def test_objective_invariant_under_inversion():
    rng = np.random.default_rng(0)
    for spec in (F2, parse_group_spec("heisenberg"), parse_group_spec("lamplighter")):
        for _ in range(10):
            f = random_feasible(rng, spec, 2)
            fi = invert(f)
            for phi in (MACAEV, TRACE):
                left = max(gauge_norm(difference(fi, k, "left").multiset(), phi) for k in spec.generators)
                assert left == pytest.approx(objective(f, spec, phi), rel=1e-12)


# --- truncation ------------------------------------------------------------


def test_truncate_positive_examples():
    grp = FreeGroup(2)
    f = FiniteFunction(grp, {(): 1.0, (1,): 0.5})
    assert truncate_positive(f) == f
    g = FiniteFunction(grp, {(): 1.0, (1,): 1.5, (2,): -0.3})
    t = truncate_positive(g)
    assert t((1,)) == 1.0 and t((2,)) == 0.0
    with pytest.raises(ValueError):
        truncate_positive(FiniteFunction(grp, {(): 0.5}))


def test_truncation_does_not_increase_objective():
    rng = np.random.default_rng(1)
    for _ in range(200):
        f = random_feasible(rng, F2, 2).map_values(lambda v: 2 * v)
        f = FiniteFunction(f.group, {**f.values, (): 1.0})
        for phi in (MACAEV, TRACE, NormingFunction.schatten(2)):
            before, after = objective(f, F2, phi), objective(truncate_positive(f), F2, phi)
            assert after <= 2 * before
            assert after <= before * (1 + 1e-12)


# --- upper bounds ----------------------------------------------------------


def test_minimize_r0_is_delta():
    res = minimize_upper(F2, MACAEV, 0)
    assert res.value == 1.5
    assert res.minimizer == FiniteFunction.delta(FreeGroup(2))


def test_minimize_z_beats_best_ramp():
    res = minimize_upper(Z, MACAEV, 64, "profile_family")
    assert res.value <= exact_h(128) / 64 * (1 + 1e-12)
    assert res.value <= 0.0848


def test_minimize_z2_profile():
    res = minimize_upper(parse_group_spec("zd:2"), MACAEV, 32, "profile_family")
    assert res.value < 0.5


@pytest.mark.parametrize("method", kphi.METHODS)
def test_minimize_contract(method):
    for R in (1, 2):
        res = minimize_upper(F2, MACAEV, R, method, max_iter=150, seed=3)
        f = res.minimizer
        assert f(()) == 1.0
        assert all(F2.length(x) <= R for x in f.support())
        assert res.value == pytest.approx(objective(f, F2, MACAEV), rel=1e-12)
        assert res.value <= 1.5


def test_minimize_deterministic():
    a = minimize_upper(F2, MACAEV, 2, "coordinate", max_iter=200, seed=5)
    b = minimize_upper(F2, MACAEV, 2, "coordinate", max_iter=200, seed=5)
    assert a.value == b.value and a.minimizer == b.minimizer


def test_minimize_monotone_in_radius():
    for spec, phi in ((F2, MACAEV), (Z, MACAEV), (Z, TRACE)):
        values = [minimize_upper(spec, phi, R, "subgradient", max_iter=150).value for R in range(0, 5)]
        best = list(np.minimum.accumulate(values))
        # a larger ball contains the smaller one's optimum
        for R in range(1, 5):
            warm = minimize_upper(spec, phi, R - 1, "subgradient", max_iter=150).minimizer
            v = minimize_upper(spec, phi, R, "subgradient", max_iter=150, warm_start=warm).value
            assert v <= best[R - 1] * (1 + 1e-12)


def test_minimize_other_generators_on_z():
    spec = parse_group_spec("zd:1;gens=aa,aaa")
    vals = [minimize_upper(spec, MACAEV, R, "profile_family").value for R in (8, 32, 128)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.1


# --- the F2 witness --------------------------------------------------------


@pytest.mark.parametrize("variant", ["first", "last"])
def test_witness_multiset_matches_enumeration(variant):
    for D in (1, 4, 9):
        fam = AnalyticDualFamily(variant, 1, D)
        assert fam.materialize().multiset().same_as(fam.multiset())
        assert len(fam.materialize()) == 2**D - 1


def test_witness_values():
    first, last = AnalyticDualFamily("first", 1, 5), AnalyticDualFamily("last", 1, 5)
    assert first.value((1, 2, 2)) == 0.125 and first.value((2, 2, 1)) == 0
    assert last.value((2, 2, 1)) == 0.125 and last.value((1, 2, 2)) == 0
    assert first.value(()) == 0 and first.value((1, -2)) == 0


def test_witness_dual_norm_interval():
    lows = []
    for D in (8, 12, 20):
        iv = AnalyticDualFamily("last", 1, D).dual_norm(NormingFunction.dual_plus())
        assert 0.70 <= iv.lo <= iv.hi <= 0.7214
        assert iv.hi >= 1 / (2 * math.log(2))
        lows.append(iv.lo)
    assert lows == sorted(lows)


def test_witness_dual_norm_scan_oracle():
    # the interval brackets the untruncated family; every truncation lies below it
    scans = []
    for D in (6, 10, 13):
        fam = AnalyticDualFamily("first", 2, D)
        scan = dual_plus_full_scan(fam.multiset())
        iv = fam.dual_norm(NormingFunction.dual_plus())
        assert scan <= iv.lo <= iv.hi
        scans.append(scan)
    assert scans == sorted(scans)


def test_witness_schatten_dual_closed_form():
    fam = AnalyticDualFamily("first", 1, 40)
    q = 2.0
    iv = fam.dual_norm(NormingFunction.schatten(q))
    direct = math.sqrt(math.fsum(2 ** (m - 1) * 4.0**-m for m in range(1, 60)))
    assert iv.contains(direct)


@pytest.mark.parametrize("action", ["left", "right"])
def test_divergence_identity(action):
    cert = build_f2_witness(12, action)
    assert cert.residual_radius == 11
    assert divergence_defects(cert.terms, action, F2, 11) == []
    div = kphi.divergence(cert.terms, action)
    assert div(()) == 1.0
    assert all(abs(v) <= 1e-14 for x, v in div.values.items() if x != () and len(x) <= 11)


def test_wrong_action_fails():
    cert = build_f2_witness(8, "right")
    assert divergence_defects(cert.terms, "left", F2, 7) != []
    with pytest.raises(CertificateError):
        kphi.Certificate(F2, "left", cert.terms, 7, cert.dual_norms)


def test_certificate_rejects_understated_norm():
    cert = build_f2_witness(10)
    with pytest.raises(CertificateError):
        kphi.Certificate(F2, "right", cert.terms, 9, ((0.5, 0.6), (0.5, 0.6)))
    with pytest.raises(CertificateError):
        kphi.Certificate(F2, "right", cert.terms, 9, ((0.8, 0.7), (0.8, 0.9)))


def test_certified_lower_f2():
    cert = build_f2_witness(20)
    lo = certify_lower(cert, 3)
    assert lo >= 0.69
    assert lo <= math.log(2)
    assert lo <= objective(FiniteFunction.delta(FreeGroup(2)), F2, MACAEV)
    with pytest.raises(DomainError):
        certify_lower(cert, cert.residual_radius)


def test_lower_bound_holds_for_random_functions():
    cert = build_f2_witness(12)
    lo = certify_lower(cert, 3)
    rng = np.random.default_rng(2)
    for _ in range(300):
        f = random_feasible(rng, F2, 3)
        assert objective(f, F2, MACAEV) >= lo


def test_k4_constant():
    cert = build_f2_witness(20)
    C = k4_constant(cert)
    assert C <= 2 * 0.7214
    assert 1 <= C * 1.5
    rng = np.random.default_rng(3)
    for _ in range(1000):
        f = random_feasible(rng, F2, 3)
        assert f.sup_norm() <= C * objective(f, F2, MACAEV)


def test_pairing_argument_is_exact():
    # <f, div> = f(e) for f inside the residual radius
    cert = build_f2_witness(10)
    div = kphi.divergence(cert.terms, "right")
    rng = np.random.default_rng(4)
    for _ in range(20):
        f = random_feasible(rng, F2, 4)
        assert pairing(f, div) == pytest.approx(1.0, abs=1e-12)


# --- the half-line certificate on Z --------------------------------------------


def test_halfline_certificate():
    cert = build_halfline_certificate(101)
    assert cert.dual_norms[0].hi == 1.0
    assert certify_lower(cert, 100) == pytest.approx(1.0, rel=1e-15)
    rng = np.random.default_rng(5)
    for _ in range(100):
        f = random_feasible(rng, Z, 30)
        assert objective(f, Z, TRACE) >= certify_lower(cert, 30)


def test_halfline_adjoint_oracle():
    # sum over x of f(x) * (alpha(-1) f_1 - f_1)(x) = f(0) when supp f lies in [-T, T]
    cert = build_halfline_certificate(20)
    div = kphi.divergence(cert.terms, "right")
    assert div.values == {(0,): 1.0, (21,): -1.0}


# --- sandwich --------------------------------------------------------------


def test_sandwich_free2():
    rep = sandwich(F2, MACAEV, 2, build_f2_witness(20))
    assert rep.lower >= 0.69 and rep.upper <= 1.5
    assert rep.gap == pytest.approx(rep.upper - rep.lower)


def test_sandwich_z_no_certificate():
    rep = sandwich(Z, MACAEV, 256, None, "profile_family")
    assert rep.lower is None
    assert rep.upper <= exact_h(512) / 256 * (1 + 1e-12)
    assert rep.upper <= 0.0269


def test_sandwich_z_trace():
    rep = sandwich(Z, TRACE, 100, build_halfline_certificate(101), "subgradient", max_iter=100)
    assert rep.lower == pytest.approx(1.0)
    assert rep.upper >= rep.lower


def test_sandwich_rejects_mismatched_certificate():
    with pytest.raises(DomainError):
        sandwich(F2, TRACE, 1, build_f2_witness(10))
    with pytest.raises(DomainError):
        sandwich(Z, MACAEV, 1, build_f2_witness(10))


def test_inverted_sandwich_is_an_error(monkeypatch):
    monkeypatch.setattr(kphi, "certify_lower", lambda cert, R: 10.0)
    with pytest.raises(InvertedSandwich):
        sandwich(F2, MACAEV, 1, build_f2_witness(10))


# --- certificate files -----------------------------------------------------


@pytest.mark.parametrize(
    "cert",
    [build_f2_witness(20), build_f2_witness(12, "left"), build_halfline_certificate(7)],
    ids=["right", "left", "halfline"],
)
def test_certificate_json_roundtrip(cert):
    text = certificate_to_json(cert)
    back = certificate_from_json(text)
    assert back.dual_norms == cert.dual_norms
    assert back.residual_radius == cert.residual_radius
    assert certificate_to_json(back) == text


def test_corrupted_certificate_rejected():
    data = json.loads(certificate_to_json(build_halfline_certificate(5)))
    data["functions"][0]["support"][2][1] = -0.5
    with pytest.raises(CertificateError):
        certificate_from_json(json.dumps(data))
    data = json.loads(certificate_to_json(build_f2_witness(8)))
    data["dual_norms"][0] = [0.1, 0.2]
    with pytest.raises(CertificateError):
        certificate_from_json(json.dumps(data))
    with pytest.raises(CertificateError):
        certificate_from_json("{not json")
