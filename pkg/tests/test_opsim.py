import json
import math

import mpmath
import numpy as np
import pytest

from macaevlab import opsim
from macaevlab.errors import DomainError, ResourceCapError, ScheduleError
from macaevlab.groups import FiniteFunction, FreeAbelian, FreeGroup, ball, parse_group_spec
from macaevlab.norms import MACAEV, TRACE, NormingFunction, ValueMultiset, gauge_array, harmonic
from macaevlab.opsim import (
    DiagonalRamp,
    LevelTree,
    Schedule,
    SparseSlice,
    build_schedule,
    build_trees,
    commutator_ideal_norm,
    commutator_spectrum,
    complementarity_defects,
    diagonal_tensor_lower_bound,
    regular_representation_crosscheck,
    sabotaged_trees,
    tensor_orbit,
)

FLAT = Schedule((1,) * 40)


def mp_phi_ratio(exponent, h):
    with mpmath.workdps(30):
        return mpmath.harmonic(mpmath.mpf(2) ** exponent * h) / h


def brute_widths(tree, depth):
    widths = [1]
    for d in range(depth):
        widths.append(widths[-1] * tree.children(d))
    return widths


# --- schedule --------------------------------------------------------------


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule((2, 1))
    with pytest.raises(ValueError):
        Schedule((0, 1))
    s = Schedule((1, 3, 12))
    assert [s.S(p) for p in range(4)] == [0, 1, 4, 16]


def test_macaev_schedule_start():
    s = build_schedule(MACAEV, 3)
    assert s.h[:3] == (1, 3, 12)
    assert harmonic(4).lo / 2 > 1 and harmonic(6).lo / 3 <= 1
    assert harmonic(192).lo / 12 <= 0.5 < harmonic(16 * 11).lo / 11


def test_macaev_schedule_minimal_by_oracle():
    s = build_schedule(MACAEV, 6)
    for k, h in enumerate(s.h, start=1):
        n = (k + 1) // 2
        exponent = s.S(k - 1)
        assert mp_phi_ratio(exponent, h) <= mpmath.mpf(1) / n
        prev = s.h[k - 2] if k > 1 else 1
        if h > prev:
            assert mp_phi_ratio(exponent, h - 1) > mpmath.mpf(1) / n


def test_trace_has_no_schedule():
    with pytest.raises(ScheduleError):
        build_schedule(TRACE, 2)
    with pytest.raises(ScheduleError):
        build_schedule(NormingFunction.schatten(1), 2)


@pytest.mark.parametrize("phi,n_max", [(NormingFunction.schatten(2), 2), (NormingFunction.kyfan(2), 3)], ids=str)
def test_other_ideals_have_schedules(phi, n_max):
    s = build_schedule(phi, n_max)
    for st in opsim.schedule_stages(s, phi):
        assert st.ok


def test_schatten_schedule_outgrows_cap():
    with pytest.raises(ResourceCapError):
        build_schedule(NormingFunction.schatten(2), 3)


# --- trees -----------------------------------------------------------------


def test_flat_trees_small():
    X, Y = build_trees(FLAT, 6)
    assert [X.branching(d) for d in range(5)] == [True, True, False, True, False]
    assert [Y.branching(d) for d in range(5)] == [True, False, True, False, True]
    assert [X.width(d) for d in range(5)] == [1, 2, 4, 4, 8]
    assert [Y.width(d) for d in range(1, 6)] == [2, 2, 4, 4, 8]


def test_complementarity():
    for s in (FLAT, build_schedule(MACAEV, 4)):
        depth = min(s.S(len(s.h)), 5000)
        X, Y = build_trees(s, depth)
        assert complementarity_defects(X, Y) == []
        for d in range(1, min(depth, 600)):
            assert X.branching(d) != Y.branching(d)


def test_macaev_tree_width():
    X, Y = build_trees(build_schedule(MACAEV, 2), 16)
    assert X.width(16) == 16
    assert [d for d in range(16) if X.branching(d)] == [0, 1, 2, 3]


@pytest.mark.parametrize("h", [(1,) * 30, (1, 3, 12, 31), (2, 2, 5, 7, 7, 9), (1, 3, 12, 31, 114, 355)])
def test_widths_and_level_sums_match_recurrence(h):
    s = Schedule(h)
    depth = s.S(len(h))
    for tree in build_trees(s, depth):
        widths = brute_widths(tree, depth)
        assert [tree.width(d) for d in range(depth + 1)] == widths
        for a, b in [(0, depth + 1), (1, 5), (3, depth), (depth // 2, depth + 1)]:
            assert tree.level_sum(a, b) == sum(widths[a:b])


def test_tree_rejects_depth_beyond_schedule():
    with pytest.raises(DomainError):
        LevelTree.from_schedule(Schedule((1, 2)), "X", 10)


# --- ramps and spectra -------------------------------------------------------


def test_ramp_profile():
    s = build_schedule(MACAEV, 4)
    for side in "XY":
        prev = None
        for n in range(1, 5):
            r = DiagonalRamp.for_schedule(s, side, n)
            vals = [r.value(d) for d in range(0, r.end + 3)]
            assert all(0 <= v <= 1 for v in vals)
            assert all(r.value(d) == 0 for d in range(r.end, r.end + 3))
            if prev is not None:
                assert all(prev.value(d) <= r.value(d) for d in range(0, r.end + 3))
            prev = r
        assert prev.value(5) == 1


def test_flat_n1_spectrum_is_root():
    X, _ = build_trees(FLAT, 12)
    r = DiagonalRamp.for_schedule(FLAT, "X", 1)
    assert commutator_spectrum(X, r).entries == ((1.0, 1),)
    assert opsim.rank_upper_bound(r) == 1


def test_macaev_n2_multiplicity():
    s = build_schedule(MACAEV, 2)
    X, _ = build_trees(s, s.S(4))
    r = DiagonalRamp.for_schedule(s, "X", 2)
    spec = commutator_spectrum(X, r)
    widths = brute_widths(X, s.S(3))
    assert spec.entries == ((1 / 12, sum(widths[s.S(2) : s.S(3)])),)
    assert spec.entries[0][1] <= opsim.rank_upper_bound(r)


def test_ideal_norm_flat_block():
    iv = commutator_ideal_norm(ValueMultiset(((1 / 3, 6),)), MACAEV)
    assert iv.lo == pytest.approx(49 / 60, rel=1e-12)


def test_schedule_norms_below_one_over_n():
    stages = opsim.schedule_stages(build_schedule(MACAEV, 6), MACAEV)
    assert len(stages) == 12
    for st in stages:
        assert st.norm.hi <= 1 / st.n
        assert st.rank <= st.rank_bound
        h = st.h
        assert st.norm.contains(float(mpmath.harmonic(st.rank)) / h) or st.norm.width == 0


@pytest.mark.parametrize("side", ["X", "Y"])
def test_symbolic_matches_explicit(side):
    X, Y = build_trees(FLAT, 12)
    tree = X if side == "X" else Y
    sl = SparseSlice.build(tree, 12)
    n = 1
    while True:
        r = DiagonalRamp.for_schedule(FLAT, side, n)
        if r.end > 12:
            break
        for j in (1, 2):
            assert sl.explicit_spectrum(r, j).same_as(commutator_spectrum(tree, r, j))
        n += 1
    assert n > 3


@pytest.mark.parametrize("side", ["X", "Y"])
def test_commutator_below_difference_by_svd(side):
    X, Y = build_trees(FLAT, 8)
    tree = X if side == "X" else Y
    sl = SparseSlice.build(tree, 8)
    for n in range(1, 4):
        r = DiagonalRamp.for_schedule(FLAT, side, n)
        if r.end > 8:
            continue
        for j in (1, 2):
            sv = sl.commutator_singular_values(r, j)
            bound = commutator_ideal_norm(commutator_spectrum(tree, r, j), MACAEV).hi
            assert gauge_array(sv, MACAEV) <= bound * (1 + 1e-12)


def test_slice_structure():
    X, Y = build_trees(build_schedule(MACAEV, 2), 10)
    for tree in (X, Y):
        sl = SparseSlice.build(tree, 10)
        assert sl.size == tree.level_sum(0, 11)
        assert sl.images_are_children()
        for j in (1, 2):
            assert sl.isometry_defect(j) == 0
        S1, S2 = sl.shift(1).tocsc(), sl.shift(2).tocsc()
        for v, kids in enumerate(sl.children):
            if kids:
                same = S1[:, v].nonzero()[0].tolist() == S2[:, v].nonzero()[0].tolist()
                assert same == (len(kids) == 1)


# --- tensor orbit ----------------------------------------------------------


def flat_slices(depth):
    X, Y = build_trees(FLAT, depth)
    return SparseSlice.build(X, depth), SparseSlice.build(Y, depth)


def test_orbit_511_orthonormal():
    xs, ys = flat_slices(8)
    orbit = tensor_orbit(xs, ys, 8)
    assert orbit.count == 511
    assert orbit.injective and orbit.orthonormal


def test_orbit_on_macaev_trees():
    X, Y = build_trees(build_schedule(MACAEV, 2), 8)
    orbit = tensor_orbit(SparseSlice.build(X, 8), SparseSlice.build(Y, 8), 8)
    assert orbit.count == 511 and orbit.injective and orbit.orthonormal


def test_single_letters_orthogonal():
    xs, ys = flat_slices(3)
    orbit = tensor_orbit(xs, ys, 1)
    assert orbit.vectors[(1,)] != orbit.vectors[(2,)]
    assert orbit.orthonormal


@pytest.mark.parametrize("bad", [1, 3, 5])
def test_sabotage_detected(bad):
    X, Y = sabotaged_trees(FLAT, 10, bad)
    assert complementarity_defects(X, Y) == [bad]
    orbit = tensor_orbit(SparseSlice.build(X, 8), SparseSlice.build(Y, 8), 8)
    assert not orbit.injective
    assert orbit.first_collision_length == bad + 1
    assert orbit.orthonormal is False


def test_orbit_needs_depth():
    xs, ys = flat_slices(4)
    with pytest.raises(DomainError):
        tensor_orbit(xs, ys, 6)


# --- diagonal lower bound ---------------------------------------------------


def test_delta_xi_bound_and_explicit_norm():
    xs, ys = flat_slices(5)
    orbit = tensor_orbit(xs, ys, 5)
    bound = diagonal_tensor_lower_bound({(): 1.0}, 20, orbit)
    assert bound >= 0.69
    norms = opsim.explicit_tensor_commutator_norms(xs, ys, {(): 1.0}, orbit)
    assert max(norms) >= bound


def test_radial_ramp_cannot_beat_the_bound():
    L = 6
    xs, ys = flat_slices(L)
    orbit = tensor_orbit(xs, ys, L)
    a = {w: 1 - len(w) / L for w in orbit.words if len(w) < L}
    assert opsim.orbit_witness_pairing(a, 20) == pytest.approx(1.0, abs=1e-12)
    bound = diagonal_tensor_lower_bound(a, 20, orbit)
    assert bound >= 0.69
    assert max(opsim.explicit_tensor_commutator_norms(xs, ys, a, orbit)) >= bound


def test_single_pair_admits_small_commutators():
    # the same ramp shape on one tree alone drives the commutators to zero
    s = build_schedule(MACAEV, 6)
    X, _ = build_trees(s, s.S(12))
    for n in range(1, 7):
        r = DiagonalRamp.for_schedule(s, "X", n)
        assert commutator_ideal_norm(commutator_spectrum(X, r), MACAEV).hi <= 1 / n


def test_bound_preconditions():
    with pytest.raises(ValueError):
        diagonal_tensor_lower_bound({}, 20)
    with pytest.raises(ValueError):
        diagonal_tensor_lower_bound({(): 0.5}, 20)
    xs, ys = flat_slices(3)
    orbit = tensor_orbit(xs, ys, 3)
    with pytest.raises(DomainError):
        diagonal_tensor_lower_bound({(): 1.0, (1, 1, 1, 1): 0.5}, 20, orbit)
    with pytest.raises(DomainError):
        diagonal_tensor_lower_bound({(): 1.0, (3,): 0.5}, 20)


# --- regular representation ------------------------------------------------


def test_crosscheck_z_ramp():
    spec = parse_group_spec("zd:1")
    f = FiniteFunction(FreeAbelian(1), {(x,): 1 - abs(x) / 8 for x in range(-7, 8)})
    expected = float(mpmath.harmonic(16)) / 8
    for rep in regular_representation_crosscheck(spec, f):
        assert rep.equal
        assert rep.operator_norm == pytest.approx(expected, rel=1e-12)
        assert rep.function_norm == pytest.approx(expected, rel=1e-12)


def test_crosscheck_delta_free2():
    spec = parse_group_spec("free:2")
    for rep in regular_representation_crosscheck(spec, FiniteFunction.delta(FreeGroup(2))):
        assert rep.equal and rep.operator_norm == pytest.approx(1.5)


def test_crosscheck_random_free2():
    spec = parse_group_spec("free:2")
    b = ball(spec, 2, with_adjacency=False)
    rng = np.random.default_rng(0)
    for _ in range(100):
        vals = rng.random(len(b))
        f = FiniteFunction(spec.group, dict(zip(b.elements, vals)))
        assert all(rep.max_deviation <= 1e-12 for rep in regular_representation_crosscheck(spec, f))


def test_crosscheck_rejects_out_of_range():
    with pytest.raises(ValueError):
        regular_representation_crosscheck(parse_group_spec("zd:1"), FiniteFunction(FreeAbelian(1), {(0,): 2.0}))


# --- dump ------------------------------------------------------------------


def test_schedule_dump_format():
    from macaevlab.cli import schedule_dump

    s = build_schedule(MACAEV, 3)
    X, Y = build_trees(s, s.S(6))
    data = json.loads(schedule_dump(s, MACAEV, X, Y))
    assert data["h"] == list(s.h) and data["S"][:4] == [0, 1, 4, 16]
    for lvl in data["levels"]:
        assert int(lvl["width_X"]) == X.width(lvl["d"])
        assert isinstance(lvl["width_Y"], str)
    assert math.log2(int(data["levels"][-1]["width_X"])) > 100
