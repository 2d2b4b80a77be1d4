import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle import brute_voxel_curve
from structunc import retention as rc
from structunc.metrics import confusion, dsc
from structunc.structural import FPL, TPL, LesionRecord

GRID = rc.retention_grid()


def lesions(classes, scores, measure="u"):
    return [
        LesionRecord(k, np.array([k]), {measure: s}, c)
        for k, (c, s) in enumerate(zip(classes, scores), start=1)
    ]


def test_grid():
    assert len(GRID) == 401
    assert GRID[0] == 0.0 and GRID[-1] == 1.0
    assert np.all(np.diff(GRID) > 0)
    assert np.allclose(np.diff(GRID), 2.5e-3, atol=1e-15)
    with pytest.raises(ValueError):
        rc.retention_grid(0.003)


def test_four_lesion_example():
    les = lesions([TPL, FPL, TPL, FPL], [0.1, 0.9, 0.2, 0.8])
    c = rc.lesion_lppv_rc(les, "u", GRID)
    at = {f: c.values[int(round(f * 400))] for f in (1.0, 0.75, 0.5, 0.25, 0.0)}
    assert at == {1.0: 0.5, 0.75: 0.75, 0.5: 1.0, 0.25: 1.0, 0.0: 1.0}
    # trapezoid over the native points: 0.25 + 0.25 + 0.21875 + 0.15625
    assert c.auc == pytest.approx(0.875, abs=1e-12)
    assert rc.curve_auc(c) == c.auc


def test_lesion_curve_replacement_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        classes = [TPL if b else FPL for b in rng.random(n) < 0.5]
        scores = list(rng.random(n))
        c = rc.lesion_lppv_rc(lesions(classes, scores), "u", rc.retention_grid(1 / n))
        current = list(classes)
        expected = [current.count(TPL) / n]
        for i in sorted(range(n), key=lambda i: -scores[i]):
            current[i] = TPL
            expected.append(current.count(TPL) / n)
        assert list(c.values) == pytest.approx(expected[::-1], abs=1e-12)


def test_lesion_free_patient_has_no_curve():
    assert rc.lesion_lppv_rc([], "u", GRID) is None


def test_lesion_all_tpl_is_constant():
    les = lesions([TPL] * 3, [0.3, 0.1, 0.2])
    for c in (rc.lesion_lppv_rc(les, "u", GRID), rc.lesion_baseline(rc.IDEAL, les, GRID)):
        assert np.all(c.values == 1.0) and c.auc == 1.0


def test_three_patient_example():
    rows = [("p1", 0.4, 0.9), ("p2", 0.8, 0.1), ("p3", 0.6, 0.5)]
    c = rc.patient_dsc_rc(rows, rc.retention_grid(1 / 3))
    assert list(c.values[::-1]) == pytest.approx([0.6, 0.8, 2.8 / 3, 1.0], abs=1e-12)
    full = rc.patient_dsc_rc(rows, GRID)
    assert full.values[-1] == pytest.approx(0.6, abs=1e-12)
    assert full.values[0] == 1.0


def test_patient_ideal_is_negated_dsc():
    rng = np.random.default_rng(1)
    rows = [(f"p{i}", float(d), 0.0) for i, d in enumerate(rng.random(9))]
    ideal = rc.patient_baseline(rc.IDEAL, rows, GRID)
    neg = rc.patient_dsc_rc([(p, d, -d) for p, d, _ in rows], GRID)
    assert np.array_equal(ideal.values, neg.values)
    assert np.all(np.diff(ideal.values) <= 1e-15)  # non-increasing in f
    ones = rc.patient_dsc_rc([("a", 1.0, 0.2), ("b", 1.0, 0.5)], GRID)
    assert np.all(ones.values == 1.0)


def test_patient_curve_needs_two_patients():
    with pytest.raises(ValueError):
        rc.patient_dsc_rc([("a", 0.5, 0.1)], GRID)


def eight_voxel_case():
    shape = (2, 2, 2)
    brain = np.ones(shape, dtype=bool)
    gt = np.zeros(shape, dtype=bool)
    gt[0, 0, 0] = gt[1, 0, 0] = gt[0, 1, 0] = True
    pred = gt.copy()
    pred[0, 1, 0] = False  # FN
    pred[1, 1, 1] = True  # FP
    unc = np.array([0.1, 0.3, 0.7, 0.2, 0.05, 0.6, 0.9, 0.4]).reshape(shape, order="F")
    return unc, pred, gt, brain


def test_eight_voxel_brute_force():
    unc, pred, gt, brain = eight_voxel_case()
    c = rc.voxel_dsc_rc(unc, pred, gt, brain, GRID)
    assert list(c.values) == pytest.approx(brute_voxel_curve(unc, pred, gt, brain), abs=1e-15)
    assert c.values[-1] == dsc(confusion(pred, gt, brain))
    assert c.values[0] == 1.0


def random_case(seed, shape=(4, 4, 3)):
    rng = np.random.default_rng(seed)
    gt = rng.random(shape) < 0.3
    pred = gt ^ (rng.random(shape) < 0.2)
    brain = rng.random(shape) < 0.85
    brain.flat[0] = True
    unc = rng.integers(0, 6, size=shape).astype(np.float64)
    return unc, pred, gt, brain


@pytest.mark.parametrize("seed", range(8))
def test_voxel_curve_brute_force_random(seed):
    unc, pred, gt, brain = random_case(seed)
    c = rc.voxel_dsc_rc(unc, pred, gt, brain, GRID)
    assert list(c.values) == pytest.approx(brute_voxel_curve(unc, pred, gt, brain), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_voxel_dominance(seed):
    unc, pred, gt, brain = random_case(seed)
    c = rc.voxel_dsc_rc(unc, pred, gt, brain, GRID)
    ideal = rc.voxel_baseline(rc.IDEAL, pred, gt, brain, GRID)
    worst = rc.voxel_baseline(rc.WORST, pred, gt, brain, GRID)
    assert np.all(ideal.values >= c.values - 1e-15)
    assert np.all(c.values >= worst.values - 1e-15)
    assert np.all((0 <= c.values) & (c.values <= 1))
    assert c.values[0] == 1.0
    assert c.values[-1] == pytest.approx(dsc(confusion(pred, gt, brain)), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    unc, pred, gt, brain = random_case(seed)
    a = rc.voxel_dsc_rc(unc, pred, gt, brain, GRID)
    b = rc.voxel_dsc_rc(np.exp(unc) * 3.0 + 1.0, pred, gt, brain, GRID)
    assert np.array_equal(a.values, b.values)
    rng = np.random.default_rng(seed)
    scores = list(rng.integers(0, 4, size=6).astype(float))
    classes = [TPL if b else FPL for b in rng.random(6) < 0.5]
    la = rc.lesion_lppv_rc(lesions(classes, scores), "u", GRID)
    lb = rc.lesion_lppv_rc(lesions(classes, [s**3 - 7 for s in scores]), "u", GRID)
    assert np.array_equal(la.values, lb.values)


def test_random_baselines_by_seed():
    unc, pred, gt, brain = random_case(3, shape=(6, 6, 6))
    ideal, r1 = rc.ideal_and_random_baselines(rc.VOXEL_DSC, pred, gt, brain, grid=GRID, rng_seed=1)
    _, r2 = rc.ideal_and_random_baselines(rc.VOXEL_DSC, pred, gt, brain, grid=GRID, rng_seed=2)
    worst = rc.voxel_baseline(rc.WORST, pred, gt, brain, GRID)
    assert not np.array_equal(r1.values, r2.values)
    for r in (r1, r2):
        assert worst.auc <= r.auc <= ideal.auc


def test_lesion_and_patient_dominance():
    rng = np.random.default_rng(9)
    for _ in range(30):
        n = int(rng.integers(2, 10))
        les = lesions([TPL if b else FPL for b in rng.random(n) < 0.5], list(rng.random(n)))
        c = rc.lesion_lppv_rc(les, "u", GRID)
        assert rc.lesion_baseline(rc.IDEAL, les, GRID).auc >= c.auc >= rc.lesion_baseline(rc.WORST, les, GRID).auc
        rows = [(f"p{i}", float(d), float(s)) for i, (d, s) in enumerate(rng.random((n, 2)))]
        c = rc.patient_dsc_rc(rows, GRID)
        assert rc.patient_baseline(rc.IDEAL, rows, GRID).auc >= c.auc >= rc.patient_baseline(rc.WORST, rows, GRID).auc


def test_interpolated_curve_passes_through_native_nodes():
    rows = [(f"p{i}", d, s) for i, (d, s) in enumerate([(0.2, 1), (0.9, 2), (0.5, 3), (0.7, 4)])]
    native = rc.patient_dsc_rc(rows, rc.retention_grid(0.25)).values
    fine = rc.patient_dsc_rc(rows, GRID).values
    assert list(fine[::100]) == list(native)


def test_auc_and_mean_curve():
    ramp = rc.RetentionCurve(rc.PATIENT_DSC, "r", GRID, GRID.copy())
    assert ramp.auc == pytest.approx(0.5, abs=1e-15)
    c4 = rc.RetentionCurve(rc.PATIENT_DSC, "a", GRID, np.full(401, 0.4))
    c8 = rc.RetentionCurve(rc.PATIENT_DSC, "a", GRID, np.full(401, 0.8))
    assert np.allclose(rc.mean_curve([c4, c8]).values, 0.6, atol=1e-15)
    assert rc.mean_curve([c4]).values.tolist() == c4.values.tolist()
    rng = np.random.default_rng(0)
    curves = [rc.RetentionCurve(rc.VOXEL_DSC, "m", GRID, rng.random(401)) for _ in range(5)]
    assert rc.mean_curve(curves).auc == pytest.approx(np.mean([c.auc for c in curves]), abs=1e-12)
    with pytest.raises(ValueError):
        rc.mean_curve([c4, curves[0]])
    with pytest.raises(ValueError):
        rc.mean_curve([c4, rc.RetentionCurve(rc.PATIENT_DSC, "a", rc.retention_grid(0.5), np.ones(3))])
