from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from hams.errors import (CountMismatch, DegenerateScene, EmptyValidSet, PersonCountMismatch,
                         ZeroBaseline)
from hams.geometry import Camera, Sim3, image_center, rotation_geodesic_deg, so3_exp
from hams.metrics import (best_alignment, camera_metrics, depth_metrics, fit_sim3_l1,
                          mean_average_accuracy, mpjpe_suite, match_people,
                          pairwise_pose_metrics, relative_pose_errors, relative_poses)


def random_sim3(rng, scale=True):
    s = float(np.exp(rng.uniform(-0.5, 0.5))) if scale else 1.0
    return Sim3(s, so3_exp(rng.normal(size=3)), rng.normal(size=3))


def random_people(rng, n=3, J=16):
    return [rng.normal(size=(J, 3)) * 0.4 + rng.normal(size=3) * 2 for _ in range(n)]


def brute_mean_distance_sim3(src, dst):
    """Direct minimisation of the mean point distance over (log s, rotvec, t)."""
    def f(x):
        T = Sim3(float(np.exp(x[0])), so3_exp(x[1:4]), x[4:])
        return np.mean(np.linalg.norm(T.apply(src) - dst, axis=1))
    best = np.inf
    for x0 in (np.zeros(7),):
        r = minimize(f, x0, method="Nelder-Mead",
                     options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000, "maxfev": 40000})
        r = minimize(f, r.x, method="Powell", options={"xtol": 1e-12, "ftol": 1e-15})
        best = min(best, r.fun)
    return best


# humans ---------------------------------------------------------------------

def test_mpjpe_exact():
    gt = random_people(np.random.default_rng(0))
    r = mpjpe_suite(gt, gt)
    assert (r.w_mpjpe, r.ga_mpjpe, r.pa_mpjpe) == (0.0, 0.0, 0.0)


def test_mpjpe_group_shift():
    gt = random_people(np.random.default_rng(1))
    r = mpjpe_suite([g + [0.3, 0, 0] for g in gt], gt)
    assert r.w_mpjpe == pytest.approx(0.3, abs=1e-12)
    assert r.ga_mpjpe < 1e-9 and r.pa_mpjpe < 1e-9


def test_mpjpe_opposite_shifts_match_direct_minimum():
    rng = np.random.default_rng(2)
    gt = random_people(rng, n=2)
    pred = [gt[0] + [0.2, 0, 0], gt[1] - [0.2, 0, 0]]
    r = mpjpe_suite(pred, gt)
    assert r.pa_mpjpe < 1e-9
    assert r.ga_mpjpe > 0.01
    oracle = brute_mean_distance_sim3(np.concatenate(pred), np.concatenate(gt))
    assert abs(r.ga_mpjpe - oracle) < 1e-6


def test_l1_fit_matches_direct_minimum(rng):
    for _ in range(3):
        src = rng.normal(size=(20, 3))
        dst = random_sim3(rng).apply(src) + rng.laplace(scale=0.05, size=src.shape)
        _, e = fit_sim3_l1(src, dst)
        assert e <= brute_mean_distance_sim3(src, dst) + 1e-7


def test_mpjpe_errors():
    g = random_people(np.random.default_rng(3))
    with pytest.raises(PersonCountMismatch):
        mpjpe_suite(g[:2], g)
    with pytest.raises(PersonCountMismatch):
        mpjpe_suite([], [])


@given(st.integers(0, 2 ** 31))
def test_mpjpe_ordering(seed):
    rng = np.random.default_rng(seed)
    gt = random_people(rng, n=int(rng.integers(1, 5)))
    pred = [random_sim3(rng).apply(g) + rng.normal(scale=0.1, size=g.shape) for g in gt]
    r = mpjpe_suite(pred, gt)
    assert r.pa_mpjpe <= r.ga_mpjpe + 1e-9 <= r.w_mpjpe + 2e-9
    for p, g_, w in zip(r.per_person_pa, r.per_person_ga, r.per_person_w):
        assert p <= g_ + 1e-9 or p <= w + 1e-9


@given(st.integers(0, 2 ** 31))
def test_mpjpe_aligned_errors_invariant_to_prediction_sim3(seed):
    rng = np.random.default_rng(seed)
    gt = random_people(rng)
    pred = [g + rng.normal(scale=0.1, size=g.shape) for g in gt]
    S = random_sim3(rng)
    a = mpjpe_suite(pred, gt)
    b = mpjpe_suite([S.apply(p) for p in pred], gt)
    assert abs(a.ga_mpjpe - b.ga_mpjpe) < 1e-9
    assert abs(a.pa_mpjpe - b.pa_mpjpe) < 1e-9


def test_best_alignment_never_worse_than_identity(rng):
    src = rng.normal(size=(10, 3))
    _, e = best_alignment(src, src + 1e-3)
    assert e <= 1e-3 + 1e-15


def test_match_people(rng):
    gt = rng.normal(size=(4, 3)) * 3
    perm = rng.permutation(4)
    pi, gi = match_people(gt[perm] + 0.01, gt)
    assert np.array_equal(perm[pi], gi)
    e = match_people(np.zeros((0, 3)), gt)
    assert len(e[0]) == 0


# cameras --------------------------------------------------------------------

def ring_cameras(rng, n=5):
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        c = np.array([3 * np.cos(a), 1.5 + 0.1 * rng.normal(), 3 * np.sin(a)])
        R = so3_exp(rng.normal(size=3))
        cams.append(Camera(Sim3(1.0, R, c), 100.0, image_center(64, 48), 64, 48))
    return cams


def move(cams, S):
    """Apply a world similarity to camera poses (centres scale, orientations rotate)."""
    return [Camera(Sim3(1.0, S.rotation @ c.rotation, S.apply(c.center)), c.focal,
                   c.principal_point, c.width, c.height) for c in cams]


def perturb(cams, rng, rot=0.1, trans=0.2):
    return [Camera(Sim3(1.0, so3_exp(rng.normal(scale=rot, size=3)) @ c.rotation,
                        c.center + rng.normal(scale=trans, size=3)),
                   c.focal, c.principal_point, c.width, c.height) for c in cams]


def test_camera_exact(rng):
    gt = ring_cameras(rng)
    m = camera_metrics(gt, gt)
    assert m.te == 0 and m.s_te < 1e-12 and m.ae < 1e-9
    assert m.rra == m.cca == m.s_cca == 1.0


def test_camera_similarity_gauge(rng):
    gt = ring_cameras(rng)
    pred = move(gt, random_sim3(rng))
    m = camera_metrics(pred, gt)
    assert m.s_te < 1e-9 and m.s_cca == 1.0 and m.rra == 1.0 and m.ae < 1e-6


def test_camera_rra_matches_pair_count(rng):
    for _ in range(10):
        gt = ring_cameras(rng, 6)
        pred = perturb(gt, rng, rot=0.15)
        m = camera_metrics(pred, gt, tau_deg=10)
        count = 0
        pairs = list(combinations(range(6), 2))
        for a, b in pairs:
            err = rotation_geodesic_deg(pred[a].rotation.T @ pred[b].rotation,
                                        gt[a].rotation.T @ gt[b].rotation)
            count += err < 10
        assert m.rra == count / len(pairs)


def test_camera_cca_threshold_is_diameter_fraction(rng):
    gt = ring_cameras(rng, 4)
    diam = max(np.linalg.norm(a.center - b.center) for a, b in combinations(gt, 2))
    pred = [Camera(Sim3(1.0, c.rotation, c.center + [0.09 * diam if k < 2 else 0.11 * diam, 0, 0]),
                   c.focal, c.principal_point, c.width, c.height) for k, c in enumerate(gt)]
    m = camera_metrics(pred, gt)
    assert m.diameter == pytest.approx(diam)
    assert m.cca == 0.5


@given(st.integers(0, 2 ** 31))
def test_camera_invariants(seed):
    rng = np.random.default_rng(seed)
    gt = ring_cameras(rng, int(rng.integers(2, 7)))
    pred = perturb(gt, rng)
    m = camera_metrics(pred, gt)
    assert m.s_te <= m.te + 1e-9
    for f in (m.rra, m.cca, m.s_cca):
        assert 0 <= f <= 1
    S = random_sim3(rng)
    m2 = camera_metrics(move(pred, S), gt)
    assert abs(m.s_te - m2.s_te) < 1e-9
    assert m.s_cca == m2.s_cca and m.rra == m2.rra
    assert abs(m.ae - m2.ae) < 1e-6
    # moving both sides together leaves every metric unchanged
    R = random_sim3(rng, scale=False)
    m3 = camera_metrics(move(pred, R), move(gt, R))
    assert abs(m.te - m3.te) < 1e-9 and abs(m.s_te - m3.s_te) < 1e-9
    assert m.cca == m3.cca and m.rra == m3.rra


def test_camera_errors(rng):
    gt = ring_cameras(rng, 3)
    with pytest.raises(CountMismatch):
        camera_metrics(gt[:2], gt)
    with pytest.raises(CountMismatch):
        camera_metrics(gt[:1], gt[:1])
    with pytest.raises(DegenerateScene):
        camera_metrics([gt[0], gt[0]], [gt[0], gt[0]])


# pairwise -------------------------------------------------------------------

def loop_maa(rot, tra):
    total = 0.0
    for t in range(1, 31):
        hits = 0
        for r, q in zip(rot, tra):
            if max(r, q) < t:
                hits += 1
        total += hits / len(rot)
    return total / 30


def test_pairwise_exact(rng):
    cams = ring_cameras(rng)
    rel = relative_poses(cams)
    m = pairwise_pose_metrics(rel, rel)
    assert m.rra == m.rta == m.maa == 1.0


def test_pairwise_large_errors_give_zero_maa(rng):
    cams = ring_cameras(rng)
    gt = relative_poses(cams)
    pred = [Sim3(1.0, so3_exp([0, 0, np.radians(40)]) @ g.rotation, -g.translation) for g in gt]
    m = pairwise_pose_metrics(pred, gt)
    assert m.maa == 0.0 and m.rra == 0.0 and m.rta == 0.0


def test_maa_matches_double_loop(rng):
    for _ in range(20):
        rot = rng.uniform(0, 40, 15)
        tra = rng.uniform(0, 40, 15)
        rot[:3] = [1.0, 5.0, 30.0]         # exact threshold hits are excluded (strict <)
        assert mean_average_accuracy(rot, tra) == pytest.approx(loop_maa(rot, tra), abs=1e-15)


def test_pairwise_translation_is_direction_only(rng):
    cams = ring_cameras(rng)
    gt = relative_poses(cams)
    pred = [Sim3(1.0, g.rotation, 7.5 * g.translation) for g in gt]
    rot, tra = relative_pose_errors(pred, gt)
    assert np.abs(rot).max() < 1e-6 and np.abs(tra).max() < 1e-6


def test_pairwise_invariant_to_global_rotation(rng):
    gt_c = ring_cameras(rng)
    pred_c = perturb(gt_c, rng)
    a = pairwise_pose_metrics(relative_poses(pred_c), relative_poses(gt_c))
    b = pairwise_pose_metrics(relative_poses(move(pred_c, random_sim3(rng, scale=False))),
                              relative_poses(gt_c))
    assert np.allclose(a.rotation_errors, b.rotation_errors, atol=1e-6)
    assert np.allclose(a.translation_errors, b.translation_errors, atol=1e-6)
    assert (a.rra, a.rta, a.maa) == (b.rra, b.rta, b.maa)


def test_pairwise_zero_baseline():
    with pytest.raises(ZeroBaseline):
        pairwise_pose_metrics([Sim3()], [Sim3()])
    rot, tra = relative_pose_errors([Sim3()], [Sim3(1.0, np.eye(3), [1.0, 0, 0])])
    assert tra[0] == 180.0


# depth ----------------------------------------------------------------------

def test_depth_examples(rng):
    gt = rng.uniform(1, 5, (10, 12))
    r = depth_metrics(gt, gt)
    assert r.rel == 0 and r.tau == 1
    r = depth_metrics(1.02 * gt, gt)
    assert r.rel == pytest.approx(0.02, abs=1e-12) and r.tau == 1.0
    r = depth_metrics(1.05 * gt, gt, median_align=True)
    assert r.rel < 1e-12 and r.tau == 1.0
    assert depth_metrics(1.05 * gt, gt).tau == 0.0
    assert depth_metrics(gt / 1.02, gt).tau == 1.0


def test_depth_tau_monotone_in_threshold(rng):
    gt = rng.uniform(1, 5, 500)
    pred = gt * np.exp(rng.normal(scale=0.03, size=500))
    taus = [depth_metrics(pred, gt, threshold=t).tau for t in (1.1, 1.05, 1.03, 1.01, 1.001)]
    assert all(a >= b for a, b in zip(taus, taus[1:]))


def test_depth_valid_mask_and_errors(rng):
    gt = rng.uniform(1, 5, (4, 4))
    pred = gt.copy()
    pred[0, 0] = 100
    v = np.ones((4, 4), bool)
    v[0, 0] = False
    assert depth_metrics(pred, gt, v).rel == 0
    with pytest.raises(EmptyValidSet):
        depth_metrics(pred, gt, np.zeros((4, 4), bool))
    with pytest.raises(EmptyValidSet):
        depth_metrics(pred, np.zeros((4, 4)))
