import numpy as np
import pytest

from pointrig import autodiff as ad
from pointrig.autodiff import Tape, Tensor, gradcheck
from pointrig.errors import DataError
from pointrig.kinematics import Pose
from pointrig.losses import (
    arap_loss,
    canonical_neighborhoods,
    chamfer,
    mask_loss,
    photometric,
    skel_loss,
    smooth_loss,
    sparse_loss,
    total_loss,
    tranf_loss,
)
from pointrig.render import Camera


def brute_force_chamfer(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return d2.min(axis=1).mean() + d2.min(axis=0).mean()


def make_pose(angles, root_angle=0.0, root_t=(0.0, 0.0, 0.0)):
    angles = np.asarray(angles, dtype=np.float64)
    return Pose(
        axes=Tensor(np.tile([0.0, 0, 1.0], (len(angles), 1))),
        angles=Tensor(angles),
        root_axis=Tensor([0.0, 0, 1.0]),
        root_angle=Tensor(float(root_angle)),
        root_translation=Tensor(np.asarray(root_t, dtype=np.float64)),
    )


# -- photometric ---------------------------------------------------------------

def test_photometric_identical_zero():
    img = np.random.default_rng(0).uniform(0, 1, size=(50, 3))
    assert float(photometric(Tensor(img), img).data) == 0.0


def test_photometric_black_vs_white():
    pred = Tensor(np.zeros((20, 3)))
    assert float(photometric(pred, np.ones((20, 3))).data) == pytest.approx(1.0)


def test_photometric_matches_manual_mean():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(30, 3)), rng.uniform(size=(30, 3))
    manual = ((a - b) ** 2).sum() / a.size
    assert float(photometric(Tensor(a), b).data) == pytest.approx(manual, abs=1e-15)


# -- chamfer ---------------------------------------------------------------------

def test_chamfer_identical_sets_zero():
    pts = np.random.default_rng(2).uniform(size=(40, 2))
    assert float(chamfer(Tensor(pts), Tensor(pts)).data) == 0.0


def test_chamfer_single_pair():
    a, b = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
    assert float(chamfer(Tensor(a), Tensor(b)).data) == pytest.approx(50.0)


def test_chamfer_matches_bruteforce_exactly():
    # [DERIVED] O(nm) brute-force oracle, exact equality
    rng = np.random.default_rng(3)
    for _ in range(25):
        n, m = rng.integers(5, 120, size=2)
        dim = int(rng.integers(2, 4))
        a = rng.uniform(-3, 3, size=(n, dim))
        b = rng.uniform(-3, 3, size=(m, dim))
        assert float(chamfer(Tensor(a), Tensor(b)).data) == brute_force_chamfer(a, b)


def test_chamfer_symmetric_for_equal_sizes():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(30, 2)), rng.uniform(size=(30, 2))
    assert float(chamfer(Tensor(a), Tensor(b)).data) == pytest.approx(
        float(chamfer(Tensor(b), Tensor(a)).data), abs=1e-15
    )


def test_chamfer_rejects_empty():
    with pytest.raises(DataError):
        chamfer(Tensor(np.zeros((0, 2))), Tensor(np.ones((3, 2))))


def test_chamfer_gradcheck():
    rng = np.random.default_rng(5)
    b = rng.uniform(size=(15, 2))

    def f(t):
        return chamfer(ad.reshape(t, (10, 2)), Tensor(b))

    assert gradcheck(f, Tensor(rng.uniform(size=20))) < 1e-4


# -- mask loss ---------------------------------------------------------------------

def front_camera(width=32, height=32):
    c2w = np.eye(4)
    c2w[2, 3] = 3.0
    return Camera(id=0, width=width, height=height, fx=40.0, fy=40.0, cx=16.0, cy=16.0, c2w=c2w)


def test_mask_loss_points_on_mask_zero():
    cam = front_camera()
    mask = np.zeros((32, 32), dtype=bool)
    mask[10, 12] = True  # row y=10, col x=12
    # world point projecting exactly to that pixel center
    d = cam.pixel_dirs(np.array([[12, 10]]))[0]
    point = cam.origin + 2.0 * d
    out = mask_loss(Tensor(point.reshape(1, 3)), cam, mask, subsample=10)
    assert float(out.data) == pytest.approx(0.0, abs=1e-18)


def test_mask_loss_offset_cloud_penalized():
    # [DERIVED] 10 px offset -> at least 100 in squared-pixel chamfer
    cam = front_camera()
    mask = np.zeros((32, 32), dtype=bool)
    mask[16, 10:14] = True
    dirs = cam.pixel_dirs(np.array([[x, 16 + 10] for x in range(10, 14)]))
    pts = cam.origin + 2.0 * dirs  # projects 10 px below the mask row
    out = mask_loss(Tensor(pts), cam, mask, subsample=100)
    assert float(out.data) >= 100.0


def test_mask_loss_empty_mask_skipped():
    cam = front_camera()
    assert mask_loss(Tensor(np.zeros((4, 3))), cam, np.zeros((32, 32), bool)) is None


def test_mask_loss_subsample_cap_noop_when_small():
    rng = np.random.default_rng(6)
    cam = front_camera()
    mask = np.zeros((32, 32), dtype=bool)
    mask[8:12, 8:12] = True
    pts = cam.origin + 2.0 * cam.pixel_dirs(rng.integers(4, 28, size=(12, 2)))
    full = mask_loss(Tensor(pts), cam, mask, subsample=10**6, rng=np.random.default_rng(0))
    capped = mask_loss(Tensor(pts), cam, mask, subsample=9999, rng=np.random.default_rng(1))
    assert float(full.data) == pytest.approx(float(capped.data), abs=1e-15)


# -- skeleton loss --------------------------------------------------------------------

def test_skel_loss_zero_when_equal():
    pts = np.random.default_rng(7).uniform(size=(12, 3))
    assert float(skel_loss(pts, Tensor(pts)).data) == 0.0


def test_skel_loss_displaced_joint():
    # [DERIVED] brute-force chamfer on the fixture
    medial = np.stack([np.linspace(0, 1, 101), np.zeros(101), np.zeros(101)], axis=1)
    joints = np.array([[0.25, 0.0, 0.0], [0.75, 0.5, 0.0]])
    expected = brute_force_chamfer(medial, joints)
    assert float(skel_loss(medial, Tensor(joints)).data) == pytest.approx(expected)
    # forward term: displaced joint contributes 0.5^2 / |J|
    assert float(skel_loss(medial, Tensor(joints)).data) >= 0.25 / 2


def test_skel_loss_gradient_to_joints_only():
    medial = np.random.default_rng(8).uniform(size=(30, 3))
    joints = Tensor(np.random.default_rng(9).uniform(size=(4, 3)), requires_grad=True)
    with Tape() as tape:
        grads = tape.backward(skel_loss(medial, joints))
    assert joints in grads
    assert np.any(grads[joints] != 0)


# -- transformation loss -----------------------------------------------------------------

def test_tranf_loss_rest_zero():
    assert float(tranf_loss(make_pose([0.0, 0.0])).data) == pytest.approx(0.0, abs=1e-15)


def test_tranf_loss_sums_absolute_angles():
    assert float(tranf_loss(make_pose([0.3, -0.3])).data) == pytest.approx(0.6, abs=1e-12)


def test_tranf_loss_root_translation_euclidean():
    out = tranf_loss(make_pose([0.0], root_t=(3.0, 4.0, 0.0)))
    assert float(out.data) == pytest.approx(5.0, abs=1e-9)


# -- ARAP ---------------------------------------------------------------------------------

def test_arap_identity_zero():
    rng = np.random.default_rng(10)
    pts = rng.uniform(size=(30, 3))
    nbrs = canonical_neighborhoods(pts, k=4)
    assert float(arap_loss(pts, Tensor(pts), nbrs).data) == 0.0


def test_arap_rigid_motion_invariant():
    rng = np.random.default_rng(11)
    pts = rng.uniform(size=(40, 3))
    nbrs = canonical_neighborhoods(pts, k=5)
    theta = 0.7
    rot = np.array(
        [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]]
    )
    moved = pts @ rot.T + np.array([0.3, -0.1, 0.9])
    assert float(arap_loss(pts, Tensor(moved), nbrs).data) < 1e-9


def test_arap_uniform_scale():
    # [DERIVED] pair at distance 1 scaled by 2: |1 - 4| = 3 per directed pair
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    nbrs = np.array([[1], [0]])
    out = arap_loss(pts, Tensor(pts * 2.0), nbrs)
    assert float(out.data) == pytest.approx(6.0)


# -- weight regularizers ---------------------------------------------------------------------

def test_smooth_loss_identical_weights_zero():
    w = Tensor(np.tile([0.25, 0.75], (10, 1)))
    nbrs = canonical_neighborhoods(np.random.default_rng(12).uniform(size=(10, 3)), k=3)
    assert float(smooth_loss(w, nbrs).data) == 0.0


def test_smooth_loss_disjoint_one_hots():
    w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    nbrs = np.array([[1], [0]])
    assert float(smooth_loss(w, nbrs).data) == pytest.approx(4.0)  # 2 per directed pair


def test_smooth_loss_matches_double_loop():
    rng = np.random.default_rng(13)
    w = rng.uniform(size=(15, 4))
    pts = rng.uniform(size=(15, 3))
    nbrs = canonical_neighborhoods(pts, k=4)
    manual = sum(
        np.abs(w[i] - w[j]).sum() for i in range(15) for j in nbrs[i]
    )
    assert float(smooth_loss(Tensor(w), nbrs).data) == pytest.approx(manual, abs=1e-12)


def test_sparse_loss_endpoints_near_zero():
    w = Tensor(np.array([[0.0, 1.0]]))
    assert float(sparse_loss(w).data) < 1e-5


def test_sparse_loss_half_is_log2():
    w = Tensor(np.array([[0.5]]))
    assert float(sparse_loss(w).data) == pytest.approx(np.log(2.0), abs=1e-12)


def test_sparse_loss_prefers_confident():
    assert float(sparse_loss(Tensor(np.array([[0.5]]))).data) > float(
        sparse_loss(Tensor(np.array([[0.01]]))).data
    )


# -- total ------------------------------------------------------------------------------------

def test_total_loss_default_weights():
    terms = {name: Tensor(1.0) for name in ("photo", "mask", "skel", "tranf", "smooth", "sparse", "arap")}
    report = total_loss(terms)
    assert report.weighted["photo"] == pytest.approx(200.0)
    assert report.weighted["mask"] == pytest.approx(0.02)
    assert report.total == pytest.approx(200.0 + 0.02 + 1.0 + 0.1 + 10.0 + 0.2 + 0.005)


def test_total_loss_all_zero():
    report = total_loss({name: Tensor(0.0) for name in ("photo", "mask", "skel", "tranf", "smooth", "sparse", "arap")})
    assert report.total == 0.0


def test_total_loss_single_term_and_identity():
    report = total_loss({"smooth": Tensor(2.5)})
    assert report.total == pytest.approx(25.0)
    recomputed = sum(report.weighted.values())
    assert abs(report.total - recomputed) < 1e-12


def test_loss_gradchecks():
    rng = np.random.default_rng(14)
    pts = rng.uniform(size=(8, 3))
    nbrs = canonical_neighborhoods(pts, k=3)

    def f_arap(t):
        return arap_loss(pts, ad.reshape(t, (8, 3)), nbrs)

    # keep clear of the |.| kink by displacing the warp
    warped = pts + 0.3 + 0.05 * rng.normal(size=(8, 3))
    assert gradcheck(f_arap, Tensor(warped.reshape(-1))) < 1e-4

    def f_smooth(t):
        return smooth_loss(ad.softmax(ad.reshape(t, (8, 3))), nbrs)

    assert gradcheck(f_smooth, Tensor(rng.normal(size=24))) < 1e-4

    def f_sparse(t):
        return sparse_loss(ad.sigmoid(ad.reshape(t, (8, 2))))

    assert gradcheck(f_sparse, Tensor(rng.normal(size=16))) < 1e-4
