import numpy as np
import pytest

from pointrig import autodiff as ad
from pointrig.autodiff import Tape, Tensor, gradcheck
from pointrig.config import RenderConfig
from pointrig.errors import DataError
from pointrig.render import (
    Camera,
    HashGrid,
    RayBatch,
    RenderModel,
    brute_force_query,
    generate_rays,
    render_image,
    render_rays,
    sample_ray,
    volume_render,
)


def look_at_camera(cam_id=0, distance=3.0, width=32, height=32):
    """Camera on +z axis looking at the origin (down -z)."""
    c2w = np.eye(4)
    c2w[2, 3] = distance
    return Camera(
        id=cam_id, width=width, height=height, fx=40.0, fy=40.0,
        cx=width / 2, cy=height / 2, c2w=c2w,
    )


# -- rays ----------------------------------------------------------------------

def test_principal_point_ray_is_forward_axis():
    cam = look_at_camera()
    rays = generate_rays(cam, np.array([[cam.width // 2, cam.height // 2]]), 1.0, 5.0)
    # pixel center offset is half a pixel; the exact principal direction comes
    # from the continuous coordinate (cx - 0.5, cy - 0.5)
    rays = generate_rays(cam, np.array([[cam.cx - 0.5, cam.cy - 0.5]]), 1.0, 5.0)
    assert np.allclose(rays.dirs[0], [0, 0, -1.0], atol=1e-12)


def test_adjacent_pixels_differ_in_camera_x_only():
    cam = look_at_camera()
    rays = generate_rays(cam, np.array([[10, 12], [11, 12]]), 1.0, 5.0)
    d0, d1 = rays.dirs @ cam.rotation  # back to camera frame
    # same y/z direction ratio; only the x component of the pinhole ray moves
    assert d0[1] / d0[2] == pytest.approx(d1[1] / d1[2], abs=1e-12)
    assert d0[0] / d0[2] != pytest.approx(d1[0] / d1[2])


def test_project_unproject_round_trip():
    # [DERIVED] project points along generated rays back to the source pixel
    rng = np.random.default_rng(0)
    cam = Camera(
        id=1, width=48, height=40, fx=55.0, fy=52.0, cx=23.0, cy=21.5,
        c2w=np.block([
            [np.linalg.qr(rng.normal(size=(3, 3)))[0] * np.array([1, 1, np.sign(np.linalg.det(np.linalg.qr(rng.normal(size=(3, 3)))[0]))]), rng.normal(size=(3, 1))],
            [np.zeros((1, 3)), np.ones((1, 1))],
        ]),
    )
    pixels = rng.integers(0, [48, 40], size=(50, 2))
    rays = generate_rays(cam, pixels, 0.5, 4.0)
    ts = rng.uniform(0.5, 4.0, size=50)
    pts = rays.origins + ts[:, None] * rays.dirs
    uv, depth = cam.project(pts)
    assert np.max(np.abs(uv - pixels)) < 1e-6
    assert np.all(depth > 0)


def test_generate_rays_rejects_out_of_bounds():
    cam = look_at_camera()
    with pytest.raises(DataError):
        generate_rays(cam, np.array([[999, 0]]), 1.0, 5.0)


def test_sample_ray_deterministic_midpoints():
    # [DERIVED] midpoint stratification arithmetic for n=2 on [0, 1]
    rays = RayBatch(np.zeros((1, 3)), np.array([[0, 0, -1.0]]), 0.0, 1.0)
    t, delta = sample_ray(rays, 2, rng=None)
    assert np.allclose(t[0], [0.25, 0.75])
    assert np.allclose(delta[0], [0.5, 0.25])


def test_sample_ray_jittered_properties():
    rays = RayBatch(np.zeros((4, 3)), np.tile([0, 0, -1.0], (4, 1)), 1.0, 3.0)
    t, delta = sample_ray(rays, 16, rng=np.random.default_rng(1))
    assert np.all(delta > 0)
    assert np.all(delta.sum(axis=1) <= 2.0 + 1e-12)
    assert np.all(t >= 1.0) and np.all(t <= 3.0)


# -- neighbor query --------------------------------------------------------------

def test_neighbor_query_empty_far_away():
    grid = HashGrid(np.zeros((5, 3)), cell=0.1)
    samples, nbr, mask, _ = grid.query(np.array([[10.0, 10, 10]]), 0.1, 8)
    assert len(samples) == 0


def test_neighbor_query_fewer_than_k():
    pts = np.array([[0.0, 0, 0], [0.05, 0, 0], [0, 0.05, 0]])
    grid = HashGrid(pts, cell=0.2)
    samples, nbr, mask, _ = grid.query(np.array([[0.01, 0.01, 0.0]]), 0.2, 8)
    assert len(samples) == 1
    assert mask[0].sum() == 3


def test_neighbor_query_matches_brute_force():
    # [DERIVED] brute-force oracle, exact agreement including tie order
    rng = np.random.default_rng(2)
    for trial in range(30):
        n = int(rng.integers(20, 400))
        pts = rng.uniform(-1, 1, size=(n, 3))
        queries = rng.uniform(-1.1, 1.1, size=(40, 3))
        radius = float(rng.uniform(0.05, 0.5))
        k = int(rng.integers(1, 10))
        grid = HashGrid(pts, cell=radius)
        samples, nbr, mask, _ = grid.query(queries, radius, k)
        oracle = brute_force_query(pts, queries, radius, k)
        got = {int(s): nbr[i][mask[i] > 0].tolist() for i, s in enumerate(samples)}
        for q, expected in enumerate(oracle):
            if len(expected) == 0:
                assert q not in got
            else:
                assert got[q] == expected.tolist(), f"trial {trial} query {q}"


def test_neighbor_query_duplicate_points_tie_by_index():
    pts = np.zeros((4, 3))
    grid = HashGrid(pts, cell=0.1)
    samples, nbr, mask, _ = grid.query(np.array([[0.0, 0, 0]]), 0.1, 2)
    assert nbr[0].tolist() == [0, 1]


# -- volume rendering ------------------------------------------------------------

def test_volume_render_zero_density_gives_background():
    sigma = Tensor(np.zeros((3, 8)))
    color = Tensor(np.zeros((3, 8, 3)))
    pix, opac = volume_render(sigma, color, np.full((3, 8), 0.2), (1.0, 0.5, 0.25))
    assert np.allclose(pix.data, [1.0, 0.5, 0.25])
    assert np.allclose(opac.data, 0.0)


def test_volume_render_single_sample_closed_form():
    # [DERIVED] 1 - e^{-sigma delta} against the closed form
    sigma = Tensor(np.array([[1.0]]))
    color = Tensor(np.array([[[1.0, 0.0, 0.0]]]))
    pix, opac = volume_render(sigma, color, np.array([[1.0]]), (0.0, 0.0, 0.0))
    expected = 1.0 - np.exp(-1.0)
    assert pix.data[0, 0] == pytest.approx(expected, abs=1e-12)
    assert opac.data[0] == pytest.approx(expected, abs=1e-12)


def test_volume_render_telescoping_identity():
    rng = np.random.default_rng(3)
    sigma = rng.uniform(0, 5, size=(100, 24))
    delta = rng.uniform(0, 0.5, size=(100, 24))
    a = Tensor(sigma * delta)
    trans = ad.exp(-ad.cumsum_exclusive(a, axis=-1))
    weights = (trans * (1.0 - ad.exp(-a))).data
    residual = np.exp(-(sigma * delta).sum(axis=1))
    assert np.max(np.abs(weights.sum(axis=1) + residual - 1.0)) < 1e-12


def test_volume_render_monotone_in_density():
    color = Tensor(np.array([[[0.8, 0.8, 0.8]]]))
    prev = -1.0
    for s in np.linspace(0, 5, 20):
        pix, _ = volume_render(Tensor(np.array([[s]])), color, np.array([[0.5]]), (0.0, 0.0, 0.0))
        assert pix.data[0, 0] >= prev
        prev = pix.data[0, 0]


def test_volume_render_gradcheck():
    rng = np.random.default_rng(4)
    delta = rng.uniform(0.05, 0.3, size=(2, 6))
    color = rng.uniform(0, 1, size=(2, 6, 3))

    def f(t):
        sigma = ad.softplus(ad.reshape(t, (2, 6)))
        pix, _ = volume_render(sigma, Tensor(color), delta, (0.5, 0.5, 0.5))
        return ad.tsum(pix * pix)

    assert gradcheck(f, Tensor(rng.normal(size=12))) < 1e-4


# -- full ray rendering -----------------------------------------------------------

def small_scene(rng, n_points=60):
    pts = rng.uniform(-0.2, 0.2, size=(n_points, 3))
    feats = Tensor(rng.normal(0, 0.1, size=(n_points, 16)), requires_grad=True)
    rot = Tensor(np.tile(np.eye(3), (n_points, 1, 1)))
    cfg = RenderConfig(radius=0.15, samples_per_ray=12, feature_dim=16, hidden=32,
                       near=2.0, far=4.0, pos_bands=3, view_bands=2)
    model = RenderModel(cfg, rng)
    return pts, feats, rot, model


def test_render_rays_deterministic():
    rng = np.random.default_rng(5)
    pts, feats, rot, model = small_scene(rng)
    cam = look_at_camera()
    rays = generate_rays(cam, np.array([[16, 16], [10, 20]]), 2.0, 4.0)
    p1, o1 = render_rays(model, feats, Tensor(pts), rot, rays)
    p2, o2 = render_rays(model, feats, Tensor(pts), rot, rays)
    assert np.array_equal(p1.data, p2.data)
    assert np.array_equal(o1.data, o2.data)


def test_render_rays_empty_cloud_background():
    rng = np.random.default_rng(6)
    pts, feats, rot, model = small_scene(rng)
    cam = look_at_camera()
    far_pts = Tensor(np.full((3, 3), 50.0))
    rays = generate_rays(cam, np.array([[16, 16]]), 2.0, 4.0)
    pix, opac = render_rays(model, feats[:3], far_pts, rot[:3], rays)
    assert np.allclose(pix.data, model.cfg.background)
    assert np.allclose(opac.data, 0.0)


def test_render_rays_gradients_flow_to_features():
    rng = np.random.default_rng(7)
    pts, feats, rot, model = small_scene(rng)
    cam = look_at_camera()
    rays = generate_rays(cam, np.array([[16, 16], [15, 16], [17, 16]]), 2.0, 4.0)
    with Tape() as tape:
        pix, _ = render_rays(model, feats, Tensor(pts), rot, rays)
        grads = tape.backward(ad.tsum(pix))
    assert feats in grads
    assert np.any(grads[feats] != 0)


def test_render_image_shapes_and_silhouette():
    # [DERIVED] analytic projection oracle: opaque box fixture, IoU > 0.9.
    # The renderable solid is the point set dilated by the query radius, so
    # that is what the silhouette oracle projects.
    rng = np.random.default_rng(8)
    half, radius = 0.15, 0.06
    grid = np.stack(np.meshgrid(*[np.linspace(-half, half, 11)] * 3, indexing="ij"), axis=-1)
    pts = grid.reshape(-1, 3)
    n = len(pts)
    feats = Tensor(rng.normal(0, 0.1, size=(n, 16)))
    rot = Tensor(np.tile(np.eye(3), (n, 1, 1)))
    cfg = RenderConfig(radius=radius, samples_per_ray=64, feature_dim=16, hidden=32,
                       near=2.0, far=4.0, pos_bands=3, view_bands=2)
    model = RenderModel(cfg, rng)
    # crank density so the box is opaque
    model.phi_d.bias.data[:] = 25.0
    size = 64
    c2w = np.eye(4)
    c2w[2, 3] = 3.0
    cam = Camera(id=0, width=size, height=size, fx=150.0, fy=150.0, cx=size / 2, cy=size / 2, c2w=c2w)
    img, opac = render_image(model, feats, Tensor(pts), rot, cam)
    assert img.shape == (size, size, 3)
    assert opac.shape == (size, size)
    # project the dilated box's widest cross-section (the z = +half plane)
    xs, ys = np.meshgrid(np.arange(size), np.arange(size))
    px = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    dirs = cam.pixel_dirs(px)
    t_front = (half - cam.origin[2]) / dirs[:, 2]
    hit = cam.origin + t_front[:, None] * dirs
    extent = half + radius
    analytic = ((np.abs(hit[:, 0]) <= extent) & (np.abs(hit[:, 1]) <= extent)).reshape(size, size)
    rendered = opac > 0.5
    iou = (rendered & analytic).sum() / max((rendered | analytic).sum(), 1)
    assert iou > 0.9, f"IoU {iou:.3f}"
    border = np.ones((size, size), dtype=bool)
    border[4:-4, 4:-4] = False
    assert opac[border].max() < 1e-9


def test_embedding_invariant_under_rigid_motion():
    # [DERIVED] rotating the scene and the query together leaves the
    # canonical-frame offset (and so the embedded feature) unchanged
    rng = np.random.default_rng(10)
    n = 20
    feats = Tensor(rng.normal(size=(n, 16)))
    cfg = RenderConfig(radius=0.2, samples_per_ray=8, feature_dim=16, hidden=16,
                       near=1.0, far=2.0, pos_bands=3, view_bands=2)
    model = RenderModel(cfg, rng)
    pts = rng.uniform(-0.3, 0.3, size=(n, 3))
    rots = np.stack([np.eye(3)] * n)
    # blend-like non-orthonormal rotation blocks
    for i in range(n):
        theta = rng.uniform(-0.5, 0.5)
        c, s = np.cos(theta), np.sin(theta)
        rots[i] = 0.7 * np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]) + 0.3 * np.eye(3)
    x = rng.uniform(-0.3, 0.3, size=(n, 3))

    def embed(points, rotations, queries):
        rel = Tensor(queries) - Tensor(points)
        rel_canon = ad.reshape(ad.matmul(ad.matinv3(Tensor(rotations)), ad.reshape(rel, (-1, 3, 1))), (-1, 3))
        return model.embed_neighbors(feats, rel_canon).data

    base = embed(pts, rots, x)
    phi = 0.9
    g = np.array([[np.cos(phi), -np.sin(phi), 0], [np.sin(phi), np.cos(phi), 0], [0, 0, 1.0]])
    g_t = np.array([0.2, -0.4, 0.7])
    moved = embed(pts @ g.T + g_t, np.einsum("ij,njk->nik", g, rots), x @ g.T + g_t)
    assert np.max(np.abs(base - moved)) < 1e-9


def test_neighbor_query_matches_bruteforce_at_ten_thousand_points():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, size=(10000, 3))
    queries = rng.uniform(-1, 1, size=(40, 3))
    radius = 0.08
    grid = HashGrid(pts, cell=radius)
    samples, nbr, mask, _ = grid.query(queries, radius, 8)
    got = {int(s): nbr[i][mask[i] > 0].tolist() for i, s in enumerate(samples)}
    for q, expected in enumerate(brute_force_query(pts, queries, radius, 8)):
        if len(expected) == 0:
            assert q not in got
        else:
            assert got[q] == expected.tolist()
