import numpy as np
import pytest
from fastapi.testclient import TestClient

from pointrig.autodiff import Tensor
from pointrig.config import RenderConfig, TrainConfig
from pointrig.kinematics import Pose
from pointrig.scene import extract_scene
from pointrig.sceneio import generate_synthetic, load_checkpoint, save_checkpoint, two_joint_arm
from pointrig.service import create_app, interpolate_poses


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    rig = two_joint_arm()
    dataset = generate_synthetic(rig, n_views=2, n_timestamps=3, resolution=(24, 24))
    cfg = TrainConfig(
        iterations=10,
        rays_per_batch=64,
        target_points=500,
        render=RenderConfig(radius=0.06, samples_per_ray=12, near=1.4, far=3.9, hidden=24,
                            feature_dim=16, pos_bands=3, view_bands=2),
    )
    model = extract_scene(dataset, cfg)
    path = root / "model.apck"
    save_checkpoint(path, model)
    return path


@pytest.fixture()
def client(checkpoint):
    return TestClient(create_app(checkpoint))


def rest_pose_body(n_bones):
    return {
        "axes": [[0.0, 0.0, 1.0]] * n_bones,
        "angles": [0.0] * n_bones,
        "root": {"axis": [0.0, 0.0, 1.0], "angle": 0.0, "translation": [0.0, 0.0, 0.0]},
    }


def test_skeleton_endpoint(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.get("/api/skeleton")
    assert res.status_code == 200
    body = res.json()
    assert len(body["joints"]) == model.skeleton.n_joints
    assert body["joints"][0]["parent"] == -1
    assert len(body["bones"]) == model.skeleton.n_bones


def test_pose_endpoint_arity(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.get("/api/pose", params={"t": 0.37})
    assert res.status_code == 200
    body = res.json()
    assert len(body["angles"]) == model.n_bones
    assert len(body["axes"]) == model.n_bones
    assert set(body["root"]) == {"axis", "angle", "translation"}


def test_meta_endpoint(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.get("/api/meta")
    assert res.status_code == 200
    body = res.json()
    assert body["bone_count"] == model.n_bones
    assert body["simplified"] is False
    assert len(body["cameras"]) == 2
    assert len(body["timestamps"]) == 3


def test_render_returns_png_and_is_deterministic(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    req = {"pose": rest_pose_body(model.n_bones), "camera": {"id": 0}}
    r1 = client.post("/api/render", json=req)
    r2 = client.post("/api/render", json=req)
    assert r1.status_code == 200
    assert r1.headers["content-type"] == "image/png"
    assert r1.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert r1.content == r2.content


def test_render_matches_cli_bit_exact(client, checkpoint, tmp_path):
    from pointrig.cli import main

    model, _, _ = load_checkpoint(checkpoint)
    t_c = float(model.timestamps[model.canonical_index])
    pose_body = model.pose_at(t_c).to_dict()
    res = client.post("/api/render", json={"pose": pose_body, "camera": {"id": 1}})
    assert res.status_code == 200
    out = tmp_path / "cli.png"
    code = main(["render", "--ckpt", str(checkpoint), "--camera", "1", "--time", str(t_c), "--out", str(out)])
    assert code == 0
    assert res.content == out.read_bytes()


def test_render_unknown_camera_404(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.post("/api/render", json={"pose": rest_pose_body(model.n_bones), "camera": {"id": 99}})
    assert res.status_code == 404


def test_render_malformed_body_400(client):
    res = client.post("/api/render", json={"pose": {"axes": "nonsense"}})
    assert res.status_code == 400


def test_render_pose_arity_422(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.post(
        "/api/render",
        json={"pose": rest_pose_body(model.n_bones + 2), "camera": {"id": 0}},
    )
    assert res.status_code == 422


def test_render_explicit_camera(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    cam = model.cameras[0]
    res = client.post(
        "/api/render",
        json={
            "pose": rest_pose_body(model.n_bones),
            "camera": cam.to_dict(),
            "width": 16,
            "height": 16,
        },
    )
    assert res.status_code == 200


def test_interpolate_endpoint_inclusion(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    a = rest_pose_body(model.n_bones)
    b = rest_pose_body(model.n_bones)
    b["angles"] = [0.5] * model.n_bones
    res = client.post("/api/interpolate", json={"pose_a": a, "pose_b": b, "steps": 2})
    assert res.status_code == 200
    out = res.json()
    assert len(out) == 2
    assert out[0]["angles"] == a["angles"]
    assert out[1]["angles"] == b["angles"]


def test_interpolate_midpoint(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    a = rest_pose_body(model.n_bones)
    b = rest_pose_body(model.n_bones)
    b["angles"] = [1.0] * model.n_bones
    res = client.post("/api/interpolate", json={"pose_a": a, "pose_b": b, "steps": 3})
    mid = res.json()[1]
    assert np.allclose(mid["angles"], 0.5)


def test_interpolate_arity_mismatch_422(client, checkpoint):
    model, _, _ = load_checkpoint(checkpoint)
    res = client.post(
        "/api/interpolate",
        json={
            "pose_a": rest_pose_body(model.n_bones),
            "pose_b": rest_pose_body(model.n_bones + 1),
            "steps": 4,
        },
    )
    assert res.status_code == 422


def test_interpolate_sign_alignment():
    def mk(axis, angle):
        return Pose(
            axes=Tensor(np.array([axis])),
            angles=Tensor(np.array([angle])),
            root_axis=Tensor(np.zeros(3)),
            root_angle=Tensor(0.0),
            root_translation=Tensor(np.zeros(3)),
        )

    a = mk([0, 0, 1.0], 0.4)
    b = mk([0, 0, -1.0], -0.6)  # same rotation family, opposite axis sign
    mid = interpolate_poses(a, b, 3)[1]
    # aligned interpolation stays on the short path: angle between 0.4 and 0.6
    assert mid.axes.data[0, 2] == pytest.approx(1.0)
    assert 0.4 <= float(mid.angles.data[0]) <= 0.6


def test_reload_swaps_model(checkpoint, tmp_path):
    import os
    import shutil

    work = tmp_path / "live.apck"
    shutil.copy(checkpoint, work)
    client = TestClient(create_app(work, reload=True))
    model, _, _ = load_checkpoint(checkpoint)
    req = {"pose": rest_pose_body(model.n_bones), "camera": {"id": 0}}
    before = client.post("/api/render", json=req).content

    model.features.data = model.features.data + 1.5  # visibly different appearance
    save_checkpoint(work, model)
    os.utime(work, ns=(os.stat(work).st_atime_ns, os.stat(work).st_mtime_ns + 10**6))
    after = client.post("/api/render", json=req).content
    assert before != after
