import math

import numpy as np
import pytest

from viser_forge.imgio import load_buffer, save_buffer
from viser_forge.mesh import TriangleMesh, bounding_box
from viser_forge.render import (
    Camera,
    ShadingOverride,
    camera_ring,
    fibonacci_sphere,
    rasterize,
    save_view,
)

from conftest import build_two_quads_mesh, origin_camera, random_mesh

# Frozen fixture: brute-force minimum pairwise angle over all 496 direction
# pairs of the 32-point Fibonacci sphere (computed once by exhaustive scan).
THETA_MIN_32 = 0.3611


def ray_cast_depths(mesh: TriangleMesh, camera: Camera):
    """Independent per-pixel depth oracle via Moller-Trumbore ray casting.

    Returns (W*H,) min camera-space depth over all triangles covering each
    pixel center (+inf where none does).
    """
    w, h = camera.resolution
    right, up, forward = camera.basis()
    half_h = math.tan(camera.vertical_fov / 2.0)
    half_w = half_h * w / h
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    gx, gy = np.meshgrid(xs, ys)
    dirs = (
        ((gx - 0.5) * 2 * half_w)[..., None] * right
        + (-(gy - 0.5) * 2 * half_h)[..., None] * up
        + forward
    ).reshape(-1, 3)

    best = np.full(len(dirs), np.inf)
    for tri in mesh.triangles:
        a, b, c = mesh.vertices[tri]
        e1, e2 = b - a, c - a
        pvec = np.cross(dirs, e2)
        det = pvec @ e1
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = camera.position - a
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        v = (dirs @ qvec) * inv
        t = (qvec @ e2) * inv
        # epsilon-inclusive bounds so pixels landing exactly on a shared
        # edge register for both triangles (the fill rule gives the pixel
        # to exactly one of them; the min-depth answer is the same)
        eps = 1e-9
        hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-4)
        best = np.where(hit & (t < best), t, best)
    return best


class TestCameraRing:
    def test_positions_exactly_on_sphere(self, cube_mesh):
        box = bounding_box(cube_mesh)
        radius = 2.5 * box.bounding_sphere_radius
        for cam in camera_ring(box, 32):
            assert abs(np.linalg.norm(cam.position - box.center) - radius) < 1e-9
            np.testing.assert_allclose(cam.target, box.center)

    def test_min_pairwise_separation(self, cube_mesh):
        cams = camera_ring(bounding_box(cube_mesh), 32)
        box = bounding_box(cube_mesh)
        dirs = np.array(
            [
                (c.position - box.center) / np.linalg.norm(c.position - box.center)
                for c in cams
            ]
        )
        worst = np.inf
        for i in range(32):
            for j in range(i + 1, 32):
                worst = min(worst, math.acos(np.clip(dirs[i] @ dirs[j], -1, 1)))
        assert worst >= THETA_MIN_32

    def test_single_view_sits_on_plus_z(self, cube_mesh):
        box = bounding_box(cube_mesh)
        (cam,) = camera_ring(box, 1)
        radius = 2.5 * box.bounding_sphere_radius
        np.testing.assert_allclose(
            cam.position, box.center + [0, 0, radius], atol=1e-12
        )

    def test_degenerate_bbox_rejected(self):
        from viser_forge.mesh import Aabb

        with pytest.raises(ValueError, match="degenerate"):
            camera_ring(Aabb(np.zeros(3), np.zeros(3)), 4)

    def test_deterministic(self, cube_mesh):
        box = bounding_box(cube_mesh)
        a = camera_ring(box, 16)
        b = camera_ring(box, 16)
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.position, cb.position)

    def test_fibonacci_first_direction_is_z(self):
        np.testing.assert_array_equal(fibonacci_sphere(1)[0], [0, 0, 1])
        assert fibonacci_sphere(32)[0] @ [0, 0, 1] == pytest.approx(1.0)


class TestRasterize:
    def test_full_frame_constant_depth_plane(self):
        # one huge triangle at z = 2 covering the whole frustum
        mesh = TriangleMesh(
            vertices=np.array(
                [[-8.0, -8.0, 2.0], [8.0, -8.0, 2.0], [0.0, 8.0, 2.0]]
            ),
            triangles=np.array([[0, 1, 2]]),
        )
        view = rasterize(mesh, origin_camera(resolution=(64, 64)))
        assert (view.face_id == 0).all()
        np.testing.assert_allclose(view.depth, 2.0, atol=1e-6)

    def test_near_quad_wins_overlap(self, two_quads_mesh):
        cam = origin_camera(resolution=(96, 96))
        view = rasterize(two_quads_mesh, cam)
        # brute-force oracle: ray-cast depth per pixel
        oracle = ray_cast_depths(two_quads_mesh, cam).reshape(96, 96)
        covered = view.face_id >= 0
        assert covered.any()
        np.testing.assert_allclose(
            view.depth[covered], oracle[covered], rtol=1e-9, atol=1e-9
        )
        # overlap region: near-quad face ids (0/1) everywhere depth == 1
        near_pixels = covered & (view.depth < 1.5)
        assert near_pixels.any()
        assert np.isin(view.face_id[near_pixels], [0, 1]).all()

    def test_no_specular_preset_matches_explicit(self, cube_mesh):
        cam = origin_camera(resolution=(64, 64))
        cam = Camera(
            position=np.array([0.0, 0.0, -2.5]),
            target=np.zeros(3),
            up=np.array([0, 1, 0]),
            vertical_fov=math.radians(50),
            resolution=(64, 64),
        )
        a = rasterize(cube_mesh, cam, ShadingOverride.no_specular())
        b = rasterize(cube_mesh, cam, ShadingOverride(roughness=1.0, metallic=0.0))
        np.testing.assert_array_equal(a.color, b.color)

    def test_face_depth_coupling(self, cube_views_128):
        for view in cube_views_128:
            assert ((view.face_id >= 0) == np.isfinite(view.depth)).all()
            assert (view.face_id < 12).all()

    def test_submission_order_independence(self):
        rng = np.random.default_rng(3)
        mesh = random_mesh(rng, 30)
        cam = origin_camera(resolution=(64, 64))
        base = rasterize(mesh, cam)
        perm = rng.permutation(mesh.n_triangles)
        shuffled = TriangleMesh(
            vertices=mesh.vertices, triangles=mesh.triangles[perm], name="shuffled"
        )
        out = rasterize(shuffled, cam)
        # map shuffled face ids back to the original numbering
        inv = np.empty(len(perm), dtype=np.int64)
        inv[np.arange(len(perm))] = perm
        remapped = np.where(out.face_id >= 0, inv[out.face_id.clip(min=0)], -1)
        np.testing.assert_array_equal(remapped, base.face_id)
        np.testing.assert_array_equal(out.depth, base.depth)

    def test_depth_minimal_over_random_meshes(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            mesh = random_mesh(rng, int(rng.integers(5, 50)))
            cam = origin_camera(resolution=(48, 48))
            view = rasterize(mesh, cam)
            oracle = ray_cast_depths(mesh, cam).reshape(48, 48)
            covered = view.face_id >= 0
            np.testing.assert_allclose(
                view.depth[covered], oracle[covered], rtol=1e-7, atol=1e-9
            )

    def test_camera_inside_bounding_sphere_flagged(self, two_quads_mesh):
        view = rasterize(two_quads_mesh, origin_camera())
        # origin camera is outside this mesh's bounding sphere
        assert "camera-inside-bounding-sphere" not in view.flags
        inside_cam = Camera(
            position=np.array([0.0, 0.0, 1.5]),
            target=np.array([0.0, 0.0, 2.0]),
            up=np.array([0, 1, 0]),
            vertical_fov=math.radians(50),
            resolution=(32, 32),
        )
        view = rasterize(two_quads_mesh, inside_cam)
        assert "camera-inside-bounding-sphere" in view.flags

    def test_mesh_without_uvs_flagged(self):
        mesh = TriangleMesh(
            vertices=np.array([[-1, -1, 2], [1, -1, 2], [0, 1, 2.0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        view = rasterize(mesh, origin_camera(resolution=(32, 32)))
        assert "no-uvs" in view.flags
        assert (view.uv == 0).all()

    def test_empty_mesh_rejected(self):
        mesh = TriangleMesh(vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3)))
        with pytest.raises(ValueError, match="empty"):
            rasterize(mesh, origin_camera())


class TestBufferIO:
    def test_depth_and_face_round_trip(self, tmp_path, cube_views_128):
        view = cube_views_128[0]
        paths = save_view(view, tmp_path)
        depth = load_buffer(paths["depth"])
        face = load_buffer(paths["face"])
        assert depth.dtype == np.float32
        assert face.dtype == np.int32
        np.testing.assert_array_equal(face, view.face_id)
        np.testing.assert_allclose(
            depth[np.isfinite(depth)],
            view.depth[np.isfinite(view.depth)].astype(np.float32),
        )

    def test_header_magic_checked(self, tmp_path):
        bad = tmp_path / "bad.depth"
        bad.write_bytes(b"nope" + b"\x00" * 20)
        with pytest.raises(ValueError, match="VFGB"):
            load_buffer(bad)

    def test_ppm_export(self, tmp_path, cube_views_128):
        view = cube_views_128[0]
        paths = save_view(view, tmp_path, image_format="ppm")
        data = open(paths["color"], "rb").read()
        assert data.startswith(b"P6\n128 128\n255\n")
