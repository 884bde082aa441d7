"""Multi-view G-buffer rendering with a deterministic software rasterizer.

Cameras sit on a Fibonacci sphere around the asset and each view produces
color, depth, face-id, and interpolated-UV buffers. Shading is a single
camera-mounted headlight plus ambient with an optional Blinn-style specular
lobe; there are no cast shadows, because these renders feed segmentation and
the mock oracles rather than any benchmark imagery. Everything is pure and
pixel-for-pixel deterministic, so views can be rendered in parallel.

Conventions: pixel centers at (x + 0.5, y + 0.5) with the origin at the
top-left; shared triangle edges resolved by the top-left fill rule; depth is
camera-space z in meters (+inf background).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import Aabb, TriangleMesh, bounding_box

_NEAR = 1e-4
_DEFAULT_ROUGHNESS = 0.5
_DEFAULT_METALLIC = 0.0
_AMBIENT = 0.15
_DIFFUSE = 0.85


@dataclass(frozen=True)
class Camera:
    """Perspective pinhole camera."""

    position: np.ndarray
    target: np.ndarray
    up: np.ndarray
    vertical_fov: float
    resolution: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "target", _vec3(self.target))
        object.__setattr__(self, "up", _vec3(self.up))
        if np.allclose(self.position, self.target):
            raise ValueError("camera position equals target")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError(f"vertical_fov out of (0, pi): {self.vertical_fov}")
        w, h = self.resolution
        if w < 16 or h < 16:
            raise ValueError(f"resolution below 16x16: {self.resolution}")
        object.__setattr__(self, "resolution", (int(w), int(h)))

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward). Falls back to a +Y up vector
        when the view direction is nearly parallel to the configured up."""
        forward = self.target - self.position
        forward = forward / np.linalg.norm(forward)
        up = self.up / np.linalg.norm(self.up)
        if abs(float(forward @ up)) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
            if abs(float(forward @ up)) > 0.999:
                up = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return right, true_up, forward


@dataclass(frozen=True)
class ShadingOverride:
    """Material override for the whole render; None fields keep defaults.

    The no-specular preset pins roughness to 1.0 and metallic to 0.0, which
    zeroes the specular lobe exactly.
    """

    roughness: float | None = None
    metallic: float | None = None

    def __post_init__(self):
        for fname, v in (("roughness", self.roughness), ("metallic", self.metallic)):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{fname} out of [0,1]: {v}")

    @classmethod
    def no_specular(cls) -> "ShadingOverride":
        return cls(roughness=1.0, metallic=0.0)


@dataclass(frozen=True)
class ViewBundle:
    """One view's G-buffers plus the camera that produced them.

    color:   (H, W, 3) in [0,1]
    depth:   (H, W) camera-space z in meters, +inf where nothing was hit
    face_id: (H, W) int32 triangle index, -1 background
    uv:      (H, W, 2) perspective-correct interpolated UVs
    """

    camera: Camera
    color: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray
    uv: np.ndarray
    image_stem: str
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        covered = self.face_id >= 0
        if not np.array_equal(covered, np.isfinite(self.depth)):
            raise ValueError("face_id/depth coupling violated")

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.depth.shape
        return (w, h)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n near-uniform unit directions; the first sample is +Z."""
    if n < 1:
        raise ValueError("need at least one direction")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * i / (n - 1)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def camera_ring(
    mesh_bbox: Aabb,
    n_views: int,
    distance_factor: float = 2.5,
    resolution: tuple[int, int] = (512, 512),
    vertical_fov: float = math.radians(50.0),
) -> list[Camera]:
    """Cameras on a Fibonacci sphere around the bbox centroid.

    Radius is distance_factor x bounding-sphere radius; every camera targets
    the centroid. Deterministic for fixed inputs.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    if distance_factor <= 0:
        raise ValueError("distance_factor must be > 0")
    sphere_r = mesh_bbox.bounding_sphere_radius
    if sphere_r <= 0:
        raise ValueError("degenerate bounding box (zero bounding-sphere radius)")
    centroid = mesh_bbox.center
    radius = distance_factor * sphere_r
    cameras = []
    for direction in fibonacci_sphere(n_views):
        up = (0.0, 0.0, 1.0)
        if abs(direction[2]) > 0.999:
            up = (0.0, 1.0, 0.0)
        cameras.append(
            Camera(
                position=centroid + radius * direction,
                target=centroid,
                up=np.array(up),
                vertical_fov=vertical_fov,
                resolution=resolution,
            )
        )
    return cameras


def project_points(camera: Camera, points: np.ndarray):
    """Project world points into continuous pixel coordinates.

    Returns (px, py, z_cam, in_front); px/py are only meaningful where
    in_front is True. Used by the renderer and by UV-space mask projection.
    """
    right, up, forward = camera.basis()
    d = np.atleast_2d(points) - camera.position
    xc = d @ right
    yc = d @ up
    zc = d @ forward
    w, h = camera.resolution
    half_h = math.tan(camera.vertical_fov / 2.0)
    half_w = half_h * w / h
    in_front = zc > _NEAR
    safe_z = np.where(in_front, zc, 1.0)
    px = (xc / safe_z / half_w * 0.5 + 0.5) * w
    py = (0.5 - yc / safe_z / half_h * 0.5) * h
    return px, py, zc, in_front


def triangle_coverage(v2d: np.ndarray, width: int, height: int):
    """Pixels whose centers fall inside a 2D triangle, with barycentrics.

    v2d is (3, 2) in continuous pixel coordinates. Returns (ys, xs, bary)
    where bary is (N, 3) affine barycentric weights matching the input
    vertex order. Shared edges follow the top-left fill rule so adjacent
    triangles never both claim a pixel center.
    """
    a, b, c = v2d
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if area2 == 0.0:
        return _EMPTY_COVERAGE
    if area2 < 0.0:
        ys, xs, bary = triangle_coverage(v2d[[0, 2, 1]], width, height)
        return ys, xs, bary[:, [0, 2, 1]]

    min_x = max(0, int(math.floor(min(a[0], b[0], c[0]) - 0.5)))
    max_x = min(width - 1, int(math.ceil(max(a[0], b[0], c[0]))))
    min_y = max(0, int(math.floor(min(a[1], b[1], c[1]) - 0.5)))
    max_y = min(height - 1, int(math.ceil(max(a[1], b[1], c[1]))))
    if min_x > max_x or min_y > max_y:
        return _EMPTY_COVERAGE

    xs = np.arange(min_x, max_x + 1, dtype=np.float64) + 0.5
    ys = np.arange(min_y, max_y + 1, dtype=np.float64) + 0.5
    px, py = np.meshgrid(xs, ys)

    e01 = _edge(a, b, px, py)
    e12 = _edge(b, c, px, py)
    e20 = _edge(c, a, px, py)
    inside = (
        _edge_accept(e01, a, b)
        & _edge_accept(e12, b, c)
        & _edge_accept(e20, c, a)
    )
    if not inside.any():
        return _EMPTY_COVERAGE
    iy, ix = np.nonzero(inside)
    w0 = e12[iy, ix] / area2
    w1 = e20[iy, ix] / area2
    w2 = e01[iy, ix] / area2
    return iy + min_y, ix + min_x, np.column_stack([w0, w1, w2])


def _edge(a, b, px, py):
    return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])


def _edge_accept(e, a, b):
    # Top-left rule: zero-valued edge pixels belong to left edges (dy < 0)
    # and to horizontal top edges (dy == 0, dx > 0).
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    if dy < 0.0 or (dy == 0.0 and dx > 0.0):
        return e >= 0.0
    return e > 0.0


_EMPTY_COVERAGE = (
    np.empty(0, dtype=np.int64),
    np.empty(0, dtype=np.int64),
    np.empty((0, 3), dtype=np.float64),
)


def _clip_near(cam_pts: np.ndarray, attrs: np.ndarray):
    """Sutherland-Hodgman clip of a camera-space triangle against z = near.

    attrs rides along with the positions and is interpolated linearly.
    Returns (points, attrs) polygons with 0, 3, or 4 vertices.
    """
    z = cam_pts[:, 2]
    if np.all(z > _NEAR):
        return cam_pts, attrs
    if np.all(z <= _NEAR):
        return cam_pts[:0], attrs[:0]
    out_p, out_a = [], []
    for i in range(3):
        cur_p, cur_a, cur_z = cam_pts[i], attrs[i], z[i]
        nxt = (i + 1) % 3
        nxt_p, nxt_a, nxt_z = cam_pts[nxt], attrs[nxt], z[nxt]
        if cur_z > _NEAR:
            out_p.append(cur_p)
            out_a.append(cur_a)
        if (cur_z > _NEAR) != (nxt_z > _NEAR):
            t = (_NEAR - cur_z) / (nxt_z - cur_z)
            out_p.append(cur_p + t * (nxt_p - cur_p))
            out_a.append(cur_a + t * (nxt_a - cur_a))
    return np.array(out_p), np.array(out_a)


def group_palette(label: int) -> np.ndarray:
    """Deterministic per-group base color (golden-ratio hue cycling)."""
    hue = (label * 0.61803398875) % 1.0
    return _hsv_to_rgb(hue, 0.55, 0.8)


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb)


def rasterize(
    mesh: TriangleMesh,
    camera: Camera,
    override: ShadingOverride | None = None,
    image_stem: str = "view",
) -> ViewBundle:
    """Render one view: perspective projection with z-buffer hidden-surface
    removal, perspective-correct UV interpolation, and headlight shading.

    Depth ties between coplanar triangles resolve to the lower face id, so
    the output is independent of triangle submission order.
    """
    if mesh.n_triangles == 0:
        raise ValueError("cannot rasterize empty mesh")
    w, h = camera.resolution
    depth = np.full((h, w), np.inf, dtype=np.float64)
    face = np.full((h, w), -1, dtype=np.int32)
    uvbuf = np.zeros((h, w, 2), dtype=np.float64)
    posbuf = np.zeros((h, w, 3), dtype=np.float64)

    flags: list[str] = []
    if not mesh.has_uvs:
        flags.append("no-uvs")
    bbox = bounding_box(mesh)
    if (
        float(np.linalg.norm(camera.position - bbox.center))
        < bbox.bounding_sphere_radius
    ):
        flags.append("camera-inside-bounding-sphere")

    right, up, forward = camera.basis()
    rel = mesh.vertices - camera.position
    cam_xyz = np.column_stack([rel @ right, rel @ up, rel @ forward])
    half_h = math.tan(camera.vertical_fov / 2.0)
    half_w = half_h * w / h

    uvs = mesh.uvs if mesh.uvs is not None else np.zeros((mesh.n_triangles, 3, 2))

    for tri_idx in range(mesh.n_triangles):
        vidx = mesh.triangles[tri_idx]
        cam_pts = cam_xyz[vidx]
        attrs = np.hstack([mesh.vertices[vidx], uvs[tri_idx]])  # world xyz + uv
        cam_pts, attrs = _clip_near(cam_pts, attrs)
        n_poly = len(cam_pts)
        if n_poly < 3:
            continue
        sx = (cam_pts[:, 0] / cam_pts[:, 2] / half_w * 0.5 + 0.5) * w
        sy = (0.5 - cam_pts[:, 1] / cam_pts[:, 2] / half_h * 0.5) * h
        inv_z = 1.0 / cam_pts[:, 2]
        screen = np.column_stack([sx, sy])

        for fan in range(n_poly - 2):
            sel = [0, fan + 1, fan + 2]
            ys, xs, bary = triangle_coverage(screen[sel], w, h)
            if len(ys) == 0:
                continue
            izs = inv_z[sel]
            denom = bary @ izs
            z = 1.0 / denom
            persp = bary * izs / denom[:, None]

            current = depth[ys, xs]
            write = (z < current) | ((z == current) & (tri_idx < face[ys, xs]))
            if not write.any():
                continue
            ys, xs, z, persp = ys[write], xs[write], z[write], persp[write]
            depth[ys, xs] = z
            face[ys, xs] = tri_idx
            interp = persp @ attrs[sel]
            posbuf[ys, xs] = interp[:, :3]
            uvbuf[ys, xs] = interp[:, 3:5]

    color = _shade(mesh, camera, depth, face, posbuf, override)
    covered = face >= 0
    uvbuf[~covered] = 0.0
    return ViewBundle(
        camera=camera,
        color=color,
        depth=depth,
        face_id=face,
        uv=uvbuf,
        image_stem=image_stem,
        flags=tuple(flags),
    )


def _shade(mesh, camera, depth, face, posbuf, override):
    roughness = _DEFAULT_ROUGHNESS
    metallic = _DEFAULT_METALLIC
    if override is not None:
        if override.roughness is not None:
            roughness = override.roughness
        if override.metallic is not None:
            metallic = override.metallic

    h_img, w_img = depth.shape
    color = np.zeros((h_img, w_img, 3), dtype=np.float64)
    covered = face >= 0
    if not covered.any():
        return color

    normals = mesh.face_normals()
    fid = face[covered]
    n = normals[fid]
    to_light = camera.position - posbuf[covered]
    to_light /= np.linalg.norm(to_light, axis=1, keepdims=True)
    ndotl = np.abs(np.sum(n * to_light, axis=1))  # two-sided headlight

    if mesh.groups is not None:
        labels = mesh.groups[fid]
        palette = {g: group_palette(int(g)) for g in np.unique(labels)}
        base = np.array([palette[g] for g in labels])
    else:
        base = np.full((len(fid), 3), 0.7)

    spec_strength = (1.0 - roughness) ** 2
    shininess = 2.0 / max(roughness, 0.05) ** 2
    # Headlight: the half vector coincides with the light direction.
    spec = spec_strength * ndotl**shininess
    spec_tint = (1.0 - metallic) * np.ones(3) + metallic * base
    shaded = (
        base * (_AMBIENT + _DIFFUSE * ndotl[:, None] * (1.0 - metallic))
        + spec_tint * spec[:, None]
    )
    color[covered] = np.clip(shaded, 0.0, 1.0)
    return color


def view_stem(mesh_stem: str, index: int) -> str:
    return f"{mesh_stem}_v{index:02d}"


def save_view(view: ViewBundle, out_dir, image_format: str = "png") -> dict[str, str]:
    """Write <stem>.png (or .ppm), <stem>.depth, <stem>.face to out_dir."""
    from pathlib import Path

    from . import imgio

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = view.image_stem
    paths = {}
    if image_format == "ppm":
        color_path = out_dir / f"{stem}.ppm"
        imgio.save_rgb_ppm(view.color, color_path)
    else:
        color_path = out_dir / f"{stem}.png"
        imgio.save_rgb_png(view.color, color_path)
    paths["color"] = str(color_path)
    depth_path = out_dir / f"{stem}.depth"
    imgio.save_buffer(view.depth.astype(np.float32), depth_path)
    paths["depth"] = str(depth_path)
    face_path = out_dir / f"{stem}.face"
    imgio.save_buffer(view.face_id, face_path)
    paths["face"] = str(face_path)
    return paths


def _vec3(value) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(3).copy()
    v.flags.writeable = False
    return v
