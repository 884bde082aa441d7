import math

import numpy as np
import pytest

from viser_forge.mesh import TriangleMesh, bounding_box
from viser_forge.render import Camera, camera_ring, rasterize

# Unit cube centered at the origin: 12 triangles, 6 groups (one per face),
# UVs laid out as 6 inset islands on a 3x2 grid.
_ISLAND_MARGIN = 0.02

_CUBE_FACES = [
    # name, 4 CCW corners (outward normal), island (col, row)
    ("top", [(-0.5, -0.5, 0.5), (0.5, -0.5, 0.5), (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5)], (0, 0)),
    ("bottom", [(-0.5, -0.5, -0.5), (-0.5, 0.5, -0.5), (0.5, 0.5, -0.5), (0.5, -0.5, -0.5)], (1, 0)),
    ("front", [(-0.5, -0.5, -0.5), (0.5, -0.5, -0.5), (0.5, -0.5, 0.5), (-0.5, -0.5, 0.5)], (2, 0)),
    ("back", [(0.5, 0.5, -0.5), (-0.5, 0.5, -0.5), (-0.5, 0.5, 0.5), (0.5, 0.5, 0.5)], (0, 1)),
    ("left", [(-0.5, 0.5, -0.5), (-0.5, -0.5, -0.5), (-0.5, -0.5, 0.5), (-0.5, 0.5, 0.5)], (1, 1)),
    ("right", [(0.5, -0.5, -0.5), (0.5, 0.5, -0.5), (0.5, 0.5, 0.5), (0.5, -0.5, 0.5)], (2, 1)),
]


def cube_island_uvs(col: int, row: int):
    u0 = col / 3.0 + _ISLAND_MARGIN
    u1 = (col + 1) / 3.0 - _ISLAND_MARGIN
    v0 = row / 2.0 + _ISLAND_MARGIN
    v1 = (row + 1) / 2.0 - _ISLAND_MARGIN
    return [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]


def cube_obj_text() -> str:
    out = []
    count = 0
    for name, corners, (col, row) in _CUBE_FACES:
        for corner in corners:
            out.append("v " + " ".join(str(c) for c in corner))
        for u, v in cube_island_uvs(col, row):
            out.append(f"vt {u} {v}")
        a, b, c, d = (count + i for i in (1, 2, 3, 4))
        out.append(f"g {name}")
        out.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        out.append(f"f {a}/{a} {c}/{c} {d}/{d}")
        count += 4
    return "\n".join(out) + "\n"


def build_cube_mesh() -> TriangleMesh:
    vertices = []
    triangles = []
    uvs = []
    groups = []
    group_names = {}
    for label, (name, corners, (col, row)) in enumerate(_CUBE_FACES):
        group_names[label] = name
        base = len(vertices)
        vertices.extend(corners)
        island = cube_island_uvs(col, row)
        for tri, uv_idx in (((0, 1, 2), (0, 1, 2)), ((0, 2, 3), (0, 2, 3))):
            triangles.append([base + i for i in tri])
            uvs.append([island[i] for i in uv_idx])
            groups.append(label)
    return TriangleMesh(
        vertices=np.array(vertices),
        triangles=np.array(triangles),
        uvs=np.array(uvs),
        groups=np.array(groups),
        name="cube",
        group_names=group_names,
    )


def build_two_quads_mesh() -> TriangleMesh:
    """Two z-parallel quads; the near one (z=1) occludes the center of the
    far one (z=2) when viewed from the origin along +Z. Groups 0/1."""
    near = [(-0.3, -0.3, 1.0), (0.3, -0.3, 1.0), (0.3, 0.3, 1.0), (-0.3, 0.3, 1.0)]
    far = [(-0.6, -0.6, 2.0), (0.6, -0.6, 2.0), (0.6, 0.6, 2.0), (-0.6, 0.6, 2.0)]
    vertices = near + far
    triangles = [[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]]
    # near quad owns the left half of the atlas, far quad the right half
    left = [(0.05, 0.05), (0.45, 0.05), (0.45, 0.95), (0.05, 0.95)]
    right = [(0.55, 0.05), (0.95, 0.05), (0.95, 0.95), (0.55, 0.95)]
    uvs = [
        [left[0], left[1], left[2]],
        [left[0], left[2], left[3]],
        [right[0], right[1], right[2]],
        [right[0], right[2], right[3]],
    ]
    return TriangleMesh(
        vertices=np.array(vertices),
        triangles=np.array(triangles),
        uvs=np.array(uvs),
        groups=np.array([0, 0, 1, 1]),
        name="two_quads",
        group_names={0: "near", 1: "far"},
    )


def origin_camera(resolution=(128, 128), fov=math.radians(50.0)) -> Camera:
    """Camera at the origin looking along +Z."""
    return Camera(
        position=np.array([0.0, 0.0, 0.0]),
        target=np.array([0.0, 0.0, 1.0]),
        up=np.array([0.0, 1.0, 0.0]),
        vertical_fov=fov,
        resolution=resolution,
    )


def random_mesh(rng: np.random.Generator, n_triangles: int) -> TriangleMesh:
    """Random triangle soup in front of the origin camera (z in [1, 3])."""
    verts = np.column_stack(
        [
            rng.uniform(-1.0, 1.0, n_triangles * 3),
            rng.uniform(-1.0, 1.0, n_triangles * 3),
            rng.uniform(1.0, 3.0, n_triangles * 3),
        ]
    )
    tris = np.arange(n_triangles * 3).reshape(-1, 3)
    return TriangleMesh(vertices=verts, triangles=tris, name="random")


@pytest.fixture(scope="session")
def cube_mesh() -> TriangleMesh:
    return build_cube_mesh()


@pytest.fixture(scope="session")
def cube_obj(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("meshes") / "cube.obj"
    path.write_text(cube_obj_text())
    return str(path)


@pytest.fixture(scope="session")
def two_quads_mesh() -> TriangleMesh:
    return build_two_quads_mesh()


@pytest.fixture(scope="session")
def cube_views_128(cube_mesh):
    """8 fast views of the cube for unit tests."""
    cams = camera_ring(bounding_box(cube_mesh), 8, resolution=(128, 128))
    return [
        rasterize(cube_mesh, cam, image_stem=f"cube_v{i:02d}")
        for i, cam in enumerate(cams)
    ]


@pytest.fixture(scope="session")
def cube_views_512(cube_mesh):
    """The full 32-view, 512x512 render used by the acceptance suite."""
    cams = camera_ring(bounding_box(cube_mesh), 32, resolution=(512, 512))
    return [
        rasterize(cube_mesh, cam, image_stem=f"cube_v{i:02d}")
        for i, cam in enumerate(cams)
    ]
