"""Triangle meshes with UV atlases: loading, validation, measurement.

Geometry is in meters. UVs live in a single [0,1]^2 chart space; multi-chart
atlases are represented as disjoint UV islands inside that one chart. All
types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshFormatError


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box, min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _as_point(self.min))
        object.__setattr__(self, "max", _as_point(self.max))
        if not np.all(self.min <= self.max):
            raise ValueError(f"Aabb min {self.min} exceeds max {self.max}")

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def bounding_sphere_radius(self) -> float:
        return float(np.linalg.norm(self.extents) / 2.0)


@dataclass(frozen=True)
class AssetMeta:
    """Physical metadata attached to an asset.

    ``collision_geometry_path`` is a slot only; collision decomposition is
    produced by external tooling.
    """

    scale_factor: float = 1.0
    density: float = 1000.0
    collision_geometry_path: str | None = None
    ior: float | None = None
    transmission: float | None = None

    def __post_init__(self):
        if not self.scale_factor > 0:
            raise ValueError(f"scale_factor must be > 0, got {self.scale_factor}")
        if not self.density > 0:
            raise ValueError(f"density must be > 0, got {self.density}")
        if self.transmission is not None and not 0.0 <= self.transmission <= 1.0:
            raise ValueError(f"transmission must be in [0,1], got {self.transmission}")


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh with optional per-corner UVs and group labels.

    vertices   : (V, 3) float64, meters
    triangles  : (T, 3) int32 vertex indices
    uvs        : (T, 3, 2) float64 per-corner UV, or None (mesh is then
                 "unbakeable": it can be rendered but not projected or baked)
    groups     : (T,) int32 per-triangle label, or None
    group_names: label -> human-readable name, populated from OBJ g/usemtl
                 sections (not part of the mesh-JSON format)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray | None = None
    groups: np.ndarray | None = None
    name: str = ""
    group_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError(f"vertices must be (V,3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshFormatError(f"triangles must be (T,3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshFormatError("non-finite vertex coordinate")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(np.argwhere((t < 0) | (t >= len(v)))[0][0])
            raise MeshFormatError(
                f"triangle {bad} references vertex index outside 0..{len(v) - 1}"
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

        if self.uvs is not None:
            uv = np.ascontiguousarray(np.asarray(self.uvs, dtype=np.float64))
            if uv.shape != (len(t), 3, 2):
                raise MeshFormatError(f"uvs must be (T,3,2), got {uv.shape}")
            if not np.all(np.isfinite(uv)):
                raise MeshFormatError("non-finite UV coordinate")
            uv.flags.writeable = False
            object.__setattr__(self, "uvs", uv)
        if self.groups is not None:
            g = np.ascontiguousarray(np.asarray(self.groups, dtype=np.int32))
            if g.shape != (len(t),):
                raise MeshFormatError(f"groups must be (T,), got {g.shape}")
            g.flags.writeable = False
            object.__setattr__(self, "groups", g)
        v.flags.writeable = False
        t.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def has_uvs(self) -> bool:
        return self.uvs is not None

    def group_name(self, label: int) -> str:
        return self.group_names.get(int(label), f"group{int(label)}")

    def face_normals(self) -> np.ndarray:
        """Unit face normals, (T, 3). Degenerate triangles get a zero normal."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            n = np.where(length > 0, n / np.where(length > 0, length, 1.0), 0.0)
        return n


def bounding_box(mesh: TriangleMesh) -> Aabb:
    """Tight AABB over all vertices."""
    if mesh.n_vertices == 0:
        raise MeshFormatError("cannot compute bounding box of empty mesh")
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def translate(mesh: TriangleMesh, offset) -> TriangleMesh:
    """Mesh shifted by ``offset``; all other attributes shared."""
    offset = _as_point(offset)
    return TriangleMesh(
        vertices=mesh.vertices + offset,
        triangles=mesh.triangles,
        uvs=mesh.uvs,
        groups=mesh.groups,
        name=mesh.name,
        group_names=dict(mesh.group_names),
    )


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or mesh-JSON file.

    OBJ subset: ``v``, ``vt``, ``f`` (triangles only, ``v/vt`` or ``v/vt/vn``
    corners), ``g``, ``usemtl``. Non-triangle faces are rejected rather than
    triangulated. Faces without ``vt`` references load fine but leave the
    mesh without UVs.
    """
    path = Path(path)
    if not path.exists():
        raise MeshFormatError(f"mesh file not found: {path}")
    if path.suffix.lower() == ".obj":
        return _load_obj(path)
    if path.suffix.lower() == ".json":
        return load_mesh_json(path)
    raise MeshFormatError(f"unsupported mesh format: {path.suffix!r} ({path})")


def _load_obj(path: Path) -> TriangleMesh:
    positions: list[list[float]] = []
    texcoords: list[list[float]] = []
    tris: list[list[int]] = []
    tri_uvs: list[list[list[float]]] = []
    tri_groups: list[int] = []
    group_names: dict[int, str] = {}
    name_to_label: dict[str, int] = {}
    current_label: int | None = None
    any_uv_face = False
    any_bare_face = False

    def label_for(group: str) -> int:
        if group not in name_to_label:
            label = len(name_to_label)
            name_to_label[group] = label
            group_names[label] = group
        return name_to_label[group]

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"malformed vertex at line {lineno}: {line!r}")
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                if len(parts) < 3:
                    raise MeshFormatError(f"malformed texcoord at line {lineno}: {line!r}")
                texcoords.append([float(parts[1]), float(parts[2])])
            elif tag in ("g", "usemtl"):
                if len(parts) > 1:
                    current_label = label_for(" ".join(parts[1:]))
                else:
                    current_label = None
            elif tag == "f":
                corners = parts[1:]
                if len(corners) != 3:
                    raise MeshFormatError(
                        f"non-triangle face at line {lineno} ({len(corners)} corners)"
                    )
                vi: list[int] = []
                ti: list[int | None] = []
                for corner in corners:
                    fields = corner.split("/")
                    vi.append(_obj_index(fields[0], len(positions), lineno))
                    if len(fields) > 1 and fields[1]:
                        ti.append(_obj_index(fields[1], len(texcoords), lineno))
                    else:
                        ti.append(None)
                tris.append(vi)
                if all(t is not None for t in ti):
                    any_uv_face = True
                    tri_uvs.append([texcoords[t] for t in ti])  # type: ignore[index]
                else:
                    any_bare_face = True
                    tri_uvs.append([[0.0, 0.0]] * 3)
                tri_groups.append(current_label if current_label is not None else 0)
                if current_label is None and 0 not in group_names:
                    group_names[0] = "default"
                    name_to_label.setdefault("default", 0)

    if not tris:
        raise MeshFormatError(f"no faces in {path}")
    if any_uv_face and any_bare_face:
        raise MeshFormatError(f"mixed UV/non-UV faces in {path}")

    return TriangleMesh(
        vertices=np.array(positions, dtype=np.float64),
        triangles=np.array(tris, dtype=np.int32),
        uvs=np.array(tri_uvs, dtype=np.float64) if any_uv_face else None,
        groups=np.array(tri_groups, dtype=np.int32),
        name=path.stem,
        group_names=group_names,
    )


def _obj_index(token: str, count: int, lineno: int) -> int:
    idx = int(token)
    idx = idx - 1 if idx > 0 else count + idx
    if not 0 <= idx < count:
        raise MeshFormatError(f"index out of range at line {lineno}")
    return idx


def load_mesh_json(path) -> TriangleMesh:
    """Load the toolkit's mesh-JSON format."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"invalid JSON in {path}: {exc}") from exc
    for key in ("name", "vertices", "triangles"):
        if key not in doc:
            raise MeshFormatError(f"mesh-JSON missing field {key!r} in {path}")
    return TriangleMesh(
        vertices=np.array(doc["vertices"], dtype=np.float64),
        triangles=np.array(doc["triangles"], dtype=np.int32),
        uvs=np.array(doc["uvs"], dtype=np.float64) if doc.get("uvs") is not None else None,
        groups=(
            np.array(doc["groups"], dtype=np.int32)
            if doc.get("groups") is not None
            else None
        ),
        name=doc["name"],
    )


def save_mesh_json(mesh: TriangleMesh, path) -> None:
    """Write the canonical mesh-JSON form.

    Field order is fixed (name, vertices, triangles, uvs, groups), floats use
    their shortest round-tripping representation, and absent optional fields
    are omitted, so load -> save -> load is a byte-level fixed point.
    """
    payload: dict = {
        "name": mesh.name,
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
    }
    if mesh.uvs is not None:
        payload["uvs"] = mesh.uvs.tolist()
    if mesh.groups is not None:
        payload["groups"] = mesh.groups.tolist()
    Path(path).write_text(
        json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def _as_point(value) -> np.ndarray:
    p = np.asarray(value, dtype=np.float64).reshape(3)
    p = p.copy()
    p.flags.writeable = False
    return p
