"""UV-space mask projection and atlas baking.

Per-view part masks are projected onto the UV atlas with visibility
testing (depth agreement against each view's depth buffer plus a
grazing-angle cut), fused by per-texel majority vote, hole-filled within UV
islands, and finally baked into albedo/roughness/metallic textures with
seam dilation. All texel work is local and data-parallel.

Label conventions: -1 = covered but unlabeled texel, -2 = outside every UV
island. The depth tolerance is scale-relative (1e-3 x bounding-sphere
radius) so it absorbs rasterization quantization without leaking votes
through thin walls at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgio
from .errors import UvOverlapError
from .matlib import MaterialRecord
from .mesh import TriangleMesh, bounding_box
from .render import ViewBundle, project_points, triangle_coverage

EPS_Z_FACTOR = 1e-3
EPS_AREA = 0.005  # tolerated UV-overlap fraction of covered texels
SEAM_DILATION_TEXELS = 4
DEFAULT_ROUGHNESS = 0.5
DEFAULT_METALLIC = 0.0


@dataclass(frozen=True)
class TexelGrid:
    """Per-texel world position and owning triangle (-1 outside islands)."""

    positions: np.ndarray  # (H, W, 3)
    triangle: np.ndarray  # (H, W) int32

    @property
    def covered(self) -> np.ndarray:
        return self.triangle >= 0


@dataclass(frozen=True)
class UvLabelMap:
    """Per-texel part labels with their vote counts.

    label: (H, W) int32, -1 unlabeled, -2 outside islands.
    votes: (H, W, P) int32 per-part vote counts.
    """

    label: np.ndarray
    votes: np.ndarray
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        labeled = self.label >= 0
        if labeled.any():
            best = self.votes.max(axis=2)
            got = np.take_along_axis(
                self.votes, self.label.clip(min=0)[..., None], axis=2
            )[..., 0]
            if not np.all(got[labeled] >= best[labeled]):
                raise ValueError("label is not an argmax of votes")
        outside = self.label == -2
        if outside.any() and self.votes[outside].any():
            raise ValueError("texels outside islands must have no votes")

    @property
    def n_parts(self) -> int:
        return self.votes.shape[2]


@dataclass(frozen=True)
class BakedAtlas:
    """Baked texture set; provenance indexes into material_ids (-1 unbaked)."""

    albedo: np.ndarray  # (H, W, 3)
    roughness: np.ndarray  # (H, W)
    metallic: np.ndarray  # (H, W)
    provenance: np.ndarray  # (H, W) int32
    material_ids: tuple[str, ...]


def texel_world_positions(mesh: TriangleMesh, resolution: tuple[int, int]) -> TexelGrid:
    """Rasterize the mesh's triangles in UV space.

    Each covered texel stores its barycentric-interpolated 3D position and
    owning triangle. Texel (x, y) sits at UV ((x+0.5)/W, (y+0.5)/H).
    Overlapping UV islands beyond the area tolerance are an error.
    """
    if not mesh.has_uvs:
        raise ValueError("mesh has no UVs; cannot rasterize the atlas")
    w, h = resolution
    positions = np.zeros((h, w, 3), dtype=np.float64)
    triangle = np.full((h, w), -1, dtype=np.int32)
    overlap_count = 0

    for tri_idx in range(mesh.n_triangles):
        uv = mesh.uvs[tri_idx]
        v2d = np.column_stack([uv[:, 0] * w, uv[:, 1] * h])
        ys, xs, bary = triangle_coverage(v2d, w, h)
        if len(ys) == 0:
            continue
        corners = mesh.vertices[mesh.triangles[tri_idx]]
        pts = bary @ corners
        free = triangle[ys, xs] < 0
        overlap_count += int((~free).sum())
        ys, xs, pts = ys[free], xs[free], pts[free]
        triangle[ys, xs] = tri_idx
        positions[ys, xs] = pts

    covered = int((triangle >= 0).sum())
    if covered == 0:
        raise ValueError("no texels covered; empty or degenerate UV layout")
    if overlap_count > EPS_AREA * (covered + overlap_count):
        raise UvOverlapError(
            f"UV overlap: {overlap_count} texels claimed twice "
            f"({overlap_count / (covered + overlap_count):.2%} of coverage)"
        )
    return TexelGrid(positions=positions, triangle=triangle)


def project_masks(
    mesh: TriangleMesh,
    views: list[ViewBundle],
    masks: dict[str, dict[int, np.ndarray]],
    resolution: tuple[int, int],
    n_parts: int | None = None,
) -> UvLabelMap:
    """Fuse per-view part masks into a UV-space label map.

    Every covered texel is projected into each view; a view votes only when
    the texel is inside the frame, depth-consistent with the view's depth
    buffer, and its triangle faces the camera (grazing/backfacing views
    would bleed silhouette-edge mask pixels). Label = argmax vote, ties to
    the lowest part index; texels visible in no view stay at -1.
    """
    grid = texel_world_positions(mesh, resolution)
    w, h = resolution
    if n_parts is None:
        n_parts = 1 + max(
            (p for per in masks.values() for p in per), default=0
        )
    covered = grid.covered
    tex_y, tex_x = np.nonzero(covered)
    pts = grid.positions[tex_y, tex_x]
    tris = grid.triangle[tex_y, tex_x]
    normals = mesh.face_normals()[tris]

    votes_flat = np.zeros((len(pts), n_parts), dtype=np.int32)
    eps_z = EPS_Z_FACTOR * bounding_box(mesh).bounding_sphere_radius

    for view in views:
        per_part = masks.get(view.image_stem)
        if not per_part:
            continue
        vw, vh = view.resolution
        px, py, z, in_front = project_points(view.camera, pts)
        ix = np.floor(px).astype(np.int64)
        iy = np.floor(py).astype(np.int64)
        in_frame = in_front & (ix >= 0) & (ix < vw) & (iy >= 0) & (iy < vh)
        view_dir = pts - view.camera.position
        facing = np.sum(normals * view_dir, axis=1) < 0.0
        candidate = in_frame & facing
        if not candidate.any():
            continue
        ci = np.nonzero(candidate)[0]
        buf_depth = view.depth[iy[ci], ix[ci]]
        visible = np.abs(z[ci] - buf_depth) <= eps_z
        ci = ci[visible]
        if len(ci) == 0:
            continue
        for part_idx, mask in per_part.items():
            hit = np.asarray(mask, dtype=bool)[iy[ci], ix[ci]]
            votes_flat[ci[hit], part_idx] += 1

    votes = np.zeros((h, w, n_parts), dtype=np.int32)
    votes[tex_y, tex_x] = votes_flat
    label = np.full((h, w), -2, dtype=np.int32)
    any_vote = votes_flat.sum(axis=1) > 0
    flat_label = np.where(any_vote, np.argmax(votes_flat, axis=1), -1)
    label[tex_y, tex_x] = flat_label
    return UvLabelMap(label=label, votes=votes)


def fill_unlabeled(label_map: UvLabelMap) -> UvLabelMap:
    """Nearest-label fill of unlabeled texels, restricted within each island.

    Multi-source BFS from labeled texels (4-connected); on distance ties the
    lower part index wins. Islands with no labeled texel at all are flagged
    in the returned map's notes and filled with part 0. Idempotent.
    """
    label = label_map.label.copy()
    notes = list(label_map.notes)
    if not (label == -1).any():
        return UvLabelMap(label=label, votes=label_map.votes, notes=tuple(notes))

    big = label_map.n_parts + 1
    while True:
        todo = label == -1
        if not todo.any():
            break
        neighbor_best = np.full(label.shape, big, dtype=np.int64)
        for shift in (_up, _down, _left, _right):
            shifted = shift(label)
            valid = shifted >= 0
            neighbor_best = np.where(
                valid & (shifted < neighbor_best), shifted, neighbor_best
            )
        reach = todo & (neighbor_best < big)
        if not reach.any():
            break  # remaining -1 texels live on islands without any label
        label[reach] = neighbor_best[reach].astype(np.int32)

    leftover = label == -1
    if leftover.any():
        from scipy import ndimage

        comp, n = ndimage.label(leftover)
        for island in range(1, n + 1):
            ys, xs = np.nonzero(comp == island)
            notes.append(
                f"island at ({int(ys[0])},{int(xs[0])}) with {len(ys)} texels "
                "had no labeled texel; filled with part 0"
            )
        label[leftover] = 0
    return UvLabelMap(label=label, votes=label_map.votes, notes=tuple(notes))


def _up(a):
    out = np.full_like(a, -2)
    out[1:, :] = a[:-1, :]
    return out


def _down(a):
    out = np.full_like(a, -2)
    out[:-1, :] = a[1:, :]
    return out


def _left(a):
    out = np.full_like(a, -2)
    out[:, 1:] = a[:, :-1]
    return out


def _right(a):
    out = np.full_like(a, -2)
    out[:, :-1] = a[:, 1:]
    return out


def sample_image_at_uv(image: np.ndarray, uvs: np.ndarray) -> np.ndarray:
    """Nearest-neighbor sample with wrap addressing; uvs is (..., 2)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    frac = np.mod(np.asarray(uvs, dtype=np.float64), 1.0)
    x = np.minimum((frac[..., 0] * w).astype(np.int64), w - 1)
    y = np.minimum((frac[..., 1] * h).astype(np.int64), h - 1)
    return image[y, x]


def _load_scalar_map(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def bake(
    mesh: TriangleMesh,
    label_map: UvLabelMap,
    assignment: dict[int, MaterialRecord],
    resolution: tuple[int, int],
    dilation: int = SEAM_DILATION_TEXELS,
) -> BakedAtlas:
    """Bake each part's material into the atlas.

    Texels sample their part's maps at the texel UV scaled by tile_scale
    with wrap addressing; missing roughness/metallic maps become the 0.5 /
    0.0 constants. Island-edge colors are pushed ``dilation`` texels outward
    into uncovered space so mip/filtering never pulls in background.
    """
    w, h = resolution
    if label_map.label.shape != (h, w):
        raise ValueError("label map resolution mismatch")
    labeled_parts = sorted(int(p) for p in np.unique(label_map.label) if p >= 0)
    for part in labeled_parts:
        if part not in assignment:
            raise ValueError(f"no material assignment for part {part}")

    albedo = np.zeros((h, w, 3), dtype=np.float64)
    roughness = np.full((h, w), DEFAULT_ROUGHNESS, dtype=np.float64)
    metallic = np.full((h, w), DEFAULT_METALLIC, dtype=np.float64)
    provenance = np.full((h, w), -1, dtype=np.int32)
    material_ids = tuple(assignment[p].id for p in labeled_parts)
    id_index = {p: i for i, p in enumerate(labeled_parts)}

    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    uv = np.stack([(xs + 0.5) / w, (ys + 0.5) / h], axis=-1)

    for part in labeled_parts:
        record = assignment[part]
        sel = label_map.label == part
        coords = uv[sel] * record.tile_scale
        albedo[sel] = sample_image_at_uv(imgio.load_rgb_png(record.maps["albedo"]), coords)
        if "roughness" in record.maps:
            roughness[sel] = sample_image_at_uv(
                _load_scalar_map(record.maps["roughness"]), coords
            )
        if "metallic" in record.maps:
            metallic[sel] = sample_image_at_uv(
                _load_scalar_map(record.maps["metallic"]), coords
            )
        provenance[sel] = id_index[part]

    baked = label_map.label >= 0
    for _ in range(dilation):
        grown = _dilate_step(baked, albedo, roughness, metallic, provenance)
        if not grown:
            break
    return BakedAtlas(
        albedo=albedo,
        roughness=roughness,
        metallic=metallic,
        provenance=provenance,
        material_ids=material_ids,
    )


def _dilate_step(baked, albedo, roughness, metallic, provenance) -> bool:
    """One 4-connected dilation ring; neighbors are consulted in a fixed
    (up, down, left, right) priority so the result is deterministic."""
    fresh = ~baked
    filled_any = False
    source = np.full(baked.shape + (2,), -1, dtype=np.int64)
    have = np.zeros(baked.shape, dtype=bool)
    h, w = baked.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny = ys + dy
        nx = xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        neighbor_baked = np.zeros_like(baked)
        neighbor_baked[ok] = baked[ny[ok], nx[ok]]
        take = fresh & ~have & neighbor_baked
        if take.any():
            source[take, 0] = ny[take]
            source[take, 1] = nx[take]
            have |= take
            filled_any = True
    if filled_any:
        ty, tx = np.nonzero(have)
        sy, sx = source[ty, tx, 0], source[ty, tx, 1]
        albedo[ty, tx] = albedo[sy, sx]
        roughness[ty, tx] = roughness[sy, sx]
        metallic[ty, tx] = metallic[sy, sx]
        provenance[ty, tx] = provenance[sy, sx]
        baked[ty, tx] = True
    return filled_any


def bake_report(label_map: UvLabelMap) -> dict:
    """Unlabeled fraction per island plus per-part texel counts."""
    from scipy import ndimage

    covered = label_map.label != -2
    comp, n = ndimage.label(covered)
    islands = []
    for island in range(1, n + 1):
        sel = comp == island
        total = int(sel.sum())
        unlabeled = int((label_map.label[sel] == -1).sum())
        islands.append(
            {"island": island, "texels": total, "unlabeled_fraction": unlabeled / total}
        )
    counts = {
        int(p): int((label_map.label == p).sum())
        for p in np.unique(label_map.label)
        if p >= 0
    }
    return {
        "islands": islands,
        "per_part_texels": counts,
        "notes": list(label_map.notes),
    }


def save_atlas(atlas: BakedAtlas, label_map: UvLabelMap, out_dir) -> dict[str, str]:
    """Write atlas maps, the 16-bit label PNG, and the bake report JSON."""
    import json
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    imgio.save_rgb_png(atlas.albedo, out_dir / "albedo.png")
    paths["albedo"] = str(out_dir / "albedo.png")
    gray = np.repeat(atlas.roughness[..., None], 3, axis=2)
    imgio.save_rgb_png(gray, out_dir / "roughness.png")
    paths["roughness"] = str(out_dir / "roughness.png")
    gray = np.repeat(atlas.metallic[..., None], 3, axis=2)
    imgio.save_rgb_png(gray, out_dir / "metallic.png")
    paths["metallic"] = str(out_dir / "metallic.png")
    imgio.save_label_png(label_map.label, out_dir / "labels.png")
    paths["labels"] = str(out_dir / "labels.png")
    report_path = out_dir / "bake_report.json"
    report = bake_report(label_map)
    report["material_ids"] = list(atlas.material_ids)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    paths["report"] = str(report_path)
    return paths
