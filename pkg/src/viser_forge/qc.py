"""Asset hygiene: real-world scaling, density attachment, and detection of
lighting burned into albedo textures.

The light-bake score is an explicit proxy: it measures the island fraction
taken up by bright, desaturated blobs (highlights have high value and low
saturation regardless of the base hue, so the rule is invariant to hue
rotation). The accurate path is the VLM oracle; the proxy exists so the
offline pipeline can flag obvious offenders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mesh import TriangleMesh, bounding_box

LUMINANCE_DELTA = 0.4
SATURATION_MAX = 0.15
MIN_BLOB_TEXELS = 16
MIN_ISLAND_TEXELS = 64
LIGHT_BAKE_THRESHOLD = 0.01  # theta_lb


@dataclass(frozen=True)
class QcReport:
    asset: str
    scale_factor: float
    density: float
    light_bake_flag: bool
    light_bake_score: float
    notes: str = ""

    def __post_init__(self):
        if self.light_bake_score < 0:
            raise ValueError("light_bake_score must be >= 0")
        if self.light_bake_flag != (self.light_bake_score > LIGHT_BAKE_THRESHOLD):
            raise ValueError("light_bake_flag inconsistent with score/threshold")


def apply_scale(
    mesh: TriangleMesh, target_extent_m: float
) -> tuple[TriangleMesh, float]:
    """Uniformly scale the mesh about its bbox center so the longest
    bounding-box axis equals target_extent_m. Returns (mesh, scale factor)."""
    if target_extent_m <= 0:
        raise ValueError("target extent must be > 0")
    box = bounding_box(mesh)
    max_extent = float(box.extents.max())
    if max_extent <= 0:
        raise ValueError("degenerate bounding box (zero extent)")
    s = target_extent_m / max_extent
    center = box.center
    scaled = TriangleMesh(
        vertices=center + s * (mesh.vertices - center),
        triangles=mesh.triangles,
        uvs=mesh.uvs,
        groups=mesh.groups,
        name=mesh.name,
        group_names=dict(mesh.group_names),
    )
    return scaled, s


def _value_saturation(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """HSV value and saturation; both invariant under hue rotation."""
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return mx, sat


def light_bake_score(albedo: np.ndarray, island_mask: np.ndarray) -> tuple[float, str]:
    """Fraction of island texels sitting in bright desaturated blobs.

    A texel qualifies when its value exceeds the island's median by at
    least LUMINANCE_DELTA with saturation below SATURATION_MAX, and it
    belongs to a connected blob of at least MIN_BLOB_TEXELS. Returns
    (score, note).
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    island_mask = np.asarray(island_mask, dtype=bool)
    if albedo.shape[:2] != island_mask.shape:
        raise ValueError(
            f"albedo {albedo.shape[:2]} and island mask {island_mask.shape} disagree"
        )
    n_island = int(island_mask.sum())
    if n_island < MIN_ISLAND_TEXELS:
        return 0.0, "insufficient evidence"

    value, sat = _value_saturation(albedo)
    median = float(np.percentile(value[island_mask], 50))
    candidate = island_mask & (value >= median + LUMINANCE_DELTA) & (sat < SATURATION_MAX)
    if not candidate.any():
        return 0.0, ""
    comp, n = ndimage.label(candidate)
    sizes = np.bincount(comp.ravel())
    qualifying = np.isin(comp, np.nonzero(sizes >= MIN_BLOB_TEXELS)[0]) & candidate
    return float(qualifying.sum()) / n_island, ""


def qc_asset(
    mesh: TriangleMesh,
    albedo: np.ndarray,
    target_extent_m: float,
    density_source: str = "fixed",
    oracle=None,
    island_mask: np.ndarray | None = None,
) -> tuple[TriangleMesh, QcReport]:
    """Scale the asset, attach a density, and flag light-baked albedo.

    density_source "fixed" uses 1000 kg/m3; "oracle" renders one view of
    the scaled mesh and asks the density estimator.
    """
    scaled, s = apply_scale(mesh, target_extent_m)

    if density_source == "fixed":
        density = 1000.0
        density_note = "fixed"
    elif density_source == "oracle":
        if oracle is None:
            raise ValueError("density_source 'oracle' needs an oracle client")
        from .render import camera_ring, rasterize

        cam = camera_ring(bounding_box(scaled), 1)[0]
        view = rasterize(scaled, cam, image_stem=f"{scaled.name}_qc")
        estimate = oracle.estimate_density(view.color)
        density = estimate.density
        density_note = estimate.notes
    else:
        raise ValueError(f"unknown density source {density_source!r}")

    if island_mask is None:
        if scaled.has_uvs:
            from .baking import texel_world_positions

            h, w = np.asarray(albedo).shape[:2]
            island_mask = texel_world_positions(scaled, (w, h)).covered
        else:
            island_mask = np.ones(np.asarray(albedo).shape[:2], dtype=bool)

    score, score_note = light_bake_score(albedo, island_mask)
    notes = "; ".join(filter(None, [density_note, score_note]))
    report = QcReport(
        asset=mesh.name,
        scale_factor=s,
        density=density,
        light_bake_flag=score > LIGHT_BAKE_THRESHOLD,
        light_bake_score=score,
        notes=notes,
    )
    return scaled, report
