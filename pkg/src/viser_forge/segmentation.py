"""Global part list unification, promptable segmentation, and the
inspect-and-refine loop.

A single part list is established once across all views and then frozen;
per-(view, part) refinement loops are independent, so they may run in
parallel. The real segmenter lives behind a pluggable interface; the
built-in MockSegmenter answers from mesh group labels and is fully
deterministic. Masks are plain (H, W) bool arrays matched to their view's
resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imgio
from .grid import grid_rect_to_pixels, pixel_rect_to_grid
from .oracle import PartProposal, ViewParts
from .render import ViewBundle

DEFAULT_ROUNDS = 3

__all__ = [
    "GlobalPartList",
    "PartInView",
    "RefinementTrace",
    "MockSegmenter",
    "unify_part_list",
    "grid_to_pixels",
    "pixels_to_grid",
    "segment_part",
    "refine_until_approved",
    "segment_all",
    "save_segmentation",
    "load_masks",
]

grid_to_pixels = grid_rect_to_pixels
pixels_to_grid = pixel_rect_to_grid


@dataclass
class PartInView:
    """One part's appearance in one view; mask/trace filled by refinement."""

    part_index: int
    bbox: tuple[tuple[int, int, int, int], ...]
    proposal: PartProposal
    mask: np.ndarray | None = None
    trace: "RefinementTrace | None" = None


@dataclass(frozen=True)
class GlobalPartList:
    """The unified part list plus per-view appearances.

    ``parts`` is ordered and applies identically to every view; a part may
    be absent from individual views (occlusion). The list is frozen before
    any refinement loop starts.
    """

    parts: tuple[tuple[str, str], ...]  # (name, material class)
    per_view: dict[str, list[PartInView]] = field(default_factory=dict)

    def part_index(self, name: str) -> int:
        for i, (pname, _) in enumerate(self.parts):
            if pname == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class RefinementTrace:
    rounds_used: int
    converged: bool
    point_prompts: tuple[tuple[tuple[int, int], ...], ...]  # per round

    def __post_init__(self):
        if self.rounds_used < 1:
            raise ValueError("rounds_used must be >= 1")


def unify_part_list(proposals: list[ViewParts]) -> GlobalPartList:
    """Union of part names across views, in first-seen order.

    The same name must carry the same material class everywhere; a part
    missing from a view is treated as occluded there.
    """
    if not proposals:
        raise ValueError("no view proposals")
    parts: list[tuple[str, str]] = []
    materials: dict[str, str] = {}
    for view in proposals:
        for part in view.parts:
            if part.name in materials:
                if materials[part.name] != part.material:
                    raise ValueError(
                        f"material conflict for part {part.name!r}: "
                        f"{materials[part.name]!r} vs {part.material!r}"
                    )
            else:
                materials[part.name] = part.material
                parts.append((part.name, part.material))
    index = {name: i for i, (name, _) in enumerate(parts)}
    per_view: dict[str, list[PartInView]] = {}
    for view in proposals:
        per_view[view.image_stem] = [
            PartInView(part_index=index[p.name], bbox=p.bbox, proposal=p)
            for p in view.parts
        ]
    return GlobalPartList(parts=tuple(parts), per_view=per_view)


@dataclass(frozen=True)
class MockSegmenter:
    """Segmenter stand-in answering from triangle group labels.

    The mask is foreground pixels inside the part's bbox(es) whose face
    group matches the seed points' groups (bbox-majority group when no
    points are given). With ``connected_only`` the box prompt keeps only the
    dominant connected island and each positive point adds its own island,
    which mimics a point-promptable segmenter that must be walked across
    disjoint regions.
    """

    mesh: object
    connected_only: bool = False

    def segment(
        self,
        view: ViewBundle,
        part: PartProposal,
        points: list[tuple[int, int]] = (),
    ) -> np.ndarray:
        if self.mesh.groups is None:
            raise ValueError("MockSegmenter needs a mesh with group labels")
        w, h = view.resolution
        box = np.zeros((h, w), dtype=bool)
        for rect in part.bbox:
            y0, x0, y1, x1 = grid_rect_to_pixels(rect, (w, h))
            box[y0:y1, x0:x1] = True
        foreground = view.face_id >= 0
        region = box & foreground
        if not region.any():
            return np.zeros((h, w), dtype=bool)

        groups = np.full((h, w), -1, dtype=np.int64)
        groups[foreground] = self.mesh.groups[view.face_id[foreground]]

        seed_points = [
            (x, y) for x, y in points if 0 <= x < w and 0 <= y < h and region[y, x]
        ]
        if points and not seed_points:
            return np.zeros((h, w), dtype=bool)  # all seeds off-part
        if seed_points:
            seed_groups = {int(groups[y, x]) for x, y in seed_points}
        else:
            labels, counts = np.unique(groups[region], return_counts=True)
            seed_groups = {int(labels[np.argmax(counts)])}  # tie -> lowest label

        mask = region & np.isin(groups, sorted(seed_groups))
        if self.connected_only and mask.any():
            comp, n = ndimage.label(mask)
            sizes = np.bincount(comp.ravel())
            sizes[0] = 0
            keep = {int(np.argmax(sizes))}
            for x, y in seed_points:
                if comp[y, x] > 0:
                    keep.add(int(comp[y, x]))
            mask = np.isin(comp, sorted(keep))
        return mask


def segment_part(
    segmenter,
    view: ViewBundle,
    part: PartProposal,
    points: list[tuple[int, int]] = (),
) -> np.ndarray:
    """One segmenter call; an empty result is legal (flagged by callers)."""
    mask = segmenter.segment(view, part, points)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != view.depth.shape:
        raise ValueError(
            f"segmenter returned {mask.shape}, view is {view.depth.shape}"
        )
    return mask


def refine_until_approved(
    segmenter,
    oracle,
    view: ViewBundle,
    part: PartProposal,
    budget: int = DEFAULT_ROUNDS,
) -> tuple[np.ndarray, RefinementTrace]:
    """Segment-inspect loop: on rejection, fold the inspector's positive
    points into the next prompt. Stops at approval or after ``budget``
    rounds; when unconverged, returns the round with the best coverage
    estimate. Never makes more than ``budget`` segmenter calls.
    """
    if budget < 1:
        raise ValueError("round budget must be >= 1")
    points: list[tuple[int, int]] = []
    per_round: list[tuple[tuple[int, int], ...]] = []
    best_mask = None
    best_estimate = -1.0
    for round_no in range(1, budget + 1):
        per_round.append(tuple(points))
        mask = segment_part(segmenter, view, part, points)
        verdict = oracle.inspect_mask(view, part, mask)
        estimate = verdict.coverage if verdict.coverage is not None else float(mask.sum())
        if estimate > best_estimate:
            best_estimate, best_mask = estimate, mask
        if verdict.approved:
            return mask, RefinementTrace(
                rounds_used=round_no, converged=True, point_prompts=tuple(per_round)
            )
        for pt in verdict.extra_positive_points:
            if pt not in points:
                points.append(pt)
    assert best_mask is not None
    return best_mask, RefinementTrace(
        rounds_used=budget, converged=False, point_prompts=tuple(per_round)
    )


def segment_all(
    views: list[ViewBundle],
    oracle,
    segmenter,
    rounds: int = DEFAULT_ROUNDS,
) -> GlobalPartList:
    """Full orchestration: propose parts, unify, refine every (view, part)."""
    proposals = oracle.segment_views(views)
    global_parts = unify_part_list(proposals)
    for view in views:
        for entry in global_parts.per_view.get(view.image_stem, []):
            mask, trace = refine_until_approved(
                segmenter, oracle, view, entry.proposal, budget=rounds
            )
            entry.mask = mask
            entry.trace = trace
    return global_parts


def save_segmentation(global_parts: GlobalPartList, out_dir) -> Path:
    """Persist masks as 0/255 PNGs plus a manifest JSON; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "parts": [
            {"name": name, "material": material}
            for name, material in global_parts.parts
        ],
        "views": {},
    }
    maskable = set()
    for stem in sorted(global_parts.per_view):
        entries = []
        for entry in global_parts.per_view[stem]:
            record: dict = {
                "part": entry.part_index,
                "bbox": [list(r) for r in entry.bbox],
            }
            if entry.mask is not None:
                name = global_parts.parts[entry.part_index][0]
                mask_path = out_dir / f"{stem}__{_safe(name)}.png"
                imgio.save_mask_png(entry.mask, mask_path)
                record["mask_path"] = mask_path.name
                if entry.mask.any():
                    maskable.add(entry.part_index)
            if entry.trace is not None:
                record["trace"] = {
                    "rounds_used": entry.trace.rounds_used,
                    "converged": entry.trace.converged,
                    "point_prompts": [
                        [list(p) for p in rnd] for rnd in entry.trace.point_prompts
                    ],
                }
            entries.append(record)
        manifest["views"][stem] = entries
    manifest["unmaskable_parts"] = sorted(
        set(range(len(global_parts.parts))) - maskable
    )
    manifest_path = out_dir / "segmentation.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


def load_masks(manifest_path) -> tuple[dict, dict[str, dict[int, np.ndarray]]]:
    """Load a segmentation manifest; returns (manifest, stem -> part -> mask)."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    masks: dict[str, dict[int, np.ndarray]] = {}
    for stem, entries in manifest["views"].items():
        per_part = {}
        for record in entries:
            if "mask_path" in record:
                per_part[int(record["part"])] = imgio.load_mask_png(
                    manifest_path.parent / record["mask_path"]
                )
        masks[stem] = per_part
    return manifest, masks


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)
