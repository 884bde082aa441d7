"""Clients for the external-intelligence boundary.

Five capabilities live behind one interface: multi-view part proposal,
material choice, density estimation, mask inspection, and video judging.
``RemoteOracle`` speaks JSON over HTTP using the versioned prompt templates
shipped with the package; ``MockOracle`` derives everything deterministically
from mesh group labels, view buffers, and fixture tables, so the whole
pipeline runs offline.

Every remote response is validated against its wire schema before anything
else sees it; schema errors carry the offending field path. Transport
failures and non-JSON bodies are retried once with the identical payload;
a response that parses but violates its schema is not retried (it signals a
prompt regression, not flakiness) — except a material choice outside the
offered candidates, which gets one retry before failing.
"""

from __future__ import annotations

import base64
import io
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import ndimage

from .errors import OracleSchemaError, OracleTransportError
from .grid import pixel_rect_to_grid
from .render import ViewBundle

COVERAGE_THRESHOLD = 0.95  # mock approval: fraction of ground-truth pixels covered


# ---------------------------------------------------------------------------
# Wire types


@dataclass(frozen=True)
class PartProposal:
    """One part in one view: name, material class, and grid-space bboxes."""

    name: str
    material: str
    description: str = ""
    bbox: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self):
        if not self.bbox:
            raise ValueError(f"part {self.name!r} has an empty bbox list")
        for rect in self.bbox:
            ymin, xmin, ymax, xmax = rect
            for v in rect:
                if not 0 <= v <= 1000:
                    raise ValueError(f"bbox coordinate out of 0..1000: {rect}")
            if ymin > ymax or xmin > xmax:
                raise ValueError(f"inverted bbox rectangle: {rect}")


@dataclass(frozen=True)
class ViewParts:
    image_stem: str
    parts: tuple[PartProposal, ...]

    def __post_init__(self):
        names = [p.name for p in self.parts]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate part names in view {self.image_stem!r}")


@dataclass(frozen=True)
class MaterialChoice:
    chosen_material_id: str


@dataclass(frozen=True)
class DensityEstimate:
    density: float
    notes: str = ""

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError(f"density must be > 0, got {self.density}")


@dataclass(frozen=True)
class MaskVerdict:
    """Inspection result; ``coverage`` is informational (mock fills it)."""

    approved: bool
    extra_positive_points: tuple[tuple[int, int], ...] = ()
    coverage: float | None = None

    def __post_init__(self):
        if self.approved and self.extra_positive_points:
            raise ValueError("approved verdict must not carry positive points")


@dataclass(frozen=True)
class JudgeScore:
    score: float
    rationale: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"judge score must be finite, got {self.score}")


# ---------------------------------------------------------------------------
# Schema parsing with field-path errors


def _expect(cond: bool, message: str, path: str):
    if not cond:
        raise OracleSchemaError(message, field_path=path)


def parse_view_parts_response(doc) -> list[ViewParts]:
    """Parse a full part-segmentation response: {"views": [...]}."""
    _expect(isinstance(doc, dict), "response must be an object", "")
    _expect("views" in doc, "missing field 'views'", "views")
    views = doc["views"]
    _expect(isinstance(views, list) and views, "'views' must be a non-empty list", "views")
    out = []
    for i, view in enumerate(views):
        out.append(_parse_one_view(view, f"views[{i}]"))
    return out


def _parse_one_view(view, path: str) -> ViewParts:
    _expect(isinstance(view, dict), "view must be an object", path)
    stem = view.get("image_stem")
    _expect(isinstance(stem, str) and stem, "missing or empty 'image_stem'", f"{path}.image_stem")
    parts_doc = view.get("parts")
    _expect(isinstance(parts_doc, list), "'parts' must be a list", f"{path}.parts")
    parts = []
    seen = set()
    for j, part in enumerate(parts_doc):
        ppath = f"{path}.parts[{j}]"
        _expect(isinstance(part, dict), "part must be an object", ppath)
        name = part.get("name")
        _expect(isinstance(name, str) and name, "missing part 'name'", f"{ppath}.name")
        _expect(name not in seen, f"duplicate part name {name!r}", f"{ppath}.name")
        seen.add(name)
        material = part.get("material")
        _expect(isinstance(material, str) and material, "missing 'material'", f"{ppath}.material")
        description = part.get("description", "")
        _expect(isinstance(description, str), "'description' must be a string", f"{ppath}.description")
        bbox_doc = part.get("bbox")
        _expect(isinstance(bbox_doc, list) and bbox_doc, "'bbox' must be a non-empty list", f"{ppath}.bbox")
        rects = []
        for k, rect in enumerate(bbox_doc):
            rpath = f"{ppath}.bbox[{k}]"
            _expect(
                isinstance(rect, list) and len(rect) == 4,
                "bbox entry must be [ymin, xmin, ymax, xmax]",
                rpath,
            )
            for m, v in enumerate(rect):
                _expect(isinstance(v, int) and not isinstance(v, bool), "coordinate must be an integer", f"{rpath}[{m}]")
                _expect(0 <= v <= 1000, "coordinate out of 0..1000", f"{rpath}[{m}]")
            ymin, xmin, ymax, xmax = rect
            _expect(ymin <= ymax, "ymin > ymax", rpath)
            _expect(xmin <= xmax, "xmin > xmax", rpath)
            rects.append((ymin, xmin, ymax, xmax))
        parts.append(
            PartProposal(name=name, material=material, description=description, bbox=tuple(rects))
        )
    return ViewParts(image_stem=stem, parts=tuple(parts))


def parse_material_choice(doc, candidate_ids) -> MaterialChoice:
    _expect(isinstance(doc, dict), "response must be an object", "")
    chosen = doc.get("chosen_material_id")
    _expect(
        isinstance(chosen, str) and chosen,
        "missing 'chosen_material_id'",
        "chosen_material_id",
    )
    _expect(
        chosen in set(candidate_ids),
        f"id {chosen!r} not among offered candidates",
        "chosen_material_id",
    )
    return MaterialChoice(chosen_material_id=chosen)


def parse_density_estimate(doc) -> DensityEstimate:
    _expect(isinstance(doc, dict), "response must be an object", "")
    density = doc.get("density")
    _expect(isinstance(density, (int, float)) and not isinstance(density, bool), "missing numeric 'density'", "density")
    _expect(density > 0, f"density must be > 0, got {density}", "density")
    notes = doc.get("notes", "")
    _expect(isinstance(notes, str), "'notes' must be a string", "notes")
    return DensityEstimate(density=float(density), notes=notes)


def parse_mask_verdict(doc) -> MaskVerdict:
    _expect(isinstance(doc, dict), "response must be an object", "")
    approved = doc.get("approved")
    _expect(isinstance(approved, bool), "missing boolean 'approved'", "approved")
    points_doc = doc.get("extra_positive_points", [])
    _expect(isinstance(points_doc, list), "'extra_positive_points' must be a list", "extra_positive_points")
    points = []
    for i, pt in enumerate(points_doc):
        path = f"extra_positive_points[{i}]"
        _expect(isinstance(pt, list) and len(pt) == 2, "point must be [x, y]", path)
        _expect(all(isinstance(v, int) and not isinstance(v, bool) for v in pt), "point coords must be integers", path)
        points.append((pt[0], pt[1]))
    _expect(not (approved and points), "approved verdict with positive points", "extra_positive_points")
    return MaskVerdict(approved=approved, extra_positive_points=tuple(points))


def parse_judge_score(doc) -> JudgeScore:
    _expect(isinstance(doc, dict), "response must be an object", "")
    score = doc.get("score")
    _expect(isinstance(score, (int, float)) and not isinstance(score, bool), "missing numeric 'score'", "score")
    _expect(math.isfinite(score), "score must be finite", "score")
    rationale = doc.get("rationale", "")
    return JudgeScore(score=float(score), rationale=str(rationale))


# ---------------------------------------------------------------------------
# Prompt templates


def load_prompt(name: str) -> str:
    return resources.files("viser_forge.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )


def fill_prompt(template: str, substitutions: dict[str, str]) -> str:
    # Plain token replacement; str.format would trip over the JSON braces
    # that the templates contain verbatim.
    for key, value in substitutions.items():
        template = template.replace("{" + key + "}", value)
    return template


def encode_image(image: np.ndarray) -> str:
    """Encode an (H, W, 3) float [0,1] image as base64 PNG."""
    from PIL import Image

    arr = (np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 255 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# ---------------------------------------------------------------------------
# Transport


class HttpTransport:
    """POSTs {"prompt": str, "images": [base64 PNG, ...]} and returns the body."""

    def __init__(self, url: str, token: str | None = None, timeout: float = 60.0):
        self.url = url
        self.token = token
        self.timeout = timeout

    def post(self, payload: dict) -> str:
        import requests

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            response = requests.post(
                self.url, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise OracleTransportError(f"oracle request failed: {exc}") from exc
        if response.status_code != 200:
            raise OracleTransportError(
                f"oracle returned HTTP {response.status_code}"
            )
        return response.text


def transport_from_env() -> HttpTransport:
    url = os.environ.get("FORGE_ORACLE_URL")
    if not url:
        raise OracleTransportError("FORGE_ORACLE_URL is not set")
    return HttpTransport(url, token=os.environ.get("FORGE_ORACLE_TOKEN"))


class RemoteOracle:
    """Oracle over HTTP. One retry on transport failure or a non-JSON body,
    carrying the byte-identical payload; schema violations are not retried."""

    def __init__(self, transport, max_retries: int = 1, concurrency: int = 4):
        self.transport = transport
        self.max_retries = max_retries
        self.concurrency = concurrency

    def _call(self, prompt: str, images: list[np.ndarray]) -> dict:
        payload = {"prompt": prompt, "images": [encode_image(img) for img in images]}
        return self._call_payload(payload)

    def _call_payload(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                body = self.transport.post(payload)
            except OracleTransportError as exc:
                last_exc = exc
                continue
            try:
                return json.loads(body)
            except json.JSONDecodeError:
                last_exc = OracleSchemaError("non-JSON response from oracle")
                continue
        assert last_exc is not None
        raise last_exc

    def segment_views(self, views: list[ViewBundle]) -> list[ViewParts]:
        if not views:
            raise ValueError("need at least one view")
        stems = "\n".join(
            f"Image {i + 1} stem: {v.image_stem}" for i, v in enumerate(views)
        )
        prompt = load_prompt("part_segmentation") + "\n" + stems
        doc = self._call(prompt, [v.color for v in views])
        return parse_view_parts_response(doc)

    def choose_material(
        self, part: PartProposal, catalog: list[tuple[str, str]], context: str = ""
    ) -> MaterialChoice:
        if not catalog:
            raise ValueError("empty candidate catalog")
        context_section = (
            f"Whole-object context: {context}\n" if context else ""
        )
        prompt = fill_prompt(
            load_prompt("material_retrieval"),
            {
                "part_name": part.name,
                "part_material": part.material,
                "part_description": part.description,
                "context_section": context_section,
                "category": "",
                "catalog": "\n".join(f"- {mid}: {desc}" for mid, desc in catalog),
            },
        )
        payload = {"prompt": prompt, "images": []}
        candidate_ids = [mid for mid, _ in catalog]
        try:
            return parse_material_choice(self._call_payload(payload), candidate_ids)
        except OracleSchemaError:
            # A foreign id may be model noise rather than a prompt regression;
            # retry the identical request once.
            return parse_material_choice(self._call_payload(payload), candidate_ids)

    def estimate_density(self, image: np.ndarray) -> DensityEstimate:
        if np.asarray(image).size == 0:
            raise ValueError("empty image")
        doc = self._call(load_prompt("density_estimation"), [image])
        return parse_density_estimate(doc)

    def inspect_mask(
        self, view: ViewBundle, part: PartProposal, mask: np.ndarray
    ) -> MaskVerdict:
        _check_mask_resolution(view, mask)
        prompt = (
            "Inspect whether the second image (binary mask) fully covers part "
            f"{part.name!r} ({part.material}) in the first image. Respond with "
            'ONLY valid JSON: {"approved": <bool>, "extra_positive_points": [[x, y], ...]}'
        )
        mask_rgb = np.repeat(np.asarray(mask, dtype=np.float64)[..., None], 3, axis=2)
        doc = self._call(prompt, [view.color, mask_rgb])
        return parse_mask_verdict(doc)

    def judge_video(self, frames: list[np.ndarray], instruction: str) -> JudgeScore:
        if not frames:
            raise ValueError("need at least one frame")
        prompt = (
            "The images are time-ordered frames of a robot executing: "
            f"{instruction!r}. Rate the whole trajectory for functional success "
            "(terminal state) and procedural correctness (action sequence). "
            'Respond with ONLY valid JSON: {"score": <number>, "rationale": "<short>"}'
        )
        doc = self._call(prompt, list(frames))
        return parse_judge_score(doc)


# ---------------------------------------------------------------------------
# Mock oracle


class MockOracle:
    """Deterministic offline oracle driven by mesh group labels.

    Parts are the mesh's triangle groups; per-view bboxes come from scanning
    the face-id buffer; mask inspection compares against the group's rendered
    pixels and, on rejection, points at the centroid of the largest uncovered
    connected region. Identical inputs give identical outputs on any platform.
    """

    def __init__(
        self,
        mesh=None,
        judge_fixtures: dict[str, float] | None = None,
        coverage_threshold: float = COVERAGE_THRESHOLD,
        material_classes: dict[str, str] | None = None,
    ):
        self.mesh = mesh
        self.judge_fixtures = dict(judge_fixtures or {})
        self.coverage_threshold = coverage_threshold
        self.material_classes = dict(material_classes or {})

    def _require_mesh(self):
        if self.mesh is None or self.mesh.groups is None:
            raise ValueError("MockOracle needs a mesh with group labels")
        return self.mesh

    def _group_pixels(self, view: ViewBundle, label: int) -> np.ndarray:
        mesh = self._require_mesh()
        covered = view.face_id >= 0
        out = np.zeros_like(covered)
        out[covered] = mesh.groups[view.face_id[covered]] == label
        return out

    def segment_views(self, views: list[ViewBundle]) -> list[ViewParts]:
        if not views:
            raise ValueError("need at least one view")
        mesh = self._require_mesh()
        labels = sorted(int(g) for g in np.unique(mesh.groups))
        out = []
        for view in views:
            w, h = view.resolution
            parts = []
            for label in labels:
                pixels = self._group_pixels(view, label)
                if not pixels.any():
                    continue  # occluded in this view
                ys, xs = np.nonzero(pixels)
                rect_px = (int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)
                name = mesh.group_name(label)
                parts.append(
                    PartProposal(
                        name=name,
                        material=self.material_classes.get(name, "Plastic"),
                        description=f"{name} region",
                        bbox=(pixel_rect_to_grid(rect_px, (w, h)),),
                    )
                )
            out.append(ViewParts(image_stem=view.image_stem, parts=tuple(parts)))
        return out

    def choose_material(
        self, part: PartProposal, catalog: list[tuple[str, str]], context: str = ""
    ) -> MaterialChoice:
        # The catalog arrives ranked by the offline scorer; the mock keeps
        # its top pick, so oracle-mode retrieval matches offline retrieval.
        if not catalog:
            raise ValueError("empty candidate catalog")
        return MaterialChoice(chosen_material_id=catalog[0][0])

    def estimate_density(self, image: np.ndarray) -> DensityEstimate:
        if np.asarray(image).size == 0:
            raise ValueError("empty image")
        return DensityEstimate(density=1000.0, notes="mock")

    def inspect_mask(
        self, view: ViewBundle, part: PartProposal, mask: np.ndarray
    ) -> MaskVerdict:
        _check_mask_resolution(view, mask)
        mesh = self._require_mesh()
        label = None
        for lbl, name in mesh.group_names.items():
            if name == part.name:
                label = lbl
                break
        if label is None:
            raise ValueError(f"part {part.name!r} does not match any mesh group")
        truth = self._group_pixels(view, label)
        n_truth = int(truth.sum())
        if n_truth == 0:
            return MaskVerdict(approved=True, coverage=1.0)
        mask = np.asarray(mask, dtype=bool)
        coverage = float((mask & truth).sum()) / n_truth
        if coverage >= self.coverage_threshold:
            return MaskVerdict(approved=True, coverage=coverage)
        point = _largest_region_centroid(truth & ~mask)
        return MaskVerdict(
            approved=False, extra_positive_points=(point,), coverage=coverage
        )

    def judge_video(self, frames: list[np.ndarray], instruction: str) -> JudgeScore:
        if not frames:
            raise ValueError("need at least one frame")
        if instruction not in self.judge_fixtures:
            raise ValueError(f"no fixture for instruction {instruction!r}")
        return JudgeScore(score=float(self.judge_fixtures[instruction]), rationale="fixture")


def _check_mask_resolution(view: ViewBundle, mask: np.ndarray):
    mask = np.asarray(mask)
    if mask.shape != view.depth.shape:
        raise ValueError(
            f"mask resolution {mask.shape} != view resolution {view.depth.shape}"
        )


def _largest_region_centroid(region: np.ndarray) -> tuple[int, int]:
    """(x, y) centroid of the largest 4-connected True region, snapped to the
    nearest pixel of that region."""
    labeled, n = ndimage.label(region)
    if n == 0:
        raise ValueError("no uncovered region")
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0
    biggest = int(np.argmax(sizes))
    ys, xs = np.nonzero(labeled == biggest)
    cy, cx = float(ys.mean()), float(xs.mean())
    iy, ix = int(math.floor(cy + 0.5)), int(math.floor(cx + 0.5))
    if not region[iy, ix] or labeled[iy, ix] != biggest:
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        k = int(np.argmin(d2))
        iy, ix = int(ys[k]), int(xs[k])
    return (ix, iy)


def oracle_from_mode(mode: str, mesh=None, judge_fixtures=None):
    """Build an oracle for --oracle mock|remote."""
    if mode == "mock":
        return MockOracle(mesh=mesh, judge_fixtures=judge_fixtures)
    if mode == "remote":
        return RemoteOracle(transport_from_env())
    raise ValueError(f"unknown oracle mode {mode!r}")
