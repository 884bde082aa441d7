"""Tabletop scene layout from scene graphs.

A scene graph declares objects (rectangular footprints, meters) and spatial
relations; the solver projects the problem onto the table plane (the table
height is fixed, so z never varies) and places objects by seeded rejection
sampling: propose positions and yaws in topological order of the relation
graph, then validate every constraint and accept the first satisfying
sample. Identical (graph, seed) inputs reproduce bit-identical scenes.

Axes: origin at the table center, +x to the right, +y away from the viewer
(so "behind" means larger y). Rotated footprints are approximated by their
yaw-rotated AABB, which is conservative and cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleLayoutError

RELATION_KINDS = (
    "on_table",
    "near",
    "left_of",
    "right_of",
    "behind",
    "in_front_of",
    "inside",
)
AXIS_MARGIN = 0.02  # directional relations must win by this much, meters
CLEARANCE_MARGIN = 0.01  # minimum footprint separation, meters
DEFAULT_MAX_ATTEMPTS = 10_000
N_DISTRACTORS = 3


@dataclass(frozen=True)
class TableSpec:
    width: float  # x extent
    depth: float  # y extent
    height: float

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("table dimensions must be positive")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    footprint: tuple[float, float]  # (x extent, y extent)
    height: float

    def __post_init__(self):
        if min(*self.footprint, self.height) <= 0:
            raise ValueError(f"object {self.name!r} dimensions must be positive")


@dataclass(frozen=True)
class Relation:
    kind: str
    subject: str
    object: str | None = None
    param: float | None = None

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        if self.kind == "on_table":
            if self.object is not None:
                raise ValueError("on_table takes no object")
        elif self.object is None:
            raise ValueError(f"{self.kind} needs an object")
        if self.kind == "near":
            if self.param is None or self.param <= 0:
                raise ValueError("near needs param = max distance > 0")


@dataclass(frozen=True)
class SceneGraph:
    table: TableSpec
    objects: tuple[ObjectSpec, ...]
    relations: tuple[Relation, ...]

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise ValueError("duplicate object names")
        declared = set(names)
        for rel in self.relations:
            for ref in (rel.subject, rel.object):
                if ref is not None and ref not in declared:
                    raise ValueError(f"dangling reference {ref!r}")

    def object(self, name: str) -> ObjectSpec:
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise KeyError(name)


@dataclass(frozen=True)
class Placement:
    name: str
    x: float
    y: float
    z: float
    yaw: float


@dataclass(frozen=True)
class SceneSpec:
    placements: tuple[Placement, ...]
    seed: int
    graph: SceneGraph

    def placement(self, name: str) -> Placement:
        for p in self.placements:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass(frozen=True)
class Violation:
    """One unmet constraint; slack < 0 measures how badly it is missed."""

    kind: str
    names: tuple[str, ...]
    slack: float
    detail: str = ""


def parse_scene_graph(doc: dict) -> SceneGraph:
    """Build a validated SceneGraph from its JSON form."""
    try:
        table = TableSpec(
            width=float(doc["table"]["width"]),
            depth=float(doc["table"]["depth"]),
            height=float(doc["table"]["height"]),
        )
        objects = tuple(
            ObjectSpec(
                name=o["name"],
                footprint=(float(o["footprint"][0]), float(o["footprint"][1])),
                height=float(o["height"]),
            )
            for o in doc.get("objects", [])
        )
        relations = tuple(
            Relation(
                kind=r["kind"],
                subject=r["subject"],
                object=r.get("object"),
                param=float(r["param"]) if r.get("param") is not None else None,
            )
            for r in doc.get("relations", [])
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed scene graph: {exc}") from exc
    return SceneGraph(table=table, objects=objects, relations=relations)


def scene_graph_to_json(graph: SceneGraph) -> dict:
    return {
        "table": {
            "width": graph.table.width,
            "depth": graph.table.depth,
            "height": graph.table.height,
        },
        "objects": [
            {"name": o.name, "footprint": list(o.footprint), "height": o.height}
            for o in graph.objects
        ],
        "relations": [
            {
                k: v
                for k, v in (
                    ("kind", r.kind),
                    ("subject", r.subject),
                    ("object", r.object),
                    ("param", r.param),
                )
                if v is not None
            }
            for r in graph.relations
        ],
    }


def rotated_half_extents(footprint: tuple[float, float], yaw: float) -> tuple[float, float]:
    """Half extents of the yaw-rotated footprint's AABB."""
    hx, hy = footprint[0] / 2.0, footprint[1] / 2.0
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return (c * hx + s * hy, s * hx + c * hy)


def _topological_order(graph: SceneGraph) -> list[str]:
    """Relation objects before subjects; cycles fall back to declaration order."""
    names = [o.name for o in graph.objects]
    deps: dict[str, set[str]] = {n: set() for n in names}
    for rel in graph.relations:
        if rel.object is not None:
            deps[rel.subject].add(rel.object)
    order: list[str] = []
    placed: set[str] = set()
    remaining = list(names)
    while remaining:
        progressed = False
        for name in list(remaining):
            if deps[name] <= placed:
                order.append(name)
                placed.add(name)
                remaining.remove(name)
                progressed = True
        if not progressed:  # cycle: keep declaration order, validation decides
            order.extend(remaining)
            break
    return order


def validate(spec: SceneSpec) -> list[Violation]:
    """All SceneSpec invariants; empty list iff the placement is sound.

    Checks table bounds, pairwise clearance (inside-pairs exempt), z height,
    and every graph relation. Never raises.
    """
    graph = spec.graph
    table = graph.table
    violations: list[Violation] = []
    half_w, half_d = table.width / 2.0, table.depth / 2.0

    placed = {p.name: p for p in spec.placements}
    for obj in graph.objects:
        if obj.name not in placed:
            violations.append(
                Violation("missing", (obj.name,), float("-inf"), "object not placed")
            )
    inside_pairs = {
        frozenset((r.subject, r.object))
        for r in graph.relations
        if r.kind == "inside"
    }

    for p in spec.placements:
        if p.name not in {o.name for o in graph.objects}:
            continue
        hx, hy = rotated_half_extents(graph.object(p.name).footprint, p.yaw)
        slack = min(
            half_w - (p.x + hx),
            (p.x - hx) + half_w,
            half_d - (p.y + hy),
            (p.y - hy) + half_d,
        )
        if slack < 0:
            violations.append(
                Violation("bounds", (p.name,), slack, "footprint leaves the table")
            )
        if p.z != table.height:
            violations.append(
                Violation(
                    "height", (p.name,), -(abs(p.z - table.height)),
                    f"z {p.z} != table height {table.height}",
                )
            )

    names = [p.name for p in spec.placements if p.name in {o.name for o in graph.objects}]
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if frozenset((a, b)) in inside_pairs:
                continue
            pa, pb = placed[a], placed[b]
            ahx, ahy = rotated_half_extents(graph.object(a).footprint, pa.yaw)
            bhx, bhy = rotated_half_extents(graph.object(b).footprint, pb.yaw)
            gap_x = abs(pa.x - pb.x) - (ahx + bhx)
            gap_y = abs(pa.y - pb.y) - (ahy + bhy)
            clearance = max(gap_x, gap_y)
            if clearance < CLEARANCE_MARGIN:
                violations.append(
                    Violation(
                        "clearance", (a, b), clearance - CLEARANCE_MARGIN,
                        f"separation {clearance:.4f} m < {CLEARANCE_MARGIN} m",
                    )
                )

    for rel in graph.relations:
        if rel.subject not in placed or (rel.object is not None and rel.object not in placed):
            continue
        s = placed[rel.subject]
        o = placed[rel.object] if rel.object is not None else None
        slack = _relation_slack(rel, s, o, graph)
        if slack < 0:
            violations.append(
                Violation(rel.kind, (rel.subject,) + ((rel.object,) if rel.object else ()), slack)
            )
    return violations


def _relation_slack(rel: Relation, s: Placement, o: Placement | None, graph: SceneGraph) -> float:
    if rel.kind == "on_table":
        return 0.0  # bounds and height checks already cover it
    assert o is not None
    if rel.kind == "near":
        return rel.param - math.hypot(s.x - o.x, s.y - o.y)
    if rel.kind == "left_of":
        return (o.x - s.x) - AXIS_MARGIN
    if rel.kind == "right_of":
        return (s.x - o.x) - AXIS_MARGIN
    if rel.kind == "behind":
        return (s.y - o.y) - AXIS_MARGIN
    if rel.kind == "in_front_of":
        return (o.y - s.y) - AXIS_MARGIN
    if rel.kind == "inside":
        ohx, ohy = rotated_half_extents(graph.object(o.name).footprint, o.yaw)
        return min(ohx - abs(s.x - o.x), ohy - abs(s.y - o.y), 0.0 if s.z == o.z else -abs(s.z - o.z))
    raise AssertionError(rel.kind)


def solve_layout(
    graph: SceneGraph, seed: int, max_attempts: int = DEFAULT_MAX_ATTEMPTS
) -> SceneSpec:
    """Place all objects; raises InfeasibleLayoutError when the budget runs out.

    Sampling is guided: relations whose object is already placed narrow the
    subject's coordinate ranges, then the full constraint set is re-checked
    by validate() before accepting.
    """
    table = graph.table
    half_w, half_d = table.width / 2.0, table.depth / 2.0
    for obj in graph.objects:
        if obj.footprint[0] / 2.0 > half_w or obj.footprint[1] / 2.0 > half_d:
            raise InfeasibleLayoutError(
                f"footprint of {obj.name!r} {obj.footprint} exceeds table "
                f"({table.width} x {table.depth})"
            )

    order = _topological_order(graph)
    rels_by_subject: dict[str, list[Relation]] = {}
    for rel in graph.relations:
        rels_by_subject.setdefault(rel.subject, []).append(rel)

    rng = np.random.default_rng(seed)
    best_violations: list[Violation] | None = None

    for _ in range(max_attempts):
        placements: dict[str, Placement] = {}
        ok = True
        for name in order:
            obj = graph.object(name)
            yaw = float(rng.uniform(0.0, 2.0 * math.pi))
            hx, hy = rotated_half_extents(obj.footprint, yaw)
            x_lo, x_hi = -half_w + hx, half_w - hx
            y_lo, y_hi = -half_d + hy, half_d - hy
            for rel in rels_by_subject.get(name, ()):
                if rel.object is None or rel.object not in placements:
                    continue
                ox, oy = placements[rel.object].x, placements[rel.object].y
                if rel.kind == "near":
                    x_lo, x_hi = max(x_lo, ox - rel.param), min(x_hi, ox + rel.param)
                    y_lo, y_hi = max(y_lo, oy - rel.param), min(y_hi, oy + rel.param)
                elif rel.kind == "left_of":
                    x_hi = min(x_hi, ox - AXIS_MARGIN)
                elif rel.kind == "right_of":
                    x_lo = max(x_lo, ox + AXIS_MARGIN)
                elif rel.kind == "behind":
                    y_lo = max(y_lo, oy + AXIS_MARGIN)
                elif rel.kind == "in_front_of":
                    y_hi = min(y_hi, oy - AXIS_MARGIN)
                elif rel.kind == "inside":
                    other = placements[rel.object]
                    ohx, ohy = rotated_half_extents(
                        graph.object(rel.object).footprint, other.yaw
                    )
                    x_lo, x_hi = max(x_lo, ox - ohx), min(x_hi, ox + ohx)
                    y_lo, y_hi = max(y_lo, oy - ohy), min(y_hi, oy + ohy)
            if x_lo > x_hi or y_lo > y_hi:
                ok = False
                break
            x = float(rng.uniform(x_lo, x_hi))
            y = float(rng.uniform(y_lo, y_hi))
            placements[name] = Placement(name=name, x=x, y=y, z=table.height, yaw=yaw)
        if not ok:
            continue
        spec = SceneSpec(
            placements=tuple(placements[o.name] for o in graph.objects),
            seed=seed,
            graph=graph,
        )
        violations = validate(spec)
        if not violations:
            return spec
        if best_violations is None or _total_violation(violations) < _total_violation(
            best_violations
        ):
            best_violations = violations

    worst = None
    if best_violations:
        worst = min(best_violations, key=lambda v: v.slack)
    raise InfeasibleLayoutError(
        f"no satisfying layout in {max_attempts} attempts"
        + (f"; most violated: {worst.kind} {worst.names} slack {worst.slack:.4f}" if worst else ""),
        worst_violation=worst,
    )


def _total_violation(violations: list[Violation]) -> float:
    return sum(-v.slack for v in violations if math.isfinite(v.slack))


def randomize_level(
    base: SceneGraph,
    level: int,
    distractor_pool: list[ObjectSpec] | tuple[ObjectSpec, ...] = (),
    seed: int = 0,
    level3_relation: Relation | None = None,
) -> SceneGraph:
    """Difficulty variants: lv.1 = base unchanged; lv.2 = base plus 3
    pool-sampled background distractors; lv.3 = base plus a task-specific
    relation (e.g. put the target behind an occluder)."""
    if level == 1:
        return base
    if level == 2:
        existing = {o.name for o in base.objects}
        pool = [o for o in distractor_pool if o.name not in existing]
        if len(pool) < N_DISTRACTORS:
            raise ValueError(
                f"distractor pool too small: {len(pool)} usable, need {N_DISTRACTORS}"
            )
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(pool), size=N_DISTRACTORS, replace=False)
        added = tuple(pool[int(i)] for i in picks)
        return SceneGraph(
            table=base.table,
            objects=base.objects + added,
            relations=base.relations
            + tuple(Relation(kind="on_table", subject=o.name) for o in added),
        )
    if level == 3:
        if level3_relation is None:
            raise ValueError("level 3 needs the task-specific relation")
        return SceneGraph(
            table=base.table,
            objects=base.objects,
            relations=base.relations + (level3_relation,),
        )
    raise ValueError(f"unknown difficulty level {level}")


def save_scene_spec(spec: SceneSpec, path) -> None:
    doc = {
        "seed": spec.seed,
        "table": scene_graph_to_json(spec.graph)["table"],
        "placements": [
            {"name": p.name, "x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw}
            for p in spec.placements
        ],
        "graph": scene_graph_to_json(spec.graph),
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_scene_spec(path) -> SceneSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    graph = parse_scene_graph(doc["graph"])
    return SceneSpec(
        placements=tuple(
            Placement(
                name=p["name"], x=p["x"], y=p["y"], z=p["z"], yaw=p["yaw"]
            )
            for p in doc["placements"]
        ),
        seed=int(doc["seed"]),
        graph=graph,
    )
