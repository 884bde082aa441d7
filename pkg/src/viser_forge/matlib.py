"""PBR material library indexing and retrieval.

The library is a directory of per-material subfolders, each holding a
``material.json`` plus texture maps. Offline retrieval is lexical TF-IDF
(relative term frequency, smoothed idf over the whole library, cosine
similarity) — deterministic and dependency-free; semantic retrieval goes
through the oracle over the top-K offline candidates. The index is
immutable after build and retrieval is pure.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .oracle import PartProposal

TOP_K_CANDIDATES = 20

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class MaterialRecord:
    """One library entry. The albedo map is mandatory; missing roughness and
    metallic maps fall back to the constants 0.5 and 0.0 at bake time."""

    id: str
    category: str
    description: str
    maps: dict[str, str]
    tile_scale: float = 1.0

    def __post_init__(self):
        if "albedo" not in self.maps or not self.maps["albedo"]:
            raise ValueError(f"material {self.id!r} has no albedo map")
        if self.tile_scale <= 0:
            raise ValueError(f"material {self.id!r} tile_scale must be > 0")


@dataclass(frozen=True)
class LibraryIndex:
    records: dict[str, MaterialRecord]
    by_category: dict[str, tuple[str, ...]]
    token_index: dict[str, tuple[str, ...]]
    doc_tokens: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.records)


def load_material_json(path) -> MaterialRecord:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable material.json at {path}: {exc}") from exc
    for key in ("id", "category", "description", "maps"):
        if key not in doc:
            raise ValueError(f"material.json missing {key!r}: {path}")
    maps = {
        kind: str((path.parent / p).resolve())
        for kind, p in doc["maps"].items()
        if p
    }
    return MaterialRecord(
        id=doc["id"],
        category=doc["category"],
        description=doc["description"],
        maps=maps,
        tile_scale=float(doc.get("tile_scale", 1.0)),
    )


def build_index(library_root) -> LibraryIndex:
    """Scan per-material subfolders and build the inverted index.

    Ordering is deterministic (sorted ids); duplicate ids are an error that
    names both offending paths.
    """
    root = Path(library_root)
    if not root.is_dir():
        raise ValueError(f"library root is not a directory: {root}")
    records: dict[str, MaterialRecord] = {}
    seen_paths: dict[str, Path] = {}
    for mat_json in sorted(root.glob("*/material.json")):
        record = load_material_json(mat_json)
        if record.id in records:
            raise ValueError(
                f"duplicate material id {record.id!r}: "
                f"{seen_paths[record.id]} and {mat_json}"
            )
        records[record.id] = record
        seen_paths[record.id] = mat_json

    records = dict(sorted(records.items()))
    by_category: dict[str, list[str]] = {}
    token_index: dict[str, list[str]] = {}
    doc_tokens: dict[str, tuple[str, ...]] = {}
    for mid, record in records.items():
        by_category.setdefault(record.category, []).append(mid)
        tokens = tokenize(record.description)
        doc_tokens[mid] = tuple(tokens)
        for token in sorted(set(tokens)):
            token_index.setdefault(token, []).append(mid)
    return LibraryIndex(
        records=records,
        by_category={k: tuple(v) for k, v in sorted(by_category.items())},
        token_index={k: tuple(v) for k, v in sorted(token_index.items())},
        doc_tokens=doc_tokens,
    )


def _idf(index: LibraryIndex) -> dict[str, float]:
    n = len(index.records)
    return {
        token: math.log((1 + n) / (1 + len(ids))) + 1.0
        for token, ids in index.token_index.items()
    }


def _tfidf_vector(tokens, idf: dict[str, float]) -> dict[str, float]:
    if not tokens:
        return {}
    counts: dict[str, int] = {}
    for t in tokens:
        if t in idf:  # tokens outside the library vocabulary carry no axis
            counts[t] = counts.get(t, 0) + 1
    total = len(tokens)
    return {t: (c / total) * idf[t] for t, c in counts.items()}


def _cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if not a or not b:
        return 0.0
    dot = sum(w * b[t] for t, w in a.items() if t in b)
    if dot == 0.0:
        return 0.0
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    return dot / (na * nb)


def retrieve_offline(
    query: str, index: LibraryIndex, category: str | None = None
) -> list[tuple[str, float]]:
    """Full ranking of (id, score), best first, ties broken by id.

    Scores are TF-IDF cosine in [0, 1]; idf always comes from the whole
    library so a category filter changes the candidate set, not the scores.
    """
    if not index.records:
        raise ValueError("empty material index")
    if category is not None:
        candidates = index.by_category.get(category, ())
        if not candidates:
            raise ValueError(f"category {category!r} has no members")
    else:
        candidates = tuple(index.records)
    idf = _idf(index)
    qvec = _tfidf_vector(tokenize(query), idf)
    scored = [
        (mid, _cosine(qvec, _tfidf_vector(index.doc_tokens[mid], idf)))
        for mid in candidates
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def default_category_map() -> dict[str, str]:
    raw = resources.files("viser_forge.data").joinpath(
        "material_categories.json"
    ).read_text(encoding="utf-8")
    return json.loads(raw)


def retrieve(
    part: PartProposal,
    index: LibraryIndex,
    mode: str = "offline",
    context: str = "",
    oracle=None,
    category_map: dict[str, str] | None = None,
    top_k: int = TOP_K_CANDIDATES,
) -> MaterialRecord:
    """Pick the material for one part.

    Offline mode takes the top-1 TF-IDF hit for "name material description";
    oracle mode forwards the top-K offline candidates to the material
    chooser. Material classes map to library categories through an editable
    table; unmapped classes search the whole library.
    """
    if not index.records:
        raise ValueError("empty material index")
    if category_map is None:
        category_map = default_category_map()
    category = category_map.get(part.material)
    query = f"{part.name} {part.material} {part.description}"
    ranking = retrieve_offline(query, index, category=category)
    if mode == "offline":
        return index.records[ranking[0][0]]
    if mode == "oracle":
        if oracle is None:
            raise ValueError("oracle mode needs an oracle client")
        catalog = [
            (mid, index.records[mid].description) for mid, _ in ranking[:top_k]
        ]
        choice = oracle.choose_material(part, catalog, context)
        return index.records[choice.chosen_material_id]
    raise ValueError(f"unknown retrieval mode {mode!r}")
