"""Synthetic app-package corpus: file format, validation, and generator.

A package is a zip holding exactly one ``manifest.json``. The generator
writes a browsable corpus directory (package zips, per-package metadata,
``index.json``) whose bytes are a pure function of the seed, and in disjoint
mode plants per-category marker tokens that never cross categories.
"""

from __future__ import annotations

import io
import json
import random
import zipfile
from pathlib import Path

from .core import FAMILIES, canonical_json, content_id
from .errors import InvalidArgument, StoreIOError, ValidationFailure

MANIFEST_KEYS = {
    "name": str,
    "version": str,
    "category_hint": str,
    "permissions": list,
    "features": list,
    "sensors": list,
    "intents": dict,
    "apis": list,
    "strings": list,
}
INTENT_KEYS = ("activities", "services", "receivers")

TOKEN_FAMILIES = tuple(f for f in FAMILIES if f != "manifest")

# Fixed member date so equal manifests give byte-equal zips.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

# Disjoint-mode geometry: every package carries all 6 of its category's
# markers per family (cross-category Hamming distance >= 12 + 4 pool tokens
# per family), while within-category variation is capped at 6 pool + 6
# common token mismatches. Same-category rows are therefore always strictly
# nearer than cross-category rows, which forces 1-NN accuracy 1.0.
MARKERS_PER_FAMILY = 6
_CATEGORY_POOL_SIZE = 6
_CATEGORY_SAMPLE = (2, 4)
_COMMON_POOL_SIZE = 12
_COMMON_SAMPLE = (1, 3)


def validate_manifest(manifest: dict) -> list[tuple[str, str]]:
    """All schema violations of a parsed manifest, as (field, reason) pairs."""
    problems: list[tuple[str, str]] = []
    if not isinstance(manifest, dict):
        return [("manifest.json", "top-level value must be an object")]
    for key, expected in MANIFEST_KEYS.items():
        if key not in manifest:
            problems.append((key, "required key absent"))
            continue
        value = manifest[key]
        if not isinstance(value, expected):
            problems.append((key, f"expected {expected.__name__}"))
            continue
        if expected is list and not all(isinstance(item, str) for item in value):
            problems.append((key, "list items must be strings"))
    for key in manifest:
        if key not in MANIFEST_KEYS:
            problems.append((key, "unknown key rejected"))
    intents = manifest.get("intents")
    if isinstance(intents, dict):
        for key in INTENT_KEYS:
            if key not in intents:
                problems.append((f"intents.{key}", "required key absent"))
            elif not isinstance(intents[key], list) or not all(
                isinstance(item, str) for item in intents[key]
            ):
                problems.append((f"intents.{key}", "expected list of strings"))
        for key in intents:
            if key not in INTENT_KEYS:
                problems.append((f"intents.{key}", "unknown key rejected"))
    return problems


def parse_package(payload: bytes) -> dict:
    """Validate a synthetic package zip and return its manifest."""
    problems: list[tuple[str, str]] = []
    try:
        archive = zipfile.ZipFile(io.BytesIO(payload))
    except zipfile.BadZipFile:
        raise ValidationFailure(
            "invalid package", details=[("payload", "not a zip archive")]
        ) from None
    names = archive.namelist()
    if "manifest.json" not in names:
        raise ValidationFailure("invalid package", details=[("manifest.json", "absent")])
    for name in names:
        if name != "manifest.json":
            problems.append((name, "unexpected archive member"))
    try:
        manifest = json.loads(archive.read("manifest.json").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationFailure(
            "invalid package", details=[("manifest.json", f"not valid UTF-8 JSON: {exc}")]
        ) from None
    problems.extend(validate_manifest(manifest))
    if problems:
        raise ValidationFailure("invalid package", details=problems)
    return manifest


def package_bytes(manifest: dict) -> bytes:
    """Zip a manifest into the canonical package archive (deterministic)."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED, compresslevel=6) as archive:
        info = zipfile.ZipInfo("manifest.json", date_time=_ZIP_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        archive.writestr(info, canonical_json(manifest))
    return buffer.getvalue()


def token_streams(manifest: dict) -> dict[str, list[str]]:
    """Raw per-family token streams (duplicates kept, file order preserved)."""
    intents = manifest["intents"]
    intent_tokens = (
        [f"activity:{name}" for name in intents["activities"]]
        + [f"service:{name}" for name in intents["services"]]
        + [f"receiver:{name}" for name in intents["receivers"]]
    )
    return {
        "apis": list(manifest["apis"]),
        "features": list(manifest["features"]),
        "intents": intent_tokens,
        "manifest": [
            f"name={manifest['name']}",
            f"version={manifest['version']}",
            f"category_hint={manifest['category_hint']}",
        ],
        "permissions": list(manifest["permissions"]),
        "sensors": list(manifest["sensors"]),
        "strings": list(manifest["strings"]),
    }


def category_markers(category: str) -> dict[str, list[str]]:
    """Disjoint-mode marker tokens per token family for one category."""
    return {
        family: [f"{family}.{category}.marker{i}" for i in range(MARKERS_PER_FAMILY)]
        for family in TOKEN_FAMILIES
    }


def _sample_tokens(rng: random.Random, pool: list[str], low: int, high: int) -> list[str]:
    count = rng.randint(low, min(high, len(pool)))
    return rng.sample(pool, count)


def generate_corpus(
    n_packages: int,
    categories: list[str],
    mode: str,
    seed: int,
    out: str | Path,
) -> dict:
    """Write a synthetic corpus and return the parsed index.

    ``disjoint`` mode guarantees every package carries all of its category's
    marker tokens in each token family and never another category's markers;
    ``overlap`` mode draws mainly from a common pool with no such guarantee.
    """
    if mode not in ("disjoint", "overlap"):
        raise InvalidArgument(f"unknown corpus mode: {mode}")
    if len(categories) < 2:
        raise InvalidArgument("at least two categories required")
    if len(set(categories)) != len(categories):
        raise InvalidArgument("categories must be distinct")
    if n_packages < len(categories):
        raise InvalidArgument("n_packages must be >= number of categories")
    out = Path(out)
    try:
        (out / "packages").mkdir(parents=True, exist_ok=True)
        (out / "metadata").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StoreIOError(f"cannot create corpus directory: {exc}") from exc

    rng = random.Random(seed)
    common_pool = {
        family: [f"{family}.common.tok{i}" for i in range(_COMMON_POOL_SIZE)]
        for family in TOKEN_FAMILIES
    }
    category_pool = {
        (family, category): [f"{family}.{category}.tok{i}" for i in range(_CATEGORY_POOL_SIZE)]
        for family in TOKEN_FAMILIES
        for category in categories
    }

    entries = []
    for index in range(n_packages):
        category = categories[index % len(categories)]
        markers = category_markers(category)
        tokens: dict[str, list[str]] = {}
        for family in TOKEN_FAMILIES:
            chosen: list[str] = []
            if mode == "disjoint":
                chosen.extend(markers[family])
                chosen.extend(
                    _sample_tokens(rng, category_pool[(family, category)], *_CATEGORY_SAMPLE)
                )
                chosen.extend(_sample_tokens(rng, common_pool[family], *_COMMON_SAMPLE))
            else:
                chosen.extend(_sample_tokens(rng, common_pool[family], 3, 8))
                chosen.extend(_sample_tokens(rng, category_pool[(family, category)], 0, 4))
            tokens[family] = chosen
        # Intent tokens all go into `activities` so the extracted form
        # (`activity:<token>`) is stable across packages; receivers get one
        # category-specific component name.
        name = f"{category}_app_{index:04d}"
        manifest = {
            "name": name,
            "version": f"1.{rng.randint(0, 9)}.{rng.randint(0, 99)}",
            "category_hint": category,
            "permissions": tokens["permissions"],
            "features": tokens["features"],
            "sensors": tokens["sensors"],
            "intents": {
                "activities": tokens["intents"],
                "services": [f"svc.{category}.sync"],
                "receivers": [f"rcv.{category}.boot"],
            },
            "apis": tokens["apis"],
            "strings": tokens["strings"],
        }
        payload = package_bytes(manifest)
        package_id = content_id(payload)
        file_rel = f"packages/{name}.zip"
        metadata_rel = f"metadata/{name}.json"
        (out / file_rel).write_bytes(payload)
        metadata = {
            "category": category,
            "description": f"Synthetic {category} application number {index}.",
            "size_bytes": len(payload),
            "min_platform_version": f"{rng.randint(5, 13)}.0",
            "developer": f"studio-{rng.randint(1, 20):02d}",
            "rating": round(rng.uniform(0, 5), 1),
        }
        (out / metadata_rel).write_bytes(
            json.dumps(metadata, sort_keys=True, indent=2).encode("utf-8") + b"\n"
        )
        entries.append({"id": package_id, "file": file_rel, "metadata_ref": metadata_rel})

    index_doc = {"packages": entries}
    (out / "index.json").write_bytes(
        json.dumps(index_doc, sort_keys=True, indent=2).encode("utf-8") + b"\n"
    )
    return index_doc
