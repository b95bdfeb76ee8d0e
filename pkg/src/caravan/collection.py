"""Stage 1: crawl a two-source package corpus, parse reusable sessions, and
incrementally extract per-family feature sets.

The catalog is the mutable metadata side of the store (package records,
votes, session/featureset pointers, dataset names) persisted as an
append-only JSON-line log; ``metrics.log`` records parse/extraction events so
tests can assert exactly-once work across process kills.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import (
    FAMILY_SET,
    ResolvedLabel,
    VoteRecord,
    canonical_json,
    format_timestamp,
    parse_timestamp,
    resolve_label,
    utcnow,
)
from .corpus import parse_package, token_streams
from .errors import (
    InvalidArgument,
    NotFound,
    RetryableTaskError,
    ValidationFailure,
)
from .store import ArtifactStore, ProvenanceRecord

METADATA_FIELDS = {
    "category": str,
    "description": str,
    "size_bytes": int,
    "min_platform_version": str,
    "developer": str,
    "rating": (int, float),
}


@dataclass
class PackageRecord:
    package_id: str
    name: str
    version: str
    origin: str
    metadata: dict = field(default_factory=dict)
    first_seen: Optional[str] = None
    last_seen: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "package_id": self.package_id,
            "name": self.name,
            "version": self.version,
            "origin": self.origin,
            "metadata": self.metadata,
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PackageRecord":
        return cls(**data)


def check_metadata(obj) -> dict:
    """Validate crawled/uploaded metadata; fields may be absent, never malformed."""
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ValidationFailure("invalid metadata", details=[("metadata", "must be an object")])
    problems: list[tuple[str, str]] = []
    cleaned: dict = {}
    for key, value in obj.items():
        expected = METADATA_FIELDS.get(key)
        if expected is None:
            problems.append((key, "unknown metadata field"))
            continue
        if value is None:
            continue
        if not isinstance(value, expected) or isinstance(value, bool):
            problems.append((key, f"expected {METADATA_FIELDS[key]}"))
            continue
        cleaned[key] = value
    rating = cleaned.get("rating")
    if rating is not None and not 0 <= rating <= 5:
        problems.append(("rating", "must be within [0, 5]"))
    size = cleaned.get("size_bytes")
    if size is not None and size < 0:
        problems.append(("size_bytes", "must be non-negative"))
    if problems:
        raise ValidationFailure("invalid metadata", details=problems)
    return cleaned


class Catalog:
    """Append-only JSON-line log of package records, votes, and pointers."""

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self._lock = threading.RLock()
        self._packages: dict[str, PackageRecord] = {}
        self._package_order: list[str] = []
        self._votes: dict[str, list[VoteRecord]] = {}
        self._sessions: dict[str, str] = {}
        self._featuresets: dict[str, str] = {}
        self._names: dict[tuple[str, str], str] = {}  # (kind, name) -> artifact id
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    continue
                self._apply(event)

    def _apply(self, event: dict) -> None:
        op = event["op"]
        if op == "package":
            record = PackageRecord.from_dict(event["record"])
            if record.package_id not in self._packages:
                self._package_order.append(record.package_id)
            self._packages[record.package_id] = record
        elif op == "vote":
            vote = VoteRecord(
                package_id=event["package"],
                category=event["category"],
                voter=event["voter"],
                cast_at=parse_timestamp(event["cast_at"]),
            )
            self._votes.setdefault(vote.package_id, []).append(vote)
        elif op == "session":
            self._sessions[event["package"]] = event["artifact"]
        elif op == "featureset":
            self._featuresets[event["package"]] = event["artifact"]
        elif op == "name":
            self._names[(event["kind"], event["name"])] = event["artifact"]

    def _append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _log_and_apply(self, event: dict) -> None:
        with self._lock:
            self._append(event)
            self._apply(event)

    # -- packages --------------------------------------------------------

    def upsert_package(self, record: PackageRecord) -> None:
        with self._lock:
            existing = self._packages.get(record.package_id)
            now = format_timestamp(utcnow())
            record.first_seen = existing.first_seen if existing else now
            record.last_seen = now
            self._log_and_apply({"op": "package", "record": record.to_dict()})

    def package(self, package_id: str) -> PackageRecord:
        with self._lock:
            record = self._packages.get(package_id)
        if record is None:
            raise NotFound(f"unknown package: {package_id}")
        return record

    def has_package(self, package_id: str) -> bool:
        with self._lock:
            return package_id in self._packages

    def list_packages(self, offset: int = 0, limit: int = 50) -> tuple[list[PackageRecord], int]:
        with self._lock:
            ids = list(self._package_order)
            page = [self._packages[i] for i in ids[offset : offset + limit]]
            return page, len(ids)

    def package_ids(self) -> list[str]:
        with self._lock:
            return list(self._package_order)

    # -- votes -----------------------------------------------------------

    def add_vote(self, vote: VoteRecord) -> None:
        if not self.has_package(vote.package_id):
            raise NotFound(f"unknown package: {vote.package_id}")
        self._log_and_apply(
            {
                "op": "vote",
                "package": vote.package_id,
                "category": vote.category,
                "voter": vote.voter,
                "cast_at": format_timestamp(vote.cast_at),
            }
        )

    def votes(self, package_id: str) -> list[VoteRecord]:
        with self._lock:
            return list(self._votes.get(package_id, []))

    # -- pointers ----------------------------------------------------------

    def session_id(self, package_id: str) -> Optional[str]:
        with self._lock:
            return self._sessions.get(package_id)

    def set_session_id(self, package_id: str, artifact_id: str) -> None:
        self._log_and_apply({"op": "session", "package": package_id, "artifact": artifact_id})

    def featureset_id(self, package_id: str) -> Optional[str]:
        with self._lock:
            return self._featuresets.get(package_id)

    def set_featureset_id(self, package_id: str, artifact_id: str) -> None:
        self._log_and_apply({"op": "featureset", "package": package_id, "artifact": artifact_id})

    # -- artifact names ----------------------------------------------------

    def lookup_name(self, kind: str, name: str) -> Optional[str]:
        with self._lock:
            return self._names.get((kind, name))

    def register_name(self, kind: str, name: str, artifact_id: str) -> None:
        self._log_and_apply({"op": "name", "kind": kind, "name": name, "artifact": artifact_id})

    def names(self, kind: str) -> dict[str, str]:
        with self._lock:
            return {n: a for (k, n), a in self._names.items() if k == kind}


class MetricsLog:
    """Append-only event log surviving process kills (exactly-once checks)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def emit(self, event: str, **fields) -> None:
        line = json.dumps({"event": event, **fields}, sort_keys=True, separators=(",", ":"))
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def events(self, event: Optional[str] = None) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    parsed = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if event is None or parsed.get("event") == event:
                    out.append(parsed)
        return out

    def count(self, event: str, **match) -> int:
        total = 0
        for parsed in self.events(event):
            if all(parsed.get(k) == v for k, v in match.items()):
                total += 1
        return total


class Source:
    """One crawl source: a local directory or an HTTP base, fetched by GET."""

    def __init__(self, base: str):
        self.base = str(base)

    def _is_http(self) -> bool:
        return urllib.parse.urlparse(self.base).scheme in ("http", "https")

    def fetch(self, rel: Optional[str] = None) -> bytes:
        try:
            if self._is_http():
                url = self.base
                if rel:
                    if not url.endswith("/"):
                        url += "/"
                    url = urllib.parse.urljoin(url, rel)
                with urllib.request.urlopen(url, timeout=30) as response:
                    return response.read()
            path = Path(self.base)
            if rel:
                path = path / rel
            return path.read_bytes()
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise RetryableTaskError(f"source unreachable: {exc}") from exc


def _index_source(index_url: str) -> tuple[Source, str]:
    """Split an index location into (base source, index file name)."""
    parsed = urllib.parse.urlparse(str(index_url))
    if parsed.scheme in ("http", "https"):
        base, _, name = str(index_url).rpartition("/")
        return Source(base), name
    path = Path(index_url)
    if path.is_dir():
        return Source(str(path)), "index.json"
    return Source(str(path.parent)), path.name


class CollectionService:
    """Crawl, upload, analyze, extract; all persistence via store + catalog."""

    PLUGIN_VERSION = "1.0"

    def __init__(self, store: ArtifactStore, catalog: Catalog, metrics: MetricsLog):
        self.store = store
        self.catalog = catalog
        self.metrics = metrics
        self._package_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _package_lock(self, package_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._package_locks.get(package_id)
            if lock is None:
                lock = self._package_locks[package_id] = threading.Lock()
            return lock

    def _record(
        self, stage: str, run_id: str, seed: int, user: str, params: list[tuple[str, str]]
    ) -> ProvenanceRecord:
        now = utcnow()
        return ProvenanceRecord(
            run_id=run_id,
            stage=stage,
            plugin_id=stage,
            plugin_version=self.PLUGIN_VERSION,
            params=tuple(params),
            seed=seed,
            user=user,
            started_at=now,
            finished_at=now,
        )

    # -- upload ------------------------------------------------------------

    def ingest_upload(
        self,
        payload: bytes,
        declared_category: Optional[str],
        uploader: str,
        run_id: str,
        seed: int = 0,
    ) -> str:
        manifest = parse_package(payload)  # raises ValidationFailure with all violations
        record = self._record(
            "crawl",
            run_id,
            seed,
            uploader,
            [("source", "upload")] + ([("category", declared_category)] if declared_category else []),
        )
        package_id = self.store.put(payload, "package", [], record)
        metadata = {"size_bytes": len(payload)}
        if declared_category:
            metadata["category"] = declared_category
        self.catalog.upsert_package(
            PackageRecord(
                package_id=package_id,
                name=manifest["name"],
                version=manifest["version"],
                origin=f"upload:{uploader}",
                metadata=metadata,
            )
        )
        return package_id

    # -- crawl ---------------------------------------------------------------

    def load_index(self, index_url: str) -> tuple[list[dict], Source]:
        source, index_name = _index_source(index_url)
        raw = source.fetch(index_name)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationFailure(
                "malformed index", details=[("index.json", str(exc))]
            ) from None
        if not isinstance(doc, dict) or not isinstance(doc.get("packages"), list):
            raise ValidationFailure("malformed index", details=[("packages", "missing list")])
        entries = []
        for position, entry in enumerate(doc["packages"]):
            for key in ("id", "file", "metadata_ref"):
                if not isinstance(entry, dict) or not isinstance(entry.get(key), str):
                    raise ValidationFailure(
                        "malformed index",
                        details=[(f"packages[{position}].{key}", "missing string field")],
                    )
            entries.append(entry)
        return entries, source

    def crawl_package(
        self,
        entry: dict,
        package_source: Source,
        metadata_source: Source,
        record: ProvenanceRecord,
    ) -> str:
        """Fetch one indexed package (skipping the download when its content
        id is already stored) plus its metadata; returns the package id."""
        package_id = entry["id"]
        if not self.store.exists(package_id):
            payload = package_source.fetch(entry["file"])
            self.metrics.emit("download", package=package_id)
            parse_package(payload)
            package_id = self.store.put(payload, "package", [], record)
        raw_metadata = metadata_source.fetch(entry["metadata_ref"])
        try:
            metadata = check_metadata(json.loads(raw_metadata.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationFailure(
                "malformed metadata", details=[(entry["metadata_ref"], str(exc))]
            ) from None
        manifest = parse_package(self.store.get(package_id))
        self.catalog.upsert_package(
            PackageRecord(
                package_id=package_id,
                name=manifest["name"],
                version=manifest["version"],
                origin=f"{package_source.base}/{entry['file']}",
                metadata=metadata,
            )
        )
        return package_id

    def crawl(
        self,
        index_url: str,
        metadata_url: str,
        run_id: str,
        seed: int = 0,
        user: str = "system",
    ) -> list[str]:
        """Synchronous crawl of every indexed package (orchestrated crawls
        reuse load_index/crawl_package per unit instead)."""
        entries, package_source = self.load_index(index_url)
        metadata_source = Source(str(metadata_url))
        record = self._record(
            "crawl",
            run_id,
            seed,
            user,
            [("index_url", str(index_url)), ("metadata_url", str(metadata_url))],
        )
        return [
            self.crawl_package(entry, package_source, metadata_source, record)
            for entry in entries
        ]

    # -- analyze ----------------------------------------------------------------

    def analyze(self, package_id: str, run_id: str, seed: int = 0, user: str = "system") -> str:
        with self._package_lock(package_id):
            existing = self.catalog.session_id(package_id)
            if existing is not None:
                return existing
            payload = self.store.get(package_id)  # NotFound if missing
            manifest = parse_package(payload)
            self.metrics.emit("parse", package=package_id)
            session = {
                "package_id": package_id,
                "manifest": {
                    "name": manifest["name"],
                    "version": manifest["version"],
                    "category_hint": manifest["category_hint"],
                    "permissions": manifest["permissions"],
                    "features": manifest["features"],
                    "sensors": manifest["sensors"],
                },
                "token_streams": token_streams(manifest),
            }
            record = self._record("analyze", run_id, seed, user, [("package", package_id)])
            session_id = self.store.put(canonical_json(session), "session", [package_id], record)
            self.catalog.set_session_id(package_id, session_id)
            return session_id

    def session(self, package_id: str) -> dict:
        session_id = self.catalog.session_id(package_id)
        if session_id is None:
            raise NotFound(f"no session for package {package_id}")
        return json.loads(self.store.get(session_id).decode("utf-8"))

    # -- extract -------------------------------------------------------------------

    def featureset(self, package_id: str) -> dict:
        featureset_id = self.catalog.featureset_id(package_id)
        if featureset_id is None:
            return {"package_id": package_id, "extracted": {}, "completed_families": []}
        return json.loads(self.store.get(featureset_id).decode("utf-8"))

    def completed_families(self, package_id: str) -> set[str]:
        return set(self.featureset(package_id)["completed_families"])

    def extract_family(
        self, package_id: str, family: str, run_id: str, seed: int = 0, user: str = "system"
    ) -> bool:
        """Extract one family if not yet complete; returns True when work ran."""
        if family not in FAMILY_SET:
            raise InvalidArgument(f"unknown feature family: {family}")
        self.analyze(package_id, run_id, seed=seed, user=user)
        with self._package_lock(package_id):
            featureset = self.featureset(package_id)
            if family in featureset["completed_families"]:
                return False
            stream = self.session(package_id)["token_streams"][family]
            tokens = sorted(set(stream))
            self.metrics.emit("extract_family", package=package_id, family=family)
            featureset["extracted"][family] = tokens
            featureset["completed_families"] = sorted(
                set(featureset["completed_families"]) | {family}
            )
            record = self._record(
                "extract", run_id, seed, user, [("package", package_id), ("family", family)]
            )
            session_id = self.catalog.session_id(package_id)
            featureset_id = self.store.put(
                canonical_json(featureset), "featureset", [session_id], record
            )
            self.catalog.set_featureset_id(package_id, featureset_id)
            return True

    def extract(
        self,
        package_id: str,
        requested: set[str],
        run_id: str,
        seed: int = 0,
        user: str = "system",
    ) -> dict:
        """Extract the requested families incrementally; returns the delta."""
        unknown = set(requested) - FAMILY_SET
        if unknown:
            raise InvalidArgument(f"unknown feature families: {', '.join(sorted(unknown))}")
        delta: dict[str, list[str]] = {}
        for family in sorted(requested):
            if self.extract_family(package_id, family, run_id, seed=seed, user=user):
                delta[family] = self.featureset(package_id)["extracted"][family]
        return delta

    # -- labels ------------------------------------------------------------------

    def resolved_label(self, package_id: str) -> Optional[ResolvedLabel]:
        record = self.catalog.package(package_id)
        manifest_hint = None
        if self.catalog.session_id(package_id) is not None:
            manifest_hint = self.session(package_id)["manifest"].get("category_hint") or None
        return resolve_label(
            self.catalog.votes(package_id),
            metadata_category=record.metadata.get("category"),
            manifest_hint=manifest_hint,
            package_id=package_id,
        )
