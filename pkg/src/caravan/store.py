"""Content-addressed, compressed artifact store with chained provenance.

Objects live under ``<root>/objects/<first2>/<hex>.zd`` as raw-DEFLATE
streams; every put appends one canonical JSON line to ``<root>/provenance.log``
which is replayed on startup. Ids are the SHA-256 of the uncompressed payload,
so re-putting identical bytes is a no-op and readers can verify integrity.
"""

from __future__ import annotations

import io
import json
import os
import threading
import zlib
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional
from xml.etree import ElementTree

from .core import content_id, format_timestamp, parse_timestamp, utcnow
from .errors import IntegrityError, MissingInput, NotFound, ParseError, StoreIOError

ARTIFACT_KINDS = (
    "package",
    "session",
    "featureset",
    "dataset_selected",
    "dataset_merged",
    "dataset_processed",
    "model",
    "evaluation",
    "corpus_index",
)

_COMPRESSION_LEVEL = 6  # fixed so equal payloads give equal on-disk bytes


@dataclass(frozen=True)
class ProvenanceRecord:
    """Audit entry for one stage run, chained across artifact lineages."""

    run_id: str
    stage: str
    plugin_id: str
    plugin_version: str
    params: tuple[tuple[str, str], ...]
    seed: int
    user: str
    started_at: datetime
    finished_at: datetime
    input_ids: tuple[str, ...] = ()
    output_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "stage": self.stage,
            "plugin_id": self.plugin_id,
            "plugin_version": self.plugin_version,
            "params": [[n, v] for n, v in self.params],
            "seed": self.seed,
            "user": self.user,
            "started_at": format_timestamp(self.started_at),
            "finished_at": format_timestamp(self.finished_at),
            "input_ids": list(self.input_ids),
            "output_ids": list(self.output_ids),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProvenanceRecord":
        return cls(
            run_id=data["run_id"],
            stage=data["stage"],
            plugin_id=data["plugin_id"],
            plugin_version=data["plugin_version"],
            params=tuple((n, v) for n, v in data["params"]),
            seed=int(data["seed"]),
            user=data["user"],
            started_at=parse_timestamp(data["started_at"]),
            finished_at=parse_timestamp(data["finished_at"]),
            input_ids=tuple(data["input_ids"]),
            output_ids=tuple(data["output_ids"]),
        )

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ArtifactMeta:
    id: str
    kind: str
    created_at: datetime
    lineage: tuple[ProvenanceRecord, ...]


def merge_lineages(
    input_lineages: Iterable[tuple[ProvenanceRecord, ...]], record: ProvenanceRecord
) -> tuple[ProvenanceRecord, ...]:
    """Concatenate input lineages (input order, duplicates removed keeping
    first) and append the new record."""
    seen: set[str] = set()
    merged: list[ProvenanceRecord] = []
    for lineage in input_lineages:
        for rec in lineage:
            key = rec.canonical()
            if key not in seen:
                seen.add(key)
                merged.append(rec)
    merged.append(record)
    return tuple(merged)


class ArtifactStore:
    """Thread-safe store; writers serialize on an internal lock, readers
    never observe partial payloads thanks to write-to-temp-then-rename."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.log_path = self.root / "provenance.log"
        self._lock = threading.RLock()
        self._meta: dict[str, ArtifactMeta] = {}
        self._order: list[str] = []  # ids in (created_at, id) order
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self._replay()

    # -- persistence ---------------------------------------------------

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
                    continue  # trailing partial line from a crash
                record = ProvenanceRecord.from_dict(event["record"])
                inputs = [self._meta[i].lineage for i in event["inputs"] if i in self._meta]
                meta = ArtifactMeta(
                    id=event["id"],
                    kind=event["kind"],
                    created_at=parse_timestamp(event["created_at"]),
                    lineage=merge_lineages(inputs, record),
                )
                if meta.id not in self._meta:
                    self._meta[meta.id] = meta
                    self._order.append(meta.id)
        self._order.sort(key=lambda i: (self._meta[i].created_at, i))

    def _append_event(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _object_path(self, hex_id: str) -> Path:
        return self.objects_dir / hex_id[:2] / f"{hex_id}.zd"

    # -- operations ----------------------------------------------------

    def put(
        self,
        payload: bytes,
        kind: str,
        inputs: list[str],
        record: ProvenanceRecord,
        created_at: Optional[datetime] = None,
    ) -> str:
        if kind not in ARTIFACT_KINDS:
            raise MissingInput(f"unknown artifact kind: {kind}")
        with self._lock:
            for input_id in inputs:
                if input_id not in self._meta:
                    raise MissingInput(f"unknown input artifact: {input_id}")
            hex_id = content_id(payload)
            if hex_id in self._meta:
                return hex_id  # idempotent: one stored copy per content
            record = replace(
                record,
                input_ids=tuple(inputs),
                output_ids=record.output_ids or (hex_id,),
            )
            path = self._object_path(hex_id)
            compressor = zlib.compressobj(_COMPRESSION_LEVEL, zlib.DEFLATED, -15)
            compressed = compressor.compress(payload) + compressor.flush()
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                with tmp.open("wb") as fh:
                    fh.write(compressed)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except OSError as exc:
                raise StoreIOError(f"failed to persist artifact: {exc}") from exc
            created = created_at or utcnow()
            lineage = merge_lineages(
                (self._meta[i].lineage for i in inputs), record
            )
            self._append_event(
                {
                    "id": hex_id,
                    "kind": kind,
                    "created_at": format_timestamp(created),
                    "inputs": list(inputs),
                    "record": record.to_dict(),
                }
            )
            meta = ArtifactMeta(hex_id, kind, created, lineage)
            self._meta[hex_id] = meta
            self._order.append(hex_id)
            self._order.sort(key=lambda i: (self._meta[i].created_at, i))
            return hex_id

    def get(self, artifact_id: str) -> bytes:
        meta = self._require(artifact_id)
        path = self._object_path(meta.id)
        try:
            compressed = path.read_bytes()
        except OSError as exc:
            raise IntegrityError(f"object file unreadable for {artifact_id}: {exc}") from exc
        try:
            payload = zlib.decompress(compressed, -15)
        except zlib.error as exc:
            raise IntegrityError(f"object file corrupted for {artifact_id}: {exc}") from exc
        if content_id(payload) != artifact_id:
            raise IntegrityError(f"payload digest mismatch for {artifact_id}")
        return payload

    def exists(self, artifact_id: str) -> bool:
        with self._lock:
            return artifact_id in self._meta

    def meta(self, artifact_id: str) -> ArtifactMeta:
        return self._require(artifact_id)

    def lineage(self, artifact_id: str) -> tuple[ProvenanceRecord, ...]:
        return self._require(artifact_id).lineage

    def _require(self, artifact_id: str) -> ArtifactMeta:
        with self._lock:
            meta = self._meta.get(artifact_id)
        if meta is None:
            raise NotFound(f"unknown artifact: {artifact_id}")
        return meta

    def list(
        self, kind: Optional[str] = None, offset: int = 0, limit: int = 50
    ) -> tuple[list[ArtifactMeta], int]:
        if offset < 0:
            raise MissingInput("offset must be non-negative")
        if limit <= 0:
            raise MissingInput("limit must be positive")
        with self._lock:
            ids = [i for i in self._order if kind is None or self._meta[i].kind == kind]
            page = [self._meta[i] for i in ids[offset : offset + limit]]
            return page, len(ids)

    def fsck(self) -> list[str]:
        """Store-wide integrity check; returns a list of problems (empty when healthy)."""
        problems: list[str] = []
        with self._lock:
            metas = dict(self._meta)
        known = set(metas)
        for artifact_id, meta in metas.items():
            try:
                self.get(artifact_id)
            except (IntegrityError, NotFound) as exc:
                problems.append(f"{artifact_id}: {exc.message}")
            for rec in meta.lineage:
                for input_id in rec.input_ids:
                    if input_id not in known:
                        problems.append(
                            f"{artifact_id}: lineage references missing input {input_id}"
                        )
        # Cycle check over the input-reference graph (content addressing
        # should make cycles impossible; verify anyway).
        direct: dict[str, tuple[str, ...]] = {
            aid: meta.lineage[-1].input_ids if meta.lineage else ()
            for aid, meta in metas.items()
        }
        state: dict[str, int] = {}

        def visit(node: str, trail: tuple[str, ...]) -> None:
            mark = state.get(node, 0)
            if mark == 1:
                problems.append(f"lineage cycle detected at {node}")
                return
            if mark == 2:
                return
            state[node] = 1
            for dep in direct.get(node, ()):
                if dep in direct:
                    visit(dep, trail + (node,))
            state[node] = 2

        for artifact_id in metas:
            visit(artifact_id, ())
        return problems


# -- provenance XML ------------------------------------------------------

def _escape_attr(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def provenance_to_xml(artifact_id: str, lineage: Iterable[ProvenanceRecord]) -> str:
    """Serialize a lineage to the canonical XML document.

    Hand-rolled so attribute order, indentation, and self-closing forms are
    fixed: export -> import -> re-export is byte-identical.
    """
    records = list(lineage)
    if not records:
        return f'<provenance artifact="{_escape_attr(artifact_id)}"/>\n'
    out = io.StringIO()
    out.write(f'<provenance artifact="{_escape_attr(artifact_id)}">\n')
    for rec in records:
        out.write(
            '  <record run="{run}" stage="{stage}" plugin="{plugin}" version="{version}"'
            ' seed="{seed}" user="{user}" started="{started}" finished="{finished}"'.format(
                run=_escape_attr(rec.run_id),
                stage=_escape_attr(rec.stage),
                plugin=_escape_attr(rec.plugin_id),
                version=_escape_attr(rec.plugin_version),
                seed=rec.seed,
                user=_escape_attr(rec.user),
                started=format_timestamp(rec.started_at),
                finished=format_timestamp(rec.finished_at),
            )
        )
        if not (rec.input_ids or rec.params or rec.output_ids):
            out.write("/>\n")
            continue
        out.write(">\n")
        for input_id in rec.input_ids:
            out.write(f'    <input id="{_escape_attr(input_id)}"/>\n')
        for name, value in rec.params:
            out.write(f'    <param name="{_escape_attr(name)}" value="{_escape_attr(value)}"/>\n')
        for output_id in rec.output_ids:
            out.write(f'    <output id="{_escape_attr(output_id)}"/>\n')
        out.write("  </record>\n")
    out.write("</provenance>\n")
    return out.getvalue()


_RECORD_ATTRS = ("run", "stage", "plugin", "version", "seed", "user", "started", "finished")


def provenance_from_xml(document: str | bytes) -> list[ProvenanceRecord]:
    """Parse the canonical provenance XML back into records."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        root = ElementTree.fromstring(document)
    except ElementTree.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from exc
    if root.tag != "provenance":
        raise ParseError(f"expected <provenance> root, got <{root.tag}>")
    if "artifact" not in root.attrib:
        raise ParseError("provenance/@artifact")
    records: list[ProvenanceRecord] = []
    for element in root:
        if element.tag != "record":
            raise ParseError(f"unexpected element <{element.tag}> under <provenance>")
        for attr in _RECORD_ATTRS:
            if attr not in element.attrib:
                raise ParseError(f"record/@{attr}")
        inputs: list[str] = []
        params: list[tuple[str, str]] = []
        outputs: list[str] = []
        for child in element:
            if child.tag == "input":
                if "id" not in child.attrib:
                    raise ParseError("input/@id")
                inputs.append(child.attrib["id"])
            elif child.tag == "param":
                if "name" not in child.attrib:
                    raise ParseError("param/@name")
                if "value" not in child.attrib:
                    raise ParseError("param/@value")
                params.append((child.attrib["name"], child.attrib["value"]))
            elif child.tag == "output":
                if "id" not in child.attrib:
                    raise ParseError("output/@id")
                outputs.append(child.attrib["id"])
            else:
                raise ParseError(f"unexpected element <{child.tag}> under <record>")
        try:
            seed = int(element.attrib["seed"])
        except ValueError as exc:
            raise ParseError("record/@seed") from exc
        try:
            started = parse_timestamp(element.attrib["started"])
            finished = parse_timestamp(element.attrib["finished"])
        except ValueError as exc:
            raise ParseError(f"record timestamp: {exc}") from exc
        records.append(
            ProvenanceRecord(
                run_id=element.attrib["run"],
                stage=element.attrib["stage"],
                plugin_id=element.attrib["plugin"],
                plugin_version=element.attrib["version"],
                params=tuple(params),
                seed=seed,
                user=element.attrib["user"],
                started_at=started,
                finished_at=finished,
                input_ids=tuple(inputs),
                output_ids=tuple(outputs),
            )
        )
    return records


def export_provenance_xml(store: ArtifactStore, artifact_id: str) -> str:
    return provenance_to_xml(artifact_id, store.lineage(artifact_id))
