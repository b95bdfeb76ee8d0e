"""Shared identifiers, seeding discipline, feature families, and label resolution.

Everything here is a pure function over value types; no module-level state,
no ambient entropy. All randomness anywhere in the pipeline flows from a
master seed through :func:`derive_seed`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional

from .errors import InvalidArgument

# Feature families, in the lexicographic order used for matrix column layout.
FAMILIES = ("apis", "features", "intents", "manifest", "permissions", "sensors", "strings")
FAMILY_SET = frozenset(FAMILIES)

SEED_MASK = (1 << 64) - 1

_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


def content_id(payload: bytes) -> str:
    """SHA-256 hex digest of the payload bytes (the artifact id)."""
    return hashlib.sha256(payload).hexdigest()


def is_artifact_id(value: str) -> bool:
    return isinstance(value, str) and bool(_HEX64_RE.match(value))


def derive_seed(master: int, scope_label: str) -> int:
    """Derive a scoped 64-bit seed from a master seed.

    Defined as the first 8 bytes (big-endian) of
    SHA-256(8-byte big-endian master || UTF-8 scope label).
    """
    if not scope_label:
        raise InvalidArgument("scope_label must be nonempty")
    if not 0 <= master <= SEED_MASK:
        raise InvalidArgument("master seed must fit in 64 bits")
    digest = hashlib.sha256(master.to_bytes(8, "big") + scope_label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"


def format_timestamp(ts: datetime) -> str:
    """Canonical UTC timestamp string (microseconds always present)."""
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts.strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def canonical_json(obj) -> bytes:
    """Deterministic JSON encoding used for every artifact payload."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


@dataclass(frozen=True)
class VoteRecord:
    package_id: str
    category: str
    voter: str
    cast_at: datetime

    def __post_init__(self):
        if not self.category:
            raise InvalidArgument("vote category must be nonempty")


@dataclass(frozen=True)
class ResolvedLabel:
    package_id: str
    category: str
    source: str  # votes | metadata | manifest_hint
    tie: bool


def resolve_label(
    votes: list[VoteRecord],
    metadata_category: Optional[str] = None,
    manifest_hint: Optional[str] = None,
    package_id: Optional[str] = None,
) -> Optional[ResolvedLabel]:
    """Resolve a package's category with precedence votes > metadata > manifest hint.

    Only each voter's latest vote counts; the majority category wins and a
    tie picks the lexicographically smallest tied category with tie=True.
    Returns None when no signal exists at all.
    """
    if votes:
        ids = {v.package_id for v in votes}
        if len(ids) > 1:
            raise InvalidArgument("votes mix multiple package_ids")
        (vote_pid,) = ids
        if package_id is not None and package_id != vote_pid:
            raise InvalidArgument("votes do not match the given package_id")
        package_id = vote_pid
        # Latest per voter; (cast_at, category) max keeps the result invariant
        # under permutations of the input list.
        latest: dict[str, VoteRecord] = {}
        for vote in votes:
            cur = latest.get(vote.voter)
            if cur is None or (vote.cast_at, vote.category) > (cur.cast_at, cur.category):
                latest[vote.voter] = vote
        counts: dict[str, int] = {}
        for vote in latest.values():
            counts[vote.category] = counts.get(vote.category, 0) + 1
        top = max(counts.values())
        winners = sorted(c for c, n in counts.items() if n == top)
        return ResolvedLabel(package_id, winners[0], "votes", tie=len(winners) > 1)
    if package_id is None:
        raise InvalidArgument("package_id required when there are no votes")
    if metadata_category:
        return ResolvedLabel(package_id, metadata_category, "metadata", tie=False)
    if manifest_hint:
        return ResolvedLabel(package_id, manifest_hint, "manifest_hint", tie=False)
    return None
