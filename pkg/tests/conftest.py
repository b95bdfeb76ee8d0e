import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from caravan.core import canonical_json, utcnow
from caravan.corpus import package_bytes
from caravan.service import CaravanService
from caravan.store import ArtifactStore, ProvenanceRecord


def make_manifest(**overrides) -> dict:
    manifest = {
        "name": "demo",
        "version": "1.0.0",
        "category_hint": "game",
        "permissions": ["NET", "CAMERA"],
        "features": ["touchscreen"],
        "sensors": ["gyro"],
        "intents": {"activities": ["Main"], "services": ["Sync"], "receivers": ["Boot"]},
        "apis": ["api.draw", "api.net"],
        "strings": ["hello"],
    }
    manifest.update(overrides)
    return manifest


def make_package(**overrides) -> bytes:
    return package_bytes(make_manifest(**overrides))


def make_record(stage="crawl", seed=0, params=(), run_id=None, user="tester") -> ProvenanceRecord:
    now = utcnow()
    return ProvenanceRecord(
        run_id=run_id or str(uuid.uuid4()),
        stage=stage,
        plugin_id=stage,
        plugin_version="1.0",
        params=tuple(params),
        seed=seed,
        user=user,
        started_at=now,
        finished_at=now,
    )


@pytest.fixture
def store(tmp_path) -> ArtifactStore:
    return ArtifactStore(tmp_path / "data")


@pytest.fixture
def service(tmp_path):
    svc = CaravanService(tmp_path / "data", worker_count=2)
    svc.start()
    yield svc
    svc.stop()


@pytest.fixture
def idle_service(tmp_path):
    """Service without running workers (direct handler access in tests)."""
    svc = CaravanService(tmp_path / "data", worker_count=0)
    yield svc


def ts(second: int = 0, micro: int = 0) -> datetime:
    return datetime(2024, 5, 1, 12, 0, second, micro, tzinfo=timezone.utc)


def payload_of(obj) -> bytes:
    return canonical_json(obj)
