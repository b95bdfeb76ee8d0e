"""Service wiring: store + catalog + registry + queue + worker pool, the
stage handlers the workers execute, and the declarative pipeline runner.

Every stage runs as an orchestrator task; per-stage seeds derive from the
task's master seed and the stage name, so one master seed pins the whole
pipeline byte-for-byte.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from pathlib import Path
from typing import Optional

from .collection import Catalog, CollectionService, MetricsLog, Source
from .core import FAMILY_SET, derive_seed, format_timestamp, is_artifact_id, utcnow
from .corpus import generate_corpus
from .datasets import (
    MergeConfig,
    PreprocessConfig,
    PreprocessStep,
    SelectionConfig,
    merge,
    preprocess,
    select,
)
from .errors import CaravanError, NotFound, ValidationFailure
from .orchestrator import Clock, Lease, TaskQueue, TaskSpec, WorkerPool
from .plugins import register_builtin_plugins
from .registry import PluginRegistry
from .store import ArtifactStore, ProvenanceRecord
from .training import TrainConfig, evaluate, train

DEFAULT_DATA_DIR = "data"
ENV_DATA_DIR = "CARAVAN_DATA_DIR"
ENV_CRASH_AFTER_UNITS = "CARAVAN_CRASH_AFTER_UNITS"

SUBMITTABLE_STAGES = ("crawl", "extract", "select", "merge", "preprocess", "train")


def default_data_dir() -> str:
    return os.environ.get(ENV_DATA_DIR, DEFAULT_DATA_DIR)


class CrashHook:
    """Test harness: hard-exit after N completed units (crash simulation)."""

    def __init__(self, remaining: Optional[int]):
        self.remaining = remaining
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls) -> "CrashHook":
        raw = os.environ.get(ENV_CRASH_AFTER_UNITS)
        return cls(int(raw) if raw else None)

    def tick(self) -> None:
        if self.remaining is None:
            return
        with self._lock:
            self.remaining -= 1
            if self.remaining <= 0:
                os._exit(137)


def _require_fields(body: dict, fields: list[str]) -> list[tuple[str, str]]:
    return [(name, "required field missing") for name in fields if body.get(name) in (None, "")]


def _csv(values) -> str:
    return ",".join(values)


class CaravanService:
    """One data directory's worth of pipeline: embeddable in tests, the CLI,
    and the HTTP gateway alike."""

    def __init__(
        self,
        data_dir: str | Path,
        worker_count: int = 2,
        lease_ttl: float = 30.0,
        clock: Optional[Clock] = None,
    ):
        self.data_dir = Path(data_dir)
        self.store = ArtifactStore(self.data_dir)
        self.catalog = Catalog(self.data_dir / "catalog.log")
        self.metrics = MetricsLog(self.data_dir / "metrics.log")
        self.queue = TaskQueue(self.data_dir / "tasks.log", clock=clock, lease_ttl=lease_ttl)
        self.registry = PluginRegistry()
        register_builtin_plugins(self.registry)
        self.collection = CollectionService(self.store, self.catalog, self.metrics)
        self.crash_hook = CrashHook.from_env()
        handlers = {
            "crawl": self._handle_crawl,
            "extract": self._handle_extract,
            "select": self._handle_select,
            "merge": self._handle_merge,
            "preprocess": self._handle_preprocess,
            "train": self._handle_train,
            "evaluate": self._handle_evaluate,
        }
        self.pool = WorkerPool(self.queue, handlers, worker_count)

    def start(self) -> "CaravanService":
        self.pool.start()
        return self

    def stop(self) -> None:
        self.pool.stop()

    # -- stage submission ------------------------------------------------------

    def submit_stage(self, stage: str, body: dict) -> str:
        """Validate a stage-launch request and enqueue it; returns the task id."""
        if stage not in SUBMITTABLE_STAGES:
            raise NotFound(f"unknown stage: {stage}")
        if not isinstance(body, dict):
            raise ValidationFailure("request body must be an object")
        if not isinstance(body.get("master_seed"), int) or isinstance(
            body.get("master_seed"), bool
        ):
            raise ValidationFailure(
                "invalid stage request", details=[("master_seed", "required integer")]
            )
        params = getattr(self, f"_validate_{stage}")(body)
        user = body.get("user") or "api"
        params.append(("user", str(user)))
        spec = TaskSpec(
            task_id=body.get("task_id") or str(uuid.uuid4()),
            stage=stage,
            params=tuple(params),
            master_seed=body["master_seed"],
            submitted_at=utcnow(),
            units=tuple(body.get("units", ())),
        )
        return self.queue.submit(spec)

    # -- per-stage request validation (submit-time, before any work) -----------

    def _validate_crawl(self, body: dict) -> list[tuple[str, str]]:
        problems = _require_fields(body, ["index_url", "metadata_url"])
        if problems:
            raise ValidationFailure("invalid crawl request", details=problems)
        return [
            ("index_url", str(body["index_url"])),
            ("metadata_url", str(body["metadata_url"])),
        ]

    def _validate_extract(self, body: dict) -> list[tuple[str, str]]:
        problems = []
        families = body.get("families")
        if not isinstance(families, list) or not families:
            problems.append(("families", "required nonempty list"))
        else:
            unknown = set(families) - FAMILY_SET
            if unknown:
                problems.append(("families", f"unknown families: {', '.join(sorted(unknown))}"))
        package_ids = body.get("package_ids", "all")
        if package_ids != "all" and (
            not isinstance(package_ids, list) or not all(isinstance(p, str) for p in package_ids)
        ):
            problems.append(("package_ids", 'must be "all" or a list of package ids'))
        if problems:
            raise ValidationFailure("invalid extract request", details=problems)
        return [
            ("package_ids", "all" if package_ids == "all" else _csv(package_ids)),
            ("families", _csv(sorted(set(families)))),
        ]

    def _validate_select(self, body: dict) -> list[tuple[str, str]]:
        problems = _require_fields(body, ["name", "families", "categories"])
        families = body.get("families") or []
        categories = body.get("categories") or []
        if not isinstance(families, list) or (families and set(families) - FAMILY_SET):
            problems.append(("families", "must be a list of known feature families"))
        if not isinstance(categories, list) or not all(
            isinstance(c, str) and c for c in categories
        ):
            problems.append(("categories", "must be a list of nonempty strings"))
        balanced = body.get("balanced", False)
        if not isinstance(balanced, bool):
            problems.append(("balanced", "must be a boolean"))
        fraction = body.get("inclusion_fraction", 1.0)
        if not isinstance(fraction, (int, float)) or isinstance(fraction, bool) or not (
            0.0 <= fraction <= 1.0
        ):
            problems.append(("inclusion_fraction", "must be a number within [0, 1]"))
        if problems:
            raise ValidationFailure("invalid select request", details=problems)
        return [
            ("name", str(body["name"])),
            ("families", _csv(sorted(set(families)))),
            ("categories", _csv(sorted(set(categories)))),
            ("balanced", "true" if balanced else "false"),
            ("inclusion_fraction", repr(float(fraction))),
        ]

    def _validate_merge(self, body: dict) -> list[tuple[str, str]]:
        problems = _require_fields(body, ["name", "selected", "merge_groups"])
        groups = body.get("merge_groups")
        if not isinstance(groups, dict) or not groups or not all(
            isinstance(v, list) and v and all(isinstance(c, str) for c in v)
            for v in groups.values()
        ):
            problems.append(("merge_groups", "must map group names to nonempty category lists"))
        fraction = body.get("train_fraction", 0.8)
        if (
            not isinstance(fraction, (int, float))
            or isinstance(fraction, bool)
            or not 0.0 < fraction < 1.0
        ):
            problems.append(("train_fraction", "must be a number within (0, 1)"))
        if problems:
            raise ValidationFailure("invalid merge request", details=problems)
        return [
            ("name", str(body["name"])),
            ("selected", str(body["selected"])),
            ("merge_groups", json.dumps({g: sorted(m) for g, m in groups.items()}, sort_keys=True)),
            ("train_fraction", repr(float(fraction))),
        ]

    def _validate_preprocess(self, body: dict) -> list[tuple[str, str]]:
        problems = _require_fields(body, ["name", "merged"])
        chain = body.get("chain", [])
        normalized_chain = []
        if not isinstance(chain, list):
            problems.append(("chain", "must be a list of steps"))
            chain = []
        for position, step in enumerate(chain):
            if not isinstance(step, dict) or not step.get("plugin_id"):
                problems.append((f"chain[{position}]", "step needs a plugin_id"))
                continue
            plugin_id = step["plugin_id"]
            target = step.get("target_families", "all")
            if target != "all" and (
                not isinstance(target, list) or set(target) - FAMILY_SET
            ):
                problems.append(
                    (f"chain[{position}].target_families", 'must be "all" or known families')
                )
            try:
                params = self.registry.validate(plugin_id, "preprocess", step.get("params", {}))
            except NotFound:
                problems.append((f"chain[{position}].plugin_id", f"unknown plugin {plugin_id}"))
                continue
            except ValidationFailure as exc:
                problems.extend(
                    (f"chain[{position}].{name}", reason) for name, reason in exc.details
                )
                continue
            normalized_chain.append(
                {
                    "plugin_id": plugin_id,
                    "params": dict(self.registry.encode_params(plugin_id, "preprocess", params)),
                    "target_families": target if target == "all" else sorted(set(target)),
                }
            )
        if problems:
            raise ValidationFailure("invalid preprocess request", details=problems)
        return [
            ("name", str(body["name"])),
            ("merged", str(body["merged"])),
            ("chain", json.dumps(normalized_chain, sort_keys=True, separators=(",", ":"))),
        ]

    def _validate_train(self, body: dict) -> list[tuple[str, str]]:
        problems = _require_fields(body, ["model_name", "algorithm_class", "algorithm_id", "dataset"])
        if problems:
            raise ValidationFailure("invalid train request", details=problems)
        algorithm_id = body["algorithm_id"]
        try:
            params = self.registry.validate(algorithm_id, "train", body.get("hyperparams", {}))
        except NotFound:
            raise ValidationFailure(
                "invalid train request",
                details=[("algorithm_id", f"unknown plugin {algorithm_id}")],
            ) from None
        descriptor = self.registry.descriptor("train", algorithm_id)
        if descriptor.algorithm_class != body["algorithm_class"]:
            raise ValidationFailure(
                "invalid train request",
                details=[
                    (
                        "algorithm_class",
                        f"plugin {algorithm_id} belongs to class {descriptor.algorithm_class}",
                    )
                ],
            )
        return [
            ("model_name", str(body["model_name"])),
            ("algorithm_class", str(body["algorithm_class"])),
            ("algorithm_id", str(algorithm_id)),
            ("dataset", str(body["dataset"])),
            ("hyperparams", json.dumps(
                dict(self.registry.encode_params(algorithm_id, "train", params)),
                sort_keys=True,
                separators=(",", ":"),
            )),
        ]

    # -- dataset reference resolution -----------------------------------------

    def _resolve_dataset(self, kind: str, reference: str) -> str:
        if is_artifact_id(reference) and self.store.exists(reference):
            return reference
        named = self.catalog.lookup_name(kind, reference)
        if named is not None:
            return named
        raise NotFound(f"unknown {kind}: {reference}")

    # -- stage handlers (run inside workers) -------------------------------------

    def _handle_crawl(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        entries, package_source = self.collection.load_index(params["index_url"])
        metadata_source = Source(params["metadata_url"])
        seen: set[str] = set()
        unique_entries = []
        for entry in entries:
            if entry["id"] not in seen:
                seen.add(entry["id"])
                unique_entries.append(entry)
        lease.define_units([entry["id"] for entry in unique_entries])
        done = lease.completed_units()
        now = utcnow()
        record = ProvenanceRecord(
            run_id=spec.task_id,
            stage="crawl",
            plugin_id="crawler",
            plugin_version="1.0",
            params=(
                ("index_url", params["index_url"]),
                ("metadata_url", params["metadata_url"]),
            ),
            seed=derive_seed(spec.master_seed, "crawl"),
            user=params.get("user", "system"),
            started_at=now,
            finished_at=now,
        )
        package_ids = []
        for entry in unique_entries:
            if entry["id"] in done:
                package_ids.append(entry["id"])
                continue
            lease.check()
            package_ids.append(
                self.collection.crawl_package(entry, package_source, metadata_source, record)
            )
            lease.record_unit_done(entry["id"])
            self.crash_hook.tick()
        return {"package_ids": package_ids}

    def _handle_extract(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        families = params["families"].split(",")
        if params["package_ids"] == "all":
            package_ids = self.catalog.package_ids()
        else:
            package_ids = params["package_ids"].split(",")
        units = [f"{pid}:{family}" for pid in package_ids for family in families]
        lease.define_units(units)
        done = lease.completed_units()
        seed = derive_seed(spec.master_seed, "extract")
        user = params.get("user", "system")
        for unit in units:
            if unit in done:
                continue
            lease.check()
            pid, _, family = unit.rpartition(":")
            self.collection.extract_family(pid, family, run_id=spec.task_id, seed=seed, user=user)
            lease.record_unit_done(unit)
            self.crash_hook.tick()
        return {"package_ids": package_ids, "families": families}

    def _handle_select(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        config = SelectionConfig(
            families=tuple(params["families"].split(",")),
            categories=tuple(params["categories"].split(",")),
            balanced=params["balanced"] == "true",
            inclusion_fraction=float(params["inclusion_fraction"]),
            seed=derive_seed(spec.master_seed, "select"),
            name=params["name"],
        )
        artifact_id = select(
            self.store,
            self.collection,
            self.catalog,
            config,
            user=params.get("user", "system"),
            run_id=spec.task_id,
        )
        return {"selected_id": artifact_id}

    def _handle_merge(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        config = MergeConfig(
            selected_id=self._resolve_dataset("dataset_selected", params["selected"]),
            merge_groups=json.loads(params["merge_groups"]),
            train_fraction=float(params["train_fraction"]),
            seed=derive_seed(spec.master_seed, "merge"),
            name=params["name"],
        )
        artifact_id = merge(
            self.store, self.catalog, config, user=params.get("user", "system"), run_id=spec.task_id
        )
        return {"merged_id": artifact_id}

    def _handle_preprocess(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        chain = tuple(
            PreprocessStep(
                plugin_id=step["plugin_id"],
                params=step["params"],
                target_families=step["target_families"]
                if step["target_families"] == "all"
                else list(step["target_families"]),
            )
            for step in json.loads(params["chain"])
        )
        config = PreprocessConfig(
            merged_id=self._resolve_dataset("dataset_merged", params["merged"]),
            chain=chain,
            seed=derive_seed(spec.master_seed, "preprocess"),
            name=params["name"],
        )
        artifact_id = preprocess(
            self.store,
            self.registry,
            self.catalog,
            config,
            user=params.get("user", "system"),
            run_id=spec.task_id,
        )
        return {"processed_id": artifact_id}

    def _handle_train(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        config = TrainConfig(
            processed_id=self._resolve_dataset("dataset_processed", params["dataset"]),
            algorithm_class=params["algorithm_class"],
            algorithm_id=params["algorithm_id"],
            hyperparams=json.loads(params["hyperparams"]),
            seed=derive_seed(spec.master_seed, "train"),
            model_name=params["model_name"],
        )
        model_id = train(
            self.store,
            self.registry,
            self.catalog,
            config,
            user=params.get("user", "system"),
            run_id=spec.task_id,
        )
        evaluate_task = TaskSpec(
            task_id=str(uuid.uuid4()),
            stage="evaluate",
            params=(("model", model_id), ("user", params.get("user", "system"))),
            master_seed=spec.master_seed,
            submitted_at=utcnow(),
        )
        self.queue.submit(evaluate_task)
        return {"model_id": model_id, "evaluate_task_id": evaluate_task.task_id}

    def _handle_evaluate(self, spec: TaskSpec, lease: Lease) -> dict:
        params = dict(spec.params)
        evaluation_id = evaluate(
            self.store,
            self.catalog,
            params["model"],
            user=params.get("user", "system"),
            run_id=spec.task_id,
            n_clusters=int(params["clusters"]) if "clusters" in params else None,
        )
        return {"evaluation_id": evaluation_id}

    # -- waiting -----------------------------------------------------------------

    def wait_for(self, task_id: str, timeout: float = 120.0) -> dict:
        """Block until the task is terminal; returns its final state view."""
        deadline = utcnow().timestamp() + timeout
        while True:
            spec, state = self.queue.get(task_id)
            if state.status in ("succeeded", "failed", "cancelled"):
                return self.task_view(task_id)
            if utcnow().timestamp() > deadline:
                raise TimeoutError(f"task {task_id} still {state.status} after {timeout}s")
            self.queue.clock.sleep(0.02)

    def task_view(self, task_id: str) -> dict:
        spec, state = self.queue.get(task_id)
        return {
            "task_id": spec.task_id,
            "stage": spec.stage,
            "params": [[n, v] for n, v in spec.params],
            "master_seed": spec.master_seed,
            "submitted_at": format_timestamp(spec.submitted_at),
            "units": list(spec.units),
            "max_attempts": spec.max_attempts,
            "status": state.status,
            "attempt": state.attempt,
            "worker": state.worker,
            "completed_units": sorted(state.completed_units),
            "error": state.error,
            "result": state.result,
        }


def run_pipeline(service: CaravanService, config: dict, user: str = "cli") -> dict:
    """Execute crawl -> extract -> select -> merge -> preprocess -> train ->
    evaluate from one declarative config; returns every produced artifact id."""
    for section in ("master_seed", "crawl", "select", "merge", "train"):
        if section not in config:
            raise ValidationFailure(
                "invalid pipeline config", details=[(section, "required section missing")]
            )
    master_seed = config["master_seed"]
    outputs: dict[str, object] = {}

    def run_stage(stage: str, body: dict) -> dict:
        body = {**body, "master_seed": master_seed, "user": user}
        task_id = service.submit_stage(stage, body)
        view = service.wait_for(task_id)
        if view["status"] != "succeeded":
            raise CaravanError(f"{stage} task failed: {view['error']}")
        return view["result"]

    crawl_result = run_stage("crawl", dict(config["crawl"]))
    outputs["package_ids"] = crawl_result["package_ids"]

    families = sorted(set(config["select"]["families"]))
    run_stage("extract", {"package_ids": crawl_result["package_ids"], "families": families})

    select_result = run_stage("select", dict(config["select"]))
    outputs["selected_id"] = select_result["selected_id"]

    merge_body = {**config["merge"], "selected": select_result["selected_id"]}
    merge_result = run_stage("merge", merge_body)
    outputs["merged_id"] = merge_result["merged_id"]

    preprocess_section = dict(config.get("preprocess") or {"name": f"{config['merge']['name']}-asis", "chain": []})
    preprocess_body = {**preprocess_section, "merged": merge_result["merged_id"]}
    preprocess_result = run_stage("preprocess", preprocess_body)
    outputs["processed_id"] = preprocess_result["processed_id"]

    train_body = {**config["train"], "dataset": preprocess_result["processed_id"]}
    train_result = run_stage("train", train_body)
    outputs["model_id"] = train_result["model_id"]

    evaluate_view = service.wait_for(train_result["evaluate_task_id"])
    if evaluate_view["status"] != "succeeded":
        raise CaravanError(f"evaluate task failed: {evaluate_view['error']}")
    outputs["evaluation_id"] = evaluate_view["result"]["evaluation_id"]
    return outputs


__all__ = [
    "CaravanService",
    "CrashHook",
    "run_pipeline",
    "default_data_dir",
    "generate_corpus",
]
