"""Stage 2: Data Selector, Data Merger, and Data Preprocessor.

Datasets are stored as single compressed zip artifacts with one canonical
text document per family (selected) or per partition (merged/processed);
every byte of a payload is a pure function of (inputs, config, seed).
"""

from __future__ import annotations

import io
import json
import math
import random
import uuid
import zipfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collection import Catalog, CollectionService
from .core import FAMILY_SET, canonical_json, derive_seed, utcnow
from .errors import (
    Conflict,
    EmptyGroup,
    EmptySelection,
    EmptyTarget,
    IncompleteFeatures,
    InvalidArgument,
)
from .registry import PluginRegistry
from .store import ArtifactStore, ProvenanceRecord

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

PLUGIN_VERSION = "1.0"


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def zip_payload(members: dict[str, bytes]) -> bytes:
    """Deterministic zip: fixed member order, fixed timestamps."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED, compresslevel=6) as archive:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, members[name])
    return buffer.getvalue()


def unzip_payload(payload: bytes) -> dict[str, bytes]:
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        return {name: archive.read(name) for name in archive.namelist()}


def _format_number(value: float) -> str:
    as_float = float(value)
    if as_float.is_integer():
        return str(int(as_float))
    return repr(as_float)


def encode_matrix(column_ids: list[str], matrix: np.ndarray) -> bytes:
    """Header line of TAB-separated column ids, then one row per line of
    space-separated numbers."""
    lines = ["\t".join(column_ids)]
    for row in matrix:
        lines.append(" ".join(_format_number(v) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_matrix(blob: bytes) -> tuple[list[str], np.ndarray]:
    text = blob.decode("utf-8").split("\n")
    header = text[0]
    column_ids = header.split("\t") if header else []
    rows = text[1:-1]  # encoding always ends with a newline; one line per row
    if not rows:
        return column_ids, np.zeros((0, len(column_ids)))
    data = [[float(v) for v in line.split(" ")] if line else [] for line in rows]
    matrix = np.array(data, dtype=np.float64).reshape(len(rows), len(column_ids))
    return column_ids, matrix


def encode_labels(pairs: list[tuple[str, str]]) -> bytes:
    return ("".join(f"{pid}\t{label}\n" for pid, label in pairs)).encode("utf-8")


def decode_labels(blob: bytes) -> list[tuple[str, str]]:
    pairs = []
    for line in blob.decode("utf-8").splitlines():
        if line:
            pid, _, label = line.partition("\t")
            pairs.append((pid, label))
    return pairs


def column_family(column_id: str) -> str:
    return column_id.split(":", 1)[0]


# -- configs ----------------------------------------------------------------


@dataclass(frozen=True)
class SelectionConfig:
    families: tuple[str, ...]
    categories: tuple[str, ...]
    balanced: bool
    inclusion_fraction: float
    seed: int
    name: str

    def __post_init__(self):
        if not self.families:
            raise InvalidArgument("families must be nonempty")
        unknown = set(self.families) - FAMILY_SET
        if unknown:
            raise InvalidArgument(f"unknown feature families: {', '.join(sorted(unknown))}")
        if not self.categories:
            raise InvalidArgument("categories must be nonempty")
        if not 0.0 <= self.inclusion_fraction <= 1.0:
            raise InvalidArgument("inclusion_fraction must be within [0, 1]")
        if not self.name:
            raise InvalidArgument("dataset name must be nonempty")


@dataclass(frozen=True)
class MergeConfig:
    selected_id: str
    merge_groups: dict
    train_fraction: float
    seed: int
    name: str

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgument("train_fraction must be within (0, 1)")
        if not self.merge_groups:
            raise InvalidArgument("merge_groups must be nonempty")
        if not self.name:
            raise InvalidArgument("dataset name must be nonempty")


@dataclass(frozen=True)
class PreprocessStep:
    plugin_id: str
    params: dict
    target_families: object = "all"  # "all" or list of family names


@dataclass(frozen=True)
class PreprocessConfig:
    merged_id: str
    chain: tuple[PreprocessStep, ...]
    seed: int
    name: str

    def __post_init__(self):
        if not self.name:
            raise InvalidArgument("dataset name must be nonempty")


# -- in-memory dataset views ---------------------------------------------------


@dataclass
class SelectedData:
    families: list[str]
    vocabularies: dict[str, list[str]]
    row_ids: list[str]
    indices: dict[str, list[list[int]]]
    labels: list[tuple[str, str]]
    config: dict = field(default_factory=dict)


@dataclass
class MergedData:
    column_ids: list[str]
    train_matrix: np.ndarray
    test_matrix: np.ndarray
    train_labels: list[tuple[str, str]]
    test_labels: list[tuple[str, str]]
    config: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)


def encode_selected(data: SelectedData) -> bytes:
    members: dict[str, bytes] = {
        "config.json": canonical_json(data.config),
        "labels.txt": encode_labels(data.labels),
    }
    for family in data.families:
        members[f"{family}.cols"] = (
            "".join(f"{token}\n" for token in data.vocabularies[family])
        ).encode("utf-8")
        members[f"{family}.rows"] = (
            "".join(
                f"{pid}\t{' '.join(str(i) for i in idx)}\n"
                for pid, idx in zip(data.row_ids, data.indices[family])
            )
        ).encode("utf-8")
    return zip_payload(members)


def decode_selected(payload: bytes) -> SelectedData:
    members = unzip_payload(payload)
    config = json.loads(members["config.json"].decode("utf-8"))
    labels = decode_labels(members["labels.txt"])
    families = sorted(
        name[: -len(".cols")] for name in members if name.endswith(".cols")
    )
    vocabularies: dict[str, list[str]] = {}
    indices: dict[str, list[list[int]]] = {}
    row_ids = [pid for pid, _ in labels]
    for family in families:
        vocabularies[family] = [
            line for line in members[f"{family}.cols"].decode("utf-8").splitlines() if line
        ]
        per_row: dict[str, list[int]] = {}
        for line in members[f"{family}.rows"].decode("utf-8").splitlines():
            if not line:
                continue
            pid, _, rest = line.partition("\t")
            per_row[pid] = [int(v) for v in rest.split(" ") if v]
        indices[family] = [per_row.get(pid, []) for pid in row_ids]
    return SelectedData(families, vocabularies, row_ids, indices, labels, config)


def encode_merged(data: MergedData, kind: str) -> bytes:
    members = {
        "config.json": canonical_json(data.config),
        "train.mat": encode_matrix(data.column_ids, data.train_matrix),
        "test.mat": encode_matrix(data.column_ids, data.test_matrix),
        "train.labels": encode_labels(data.train_labels),
        "test.labels": encode_labels(data.test_labels),
    }
    if kind == "dataset_processed":
        members["steps.json"] = canonical_json(data.steps)
    return zip_payload(members)


def decode_merged(payload: bytes) -> MergedData:
    members = unzip_payload(payload)
    column_ids, train_matrix = decode_matrix(members["train.mat"])
    _, test_matrix = decode_matrix(members["test.mat"])
    return MergedData(
        column_ids=column_ids,
        train_matrix=train_matrix,
        test_matrix=test_matrix,
        train_labels=decode_labels(members["train.labels"]),
        test_labels=decode_labels(members["test.labels"]),
        config=json.loads(members["config.json"].decode("utf-8")),
        steps=json.loads(members["steps.json"].decode("utf-8")) if "steps.json" in members else [],
    )


# -- operations ----------------------------------------------------------------


def _register_dataset(catalog: Catalog, kind: str, name: str, artifact_id: str) -> None:
    existing = catalog.lookup_name(kind, name)
    if existing is None:
        catalog.register_name(kind, name, artifact_id)
    elif existing != artifact_id:
        raise Conflict(f"{kind} name already used: {name}")


_STAGE_PLUGIN = {
    "select": "data_selector",
    "merge": "data_merger",
    "preprocess": "data_preprocessor",
}


def _provenance(
    stage: str, params: list[tuple[str, str]], seed: int, user: str, run_id: Optional[str]
) -> ProvenanceRecord:
    now = utcnow()
    return ProvenanceRecord(
        run_id=run_id or str(uuid.uuid4()),
        stage=stage,
        plugin_id=_STAGE_PLUGIN[stage],
        plugin_version=PLUGIN_VERSION,
        params=tuple(params),
        seed=seed,
        user=user,
        started_at=now,
        finished_at=now,
    )


def select(
    store: ArtifactStore,
    collection: CollectionService,
    catalog: Catalog,
    config: SelectionConfig,
    user: str = "system",
    run_id: Optional[str] = None,
) -> str:
    """Build per-family multi-hot sub-datasets for the labeled packages."""
    families = sorted(set(config.families))
    categories = sorted(set(config.categories))

    by_category: dict[str, list[str]] = {c: [] for c in categories}
    for package_id in collection.catalog.package_ids():
        resolved = collection.resolved_label(package_id)
        if resolved is not None and resolved.category in by_category:
            by_category[resolved.category].append(package_id)
    empty = [c for c, pids in by_category.items() if not pids]
    if empty:
        raise EmptySelection(f"no labeled packages for categories: {', '.join(empty)}")

    eligible = sorted(pid for pids in by_category.values() for pid in pids)
    incomplete = [
        pid
        for pid in eligible
        if not set(families) <= collection.completed_families(pid)
    ]
    if incomplete:
        raise IncompleteFeatures(incomplete)

    if config.balanced:
        minimum = min(len(pids) for pids in by_category.values())
        chosen: list[str] = []
        for category in categories:
            rng = random.Random(derive_seed(config.seed, f"balance:{category}"))
            chosen.extend(rng.sample(sorted(by_category[category]), minimum))
        row_ids = sorted(chosen)
    else:
        row_ids = eligible

    label_of = {
        pid: category for category, pids in by_category.items() for pid in pids
    }
    labels = [(pid, label_of[pid]) for pid in row_ids]

    token_sets = {
        pid: {
            family: set(collection.featureset(pid)["extracted"][family])
            for family in families
        }
        for pid in row_ids
    }
    vocabularies: dict[str, list[str]] = {}
    indices: dict[str, list[list[int]]] = {}
    for family in families:
        document_frequency: dict[str, int] = {}
        for pid in row_ids:
            for token in token_sets[pid][family]:
                document_frequency[token] = document_frequency.get(token, 0) + 1
        distinct = sorted(document_frequency)
        keep = math.ceil(config.inclusion_fraction * len(distinct))
        ranked = sorted(distinct, key=lambda t: (-document_frequency[t], t))
        vocabulary = sorted(ranked[:keep])
        position = {token: i for i, token in enumerate(vocabulary)}
        vocabularies[family] = vocabulary
        indices[family] = [
            sorted(position[t] for t in token_sets[pid][family] if t in position)
            for pid in row_ids
        ]

    config_echo = {
        "name": config.name,
        "families": families,
        "categories": categories,
        "balanced": config.balanced,
        "inclusion_fraction": config.inclusion_fraction,
        "seed": config.seed,
    }
    payload = encode_selected(
        SelectedData(families, vocabularies, row_ids, indices, labels, config_echo)
    )
    inputs = sorted({collection.catalog.featureset_id(pid) for pid in row_ids})
    record = _provenance(
        "select",
        [
            ("name", config.name),
            ("families", ",".join(families)),
            ("categories", ",".join(categories)),
            ("balanced", "true" if config.balanced else "false"),
            ("inclusion_fraction", repr(config.inclusion_fraction)),
        ],
        config.seed,
        user,
        run_id,
    )
    artifact_id = store.put(payload, "dataset_selected", inputs, record)
    _register_dataset(catalog, "dataset_selected", config.name, artifact_id)
    return artifact_id


def load_selected(store: ArtifactStore, artifact_id: str) -> SelectedData:
    meta = store.meta(artifact_id)
    if meta.kind != "dataset_selected":
        raise InvalidArgument(f"artifact {artifact_id} is {meta.kind}, not dataset_selected")
    return decode_selected(store.get(artifact_id))


def merge(
    store: ArtifactStore,
    catalog: Catalog,
    config: MergeConfig,
    user: str = "system",
    run_id: Optional[str] = None,
) -> str:
    """Merge categories, build the dense multi-hot matrix, and split it."""
    selected = load_selected(store, config.selected_id)

    present = set(selected.config.get("categories", [])) | {c for _, c in selected.labels}
    claimed: set[str] = set()
    category_to_group: dict[str, str] = {}
    for group, members in config.merge_groups.items():
        members = list(members)
        if not members:
            raise InvalidArgument(f"merge group {group!r} is empty")
        for category in members:
            if category not in present:
                raise InvalidArgument(
                    f"merge group {group!r} references unknown category {category!r}"
                )
            if category in claimed:
                raise InvalidArgument(f"category {category!r} appears in multiple groups")
            claimed.add(category)
            category_to_group[category] = group

    kept = [
        (pid, category_to_group[label])
        for pid, label in selected.labels
        if label in category_to_group
    ]
    group_counts: dict[str, int] = {g: 0 for g in config.merge_groups}
    for _, group in kept:
        group_counts[group] += 1
    zero = sorted(g for g, n in group_counts.items() if n == 0)
    if zero:
        raise EmptyGroup(f"merge groups matched no rows: {', '.join(zero)}")

    row_position = {pid: i for i, (pid, _) in enumerate(selected.labels)}
    column_ids: list[str] = []
    for family in sorted(selected.families):
        column_ids.extend(f"{family}:{token}" for token in selected.vocabularies[family])
    matrix = np.zeros((len(kept), len(column_ids)))
    offset = 0
    for family in sorted(selected.families):
        for row, (pid, _) in enumerate(kept):
            for index in selected.indices[family][row_position[pid]]:
                matrix[row, offset + index] = 1.0
        offset += len(selected.vocabularies[family])

    labels = [group for _, group in kept]
    classes = sorted(set(labels))
    per_class_rows = {c: [i for i, label in enumerate(labels) if label == c] for c in classes}
    rounded = {
        c: _round_half_up(config.train_fraction * len(rows))
        for c, rows in per_class_rows.items()
    }
    counts = dict(rounded)
    target_total = _round_half_up(config.train_fraction * len(kept))
    # Global +-1 fix-up toward the overall rounded target, in class order.
    for _ in range(len(classes) * 2):
        difference = target_total - sum(counts.values())
        if difference == 0:
            break
        step = 1 if difference > 0 else -1
        moved = False
        for cls in classes:
            limit = len(per_class_rows[cls])
            candidate = counts[cls] + step
            if 0 <= candidate <= limit and abs(candidate - rounded[cls]) <= 1:
                counts[cls] = candidate
                moved = True
                if target_total - sum(counts.values()) == 0:
                    break
        if not moved:
            break
    train_rows: set[int] = set()
    for cls in classes:
        rows = list(per_class_rows[cls])
        random.Random(derive_seed(config.seed, f"split:{cls}")).shuffle(rows)
        train_rows.update(rows[: counts[cls]])

    train_index = [i for i in range(len(kept)) if i in train_rows]
    test_index = [i for i in range(len(kept)) if i not in train_rows]
    config_echo = {
        "name": config.name,
        "selected": config.selected_id,
        "merge_groups": {g: sorted(m) for g, m in config.merge_groups.items()},
        "train_fraction": config.train_fraction,
        "seed": config.seed,
    }
    data = MergedData(
        column_ids=column_ids,
        train_matrix=matrix[train_index],
        test_matrix=matrix[test_index],
        train_labels=[kept[i] for i in train_index],
        test_labels=[kept[i] for i in test_index],
        config=config_echo,
    )
    record = _provenance(
        "merge",
        [
            ("name", config.name),
            ("selected", config.selected_id),
            ("merge_groups", json.dumps(config_echo["merge_groups"], sort_keys=True)),
            ("train_fraction", repr(config.train_fraction)),
        ],
        config.seed,
        user,
        run_id,
    )
    artifact_id = store.put(encode_merged(data, "dataset_merged"), "dataset_merged", [config.selected_id], record)
    _register_dataset(catalog, "dataset_merged", config.name, artifact_id)
    return artifact_id


def load_merged(store: ArtifactStore, artifact_id: str, kind: str = "dataset_merged") -> MergedData:
    meta = store.meta(artifact_id)
    if meta.kind != kind:
        raise InvalidArgument(f"artifact {artifact_id} is {meta.kind}, not {kind}")
    return decode_merged(store.get(artifact_id))


def _target_columns(column_ids: list[str], target_families) -> list[int]:
    if target_families == "all":
        return list(range(len(column_ids)))
    wanted = set(target_families)
    return [i for i, cid in enumerate(column_ids) if column_family(cid) in wanted]


def apply_chain(
    registry: PluginRegistry, data: MergedData, chain: tuple[PreprocessStep, ...]
) -> MergedData:
    """Run the plugin chain: fit on train columns only, transform both."""
    column_ids = list(data.column_ids)
    train = np.array(data.train_matrix, dtype=np.float64)
    test = np.array(data.test_matrix, dtype=np.float64)
    steps_audit: list[dict] = []
    for step in chain:
        params = registry.validate(step.plugin_id, "preprocess", step.params)
        columns = _target_columns(column_ids, step.target_families)
        if not columns:
            raise EmptyTarget(
                f"plugin {step.plugin_id} matched no columns for families "
                f"{step.target_families!r}"
            )
        estimator = registry.executor("preprocess", step.plugin_id)(params)
        estimator.fit(train[:, columns])
        new_train = estimator.transform(train[:, columns])
        new_test = estimator.transform(test[:, columns])
        if hasattr(estimator, "get_support"):
            kept = set(np.asarray(estimator.get_support()).tolist())
            removed = {columns[i] for i in range(len(columns)) if i not in kept}
            keep_mask = [i for i in range(len(column_ids)) if i not in removed]
            column_ids = [column_ids[i] for i in keep_mask]
            train = train[:, keep_mask]
            test = test[:, keep_mask]
        elif hasattr(estimator, "components_"):
            existing_pca = sum(1 for cid in column_ids if column_family(cid) == "pca")
            new_ids = [f"pca:{existing_pca + j}" for j in range(new_train.shape[1])]
            keep_mask = [i for i in range(len(column_ids)) if i not in set(columns)]
            column_ids = [column_ids[i] for i in keep_mask] + new_ids
            train = np.hstack([train[:, keep_mask], new_train])
            test = np.hstack([test[:, keep_mask], new_test])
        else:
            train[:, columns] = new_train
            test[:, columns] = new_test
        steps_audit.append(
            {
                "plugin": step.plugin_id,
                "params": {
                    name: value
                    for name, value in registry.encode_params(
                        step.plugin_id, "preprocess", params
                    )
                },
                "target_families": step.target_families
                if step.target_families == "all"
                else sorted(step.target_families),
                "fitted": estimator.fitted_params(),
            }
        )
    return MergedData(
        column_ids=column_ids,
        train_matrix=train,
        test_matrix=test,
        train_labels=list(data.train_labels),
        test_labels=list(data.test_labels),
        config=dict(data.config),
        steps=steps_audit,
    )


def preprocess(
    store: ArtifactStore,
    registry: PluginRegistry,
    catalog: Catalog,
    config: PreprocessConfig,
    user: str = "system",
    run_id: Optional[str] = None,
) -> str:
    merged = load_merged(store, config.merged_id, "dataset_merged")
    processed = apply_chain(registry, merged, config.chain)
    chain_echo = [
        {
            "plugin_id": step.plugin_id,
            "params": {
                name: value
                for name, value in registry.encode_params(
                    step.plugin_id,
                    "preprocess",
                    registry.validate(step.plugin_id, "preprocess", step.params),
                )
            },
            "target_families": step.target_families
            if step.target_families == "all"
            else sorted(step.target_families),
        }
        for step in config.chain
    ]
    processed.config = {
        "name": config.name,
        "merged": config.merged_id,
        "chain": chain_echo,
        "seed": config.seed,
    }
    record = _provenance(
        "preprocess",
        [
            ("name", config.name),
            ("merged", config.merged_id),
            ("chain", json.dumps(chain_echo, sort_keys=True, separators=(",", ":"))),
        ],
        config.seed,
        user,
        run_id,
    )
    artifact_id = store.put(
        encode_merged(processed, "dataset_processed"),
        "dataset_processed",
        [config.merged_id],
        record,
    )
    _register_dataset(catalog, "dataset_processed", config.name, artifact_id)
    return artifact_id
