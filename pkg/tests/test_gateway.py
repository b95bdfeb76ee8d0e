import threading
import time

import httpx
import pytest
import uvicorn

from caravan.corpus import generate_corpus
from caravan.gateway.app import create_app
from caravan.service import CaravanService

from conftest import make_package

API_ERROR_KEYS = {"status", "code", "message", "details"}


class LiveServer:
    def __init__(self, tmp_path):
        self.corpus_dir = tmp_path / "corpus"
        generate_corpus(8, ["game", "tool"], "disjoint", 21, self.corpus_dir)
        self.service = CaravanService(tmp_path / "data", worker_count=2).start()
        self.app = create_app(self.service)
        config = uvicorn.Config(self.app, host="127.0.0.1", port=0, log_level="critical")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        while not self.server.started:
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.base = f"http://127.0.0.1:{port}"
        self.client = httpx.Client(base_url=self.base, timeout=30.0)

    def stop(self):
        self.client.close()
        self.server.should_exit = True
        self.thread.join(timeout=10)
        self.service.stop()

    def wait_task(self, task_id: str, timeout: float = 60.0) -> dict:
        deadline = time.time() + timeout
        while time.time() < deadline:
            view = self.client.get(f"/api/tasks/{task_id}").json()
            if view["status"] in ("succeeded", "failed", "cancelled"):
                return view
            time.sleep(0.05)
        raise TimeoutError(task_id)

    def run_stage(self, stage: str, body: dict) -> dict:
        response = self.client.post(f"/api/stages/{stage}", json={"master_seed": 99, **body})
        assert response.status_code == 202, response.text
        view = self.wait_task(response.json()["task_id"])
        assert view["status"] == "succeeded", view
        return view["result"]


def run_http_pipeline(live: "LiveServer") -> dict:
    """Full pipeline over HTTP; returns every produced id."""
    crawl = live.run_stage(
        "crawl",
        {
            "index_url": str(live.corpus_dir / "index.json"),
            "metadata_url": str(live.corpus_dir),
        },
    )
    live.run_stage(
        "extract", {"package_ids": crawl["package_ids"], "families": ["permissions", "apis"]}
    )
    selected = live.run_stage(
        "select",
        {
            "name": "web-sel",
            "families": ["permissions", "apis"],
            "categories": ["game", "tool"],
            "balanced": False,
            "inclusion_fraction": 1.0,
        },
    )
    merged = live.run_stage(
        "merge",
        {
            "name": "web-mrg",
            "selected": selected["selected_id"],
            "merge_groups": {"game": ["game"], "tool": ["tool"]},
            "train_fraction": 0.75,
        },
    )
    processed = live.run_stage(
        "preprocess",
        {"name": "web-proc", "merged": merged["merged_id"], "chain": []},
    )
    train = live.run_stage(
        "train",
        {
            "model_name": "web-model",
            "algorithm_class": "classical",
            "algorithm_id": "knn",
            "dataset": processed["processed_id"],
            "hyperparams": {"k": 1},
        },
    )
    evaluate_view = live.wait_task(train["evaluate_task_id"])
    assert evaluate_view["status"] == "succeeded"
    return {
        "crawl": crawl,
        "selected": selected["selected_id"],
        "merged": merged["merged_id"],
        "processed": processed["processed_id"],
        "model": train["model_id"],
        "evaluation": evaluate_view["result"]["evaluation_id"],
    }


@pytest.fixture(scope="module")
def live(tmp_path_factory):
    # The pipeline runs during setup, before any test mutates catalog state
    # (uploads and votes would otherwise change select()'s eligible set).
    server = LiveServer(tmp_path_factory.mktemp("gateway"))
    server.pipeline = run_http_pipeline(server)
    yield server
    server.stop()


@pytest.fixture(scope="module")
def pipeline(live):
    return live.pipeline


class TestPlugins:
    def test_all_builtins_served(self, live):
        body = live.client.get("/api/plugins").json()
        assert len(body["plugins"]) >= 9
        for descriptor in body["plugins"]:
            assert descriptor["description"]
            for param in descriptor["params"]:
                assert set(param) == {
                    "name",
                    "kind",
                    "default",
                    "description",
                    "range",
                    "feature_sensitive_only",
                }

    def test_stage_filter(self, live):
        body = live.client.get("/api/plugins", params={"stage": "train"}).json()
        assert {d["plugin_id"] for d in body["plugins"]} == {
            "autoencoder",
            "softmax_regression",
            "knn",
        }

    def test_schema_endpoint(self, live):
        body = live.client.get("/api/plugins/preprocess/minmax_scaler/schema").json()
        assert body["plugin_id"] == "minmax_scaler"

    def test_unknown_plugin_404(self, live):
        response = live.client.get("/api/plugins/preprocess/none/schema")
        assert response.status_code == 404
        assert set(response.json()) == API_ERROR_KEYS


class TestPackages:
    def test_upload_multipart(self, live):
        response = live.client.post(
            "/api/packages",
            files={"file": ("pkg.zip", make_package(name="uploaded"))},
            data={"category": "game", "uploader": "webuser"},
        )
        assert response.status_code == 201
        package_id = response.json()["package_id"]
        view = live.client.get(f"/api/packages/{package_id}").json()
        assert view["origin"] == "upload:webuser"
        assert view["resolved_label"]["category"] == "game"

    def test_invalid_upload_400_with_details(self, live):
        response = live.client.post(
            "/api/packages", files={"file": ("bad.zip", b"not a zip")}
        )
        assert response.status_code == 400
        body = response.json()
        assert body["code"] == "validation-error" and body["details"]

    def test_listing_paged(self, live, pipeline):
        body = live.client.get("/api/packages", params={"offset": 0, "limit": 3}).json()
        assert len(body["items"]) == 3
        assert body["total"] >= 8

    def test_unknown_package_404(self, live):
        response = live.client.get(f"/api/packages/{'e' * 64}")
        assert response.status_code == 404

    def test_vote_changes_resolved_label(self, live, pipeline):
        package_id = pipeline["crawl"]["package_ids"][0]
        response = live.client.post(
            f"/api/packages/{package_id}/votes",
            json={"category": "puzzle", "voter": "v1"},
        )
        assert response.status_code == 200
        assert response.json()["resolved_label"] == {
            "category": "puzzle",
            "source": "votes",
            "tie": False,
        }

    def test_vote_missing_fields_400(self, live, pipeline):
        package_id = pipeline["crawl"]["package_ids"][0]
        response = live.client.post(f"/api/packages/{package_id}/votes", json={})
        assert response.status_code == 400
        names = {name for name, _ in response.json()["details"]}
        assert names == {"category", "voter"}


class TestStages:
    def test_invalid_hyperparams_name_fields(self, live):
        response = live.client.post(
            "/api/stages/train",
            json={
                "master_seed": 1,
                "model_name": "x",
                "algorithm_class": "classical",
                "algorithm_id": "softmax_regression",
                "dataset": "d",
                "hyperparams": {"learning_rate": -1, "bogus": 3},
            },
        )
        assert response.status_code == 400
        names = {name for name, _ in response.json()["details"]}
        assert names == {"learning_rate", "bogus"}

    def test_missing_master_seed_400(self, live):
        response = live.client.post(
            "/api/stages/select",
            json={"name": "x", "families": ["apis"], "categories": ["game"]},
        )
        assert response.status_code == 400
        assert ["master_seed", "required integer"] in response.json()["details"]

    def test_malformed_json_parse_error(self, live):
        response = live.client.post(
            "/api/stages/select",
            content=b"{not json",
            headers={"content-type": "application/json"},
        )
        assert response.status_code == 400
        assert response.json()["code"] == "parse-error"

    def test_unknown_stage_404(self, live):
        response = live.client.post("/api/stages/transmogrify", json={"master_seed": 1})
        assert response.status_code == 404

    def test_launch_returns_trackable_task(self, live):
        response = live.client.post(
            "/api/stages/crawl",
            json={
                "master_seed": 5,
                "index_url": str(live.corpus_dir / "index.json"),
                "metadata_url": str(live.corpus_dir),
            },
        )
        assert response.status_code == 202
        task_id = response.json()["task_id"]
        view = live.wait_task(task_id)
        assert view["status"] == "succeeded"
        assert view["result"]["package_ids"]


class TestTasks:
    def test_snapshot_shape(self, live, pipeline):
        snap = live.client.get("/api/tasks").json()
        assert set(snap) == {"counts", "workers", "recent"}
        assert snap["counts"]["succeeded"] >= 7
        assert snap["recent"][0]["duration_seconds"] is not None

    def test_unknown_task_404(self, live):
        assert live.client.get("/api/tasks/none").status_code == 404

    def test_cancel_succeeded_conflict(self, live, pipeline):
        snap = live.client.get("/api/tasks").json()
        done = snap["recent"][0]["task_id"]
        response = live.client.post(f"/api/tasks/{done}/cancel")
        assert response.status_code == 409
        assert response.json()["code"] == "conflict"

    def test_cancel_queued_task(self, tmp_path):
        service = CaravanService(tmp_path / "zero", worker_count=0)
        task_id = service.submit_stage(
            "extract", {"master_seed": 1, "families": ["apis"], "package_ids": "all"}
        )
        app = create_app(service)
        from fastapi.testclient import TestClient

        with TestClient(app) as client:
            response = client.post(f"/api/tasks/{task_id}/cancel")
            assert response.status_code == 200
            assert client.get(f"/api/tasks/{task_id}").json()["status"] == "cancelled"


class TestModelEndpoints:
    def test_datasets_listing(self, live, pipeline):
        body = live.client.get("/api/datasets").json()
        by_id = {d["artifact_id"]: d for d in body["datasets"]}
        assert by_id[pipeline["selected"]]["name"] == "web-sel"
        assert by_id[pipeline["processed"]]["kind"] == "dataset_processed"

    def test_models_listing_links_evaluation(self, live, pipeline):
        body = live.client.get("/api/models").json()
        (entry,) = [m for m in body["models"] if m["artifact_id"] == pipeline["model"]]
        assert entry["name"] == "web-model"
        assert entry["evaluation_id"] == pipeline["evaluation"]

    def test_evaluation_endpoint(self, live, pipeline):
        body = live.client.get(f"/api/models/{pipeline['model']}/evaluation").json()
        assert body["model_id"] == pipeline["model"]
        assert body["metrics"]["macro"]["values"]["accuracy"] == 1.0

    def test_prediction_view_params(self, live, pipeline):
        view = live.client.get(
            f"/api/models/{pipeline['model']}/prediction-view",
            params={"dims": 3, "k": 2, "show_incorrect": "false"},
        ).json()
        assert view["dims"] == 3
        assert all(len(p["coords"]) == 3 for p in view["points"])
        assert all(a["color"] == "green" for a in view["arrows"])

    def test_prediction_view_focal(self, live, pipeline):
        focal = pipeline["crawl"]["package_ids"][0]
        view = live.client.get(
            f"/api/models/{pipeline['model']}/prediction-view",
            params={"focal": focal, "k": 3},
        ).json()
        assert len(view["neighbors"]) == 3

    def test_model_without_evaluation_404(self, live, pipeline):
        response = live.client.get(f"/api/models/{'c' * 64}/evaluation")
        assert response.status_code == 404


class TestCliHttpEquivalence:
    def test_run_ids_match_http_sequence_with_same_seed(self, tmp_path):
        import json
        import subprocess
        import sys

        corpus = tmp_path / "corpus"
        generate_corpus(6, ["game", "tool"], "disjoint", 77, corpus)
        config = {
            "master_seed": 555,
            "crawl": {"index_url": str(corpus / "index.json"), "metadata_url": str(corpus)},
            "select": {
                "name": "eq-sel",
                "families": ["permissions", "apis"],
                "categories": ["game", "tool"],
                "balanced": False,
                "inclusion_fraction": 1.0,
            },
            "merge": {
                "name": "eq-mrg",
                "merge_groups": {"game": ["game"], "tool": ["tool"]},
                "train_fraction": 0.75,
            },
            "preprocess": {"name": "eq-proc", "chain": [{"plugin_id": "binarizer"}]},
            "train": {
                "model_name": "eq-model",
                "algorithm_class": "classical",
                "algorithm_id": "knn",
                "hyperparams": {"k": 1},
            },
        }
        (tmp_path / "pipeline.json").write_text(json.dumps(config))
        cli = subprocess.run(
            [sys.executable, "-m", "caravan.gateway.cli", "run",
             "--config", str(tmp_path / "pipeline.json"), "--data-dir", str(tmp_path / "cli-data")],
            capture_output=True,
            text=True,
            timeout=180,
        )
        assert cli.returncode == 0, cli.stderr
        cli_ids = dict(line.split("\t") for line in cli.stdout.strip().splitlines())

        server = LiveServer(tmp_path / "http")
        try:
            server.corpus_dir = corpus
            crawl = server.run_stage(
                "crawl",
                {"index_url": str(corpus / "index.json"), "metadata_url": str(corpus),
                 "master_seed": 555},
            )
            server.run_stage(
                "extract",
                {"package_ids": crawl["package_ids"], "families": ["apis", "permissions"],
                 "master_seed": 555},
            )
            selected = server.run_stage("select", {**config["select"], "master_seed": 555})
            merged = server.run_stage(
                "merge",
                {**config["merge"], "selected": selected["selected_id"], "master_seed": 555},
            )
            processed = server.run_stage(
                "preprocess",
                {**config["preprocess"], "merged": merged["merged_id"], "master_seed": 555},
            )
            train = server.run_stage(
                "train",
                {**config["train"], "dataset": processed["processed_id"], "master_seed": 555},
            )
            evaluate_view = server.wait_task(train["evaluate_task_id"])
            assert evaluate_view["status"] == "succeeded"
            assert selected["selected_id"] == cli_ids["selected_id"]
            assert merged["merged_id"] == cli_ids["merged_id"]
            assert processed["processed_id"] == cli_ids["processed_id"]
            assert train["model_id"] == cli_ids["model_id"]
            assert evaluate_view["result"]["evaluation_id"] == cli_ids["evaluation_id"]
        finally:
            server.stop()


class TestProvenance:
    def test_xml_via_accept_header(self, live, pipeline):
        response = live.client.get(
            f"/api/artifacts/{pipeline['model']}/provenance",
            headers={"accept": "application/xml"},
        )
        assert response.status_code == 200
        assert response.text.startswith("<provenance")
        assert 'stage="train"' in response.text

    def test_json_by_default(self, live, pipeline):
        body = live.client.get(f"/api/artifacts/{pipeline['model']}/provenance").json()
        stages = [record["stage"] for record in body["records"]]
        assert stages[-1] == "train"
        assert "crawl" in stages

    def test_unknown_artifact_404(self, live):
        response = live.client.get(f"/api/artifacts/{'d' * 64}/provenance")
        assert response.status_code == 404
        assert set(response.json()) == API_ERROR_KEYS
