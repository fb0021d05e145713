import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from starlette.testclient import TestClient

from metaed.data import load_jsonl
from metaed.runner import RunConfig
from metaed.service.app import create_app
from metaed.service.schemas import RunConfigModel


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def micro_config_dict(tmp_path):
    return {
        "corpus": {
            "num_event_types": 8,
            "triggers_per_type": 1,
            "background_vocab": 20,
            "context_len_range": [5, 8],
            "examples_per_type": 12,
            "seed": 1,
        },
        "episode": {"n_way": 2, "k_shot": 2, "query_per_class": 2},
        "meta": {
            "inner_steps": 2,
            "tasks_per_meta_batch": 1,
            "meta_lr": 1e-3,
            "total_iterations": 4,
            "validate_every": 2,
            "inner_lr": 1e-2,
        },
        "seed": 5,
        "num_seeds": 1,
        "output_dir": str(tmp_path / "svc_run"),
        "split_counts": [4, 2, 2],
        "val_episodes": 2,
        "test_episodes": 2,
    }


class TestBasics:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_templates(self, client):
        resp = client.get("/templates")
        assert resp.status_code == 200
        body = resp.json()
        assert [t["id"] for t in body] == ["A", "B", "C", "D"]
        for t in body:
            assert 0 <= t["slot_index"] < len(t["tokens"])

    def test_schema_defaults_match_core(self):
        assert RunConfigModel().model_dump() == RunConfig().to_dict()


class TestTrainFlow:
    def test_train_eval_export(self, client, tmp_path):
        cfg = micro_config_dict(tmp_path)
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 200, resp.text
        report = resp.json()
        assert set(report["test_mean"]) == {"f1", "ami", "fm", "rand", "ari", "nmi", "homogeneity"}

        ckpt = report["per_seed"][0]["checkpoint"]
        resp = client.post("/eval", json={"checkpoint": ckpt})
        assert resp.status_code == 200
        assert resp.json()["test"] == report["per_seed"][0]["test"]

        out = str(tmp_path / "features.csv")
        resp = client.post("/export-features", json={"checkpoint": ckpt, "output": out})
        assert resp.status_code == 200
        assert resp.json()["rows"] == 8

    def test_bad_config_is_400(self, client, tmp_path):
        cfg = micro_config_dict(tmp_path)
        cfg["episode"]["n_way"] = 1
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 400
        assert "n_way" in resp.json()["detail"]

    def test_unknown_field_is_422(self, client, tmp_path):
        cfg = micro_config_dict(tmp_path)
        cfg["bogus"] = True
        resp = client.post("/train", json={"config": cfg})
        assert resp.status_code == 422

    def test_missing_checkpoint_is_400(self, client, tmp_path):
        resp = client.post("/eval", json={"checkpoint": str(tmp_path / "missing.pt")})
        assert resp.status_code == 400

    def test_ablate_unknown_component_is_400(self, client, tmp_path):
        cfg = micro_config_dict(tmp_path)
        resp = client.post("/ablate", json={"config": cfg, "components": ["dropout"]})
        assert resp.status_code == 400


class TestCorpusExport:
    def test_round_trip(self, client, tmp_path):
        path = str(tmp_path / "corpus.jsonl")
        resp = client.post(
            "/corpus/export",
            json={"corpus": {"num_event_types": 3, "examples_per_type": 4, "seed": 2}, "path": path},
        )
        assert resp.status_code == 200
        assert resp.json()["records"] == 12
        loaded = load_jsonl(path)
        assert sum(len(v) for v in loaded.pools.values()) == 12
        assert len(loaded.pools) == 3
