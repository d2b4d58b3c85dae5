import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from medaid.errors import StoreConflict, StoreNotFound
from medaid.gateway import AppConfig, SessionStore, create_app, load_config
from medaid.gateway.config import DEFAULT_DISCLAIMER


@pytest.fixture()
def store(tmp_path):
    return SessionStore(tmp_path / "sessions")


def snapshot(sid, updated_at=0.0):
    return {"id": sid, "updated_at": updated_at, "payload": f"data-{sid}"}


class TestSessionStore:
    def test_put_get_round_trip(self, store):
        store.put(snapshot("abc"))
        assert store.get("abc")["payload"] == "data-abc"

    def test_get_missing_is_not_found(self, store):
        with pytest.raises(StoreNotFound):
            store.get("nope")

    def test_path_traversal_ids_rejected(self, store):
        with pytest.raises(StoreNotFound):
            store.get("../../etc/passwd")

    def test_list_sorted_by_updated_at(self, store):
        store.put(snapshot("late", updated_at=30))
        store.put(snapshot("early", updated_at=10))
        store.put(snapshot("mid", updated_at=20))
        assert store.list_ids() == ["early", "mid", "late"]

    def test_lease_conflict_without_wait(self, store):
        with store.lease("x"):
            with pytest.raises(StoreConflict):
                with store.lease("x", wait=False):
                    pass

    def test_lease_serializes_writers(self, store):
        order = []

        def writer(tag):
            with store.lease("shared"):
                order.append(tag)
                current = {"id": "shared", "updated_at": len(order), "tags": order[:]}
                store.put(current)

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        final = store.get("shared")
        assert len(final["tags"]) == 8  # no lost updates
        assert sorted(final["tags"]) == list(range(8))

    def test_hundred_concurrent_puts_all_parse(self, store):
        def put(i):
            store.put(snapshot(f"s{i}", updated_at=i))

        with ThreadPoolExecutor(max_workers=16) as pool:
            list(pool.map(put, range(100)))
        ids = store.list_ids()
        assert len(ids) == 100
        for sid in ids:
            data = store.get(sid)  # every snapshot is complete JSON
            assert data["payload"] == f"data-{sid}"

    def test_no_partial_files_visible(self, store, tmp_path):
        store.put(snapshot("clean"))
        files = list((tmp_path / "sessions").iterdir())
        assert [f.name for f in files] == ["clean.json"]
        json.loads(files[0].read_text())


@pytest.fixture()
def app_config(tmp_path):
    return AppConfig(session_dir=str(tmp_path / "sessions"), mock_backends=True)


@pytest.fixture()
def client(app_config):
    return TestClient(create_app(app_config))


def create_session(client, language="en", profile=None):
    body = {"language": language}
    if profile is not None:
        body["profile"] = profile
    response = client.post("/v1/sessions", json=body)
    assert response.status_code == 201, response.text
    return response.json()


class TestServiceBasics:
    def test_create_session_has_disclaimer(self, client):
        data = create_session(client)
        assert data["session_id"]
        assert data["disclaimer"] == DEFAULT_DISCLAIMER
        assert data["state"] == "awaiting_user"

    def test_unsupported_language_is_bad_request(self, client):
        response = client.post("/v1/sessions", json={"language": "xx"})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "bad_request"

    def test_unknown_session_is_not_found(self, client):
        response = client.post("/v1/sessions/doesnotexist/messages", json={"text": "hi"})
        assert response.status_code == 404
        assert response.json()["error"]["code"] == "not_found"

    def test_empty_message_is_bad_request(self, client):
        sid = create_session(client)["session_id"]
        response = client.post(f"/v1/sessions/{sid}/messages", json={"text": "   "})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "bad_request"

    def test_missing_body_field_is_bad_request(self, client):
        sid = create_session(client)["session_id"]
        response = client.post(f"/v1/sessions/{sid}/messages", json={})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "bad_request"

    def test_meta_languages(self, client):
        data = client.get("/v1/meta/languages").json()
        codes = [lang["code"] for lang in data["languages"]]
        assert codes == ["en", "hi", "te", "ta", "bn", "mr", "ar"]
        by_code = {lang["code"]: lang for lang in data["languages"]}
        assert by_code["ar"]["rtl"] is True
        assert by_code["hi"]["rtl"] is False

    def test_meta_catalog(self, client, catalog):
        data = client.get("/v1/meta/catalog").json()
        assert sorted(data["diseases"]) == sorted(catalog.labels())

    def test_healthz(self, client):
        data = client.get("/healthz").json()
        assert data["status"] == "ok"
        assert data["backends"]["dialogue"] == "mock"

    def test_cors_headers_present(self, client):
        response = client.options(
            "/v1/meta/languages",
            headers={
                "origin": "http://webui.test",
                "access-control-request-method": "GET",
            },
        )
        assert response.headers.get("access-control-allow-origin") in ("*", "http://webui.test")


class TestConsultationOverHttp:
    def drive_to_diagnosis(self, client, catalog, language="en"):
        sid = create_session(client, language=language)["session_id"]
        symptoms = catalog.symptoms("Dermatitis")[:3]
        responses = []
        for symptom in symptoms:
            response = client.post(
                f"/v1/sessions/{sid}/messages", json={"text": f"I have {symptom}"}
            )
            assert response.status_code == 200, response.text
            responses.append(response.json())
        return sid, responses

    def test_full_flow_reaches_diagnosed(self, client, catalog):
        sid, responses = self.drive_to_diagnosis(client, catalog)
        for payload in responses:
            assert payload["disclaimer"] == DEFAULT_DISCLAIMER
        assert "reply" in responses[0]
        final = responses[-1]
        assert final["state"] == "diagnosed"
        assert final["diagnosis"]["disease"] == "Dermatitis"

        snapshot = client.get(f"/v1/sessions/{sid}").json()
        assert snapshot["state"] == "diagnosed"
        assert snapshot["diagnosis"]["disease"] == "Dermatitis"
        assert snapshot["disclaimer"] == DEFAULT_DISCLAIMER

    def test_post_after_diagnosis_conflicts(self, client, catalog):
        sid, _ = self.drive_to_diagnosis(client, catalog)
        response = client.post(f"/v1/sessions/{sid}/messages", json={"text": "more"})
        assert response.status_code == 409
        assert response.json()["error"]["code"] == "conflict"

    def test_arabic_session_flow(self, client, catalog):
        sid, responses = self.drive_to_diagnosis(client, catalog, language="ar")
        assert responses[-1]["state"] == "diagnosed"
        snapshot = client.get(f"/v1/sessions/{sid}").json()
        assert snapshot["language"] == "ar"

    def test_delete_closes_session(self, client, catalog):
        sid = create_session(client)["session_id"]
        response = client.delete(f"/v1/sessions/{sid}")
        assert response.status_code == 200
        assert client.get(f"/v1/sessions/{sid}").json()["state"] == "closed"

    def test_restart_recovers_sessions(self, app_config, catalog):
        client = TestClient(create_app(app_config))
        sid_open = create_session(client)["session_id"]
        sid_done, _ = TestConsultationOverHttp().drive_to_diagnosis(client, catalog)
        del client  # no graceful shutdown: simulate a kill

        reborn = TestClient(create_app(app_config))
        open_snapshot = reborn.get(f"/v1/sessions/{sid_open}").json()
        done_snapshot = reborn.get(f"/v1/sessions/{sid_done}").json()
        assert open_snapshot["state"] == "awaiting_user"
        assert done_snapshot["state"] == "diagnosed"
        assert done_snapshot["diagnosis"]["disease"] == "Dermatitis"
        # the recovered session remains usable
        response = reborn.post(f"/v1/sessions/{sid_open}/messages", json={"text": "hello there"})
        assert response.status_code == 200

    def test_every_assistant_response_carries_disclaimer(self, client, catalog):
        sid, responses = self.drive_to_diagnosis(client, catalog)
        snapshot = client.get(f"/v1/sessions/{sid}")
        for payload in responses + [snapshot.json()]:
            assert payload.get("disclaimer"), "assistant-bearing response without disclaimer"


class TestConfig:
    def test_defaults_valid(self):
        config = AppConfig()
        assert config.disclaimer_text
        assert config.host_port() == ("127.0.0.1", 8080)

    def test_file_and_env_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({
            "session_dir": str(tmp_path / "s"),
            "listen_address": "0.0.0.0:9999",
            "dialogue_backend": {"base_url": "http://file.example/v1"},
        }))
        env = {
            "MEDAID_LLM_BASE_URL": "http://env.example/v1",
            "MEDAID_MAX_EXCHANGES": "5",
        }
        config = load_config(path, env=env)
        assert config.dialogue_backend.base_url == "http://env.example/v1"  # env wins
        assert config.listen_address == "0.0.0.0:9999"
        assert config.max_exchanges == 5

    def test_empty_disclaimer_rejected(self):
        from medaid.errors import MedaidError

        with pytest.raises(MedaidError):
            AppConfig(disclaimer_text="  ")
