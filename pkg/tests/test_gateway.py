import json

import pytest
import requests

from crashsim import gateway
from crashsim.gateway import (
    BackendConfig,
    Cassette,
    CassetteMiss,
    GatewayError,
    LlmClient,
    bundle_to_wire,
    fingerprint_bundle,
)
from crashsim.knowledge import ChatMessage, PromptBundle, image_part, text_part

PNG = b"\x89PNG\r\n\x1a\n" + b"fakeimagedata"


def make_bundle(text="hello", image: bytes | None = None) -> PromptBundle:
    parts = [text_part(text)]
    if image is not None:
        parts.insert(0, image_part(image, "image/png"))
    return PromptBundle(messages=(
        ChatMessage("system", (text_part("system prompt"),)),
        ChatMessage("user", tuple(parts)),
    ))


class TestFingerprint:
    def test_stable_across_reconstruction(self):
        assert fingerprint_bundle(make_bundle(image=PNG)) == fingerprint_bundle(
            make_bundle(image=PNG))

    def test_changes_with_text(self):
        assert fingerprint_bundle(make_bundle("a")) != fingerprint_bundle(make_bundle("b"))

    def test_changes_with_any_image_byte(self):
        assert fingerprint_bundle(make_bundle(image=PNG)) != fingerprint_bundle(
            make_bundle(image=PNG + b"\x00"))


class TestCassette:
    def test_append_and_lookup(self, tmp_path):
        cassette = Cassette(tmp_path / "c.ndrec", create=True)
        cassette.append("fp1", "resp", 12.0)
        assert cassette.lookup("fp1") == ("resp", 12.0)
        reloaded = Cassette(tmp_path / "c.ndrec")
        assert reloaded.lookup("fp1") == ("resp", 12.0)

    def test_duplicate_fingerprint_rejected_on_load(self, tmp_path):
        path = tmp_path / "c.ndrec"
        record = json.dumps({"fingerprint": "x", "response": "r", "latency_ms": 1})
        path.write_text(record + "\n" + record + "\n")
        with pytest.raises(GatewayError, match="duplicate"):
            Cassette(path)

    def test_missing_cassette_is_an_error(self, tmp_path):
        with pytest.raises(GatewayError, match="not found"):
            Cassette(tmp_path / "nope.ndrec")


class TestReplay:
    def test_replay_hit(self, tmp_path):
        bundle = make_bundle()
        cassette = Cassette(tmp_path / "c.ndrec", create=True)
        cassette.append(fingerprint_bundle(bundle), "recorded reply", 5.0)
        client = LlmClient(BackendConfig(mode="replay", cassette_path=tmp_path / "c.ndrec"))
        response = client.complete(bundle)
        assert response.text == "recorded reply"
        assert client.live_requests == 0

    def test_replay_miss_names_fingerprint(self, tmp_path):
        (tmp_path / "c.ndrec").write_text("")
        client = LlmClient(BackendConfig(mode="replay", cassette_path=tmp_path / "c.ndrec"))
        bundle = make_bundle()
        with pytest.raises(CassetteMiss) as err:
            client.complete(bundle)
        assert fingerprint_bundle(bundle) in str(err.value)

    def test_replay_requires_existing_cassette(self, tmp_path):
        with pytest.raises(GatewayError):
            LlmClient(BackendConfig(mode="replay", cassette_path=tmp_path / "missing.ndrec"))


class TestRecord:
    def test_second_identical_call_served_from_cassette(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "test-key")
        calls = []

        def fake_post(cfg, payload, api_key):
            calls.append(payload)
            return "live reply", {"total_tokens": 10}

        monkeypatch.setattr(gateway, "_post_chat", fake_post)
        client = LlmClient(BackendConfig(mode="record", cassette_path=tmp_path / "c.ndrec"))
        bundle = make_bundle(image=PNG)
        first = client.complete(bundle)
        second = client.complete(bundle)
        assert first.text == second.text == "live reply"
        assert len(calls) == 1

    def test_record_requires_credentials(self, tmp_path, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        with pytest.raises(GatewayError, match="credentials"):
            LlmClient(BackendConfig(mode="record", cassette_path=tmp_path / "c.ndrec"))


class TestLive:
    def test_retries_with_backoff_then_succeeds(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "test-key")
        sleeps = []
        monkeypatch.setattr(gateway.time, "sleep", sleeps.append)
        attempts = []

        def flaky_post(cfg, payload, api_key):
            attempts.append(1)
            if len(attempts) < 3:
                raise requests.ConnectionError("boom")
            return "ok", {}

        monkeypatch.setattr(gateway, "_post_chat", flaky_post)
        client = LlmClient(BackendConfig(mode="live"))
        assert client.complete(make_bundle()).text == "ok"
        assert sleeps == [1.0, 2.0]

    def test_gives_up_after_max_retries(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "test-key")
        monkeypatch.setattr(gateway.time, "sleep", lambda _: None)

        def always_rate_limited(cfg, payload, api_key):
            raise gateway._RetryableHttpError(429, "slow down")

        monkeypatch.setattr(gateway, "_post_chat", always_rate_limited)
        client = LlmClient(BackendConfig(mode="live", max_retries=2))
        with pytest.raises(GatewayError, match="3 attempts"):
            client.complete(make_bundle())

    def test_empty_reply_is_an_error(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "test-key")
        monkeypatch.setattr(gateway, "_post_chat", lambda *a: ("   ", {}))
        client = LlmClient(BackendConfig(mode="live", max_retries=0))
        with pytest.raises(GatewayError, match="empty assistant reply"):
            client.complete(make_bundle())

    def test_rate_limiter_spaces_requests(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "test-key")
        monkeypatch.setattr(gateway, "_post_chat", lambda *a: ("ok", {}))
        clock = {"now": 100.0}
        sleeps = []
        monkeypatch.setattr(gateway.time, "monotonic", lambda: clock["now"])
        monkeypatch.setattr(gateway.time, "sleep", sleeps.append)
        client = LlmClient(BackendConfig(mode="live", requests_per_minute=60.0))
        client.complete(make_bundle("a"))
        client.complete(make_bundle("b"))  # one second of spacing enforced
        assert sleeps and sleeps[-1] == pytest.approx(1.0)


class TestWireFormat:
    def test_image_parts_sent_losslessly(self):
        bundle = make_bundle(image=PNG)
        payload = bundle_to_wire(bundle, BackendConfig(mode="live", cassette_path=None))
        content = payload["messages"][1]["content"]
        image_url = next(c for c in content if c["type"] == "image_url")
        header, b64 = image_url["image_url"]["url"].split(",", 1)
        assert header == "data:image/png;base64"
        import base64 as b64mod
        assert b64mod.b64decode(b64) == PNG

    def test_single_text_message_stays_plain(self):
        payload = bundle_to_wire(make_bundle(), BackendConfig(mode="live"))
        assert payload["messages"][0]["content"] == "system prompt"
        assert payload["model"] == "gpt-4o"
        assert payload["temperature"] == 0.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BackendConfig(mode="replay", cassette_path=None)
        with pytest.raises(ValueError):
            BackendConfig(mode="live", temperature=3.0)
