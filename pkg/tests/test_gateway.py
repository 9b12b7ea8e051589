import json
import threading

import numpy as np
import pytest

from memeguard.gateway import (
    ChatMessage,
    ChatRequest,
    EmbeddingVector,
    GatewayConfig,
    GatewayConfigError,
    GatewayError,
    HTTPStatusError,
    ModelGateway,
    ResponseCache,
    StubTransport,
    TransportError,
    canonical_digest,
    hash_unit_vector,
)


@pytest.fixture
def config(tmp_path):
    return GatewayConfig(cache_dir=tmp_path / "cache", backoff_base=0.0)


def make_gateway(config, **stub_kwargs):
    stub = StubTransport(**stub_kwargs)
    return ModelGateway(config, transport=stub), stub


def chat_request(text="hello", model="test-model", **kwargs):
    return ChatRequest(
        model_id=model,
        messages=(ChatMessage(role="user", text=text),),
        **kwargs,
    )


# ---------------------------------------------------------------- types

def test_chat_request_validation():
    with pytest.raises(ValueError):
        chat_request(temperature=0.0)
    with pytest.raises(ValueError):
        chat_request(max_new_tokens=0)
    with pytest.raises(ValueError):
        ChatRequest(
            model_id="m",
            messages=(
                ChatMessage(role="user", text="a"),
                ChatMessage(role="system", text="late system"),
            ),
        )


def test_embedding_vector_validation():
    with pytest.raises(ValueError):
        EmbeddingVector(values=(1.0, 0.0), dim=3, normalized=False)
    with pytest.raises(ValueError):
        EmbeddingVector(values=(2.0, 0.0), dim=2, normalized=True)
    v = EmbeddingVector(values=(1.0, 0.0), dim=2, normalized=True)
    assert np.allclose(np.asarray(v), [1.0, 0.0])


def test_cache_key_is_semantic():
    a = canonical_digest("chat", {"x": 1, "y": 2})
    b = canonical_digest("chat", {"y": 2, "x": 1})
    c = canonical_digest("embed", {"x": 1, "y": 2})
    assert a == b
    assert a != c


# ---------------------------------------------------------------- chat

def test_chat_stub_passthrough(config):
    gw, _ = make_gateway(config, chat="toxic")
    assert gw.chat_complete(chat_request()) == "toxic"


def test_chat_cache_replay_zero_network(config):
    gw, stub = make_gateway(config, chat="toxic")
    req = chat_request()
    assert gw.chat_complete(req) == "toxic"
    assert gw.chat_complete(req) == "toxic"
    assert stub.calls["chat"] == 1


def test_chat_wire_contract(config, tmp_path):
    seen = {}

    def capture(payload):
        seen.update(payload)
        return "ok"

    gw, _ = make_gateway(config, chat=capture)
    gw.chat_complete(chat_request(temperature=0.001, max_new_tokens=30))
    assert seen["temperature"] == 0.001
    assert seen["max_tokens"] == 30
    assert seen["messages"] == [{"role": "user", "content": "hello"}]


def test_chat_retries_then_succeeds(config):
    gw, stub = make_gateway(config, chat="fine", fail_times=2)
    assert gw.chat_complete(chat_request()) == "fine"
    assert stub.calls["chat"] == 3


def test_chat_gives_up_after_max_attempts(config):
    config.max_attempts = 3
    gw, stub = make_gateway(config, chat="fine", fail_times=10)
    with pytest.raises(TransportError):
        gw.chat_complete(chat_request())
    assert stub.calls["chat"] == 3


def test_chat_4xx_no_retry(config):
    class FourOhFour(StubTransport):
        def send(self, kind, payload):
            self.calls[kind] += 1
            raise HTTPStatusError(400, "bad request")

    stub = FourOhFour()
    gw = ModelGateway(config, transport=stub)
    with pytest.raises(HTTPStatusError):
        gw.chat_complete(chat_request())
    assert stub.calls["chat"] == 1


def test_chat_empty_completion_is_error(config):
    gw, _ = make_gateway(config, chat="")
    with pytest.raises(GatewayError):
        gw.chat_complete(chat_request())


def test_offline_mode_cache_miss_raises(config):
    gw = ModelGateway(config, transport=None)
    with pytest.raises(GatewayError, match="cache miss"):
        gw.chat_complete(chat_request())


def test_offline_mode_replays_frozen_cache(config):
    gw, _ = make_gateway(config, chat="frozen answer")
    req = chat_request()
    gw.chat_complete(req)
    offline = ModelGateway(config, transport=None)
    assert offline.chat_complete(req) == "frozen answer"


def test_cache_files_store_request_and_response(config):
    gw, _ = make_gateway(config, chat="audit me")
    gw.chat_complete(chat_request())
    files = list((config.cache_dir / "chat").glob("*.json"))
    assert len(files) == 1
    entry = json.loads(files[0].read_text())
    assert entry["request"]["messages"]
    assert entry["response"]["choices"][0]["message"]["content"] == "audit me"


# ---------------------------------------------------------------- embeddings

def test_embed_unit_norm(config):
    gw, _ = make_gateway(config)
    v = gw.embed_text("x")
    assert abs(np.linalg.norm(np.asarray(v)) - 1.0) < 1e-6
    assert v.normalized


def test_embed_deterministic_via_cache(config):
    gw, stub = make_gateway(config)
    a = gw.embed_text("x")
    b = gw.embed_text("x")
    assert a == b
    assert stub.calls["embed"] == 1


def test_embed_orthonormal_table(config):
    table = {"a": [1.0, 0.0, 0.0], "b": [0.0, 1.0, 0.0]}
    gw, _ = make_gateway(config, embed_table=table)
    va, vb = np.asarray(gw.embed_text("a")), np.asarray(gw.embed_text("b"))
    assert float(np.dot(va, vb)) == pytest.approx(0.0)


def test_embed_dimension_drift_fatal(config):
    class Drifty(StubTransport):
        def send(self, kind, payload):
            n = 4 if payload["input"][0] == "first" else 8
            return {"data": [{"embedding": [1.0] + [0.0] * (n - 1)}]}

    gw = ModelGateway(config, transport=Drifty())
    gw.embed_text("first")
    with pytest.raises(GatewayConfigError):
        gw.embed_text("second")


def test_embed_rejects_empty(config):
    gw, _ = make_gateway(config)
    with pytest.raises(ValueError):
        gw.embed_text("")


def test_embed_image(config, tmp_path):
    from .conftest import make_image

    path = make_image(tmp_path / "img.png", seed=1)
    gw, stub = make_gateway(config)
    v = gw.embed_image(path)
    assert abs(np.linalg.norm(np.asarray(v)) - 1.0) < 1e-6
    # same bytes, same digest, cache hit
    gw.embed_image(path)
    assert stub.calls["embed"] == 1


# ---------------------------------------------------------------- expansion

def test_expand_tag_stub_snippet(config):
    gw, _ = make_gateway(config, search={"9/11": "a 2001 terrorist attack in new york"})
    assert gw.expand_tag("9/11") == "a 2001 terrorist attack in new york"


def test_expand_tag_truncates_to_500(config):
    gw, _ = make_gateway(config, search={"t": "x" * 900})
    assert len(gw.expand_tag("t")) == 500


def test_expand_tag_cached(config):
    gw, stub = make_gateway(config, search={"t": "snippet"})
    assert gw.expand_tag("t") == gw.expand_tag("t")
    assert stub.calls["search"] == 1


def test_expand_tag_degrades_on_failure(config):
    config.max_attempts = 2
    gw, _ = make_gateway(config, search={}, fail_times=10)
    assert gw.expand_tag("t") == ""
    assert gw.warnings


def test_expand_tag_empty_result_warns(config):
    gw, _ = make_gateway(config, search={})
    assert gw.expand_tag("unknown") == ""
    assert any("unknown" in w for w in gw.warnings)


# ---------------------------------------------------------------- conceptnet

def test_conceptnet_self_relatedness(config):
    gw, _ = make_gateway(config)
    assert gw.conceptnet_relatedness("x", "x") == 1.0


def test_conceptnet_symmetric_cache_key(config):
    gw, stub = make_gateway(config, conceptnet={("cat", "dog"): 0.6})
    assert gw.conceptnet_relatedness("dog", "cat") == 0.6
    assert gw.conceptnet_relatedness("cat", "dog") == 0.6
    assert stub.calls["conceptnet"] == 1


def test_conceptnet_slugifies_terms(config):
    gw, _ = make_gateway(config, conceptnet={("twin_towers", "jenga"): 0.4})
    assert gw.conceptnet_relatedness("Twin Towers", "jenga") == 0.4


def test_conceptnet_unknown_term_is_zero_with_warning(config):
    gw, _ = make_gateway(config)
    assert gw.conceptnet_relatedness("zzz", "qqq") == 0.0
    assert gw.warnings


def test_conceptnet_retries_rate_limit(config):
    class RateLimited(StubTransport):
        def __init__(self):
            super().__init__(conceptnet={("a", "b"): 0.5})
            self.limited = 2

        def send(self, kind, payload):
            if self.limited > 0:
                self.limited -= 1
                raise HTTPStatusError(429, "slow down")
            return super().send(kind, payload)

    gw = ModelGateway(config, transport=RateLimited())
    assert gw.conceptnet_relatedness("a", "b") == 0.5


# ---------------------------------------------------------------- concurrency

def test_concurrent_same_key_coalesces(config):
    class Slow(StubTransport):
        def send(self, kind, payload):
            import time

            time.sleep(0.02)
            return super().send(kind, payload)

    stub = Slow(chat="one")
    gw = ModelGateway(config, transport=stub)
    req = chat_request()
    results = []
    threads = [threading.Thread(target=lambda: results.append(gw.chat_complete(req))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["one"] * 8
    assert stub.calls["chat"] == 1


# ---------------------------------------------------------------- config file

def test_config_from_file(tmp_path):
    cfg_file = tmp_path / "gateway.cfg"
    cfg_file.write_text(
        "# endpoints\n"
        "chat_url = http://localhost:9000/v1/chat/completions\n"
        "embed_model = clip-vit-b32\n"
        "timeout = 30\n"
        "parallelism = 4\n"
        f"cache_dir = {tmp_path / 'c'}\n"
    )
    cfg = GatewayConfig.from_file(cfg_file)
    assert cfg.chat_url.endswith("/v1/chat/completions")
    assert cfg.embed_model == "clip-vit-b32"
    assert cfg.timeout == 30.0
    assert cfg.parallelism == 4


def test_config_rejects_unknown_keys(tmp_path):
    cfg_file = tmp_path / "gateway.cfg"
    cfg_file.write_text("api_key = secret-in-file\n")
    with pytest.raises(GatewayConfigError):
        GatewayConfig.from_file(cfg_file)


def test_hash_unit_vector_deterministic():
    assert hash_unit_vector("x") == hash_unit_vector("x")
    assert hash_unit_vector("x") != hash_unit_vector("y")
    assert np.linalg.norm(hash_unit_vector("anything")) == pytest.approx(1.0)
