from __future__ import annotations

import socket

import pytest
from fastapi.testclient import TestClient

from convqa_trainer.serving import create_app, serve


@pytest.fixture(scope="session")
def rewriter_client(trained_rewriter):
    app = create_app(rewriter_dir=trained_rewriter.artifact_dir)
    return TestClient(app)


@pytest.fixture(scope="session")
def embedder_client(trained_retriever):
    app = create_app(embedder_dir=trained_retriever.artifact_dir)
    return TestClient(app)


class TestRewriteEndpoint:
    def test_contract_shape(self, rewriter_client):
        reply = rewriter_client.post("/rewrite", json={
            "input": "what is the parking policy for case 1000? how do i cancel it?",
            "max_tokens": 64})
        assert reply.status_code == 200
        body = reply.json()
        assert set(body) == {"output"}
        assert isinstance(body["output"], str)

    def test_malformed_body_is_4xx(self, rewriter_client):
        reply = rewriter_client.post("/rewrite", json={"wrong_key": "x"})
        assert 400 <= reply.status_code < 500

    def test_max_tokens_bounds(self, rewriter_client):
        reply = rewriter_client.post("/rewrite", json={"input": "q", "max_tokens": 0})
        assert 400 <= reply.status_code < 500

    def test_missing_artifact_role(self, trained_rewriter):
        client = TestClient(create_app(rewriter_dir=trained_rewriter.artifact_dir))
        reply = client.post("/embed", json={"texts": ["x"]})
        assert reply.status_code == 503

    def test_deterministic(self, rewriter_client):
        payload = {"input": "what is the billing policy for case 1001? "
                            "how do i submit it for case 1001?",
                   "max_tokens": 64}
        first = rewriter_client.post("/rewrite", json=payload).json()
        second = rewriter_client.post("/rewrite", json=payload).json()
        assert first == second


class TestEmbedEndpoint:
    def test_contract_shape(self, embedder_client):
        reply = embedder_client.post("/embed", json={"texts": ["one", "two"]})
        assert reply.status_code == 200
        body = reply.json()
        assert set(body) == {"dim", "vectors"}
        assert len(body["vectors"]) == 2
        assert all(len(v) == body["dim"] for v in body["vectors"])

    def test_deterministic(self, embedder_client):
        payload = {"texts": ["what does the appeal policy cover?"]}
        first = embedder_client.post("/embed", json=payload).json()
        second = embedder_client.post("/embed", json=payload).json()
        assert first == second

    def test_empty_batch_is_4xx(self, embedder_client):
        reply = embedder_client.post("/embed", json={"texts": []})
        assert 400 <= reply.status_code < 500


class TestServe:
    def test_occupied_port_is_a_startup_error(self, trained_rewriter):
        blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            with pytest.raises(OSError, match=str(port)):
                serve(trained_rewriter.artifact_dir, role="rewriter", port=port)
        finally:
            blocker.close()

    def test_unknown_role(self, trained_rewriter):
        with pytest.raises(ValueError):
            serve(trained_rewriter.artifact_dir, role="oracle", port=0)
