"""Remote denoiser client against minimal in-test line servers."""

import json
import math
import socket
import socketserver
import threading

import pytest

from mdm_decode.errors import ProtocolError, RemoteFailure, RemoteTimeout
from mdm_decode.remote import RemoteDenoiser
from mdm_decode.scoring import entropy_score
from mdm_decode.state import SequenceState


class LineServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, respond):
        self.respond = respond
        super().__init__(("127.0.0.1", 0), _Handler)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            reply = self.server.respond(json.loads(line))
            if reply is None:
                return  # silently hang up
            self.wfile.write(json.dumps(reply).encode("utf-8") + b"\n")
            self.wfile.flush()


@pytest.fixture
def serve():
    servers = []

    def start(respond):
        server = LineServer(respond)
        thread = threading.Thread(
            target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
        )
        thread.start()
        servers.append(server)
        return server.server_address

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def uniform_responder(vocab_size):
    def respond(request):
        k = min(request["top_k"], vocab_size)
        dists = {
            str(pos): {
                "tokens": list(range(k)),
                "probs": [1.0 / vocab_size] * k,
                "tail_mass": 1.0 - k / vocab_size,
            }
            for pos in request["positions"]
        }
        return {"id": request["id"], "dists": dists}

    return respond


def masked_state(gen_len=8, mask_id=3, observed=()):
    gen = [mask_id] * gen_len
    for pos, tok in observed:
        gen[pos] = tok
    return SequenceState(prompt=(), gen=tuple(gen), mask_id=mask_id)


class TestPredict:
    def test_exact_keys_and_topk_shape(self, serve):
        host, port = serve(uniform_responder(8))
        state = masked_state(gen_len=6, mask_id=7, observed=[(0, 1), (1, 1), (3, 2), (4, 2)])
        with RemoteDenoiser(host, port, top_k=3) as den:
            dists = den.predict(state)
        assert set(dists) == {2, 5}
        for dist in dists.values():
            assert len(dist.probs) == 3
            assert dist.tail_mass == pytest.approx(1.0 - 3 / 8)

    def test_uniform_full_vocab_has_zero_tail_and_log_v_entropy(self, serve):
        vocab_size = 5
        host, port = serve(uniform_responder(vocab_size))
        state = masked_state(gen_len=4, mask_id=vocab_size - 1)
        with RemoteDenoiser(host, port, top_k=vocab_size) as den:
            dists = den.predict(state)
        for dist in dists.values():
            assert dist.tail_mass == pytest.approx(0.0)
            assert -entropy_score(dist) == pytest.approx(math.log(vocab_size), abs=1e-12)

    def test_renormalized_topk_sums_to_one(self, serve):
        host, port = serve(uniform_responder(16))
        state = masked_state(gen_len=4, mask_id=15)
        with RemoteDenoiser(host, port, top_k=4) as den:
            dists = den.predict(state)
        for dist in dists.values():
            listed = sum(dist.probs.values())
            renormalized = [p / listed for p in dist.probs.values()]
            assert sum(renormalized) == pytest.approx(1.0, abs=1e-6)

    def test_complete_state_skips_the_wire(self, serve):
        host, port = serve(lambda request: pytest.fail("no request expected"))
        state = masked_state(gen_len=2, mask_id=3, observed=[(0, 0), (1, 1)])
        with RemoteDenoiser(host, port) as den:
            assert den.predict(state) == {}


class TestProtocolViolations:
    def test_overweight_probs(self, serve):
        def respond(request):
            dists = {
                str(pos): {"tokens": [0, 1], "probs": [0.8, 0.4], "tail_mass": 0.0}
                for pos in request["positions"]
            }
            return {"id": request["id"], "dists": dists}

        host, port = serve(respond)
        with RemoteDenoiser(host, port) as den:
            with pytest.raises(ProtocolError):
                den.predict(masked_state(gen_len=2))

    def test_wrong_positions(self, serve):
        def respond(request):
            return {
                "id": request["id"],
                "dists": {"0": {"tokens": [0], "probs": [1.0], "tail_mass": 0.0}},
            }

        host, port = serve(respond)
        with RemoteDenoiser(host, port) as den:
            with pytest.raises(ProtocolError):
                den.predict(masked_state(gen_len=3))

    def test_mismatched_id(self, serve):
        def respond(request):
            return {"id": "someone-else", "dists": {}}

        host, port = serve(respond)
        with RemoteDenoiser(host, port) as den:
            with pytest.raises(ProtocolError):
                den.predict(masked_state(gen_len=2))

    def test_error_frame(self, serve):
        host, port = serve(lambda request: {"id": request["id"], "error": "backend exploded"})
        with RemoteDenoiser(host, port) as den:
            with pytest.raises(RemoteFailure, match="backend exploded"):
                den.predict(masked_state(gen_len=2))

    def test_connection_closed_midway(self, serve):
        host, port = serve(lambda request: None)
        with RemoteDenoiser(host, port) as den:
            with pytest.raises(ProtocolError):
                den.predict(masked_state(gen_len=2))

    def test_timeout(self):
        listener = socket.create_server(("127.0.0.1", 0))
        try:
            host, port = listener.getsockname()
            with RemoteDenoiser(host, port, timeout=0.2) as den:
                with pytest.raises(RemoteTimeout):
                    den.predict(masked_state(gen_len=2))
        finally:
            listener.close()

    def test_request_frame_shape(self, serve):
        captured = {}

        def respond(request):
            captured.update(request)
            return uniform_responder(4)(request)

        host, port = serve(respond)
        state = masked_state(gen_len=3, mask_id=3, observed=[(1, 0)])
        with RemoteDenoiser(host, port, top_k=4) as den:
            den.predict(state)
        assert captured["gen"] == [3, 0, 3]
        assert captured["mask_id"] == 3
        assert captured["positions"] == [0, 2]
        assert captured["top_k"] == 4
        assert isinstance(captured["id"], str)
