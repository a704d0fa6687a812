import math

import pytest

from mdm_server.backends import StubBackend


class TestStubForward:
    def test_uniform_over_full_vocab(self):
        backend = StubBackend(vocab_size=4)
        out = backend.forward((), [3, 3, 0, 3], mask_id=3, positions=[0, 1], top_k=4,
                              request_id="r1")
        assert set(out) == {0, 1}
        for dist in out.values():
            assert list(dist.probs) == pytest.approx([0.25] * 4)
            assert dist.tail_mass == pytest.approx(0.0)

    def test_truncation_reports_tail(self):
        backend = StubBackend(vocab_size=8)
        out = backend.forward((), [7], mask_id=7, positions=[0], top_k=3, request_id="r1")
        dist = out[0]
        assert len(dist.tokens) == 3
        assert dist.tail_mass == pytest.approx(1.0 - 3 / 8)

    def test_pure_function_of_request(self):
        backend = StubBackend(vocab_size=6)
        a = backend.forward((1,), [5, 5], 5, [0, 1], 6, "job#42")
        b = backend.forward((1,), [5, 5], 5, [0, 1], 6, "job#42")
        assert a == b

    def test_seed_suffix_varies_distributions(self):
        backend = StubBackend(vocab_size=6)
        a = backend.forward((), [5], 5, [0], 6, "job#1")[0]
        b = backend.forward((), [5], 5, [0], 6, "job#2")[0]
        assert a.probs != b.probs
        assert math.fsum(a.probs) + a.tail_mass == pytest.approx(1.0, abs=1e-9)

    def test_seeded_distributions_differ_by_position(self):
        backend = StubBackend(vocab_size=6)
        out = backend.forward((), [5, 5], 5, [0, 1], 6, "job#9")
        assert out[0].probs != out[1].probs


class TestStubTokenize:
    def test_never_emits_the_mask_id(self):
        backend = StubBackend(vocab_size=5)
        tokens = backend.tokenize("hello world, any text at all")
        assert tokens
        assert all(0 <= t < 4 for t in tokens)

    def test_deterministic(self):
        backend = StubBackend(vocab_size=16)
        assert backend.tokenize("abc") == backend.tokenize("abc")

    def test_tiny_vocab_rejected(self):
        with pytest.raises(ValueError):
            StubBackend(vocab_size=1)
