import logging

import numpy as np

from utils.errors import BPMEError, Condition4Violated, ParseError
from utils.general_utils import (
    configure_logging,
    hash_payload,
    make_rng,
    make_streams,
    module_code,
    summarize_stats,
    text_cleaning,
)


def test_text_cleaning_slugs_labels():
    assert text_cleaning("Théorème P2.3") == "theoreme_p2_3"
    assert text_cleaning("  estado A ") == "estado_a"
    assert text_cleaning(None) is None


def test_hash_payload_ignores_key_order():
    a = {"seed": 1, "env": {"x": [1, 2], "y": 0.5}}
    b = {"env": {"y": 0.5, "x": [1, 2]}, "seed": 1}
    assert hash_payload(a) == hash_payload(b)
    assert len(hash_payload(a)) == 12
    assert hash_payload(a) != hash_payload({**a, "seed": 2})


def test_module_code_is_stable_u64():
    code = module_code("branching")
    assert code == module_code("branching")
    assert 0 <= code < 2**64
    assert code != module_code("walk")


def test_make_rng_reproducible_and_keyed():
    first = make_rng(3, "walk", 0).random(5)
    again = make_rng(3, "walk", 0).random(5)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, make_rng(3, "walk", 1).random(5))
    assert not np.array_equal(first, make_rng(3, "harmonic:0", 0).random(5))
    assert not np.array_equal(first, make_rng(4, "walk", 0).random(5))


def test_make_streams_are_independent_children():
    env_rng, off_rng = make_streams(0, "branching", 0)
    env_again, _ = make_streams(0, "branching", 0)
    np.testing.assert_array_equal(env_rng.random(4), env_again.random(4))
    assert not np.array_equal(make_streams(0, "branching", 0)[0].random(4), off_rng.random(4))


def test_summarize_stats():
    stats = summarize_stats(np.array([1.0, 2.0, 3.0, 4.0]))
    assert stats["mean"] == 2.5
    assert stats["count"] == 4
    assert np.isclose(stats["se"], np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert summarize_stats(np.array([]))["count"] == 0


def test_configure_logging_reads_environment(monkeypatch):
    monkeypatch.setenv("BPME_LOG", "debug")
    assert configure_logging() == logging.DEBUG
    assert configure_logging("INFO") == logging.INFO
    monkeypatch.setenv("BPME_LOG", "nonsense")
    assert configure_logging() == logging.WARNING


def test_error_records_carry_context():
    err = Condition4Violated("state 'b' has P(xi >= 2) = 0", state="b")
    assert isinstance(err, ValueError)
    assert isinstance(err, BPMEError)
    assert err.to_record() == {
        "error": "Condition4Violated",
        "message": "state 'b' has P(xi >= 2) = 0",
        "state": "b",
    }
    record = ParseError("Invalid JSON", line=2, column=5, field=None).to_record()
    assert record["line"] == 2 and "field" not in record
