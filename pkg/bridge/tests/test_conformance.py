"""Controller-vs-server conformance over real pipes.

These tests spawn the mock servers as subprocesses and drive them with the
controller package's wire client, so every byte crosses an actual stdio
boundary exactly as it would with a real model behind the protocol.
"""

import json
import sys
from pathlib import Path

from dico.core import MASK, new_sequence
from dico.engine import decode_dico, decode_vanilla
from dico.remote import WirePredictor

DATA = Path(__file__).parent / "data"


def mock_cmd(*extra):
    return [sys.executable, "-m", "dico_bridge.cli", "mock", *extra]


def test_uniform_64_token_decode_completes():
    with WirePredictor(mock_cmd("--vocab-size", "4")) as pred:
        res = decode_dico((), 64, pred)
    assert len(res.final_sequence) == 64
    assert MASK not in res.final_sequence
    assert all(0 <= t < 4 for t in res.final_sequence)
    # uniform ties resolve to token 0 at every fallback
    assert res.final_sequence == (0,) * 64


def test_uniform_grid_covers_64_nulls_in_order():
    with WirePredictor(mock_cmd("--vocab-size", "4")) as pred:
        grid = pred.predict(new_sequence((), 64))
    assert len(grid.entries) == 64
    positions = [e.position for e in grid.entries]
    assert positions == sorted(positions) == list(range(64))
    assert all(e.top1_prob == 0.25 for e in grid.entries)
    assert all(e.top1_logit == e.top2_logit for e in grid.entries)


def test_uniform_topk_flag_caps_entry_lists():
    with WirePredictor(mock_cmd("--vocab-size", "8", "--topk", "2")) as pred:
        grid = pred.predict(new_sequence((), 4))
    assert all(len(e.topk) == 2 for e in grid.entries)


def test_replay_reproduces_golden_sequence():
    golden = json.loads((DATA / "golden_sequence.json").read_text())
    cmd = mock_cmd("--mode", "file-replay", "--replay",
                   str(DATA / "replay_session.jsonl"))
    with WirePredictor(cmd) as pred:
        res = decode_vanilla(tuple(golden["prompt"]),
                             golden["response_length"], pred)
    assert list(res.final_sequence) == golden["final_sequence"]


def test_replay_exhaustion_surfaces_as_error():
    golden = json.loads((DATA / "golden_sequence.json").read_text())
    cmd = mock_cmd("--mode", "file-replay", "--replay",
                   str(DATA / "replay_session.jsonl"))
    with WirePredictor(cmd) as pred:
        decode_vanilla(tuple(golden["prompt"]), golden["response_length"], pred)
        # the recording is spent; a raw 13th request must draw an error object
        proc = pred._proc
        proc.stdin.write(
            json.dumps({"id": 99, "tokens": [2, None], "prompt_len": 1, "topk": 4})
            + "\n"
        )
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
    assert reply["id"] == 99
    assert "replay exhausted after 12" in reply["error"]


def test_controller_survives_injected_malformed_line():
    # A stray malformed line on the server's stdin must produce one error
    # object and leave the stream usable, so a decode started afterwards
    # still runs to completion.
    with WirePredictor(mock_cmd("--vocab-size", "3")) as pred:
        proc = pred._proc
        proc.stdin.write("this is not a request\n")
        proc.stdin.flush()
        err = json.loads(proc.stdout.readline())
        assert err["id"] is None
        assert "unparseable" in err["error"]
        res = decode_vanilla((), 8, pred)
    assert MASK not in res.final_sequence
    assert len(res.final_sequence) == 8


def test_zero_null_request_gets_error_object():
    # The controller's client refuses to send these, so speak raw protocol.
    with WirePredictor(mock_cmd("--vocab-size", "3")) as pred:
        proc = pred._proc
        proc.stdin.write(
            json.dumps({"id": 0, "tokens": [1, 2], "prompt_len": 0, "topk": 4})
            + "\n"
        )
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
    assert reply["id"] == 0
    assert "masked slot" in reply["error"]


def test_mock_cli_rejects_bad_invocations(tmp_path):
    import subprocess

    no_replay = subprocess.run(mock_cmd("--mode", "file-replay"),
                               capture_output=True, text=True)
    assert no_replay.returncode == 2
    assert "--replay" in no_replay.stderr

    missing = subprocess.run(
        mock_cmd("--mode", "file-replay", "--replay", str(tmp_path / "no.jsonl")),
        capture_output=True, text=True,
    )
    assert missing.returncode == 2

    tiny = subprocess.run(mock_cmd("--vocab-size", "1"),
                          capture_output=True, text=True)
    assert tiny.returncode == 2
