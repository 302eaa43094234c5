import asyncio
import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarios import KEY, T0, RawSession, minute_batch, small_spec
from urbannoise.ingest import (
    FaultProxy,
    Ingestor,
    IngestServer,
    LogCorruptError,
    SeqTracker,
    replay,
    replay_into,
)
from urbannoise.ingest import protocol
from urbannoise.lattice import LatticeLevel, LatticeStore
from urbannoise.node import Batch, RetryPolicy, Uplink, node_messages, run_fleet
from urbannoise.soundscape import generate_timeline


def serve(ingestor, body):
    """Run ``body(port)`` against a live server on an ephemeral port."""

    async def run():
        async with IngestServer(ingestor, KEY, port=0) as server:
            return await body(server.port)

    return asyncio.run(run())


# -- dedup bookkeeping -----------------------------------------------------


@settings(max_examples=200)
@given(st.lists(st.integers(0, 60), max_size=200))
def test_seq_tracker_matches_set_membership(seqs):
    tr = SeqTracker()
    applied = set()
    for s in seqs:
        assert tr.seen(s) == (s in applied)
        if s not in applied:
            tr.add(s)
            applied.add(s)
    # the contiguous prefix is compacted away
    assert tr.upto == next(i for i in range(len(applied) + 1) if i not in applied) - 1
    assert all(s > tr.upto for s in tr.pending)


def test_ingestor_rejects_seq_beyond_window():
    ing = Ingestor(window=4)
    ing.apply_batch("s", 0, [[T0, 50_000]])
    with pytest.raises(protocol.ProtocolError) as info:
        ing.apply_batch("s", 10, [[T0 + 1, 50_000]])
    assert info.value.code == "SEQ"
    assert ing.store.frame_count("s") == 1


# -- sessions --------------------------------------------------------------


def test_wrong_key_gets_auth_error_and_close():
    async def body(port):
        s = await RawSession.connect(port, "s1", key="nope")
        reply = await s.recv()
        assert reply["t"] == "err" and reply["code"] == "AUTH"
        assert await s.closed()

    ing = Ingestor()
    serve(ing, body)
    assert ing.store.frame_count() == 0


def test_malformed_json_gets_proto_error_and_close():
    async def body(port):
        s = await RawSession.connect(port, "s1")
        await s.send(b'{"t": "batch", "seq": \n')
        reply = await s.recv()
        assert reply == {"t": "err", "code": "PROTO", "detail": reply["detail"]}
        assert await s.closed()

    serve(Ingestor(), body)


def test_data_before_hello_is_a_protocol_error():
    async def body(port):
        s = await RawSession.connect(port)
        reply = await s.call(minute_batch("s1", 0, T0))
        assert reply["code"] == "PROTO"

    serve(Ingestor(), body)


def test_same_batch_twice_two_acks_one_copy(tmp_path):
    ing = Ingestor(log_path=tmp_path / "log.ndjson")
    msg = minute_batch("s1", 0, T0)

    async def body(port):
        s = await RawSession.connect(port, "s1")
        assert await s.call(msg) == {"t": "ack", "seq": 0}
        assert await s.call(msg) == {"t": "ack", "seq": 0}
        s.close()

    serve(ing, body)
    ing.close()
    assert ing.store.frame_count("s1") == 60
    records = [json.loads(x) for x in (tmp_path / "log.ndjson").read_text().splitlines()]
    assert len(records) == 1
    assert records[0]["frames"] == msg["frames"] and "rx" in records[0]


def test_out_of_range_level_rejected_and_session_continues():
    ing = Ingestor()

    async def body(port):
        s = await RawSession.connect(port, "s1")
        bad = minute_batch("s1", 0, T0)
        bad["frames"][7][1] = 130_000
        reply = await s.call(bad)
        assert reply["t"] == "err" and reply["code"] == "RANGE"
        assert await s.call(minute_batch("s1", 0, T0)) == {"t": "ack", "seq": 0}
        s.close()

    serve(ing, body)
    assert ing.store.frame_count("s1") == 60


@pytest.mark.parametrize(
    "mutate",
    [
        lambda m: m.update(frames=[[T0, 50_000], [T0, 50_001]]),  # not increasing
        lambda m: m.update(frames=[[T0, 50.5]]),  # float level
        lambda m: m.update(frames=[[T0, True]]),  # bool is not an int here
        lambda m: m.update(seq=-1),
        lambda m: m.update(sensor="someone-else"),
        lambda m: m.update(t="frames"),
    ],
)
def test_invalid_batches_close_the_session(mutate):
    msg = minute_batch("s1", 0, T0)
    mutate(msg)
    ing = Ingestor()

    async def body(port):
        s = await RawSession.connect(port, "s1")
        reply = await s.call(msg)
        assert reply["t"] == "err" and reply["code"] == "PROTO"
        assert await s.closed()

    serve(ing, body)
    assert ing.store.frame_count() == 0


def test_overlapping_frames_under_new_seq_are_refused():
    ing = Ingestor()

    async def body(port):
        s = await RawSession.connect(port, "s1")
        assert (await s.call(minute_batch("s1", 0, T0)))["t"] == "ack"
        reply = await s.call(minute_batch("s1", 1, T0))
        assert reply["code"] == "PROTO"

    serve(ing, body)
    assert ing.store.frame_count("s1") == 60


def test_sessions_are_isolated():
    ing = Ingestor()

    async def body(port):
        good = await RawSession.connect(port, "s1")
        bad = await RawSession.connect(port, "s2")
        assert (await good.call(minute_batch("s1", 0, T0)))["t"] == "ack"
        await bad.send(b"\xff\xfe garbage\n")
        assert (await bad.recv())["code"] == "PROTO"
        assert (await good.call(minute_batch("s1", 1, T0 + 60)))["t"] == "ack"
        good.close()

    serve(ing, body)
    assert ing.store.frame_count("s1") == 120
    assert ing.store.frame_count("s2") == 0


def test_snippet_records_acked_and_logged_once(tmp_path):
    ing = Ingestor(log_path=tmp_path / "log.ndjson")
    snip = protocol.snippet("s1", 0, T0 + 5, "ab" * 32, ["Jackhammer"])

    async def body(port):
        s = await RawSession.connect(port, "s1")
        assert await s.call(snip) == {"t": "ack", "sid": 0}
        assert await s.call(snip) == {"t": "ack", "sid": 0}
        s.close()

    serve(ing, body)
    ing.close()
    assert len(ing.snippets) == 1
    again = Ingestor()
    replay_into(again, tmp_path / "log.ndjson")
    assert [r["digest"] for r in again.snippets] == ["ab" * 32]


def test_acked_batch_is_already_in_the_log(tmp_path):
    log = tmp_path / "log.ndjson"
    ing = Ingestor(log_path=log)

    async def body(port):
        s = await RawSession.connect(port, "s1")
        await s.call(minute_batch("s1", 0, T0))
        # read the file while the server still holds it open
        return replay(log)

    store = serve(ing, body)
    assert store.frame_count("s1") == 60
    ing.close()


# -- replay ----------------------------------------------------------------


def test_replay_empty_log(tmp_path):
    log = tmp_path / "log.ndjson"
    log.write_text("")
    assert replay(log).state_digest() == LatticeStore().state_digest()


def test_replay_single_batch_counts(tmp_path):
    log = tmp_path / "log.ndjson"
    with Ingestor(log_path=log) as ing:
        ing.apply_batch("s1", 0, minute_batch("s1", 0, T0)["frames"])
    store = replay(log)
    assert store.node("s1", LatticeLevel.MINUTE, T0).count == 60


def test_replay_strict_reports_line_and_lenient_skips(tmp_path):
    log = tmp_path / "log.ndjson"
    with Ingestor(log_path=log) as ing:
        ing.apply_batch("s1", 0, minute_batch("s1", 0, T0)["frames"])
        ing.apply_batch("s1", 1, minute_batch("s1", 1, T0 + 60)["frames"])
    lines = log.read_text().splitlines()
    log.write_text("\n".join([lines[0], '{"t":"batch","sensor":', lines[1]]) + "\n")
    with pytest.raises(LogCorruptError) as info:
        replay(log)
    assert info.value.lineno == 2
    ing = Ingestor()
    assert replay_into(ing, log, strict=False) == 1
    assert ing.store.frame_count("s1") == 120


def test_resume_keeps_dedup_state(tmp_path):
    log = tmp_path / "log.ndjson"
    with Ingestor(log_path=log) as ing:
        ing.apply_batch("s1", 0, minute_batch("s1", 0, T0)["frames"])
    with Ingestor.resume(log) as ing:
        assert not ing.apply_batch("s1", 0, minute_batch("s1", 0, T0)["frames"])
        assert ing.apply_batch("s1", 1, minute_batch("s1", 1, T0 + 60)["frames"])
    assert replay(log).frame_count("s1") == 120


def fleet_through(spec, tmp_path, drop=0.0, kill=0.0, seed=0):
    log = tmp_path / "log.ndjson"
    ing = Ingestor(log_path=log)
    timeline = generate_timeline(spec)
    policy = RetryPolicy(base=0.001, cap=0.02, ack_timeout=0.1, max_attempts=200)

    async def run():
        async with IngestServer(ing, KEY, port=0) as server:
            async with FaultProxy("127.0.0.1", server.port, drop, kill, seed) as proxy:
                await run_fleet(spec, Uplink("127.0.0.1", proxy.port, KEY), timeline, policy)
                return proxy

    proxy = asyncio.run(run())
    ing.close()
    return ing, proxy, log


def generated_frames(spec):
    timeline = generate_timeline(spec)
    out = Counter()
    for i, s in enumerate(spec.sensors):
        for m in node_messages(spec, i, timeline):
            if isinstance(m, Batch):
                out.update((s.id, t, lv) for t, lv in m.frames)
    return out


def stored_frames(store):
    out = Counter()
    for s in store.sensors:
        out.update((s, t, lv) for t, lv in store.frames(s))
    return out


def test_live_and_replay_digests_match(tmp_path):
    spec = small_spec(n_sensors=2, duration=3600, snippet_rate=6.0)
    ing, _, log = fleet_through(spec, tmp_path)
    assert stored_frames(ing.store) == generated_frames(spec)
    assert replay(log).state_digest() == ing.store.state_digest()


def test_exactly_once_under_faults(tmp_path):
    spec = small_spec(n_sensors=2, duration=1200, snippet_rate=10.0)
    ing, proxy, log = fleet_through(spec, tmp_path, drop=0.3, kill=0.1, seed=11)
    assert proxy.acks_dropped > 0 and proxy.kills > 0
    assert ing.duplicates > 0
    assert stored_frames(ing.store) == generated_frames(spec)
    assert replay(log).state_digest() == ing.store.state_digest()
