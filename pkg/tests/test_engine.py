"""Engine behavior: message classification, the trivia pipelines, callback
ordering guarantees, round chaining, and reorder robustness."""

import struct

import pytest

from fedforge.engine import (
    Action,
    CallbackPair,
    EngineError,
    RoundState,
    fl_centralized,
    fl_decentralized,
    handle_incoming,
)
from fedforge.logreg import (
    ModelVector,
    cb_cent_client,
    cb_cent_server,
    cb_decent_server,
    gen_synthetic,
    partition_horizontal,
    serialize_model,
    split,
)
from fedforge.sim import ExplicitSchedule, FifoSchedule, SeededSchedule, run_nodes, sim_transport
from fedforge.transport import Message, ProtocolError

F64 = struct.Struct(">d")


def pack(*values):
    return b"".join(F64.pack(v) for v in values)


def unpack1(payload):
    return F64.unpack(payload)[0]


# -- handle_incoming classification table ---------------------------------


def fresh_state(iteration=0, iterations=1, phase1=(1, 2), updates=(1, 2)):
    return RoundState(iteration, iterations, frozenset(phase1), frozenset(updates))


def test_phase1_in_phase2_is_client_duty():
    state = fresh_state()
    assert handle_incoming(state, Message(1, 1, b""), 2) is Action.PROCESS_CLIENT_DUTY


def test_phase2_in_phase2_is_buffered():
    state = fresh_state()
    assert handle_incoming(state, Message(2, 2, b""), 2) is Action.BUFFER_UPDATE


def test_phase2_in_phase3_is_processed():
    state = fresh_state()
    assert handle_incoming(state, Message(2, 1, b""), 3) is Action.PROCESS_UPDATE


def test_duplicate_phase1_last_round_rejected():
    state = fresh_state()
    state.phase1_done.add(1)
    with pytest.raises(ProtocolError, match="duplicate phase-1"):
        handle_incoming(state, Message(1, 1, b""), 2)


def test_phase1_from_finished_peer_held_when_rounds_remain():
    state = fresh_state(iteration=0, iterations=2)
    state.phase1_done.add(1)
    assert handle_incoming(state, Message(1, 1, b""), 2) is Action.HOLD_NEXT_ROUND
    assert handle_incoming(state, Message(1, 1, b""), 3) is Action.HOLD_NEXT_ROUND
    state.held_next.add(1)  # a second head start is impossible, hence illegal
    with pytest.raises(ProtocolError, match="duplicate phase-1"):
        handle_incoming(state, Message(1, 1, b""), 2)


def test_phase1_from_unexpected_src_rejected():
    state = fresh_state(phase1=(1,))
    with pytest.raises(ProtocolError, match="unexpected phase-1"):
        handle_incoming(state, Message(1, 2, b""), 2)


def test_unserved_phase1_in_phase3_rejected():
    state = fresh_state()
    with pytest.raises(ProtocolError, match="serving window"):
        handle_incoming(state, Message(1, 1, b""), 3)


def test_update_from_unexpected_src_rejected():
    state = fresh_state(updates=(1,))
    with pytest.raises(ProtocolError, match="unexpected update"):
        handle_incoming(state, Message(2, 2, b""), 3)


def test_duplicate_update_rejected():
    state = fresh_state()
    state.updates_seen.add(1)
    with pytest.raises(ProtocolError, match="duplicate update"):
        handle_incoming(state, Message(2, 1, b""), 2)


def test_no_messages_expected_in_phase1():
    with pytest.raises(ValueError):
        handle_incoming(fresh_state(), Message(1, 1, b""), 1)


# -- trivia pipelines over the simulated transport ------------------------


def first_update_server(private, updates):
    return updates[0]


def echo_client(local, private, payload):
    return payload


def mean_server(private, updates):
    values = [unpack1(u) for u in updates]
    return pack(sum(values) / len(values))


def run_centralized(n, callbacks, locals_, privates=None, iterations=1, schedule=None):
    handles = sim_transport(n, schedule)
    privates = privates or [None] * n

    def node(handle):
        i = handle.config.node_id
        return fl_centralized(handle, callbacks, locals_[i], privates[i], iterations)

    return run_nodes(handles, node)


def run_decentralized(n, callbacks, locals_, privates=None, iterations=1, schedule=None):
    handles = sim_transport(n, schedule)
    privates = privates or [None] * n

    def node(handle):
        i = handle.config.node_id
        return fl_decentralized(handle, callbacks, locals_[i], privates[i], iterations)

    return run_nodes(handles, node)


def test_centralized_identity_pipeline():
    callbacks = CallbackPair(server_fn=first_update_server, client_fn=echo_client)
    results = run_centralized(2, callbacks, [b"server-model", b"client-junk"])
    assert results[0] == b"server-model"  # round-tripped unchanged
    assert results[1] == b"server-model"  # client stored what it sent


def test_centralized_mean_of_identical_values():
    callbacks = CallbackPair(server_fn=mean_server, client_fn=echo_client)
    results = run_centralized(3, callbacks, [pack(4.0), pack(0.0), pack(0.0)])
    assert [unpack1(r) for r in results] == [4.0, 4.0, 4.0]


def own_local_client(local, private, payload):
    return local


def self_inclusive_mean_server(private, updates):
    values = [unpack1(u) for u in updates] + [unpack1(private)]
    return pack(sum(values) / len(values))


def test_decentralized_symmetric_mean():
    """Every node ends with the mean of all initial payloads.

    The client callback contributes the node's own snapshot and the server
    callback appends its own initial value, mirroring how the case-study
    aggregation folds the own-model update into the received ones.
    """
    callbacks = CallbackPair(server_fn=self_inclusive_mean_server,
                             client_fn=own_local_client)
    locals_ = [pack(1.0), pack(5.0)]
    results = run_decentralized(2, callbacks, locals_, privates=locals_)
    assert [unpack1(r) for r in results] == [3.0, 3.0]

    locals3 = [pack(0.0), pack(3.0), pack(12.0)]
    results3 = run_decentralized(3, callbacks, locals3, privates=locals3)
    assert [unpack1(r) for r in results3] == [5.0, 5.0, 5.0]


def test_centralized_rounds_chain():
    def doubling_client(local, private, payload):
        return pack(unpack1(payload) * 2.0)

    callbacks = CallbackPair(server_fn=mean_server, client_fn=doubling_client)
    results = run_centralized(2, callbacks, [pack(4.0), pack(0.0)], iterations=2)
    assert unpack1(results[0]) == 16.0  # 4 -> 8 -> 16
    assert results[1] == results[0]  # client's last update is the same value


# -- logreg referent equality ---------------------------------------------


def synthetic_partitions(k):
    ds = gen_synthetic(seed=11, n=120)
    data = split(ds, 0.20, seed=42)
    return partition_horizontal(data.X_train, data.y_train, k)


def referent_aggregate(parts):
    zero = serialize_model(ModelVector(0.0, 0.0))
    updates = [cb_cent_client(zero, p, zero) for p in parts]
    return cb_cent_server(None, updates)


def test_centralized_matches_sequential_referent():
    parts = synthetic_partitions(2)
    ref = referent_aggregate(parts)
    zero = serialize_model(ModelVector(0.0, 0.0))
    callbacks = CallbackPair(server_fn=cb_cent_server, client_fn=cb_cent_client)
    results = run_centralized(3, callbacks, [zero] * 3, privates=[None, *parts])
    assert results[0] == ref  # bit-for-bit


def test_decentralized_matches_sequential_referent():
    parts = synthetic_partitions(2)
    ref = referent_aggregate(parts)
    zero = serialize_model(ModelVector(0.0, 0.0))
    callbacks = CallbackPair(server_fn=cb_decent_server, client_fn=cb_cent_client)
    results = run_decentralized(2, callbacks, [zero] * 2, privates=list(parts))
    assert results == [ref, ref]


# -- callback ordering and stability guarantees ---------------------------


def tagging_client(local, private, payload):
    return private  # private data holds a per-node tag payload


def test_server_sees_updates_sorted_by_src():
    """Each reply carries its sender's id as the payload value, so a sorted
    update list is exactly an ascending-by-src list, whatever the arrival
    order a seeded schedule produced."""
    seen = []

    def recording_server(private, updates):
        seen.append([unpack1(u) for u in updates])
        return updates[0]

    tags = [pack(float(i)) for i in range(4)]
    callbacks = CallbackPair(server_fn=recording_server, client_fn=tagging_client)
    for seed in range(10):
        seen.clear()
        run_decentralized(4, callbacks, [pack(0.0)] * 4,
                          privates=tags, schedule=SeededSchedule(seed))
        assert len(seen) == 4
        # One server call per node; each sees every id but its own, ascending.
        absents = set()
        for values in seen:
            assert values == sorted(values), f"unsorted updates, seed {seed}"
            (absent,) = set(range(4)) - set(int(v) for v in values)
            absents.add(absent)
        assert absents == {0, 1, 2, 3}


class RecordingTransport:
    """Delegating wrapper that logs every (dst, message) pair sent."""

    def __init__(self, inner):
        self.inner = inner
        self.sent = []

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def send(self, dst, msg):
        self.sent.append((dst, msg))
        self.inner.send(dst, msg)


def test_client_stores_exactly_what_it_sent():
    handles = sim_transport(2)
    wrapped = RecordingTransport(handles[1])
    callbacks = CallbackPair(server_fn=mean_server,
                             client_fn=lambda l, p, m: pack(unpack1(m) + 1.5))

    def node(handle):
        if handle.config.node_id == 0:
            return fl_centralized(handle, callbacks, pack(2.0), None, 2)
        return fl_centralized(wrapped, callbacks, pack(0.0), None, 2)

    results = run_nodes([handles[0], wrapped], node)
    phase2_payloads = [m.payload for _, m in wrapped.sent if m.phase == 2]
    assert len(phase2_payloads) == 2
    assert results[1] == phase2_payloads[-1]
    assert unpack1(results[0]) == 5.0  # 2 -> 3.5 -> 5


def test_decentralized_read_stability():
    snapshots = {}

    def recording_client(local, private, payload):
        snapshots.setdefault(private, []).append(local)
        return local

    callbacks = CallbackPair(server_fn=self_inclusive_mean_server,
                             client_fn=recording_client)
    locals_ = [pack(0.0), pack(3.0), pack(12.0)]

    handles = sim_transport(3)

    def node(handle):
        i = handle.config.node_id
        return fl_decentralized(handle, callbacks, locals_[i], locals_[i], 2)

    run_nodes(handles, node)
    for tag, seen in snapshots.items():
        assert len(seen) == 4  # 2 peers x 2 rounds
        first_round, second_round = seen[:2], seen[2:]
        assert len(set(first_round)) == 1, "snapshot changed mid-round"
        assert len(set(second_round)) == 1
        assert first_round[0] == tag  # round 1 broadcasts the initial value
        assert second_round[0] != tag  # round 2 broadcasts the aggregate


# -- message counts -------------------------------------------------------


@pytest.mark.parametrize("iterations", [1, 3])
def test_centralized_message_count(iterations):
    callbacks = CallbackPair(server_fn=mean_server, client_fn=echo_client)
    handles = sim_transport(3)

    def node(handle):
        i = handle.config.node_id
        return fl_centralized(handle, callbacks, pack(float(i)), None, iterations)

    run_nodes(handles, node)
    total = sum(h.stats.data_sent for h in handles)
    assert total == 4 * iterations  # 2(n-1) per round
    assert sum(h.stats.data_received for h in handles) == total


@pytest.mark.parametrize("iterations", [1, 3])
def test_decentralized_message_count(iterations):
    callbacks = CallbackPair(server_fn=self_inclusive_mean_server,
                             client_fn=own_local_client)
    handles = sim_transport(3)
    locals_ = [pack(float(i)) for i in range(3)]

    def node(handle):
        i = handle.config.node_id
        return fl_decentralized(handle, callbacks, locals_[i], locals_[i], iterations)

    run_nodes(handles, node)
    total = sum(h.stats.data_sent for h in handles)
    assert total == 12 * iterations  # 2 n (n-1) per round
    assert sum(h.stats.data_received for h in handles) == total


# -- run-ahead holding, forced deterministically --------------------------

SUM_CALLBACKS = CallbackPair(
    server_fn=lambda p, updates: pack(sum(unpack1(u) for u in updates)),
    client_fn=echo_client,
)
# Echo clients + sum server double each node's value every round:
# [0, 1, 2] -> [0, 2, 4] -> [0, 4, 8].
SUM_EXPECTED = [0.0, 4.0, 8.0]

# Node 1 finishes round 1 first and its round-2 broadcast reaches node 0
# while node 0 is still in round-1 phase 2 (last entry).
HOLD_IN_PHASE2 = [
    (1, 0, 0), (0, 1, 0), (2, 1, 0), (1, 2, 0),
    (0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 0, 2),
]
# Same idea, but node 0 has served everyone and sits in phase 3 when node
# 1's round-2 broadcast arrives.
HOLD_IN_PHASE3 = [
    (1, 0, 0), (2, 0, 0), (0, 1, 0), (2, 1, 0), (1, 2, 0),
    (0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 0, 2),
]


@pytest.mark.parametrize("order", [HOLD_IN_PHASE2, HOLD_IN_PHASE3],
                         ids=["held-in-phase2", "held-in-phase3"])
def test_next_round_broadcast_held_and_served(order):
    schedule = ExplicitSchedule(order)
    handles = sim_transport(3, schedule)
    locals_ = [pack(float(i)) for i in range(3)]

    def node(handle):
        i = handle.config.node_id
        return fl_decentralized(handle, SUM_CALLBACKS, locals_[i], None, 2)

    results = run_nodes(handles, node)
    assert schedule.entries_consumed == len(order), "forced prefix not exercised"
    assert [unpack1(r) for r in results] == SUM_EXPECTED


def test_multi_iteration_reorder_invariance():
    locals_ = [pack(float(i)) for i in range(3)]

    def node_fn(handle):
        i = handle.config.node_id
        return fl_decentralized(handle, SUM_CALLBACKS, locals_[i], None, 3)

    reference = run_nodes(sim_transport(3, FifoSchedule()), node_fn)
    for seed in range(20):
        assert run_nodes(sim_transport(3, SeededSchedule(seed)), node_fn) == reference


# -- failure and validation paths -----------------------------------------


def test_missing_server_surfaces_engine_error():
    handles = sim_transport(2)
    callbacks = CallbackPair(server_fn=mean_server, client_fn=echo_client)

    def node(handle):
        if handle.config.node_id == 0:
            return None  # the server never shows up
        return fl_centralized(handle, callbacks, pack(0.0), None)

    with pytest.raises(EngineError, match="iteration 0, phase 2"):
        run_nodes(handles, node)


def test_run_validation():
    callbacks = CallbackPair(server_fn=mean_server, client_fn=echo_client)
    (only,) = sim_transport(1)
    with pytest.raises(ValueError, match="at least 2 nodes"):
        fl_centralized(only, callbacks, b"", None)
    only.close()
    a, b = sim_transport(2)
    with pytest.raises(ValueError, match="iterations"):
        fl_decentralized(a, callbacks, b"", None, iterations=0)
    a.close()
    b.close()
