"""Generic federated-learning rounds over a message transport.

Two executors share one wire discipline.  ``fl_centralized`` runs a star:
one server broadcasts its model payload, every client trains and replies,
the server aggregates.  ``fl_decentralized`` runs a clique: every node
broadcasts, serves every peer's broadcast, and aggregates the replies to
its own.

Both follow the same three-phase round:

* phase 1 - send localData to the relevant peers (ascending id order),
* phase 2 - for each incoming broadcast, reply with
  ``client_fn(localData, privateData, payload)``,
* phase 3 - collect the replies and set
  ``localData = server_fn(privateData, updates)``.

What the callbacks see is deterministic regardless of network timing:
``client_fn`` always reads the localData snapshot taken at round start, and
``server_fn`` always receives updates sorted by ascending source id.  A
reply that arrives while the node is still serving broadcasts is buffered
until phase 3.  localData changes only at the end of phase 3; a client in
the star additionally adopts its own update, but only after the reply is
on the wire.

Rounds after the first reuse the previous round's output as the new
broadcast payload.  The executors block indefinitely on missing peers;
deadline enforcement belongs to the process launcher.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .errors import FedforgeError
from .transport import Message, ProtocolError, TransportError

# client_fn(local_data, private_data, payload) -> update payload
ClientFn = Callable[[bytes, object, bytes], bytes]
# server_fn(private_data, updates) -> new local_data payload
ServerFn = Callable[[object, list[bytes]], bytes]


class EngineError(FedforgeError):
    """A round could not complete; the message names iteration and phase."""


@dataclass(frozen=True)
class CallbackPair:
    """The two application plug-ins a round is parameterized by."""

    server_fn: ServerFn
    client_fn: ClientFn


class Action(enum.Enum):
    """What to do with one incoming message, given the node's phase."""

    PROCESS_CLIENT_DUTY = "process-client-duty"
    BUFFER_UPDATE = "buffer-update"
    PROCESS_UPDATE = "process-update"
    HOLD_NEXT_ROUND = "hold-next-round"


@dataclass
class RoundState:
    """Per-round bookkeeping that drives message classification.

    ``expected_phase1``/``expected_updates`` are fixed by the node's role;
    the mutable sets below record which sources have been served already.
    """

    iteration: int
    iterations: int
    expected_phase1: frozenset[int]
    expected_updates: frozenset[int]
    phase1_done: set[int] = field(default_factory=set)
    updates_seen: set[int] = field(default_factory=set)
    held_next: set[int] = field(default_factory=set)


def handle_incoming(state: RoundState, msg: Message, current_phase: int) -> Action:
    """Classify one received message; raises on protocol violations.

    A phase-1 broadcast from a source already served this round is legal in
    exactly one situation: the sender finished the round first and opened
    the next one.  Per-pair FIFO ordering means its reply to us was
    delivered before that broadcast, and it cannot get further ahead than
    one round because finishing again would require our own reply.  Such a
    broadcast is held and served at the start of the next round; when no
    next round exists it is a duplicate.
    """
    if current_phase not in (2, 3):
        raise ValueError(f"no messages are expected in phase {current_phase}")
    if msg.phase == 1:
        if msg.src in state.phase1_done:
            last_round = state.iteration + 1 >= state.iterations
            if last_round or msg.src in state.held_next:
                raise ProtocolError(
                    f"duplicate phase-1 broadcast from node {msg.src} "
                    f"in iteration {state.iteration}"
                )
            return Action.HOLD_NEXT_ROUND
        if msg.src not in state.expected_phase1:
            raise ProtocolError(f"unexpected phase-1 broadcast from node {msg.src}")
        if current_phase == 3:
            raise ProtocolError(
                f"phase-1 broadcast from node {msg.src} after its serving window"
            )
        return Action.PROCESS_CLIENT_DUTY
    if msg.src not in state.expected_updates:
        raise ProtocolError(f"unexpected update from node {msg.src}")
    if msg.src in state.updates_seen:
        raise ProtocolError(
            f"duplicate update from node {msg.src} in iteration {state.iteration}"
        )
    if current_phase == 2:
        return Action.BUFFER_UPDATE
    return Action.PROCESS_UPDATE


def fl_centralized(transport, callbacks: CallbackPair, local_data: bytes,
                   private_data, iterations: int = 1) -> bytes:
    """Run the star-topology rounds; returns this node's final localData.

    The node whose id equals ``srv_id`` acts as server and returns the
    aggregate; every other node acts as client and returns its last update.
    All nodes must call this with the same node count, server id, and
    iteration count.
    """
    cfg = transport.config
    _check_run(cfg, iterations)
    if cfg.node_id == cfg.srv_id:
        return _centralized_server(transport, callbacks, local_data,
                                   private_data, iterations)
    return _centralized_client(transport, callbacks, local_data,
                               private_data, iterations)


def fl_decentralized(transport, callbacks: CallbackPair, local_data: bytes,
                     private_data, iterations: int = 1) -> bytes:
    """Run the clique-topology rounds; returns this node's final localData.

    Every node plays both roles: it broadcasts its own localData, serves
    every peer's broadcast, and aggregates the replies to its own.  The
    configured server id is ignored.
    """
    _check_run(transport.config, iterations)
    return _decentralized_node(transport, callbacks, local_data,
                               private_data, iterations)


def _check_run(cfg, iterations: int) -> None:
    if cfg.n_nodes < 2:
        raise ValueError(f"a run needs at least 2 nodes, got {cfg.n_nodes}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")


def _recv(transport, iteration: int, phase: int) -> Message:
    try:
        return transport.recv()
    except TransportError as exc:
        raise EngineError(
            f"iteration {iteration}, phase {phase}: transport failed: {exc}"
        ) from exc


def _send(transport, dst: int, msg: Message, iteration: int, phase: int) -> None:
    try:
        transport.send(dst, msg)
    except TransportError as exc:
        raise EngineError(
            f"iteration {iteration}, phase {phase}: send to node {dst} "
            f"failed: {exc}"
        ) from exc


def _centralized_server(transport, callbacks, local_data, private_data,
                        iterations):
    cfg = transport.config
    peers = cfg.peers()
    for it in range(iterations):
        for dst in peers:
            _send(transport, dst, Message(1, cfg.node_id, local_data), it, 1)
        # The server has no serving duty, so it skips straight to collection.
        state = RoundState(it, iterations, frozenset(), frozenset(peers))
        updates: dict[int, bytes] = {}
        while len(updates) < len(peers):
            msg = _recv(transport, it, 3)
            handle_incoming(state, msg, current_phase=3)
            state.updates_seen.add(msg.src)
            updates[msg.src] = msg.payload
        ordered = [updates[src] for src in sorted(updates)]
        local_data = callbacks.server_fn(private_data, ordered)
    return local_data


def _centralized_client(transport, callbacks, local_data, private_data,
                        iterations):
    cfg = transport.config
    for it in range(iterations):
        state = RoundState(it, iterations, frozenset({cfg.srv_id}), frozenset())
        msg = _recv(transport, it, 2)
        handle_incoming(state, msg, current_phase=2)
        update = callbacks.client_fn(local_data, private_data, msg.payload)
        _send(transport, cfg.srv_id, Message(2, cfg.node_id, update), it, 2)
        local_data = update  # adopt only after the reply is on the wire
    return local_data


def _decentralized_node(transport, callbacks, local_data, private_data,
                        iterations):
    cfg = transport.config
    peers = cfg.peers()
    expected = frozenset(peers)
    held: list[tuple[int, bytes]] = []
    for it in range(iterations):
        snapshot = local_data
        state = RoundState(it, iterations, expected, expected)
        for dst in peers:
            _send(transport, dst, Message(1, cfg.node_id, snapshot), it, 1)
        buffered: list[tuple[int, bytes]] = []

        def serve(src: int, payload: bytes) -> None:
            update = callbacks.client_fn(snapshot, private_data, payload)
            _send(transport, src, Message(2, cfg.node_id, update), it, 2)
            state.phase1_done.add(src)

        # Broadcasts held from the previous round are served first.
        for src, payload in held:
            serve(src, payload)
        held = []
        while len(state.phase1_done) < len(peers):
            msg = _recv(transport, it, 2)
            action = handle_incoming(state, msg, current_phase=2)
            if action is Action.PROCESS_CLIENT_DUTY:
                serve(msg.src, msg.payload)
            elif action is Action.BUFFER_UPDATE:
                state.updates_seen.add(msg.src)
                buffered.append((msg.src, msg.payload))
            elif action is Action.HOLD_NEXT_ROUND:
                state.held_next.add(msg.src)
                held.append((msg.src, msg.payload))
        updates: dict[int, bytes] = dict(buffered)
        while len(updates) < len(peers):
            msg = _recv(transport, it, 3)
            action = handle_incoming(state, msg, current_phase=3)
            if action is Action.PROCESS_UPDATE:
                state.updates_seen.add(msg.src)
                updates[msg.src] = msg.payload
            elif action is Action.HOLD_NEXT_ROUND:
                state.held_next.add(msg.src)
                held.append((msg.src, msg.payload))
        ordered = [updates[src] for src in sorted(updates)]
        local_data = callbacks.server_fn(private_data, ordered)
    return local_data
