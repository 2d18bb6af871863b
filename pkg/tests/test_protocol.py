"""Client/relay state machines: toy traces, failure paths, purity."""

import random

import pytest

from onionkep import (
    Cell,
    CellCommand,
    RelaySubcommand,
    chunk_decrypt,
    key_digest,
    keypair_from_secrets,
    reduce_key,
)
from onionkep.errors import NotReady
from onionkep.onioncrypt import (
    build_create_payload,
    build_created_payload,
    decode_relay_frame,
    parse_create_payload,
)
from onionkep.protocol import (
    DeliverLocal,
    NodeState,
    Phase,
    ProtocolConfig,
    SendCell,
    TearDown,
    client_create,
    client_extend,
    client_handle_cell,
    client_send_data,
    node_handle_cell,
    node_reply_data,
)
from conftest import ScriptedRng


@pytest.fixture
def bob_node(toy_params, toy_bob):
    return NodeState(name="B", params=toy_params, keypair=toy_bob)


class TestClientCreate:
    def test_toy_payload(self, toy_params, toy_bob):
        # Ephemeral forced to the toy Alice secrets: V=12, P=40, Q=28.
        state, send = client_create(toy_params, 9, "B", toy_bob.public,
                                    ScriptedRng([3, 13]))
        assert send.link == "B"
        assert send.cell.command == CellCommand.CREATE
        assert send.cell.circ_id == 9
        assert parse_create_payload(send.cell.payload, 1) == (12, 40, 28)
        assert state.phase == Phase.CREATING

    def test_independent_ephemerals(self, toy_params, toy_bob):
        rng = random.Random(1)
        _, s1 = client_create(toy_params, 1, "B", toy_bob.public, rng)
        _, s2 = client_create(toy_params, 1, "B", toy_bob.public, rng)
        assert s1.cell.payload != s2.cell.payload


class TestNodeHandleCreate:
    def test_toy_response(self, toy_params, toy_bob, bob_node):
        cell = Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1))
        state, actions = node_handle_cell(bob_node, "A", cell)
        [send] = actions
        assert send.cell.command == CellCommand.CREATED
        v, digest = send.cell.payload[0], send.cell.payload[1:]
        assert v == 28
        assert digest == key_digest(reduce_key(toy_params, 36))
        assert [e.session.raw for e in state.entries] == [36]

    def test_malformed_handshake_destroys(self, bob_node):
        # V=35 strips to a value not divisible by 4.
        cell = Cell(9, CellCommand.CREATE, build_create_payload(35, 40, 28, 1))
        state, actions = node_handle_cell(bob_node, "A", cell)
        assert state.entries == ()
        assert any(isinstance(a, TearDown) for a in actions)
        assert any(isinstance(a, SendCell)
                   and a.cell.command == CellCommand.DESTROY for a in actions)


class TestClientHandleCreated:
    def _creating_state(self, toy_params, toy_bob):
        state, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                 ScriptedRng([3, 13]))
        return state

    def test_confirms_on_valid_response(self, toy_params, toy_bob):
        state = self._creating_state(toy_params, toy_bob)
        digest = key_digest(reduce_key(toy_params, 36))
        cell = Cell(9, CellCommand.CREATED, build_created_payload(28, digest, 1))
        state, actions = client_handle_cell(state, cell)
        assert state.phase == Phase.READY
        assert state.hops[0].confirmed
        assert state.hops[0].session.raw == 36
        assert actions == []

    def test_tampered_response_fails(self, toy_params, toy_bob):
        state = self._creating_state(toy_params, toy_bob)
        digest = key_digest(reduce_key(toy_params, 36))
        cell = Cell(9, CellCommand.CREATED, build_created_payload(29, digest, 1))
        state, actions = client_handle_cell(state, cell)
        assert state.phase == Phase.FAILED
        assert any(isinstance(a, TearDown) and "CircuitIntegrityFailure" in a.reason
                   for a in actions)

    def test_wrong_digest_fails(self, toy_params, toy_bob):
        state = self._creating_state(toy_params, toy_bob)
        cell = Cell(9, CellCommand.CREATED, build_created_payload(28, b"\x00" * 32, 1))
        state, actions = client_handle_cell(state, cell)
        assert state.phase == Phase.FAILED

    def test_unknown_circuit_ignored(self, toy_params, toy_bob):
        state = self._creating_state(toy_params, toy_bob)
        cell = Cell(77, CellCommand.CREATED, b"")
        new_state, actions = client_handle_cell(state, cell)
        assert new_state == state
        assert actions == []


class TestClientExtend:
    def _ready_state(self, toy_params, toy_bob):
        state, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                 ScriptedRng([3, 13]))
        digest = key_digest(reduce_key(toy_params, 36))
        cell = Cell(9, CellCommand.CREATED, build_created_payload(28, digest, 1))
        state, _ = client_handle_cell(state, cell)
        return state

    def test_single_layer_for_first_extension(self, toy_params, toy_bob):
        state = self._ready_state(toy_params, toy_bob)
        charlie = keypair_from_secrets(toy_params, 7, 17)
        state, send = client_extend(state, "C", charlie.public, ScriptedRng([4, 19]))
        assert state.phase == Phase.EXTENDING
        assert send.link == "B"
        # Exactly one layer: peeling with the entry key yields the frame.
        frame = decode_relay_frame(
            chunk_decrypt(send.cell.payload, state.hops[0].session, toy_params))
        assert frame.subcommand == RelaySubcommand.EXTEND

    def test_extend_requires_ready(self, toy_params, toy_bob):
        state, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                 ScriptedRng([3, 13]))
        with pytest.raises(NotReady):
            client_extend(state, "C", toy_bob.public, ScriptedRng([4, 19]))

    def test_send_data_requires_ready(self, toy_params, toy_bob):
        state, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                 ScriptedRng([3, 13]))
        with pytest.raises(NotReady):
            client_send_data(state, 1, b"hi")


class TestNodeRelay:
    def test_terminal_peels_and_emits_create(self, toy_params, toy_bob, bob_node):
        # Build B's entry, then feed it a one-layer EXTEND to C.
        state, actions = node_handle_cell(
            bob_node, "A", Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1)))
        client, send = client_create(toy_params, 9, "B", toy_bob.public,
                                     ScriptedRng([3, 13]))
        client, _ = client_handle_cell(client, actions[0].cell)
        assert client.phase == Phase.READY
        charlie = keypair_from_secrets(toy_params, 7, 17)
        client, relay = client_extend(client, "C", charlie.public, ScriptedRng([4, 19]))
        state, actions = node_handle_cell(state, "A", relay.cell)
        [send] = actions
        assert send.link == "C"
        assert send.cell.command == CellCommand.CREATE
        entry = state.entries[0]
        assert entry.next_link == "C" and entry.next_pending

    def test_data_at_exit_delivers_local(self, toy_params, toy_bob, bob_node):
        state, actions = node_handle_cell(
            bob_node, "A", Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1)))
        client, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                  ScriptedRng([3, 13]))
        client, _ = client_handle_cell(client, actions[0].cell)
        send = client_send_data(client, 5, b"hi")
        state, actions = node_handle_cell(state, "A", send.cell)
        assert actions == [DeliverLocal(5, b"hi")]

    def test_unknown_circuit_tears_down(self, bob_node):
        state, actions = node_handle_cell(bob_node, "A",
                                          Cell(42, CellCommand.RELAY, b"junk"))
        assert any(isinstance(a, TearDown) for a in actions)
        assert any(isinstance(a, SendCell)
                   and a.cell.command == CellCommand.DESTROY for a in actions)

    def test_reply_data_round_trip(self, toy_params, toy_bob, bob_node):
        state, actions = node_handle_cell(
            bob_node, "A", Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1)))
        client, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                  ScriptedRng([3, 13]))
        client, _ = client_handle_cell(client, actions[0].cell)
        reply = node_reply_data(state, 9, "A", 5, b"pong")
        client, actions = client_handle_cell(client, reply.cell)
        assert actions == [DeliverLocal(5, b"pong")]


class TestPurity:
    def test_client_transition_replays_identically(self, toy_params, toy_bob):
        state, _ = client_create(toy_params, 9, "B", toy_bob.public,
                                 ScriptedRng([3, 13]))
        digest = key_digest(reduce_key(toy_params, 36))
        cell = Cell(9, CellCommand.CREATED, build_created_payload(28, digest, 1))
        assert client_handle_cell(state, cell) == client_handle_cell(state, cell)

    def test_node_transition_replays_identically(self, bob_node):
        cell = Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1))
        first = node_handle_cell(bob_node, "A", cell)
        second = node_handle_cell(bob_node, "A", cell)
        assert first == second

    def test_inputs_not_mutated(self, bob_node):
        cell = Cell(9, CellCommand.CREATE, build_create_payload(12, 40, 28, 1))
        node_handle_cell(bob_node, "A", cell)
        assert bob_node.entries == ()


class TestLiteralLayeringMode:
    def test_end_to_end(self, toy_params):
        # Figure-literal mode: relayed frames carry only the consumer's
        # layer and intermediates forward opaquely.
        from onionkep.simnet import build_simulation, run_build, run_send
        config = ProtocolConfig(peel_per_hop=False)
        sim, client, nodes = build_simulation(16, 3, config=config, echo_data=True)
        state = run_build(sim, client, ["B", "C", "D"])
        assert state.phase == Phase.READY
        run_send(sim, client, 1, b"literal mode")
        assert nodes["D"].delivered == [(1, b"literal mode")]
        assert client.received == [(1, b"literal mode")]
