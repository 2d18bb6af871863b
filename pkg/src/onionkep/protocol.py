"""Client and relay state machines for telescoping circuit construction.

Every transition is a pure function from (state, input cell) to
(new state, ordered list of output actions); states are frozen dataclasses
and nothing here performs I/O, so identical inputs always replay to
identical outputs.

Circuit build runs hop by hop: CREATE/CREATED establishes the entry hop,
then each extension travels as an EXTEND relay frame tunnelled through the
already-built prefix, is turned into a CREATE by the current terminal hop,
and comes back as an EXTENDED relay frame. Every confirmation payload
carries a digest of the shared key; a digest mismatch fails the circuit
unconditionally.

Two relay-layering modes exist (ProtocolConfig.peel_per_hop):

* True (default): the client wraps relayed frames once per established
  hop and every relay peels (forward) or adds (backward) exactly one
  layer. This matches the nested onion data flow.
* False: frames are wrapped only for the hop that will consume them and
  intermediate relays forward relay cells opaquely, reproducing the
  sequence-diagram encryptions literally.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

from .errors import (
    MalformedPayload,
    MalformedSessionKey,
    NonInvertible,
    NotReady,
    TruncatedCell,
    TruncatedFrame,
    UnknownSubcommand,
)
from .nikep import (
    KeyPair,
    PublicConstructor,
    SessionKey,
    SystemParams,
    derive_session_key,
    gen_keypair,
    mix,
)
from .onioncrypt import (
    Cell,
    CellCommand,
    RelayFrame,
    RelaySubcommand,
    build_create_payload,
    build_created_payload,
    build_extend_data,
    chunk_decrypt,
    chunk_encrypt,
    decode_relay_frame,
    encode_relay_frame,
    key_digest,
    onion_wrap,
    parse_create_payload,
    parse_created_payload,
    parse_extend_data,
)

INTEGRITY_FAILURE = "CircuitIntegrityFailure"


@dataclass(frozen=True)
class ProtocolConfig:
    peel_per_hop: bool = True


DEFAULT_CONFIG = ProtocolConfig()


class Phase(Enum):
    CREATING = "creating"
    EXTENDING = "extending"
    READY = "ready"
    FAILED = "failed"


@dataclass(frozen=True)
class HopKeys:
    node_name: str
    ephemeral: KeyPair
    session: SessionKey | None = None
    confirmed: bool = False


@dataclass(frozen=True)
class CircuitState:
    params: SystemParams
    circ_id: int
    hops: tuple[HopKeys, ...]
    phase: Phase
    config: ProtocolConfig = DEFAULT_CONFIG
    failure: str | None = None


# -- actions -----------------------------------------------------------------

@dataclass(frozen=True)
class SendCell:
    link: str
    cell: Cell


@dataclass(frozen=True)
class DeliverLocal:
    stream_id: int
    data: bytes


@dataclass(frozen=True)
class TearDown:
    circ_id: int
    reason: str


Action = Union[SendCell, DeliverLocal, TearDown]


# -- client side -------------------------------------------------------------

def client_create(params: SystemParams, circ_id: int, node_name: str,
                  node_pub: PublicConstructor, rng: random.Random,
                  config: ProtocolConfig = DEFAULT_CONFIG) -> tuple[CircuitState, SendCell]:
    """Open a circuit to the entry node with a fresh ephemeral constructor."""
    eph = gen_keypair(params, rng)
    v = mix(params, node_pub, eph.private)
    payload = build_create_payload(v, eph.public.P, eph.public.Q, params.residue_width)
    state = CircuitState(params=params, circ_id=circ_id,
                         hops=(HopKeys(node_name=node_name, ephemeral=eph),),
                         phase=Phase.CREATING, config=config)
    return state, SendCell(node_name, Cell(circ_id, CellCommand.CREATE, payload))


def client_extend(state: CircuitState, node_name: str, node_pub: PublicConstructor,
                  rng: random.Random) -> tuple[CircuitState, SendCell]:
    """Tunnel an EXTEND frame for the next hop through the built prefix."""
    if state.phase != Phase.READY:
        raise NotReady(f"cannot extend a circuit in phase {state.phase.value}")
    params = state.params
    eph = gen_keypair(params, rng)
    v = mix(params, node_pub, eph.private)
    data = build_extend_data(node_name, v, eph.public.P, eph.public.Q,
                             params.residue_width)
    frame = encode_relay_frame(RelayFrame(RelaySubcommand.EXTEND, 0, data))
    payload = onion_wrap(frame, _forward_keys(state), params)
    new_state = replace(state,
                        hops=state.hops + (HopKeys(node_name=node_name, ephemeral=eph),),
                        phase=Phase.EXTENDING)
    return new_state, SendCell(state.hops[0].node_name,
                               Cell(state.circ_id, CellCommand.RELAY, payload))


def client_send_data(state: CircuitState, stream_id: int, data: bytes) -> SendCell:
    """Wrap application data for the exit hop; innermost layer is the exit key."""
    if state.phase != Phase.READY:
        raise NotReady(f"cannot send on a circuit in phase {state.phase.value}")
    frame = encode_relay_frame(RelayFrame(RelaySubcommand.DATA, stream_id, data))
    payload = onion_wrap(frame, _forward_keys(state), state.params)
    return SendCell(state.hops[0].node_name,
                    Cell(state.circ_id, CellCommand.RELAY, payload))


def client_handle_cell(state: CircuitState, cell: Cell) -> tuple[CircuitState, list[Action]]:
    """Feed one inbound cell to the client machine."""
    if cell.circ_id != state.circ_id or state.phase == Phase.FAILED:
        return state, []
    if cell.command == CellCommand.CREATED:
        if state.phase != Phase.CREATING:
            return state, []
        try:
            v, digest = parse_created_payload(cell.payload, state.params.residue_width)
        except TruncatedCell:
            return _fail(state, "malformed CREATED payload")
        return _confirm_hop(state, v, digest)
    if cell.command == CellCommand.RELAY:
        return _client_handle_relay(state, cell)
    if cell.command == CellCommand.DESTROY:
        return replace(state, phase=Phase.FAILED, failure="destroyed by relay"), []
    return state, []


def _client_handle_relay(state: CircuitState, cell: Cell) -> tuple[CircuitState, list[Action]]:
    confirmed = [hop.session for hop in state.hops if hop.confirmed]
    peel_keys = confirmed if state.config.peel_per_hop else confirmed[-1:]
    payload = cell.payload
    try:
        for key in peel_keys:
            payload = chunk_decrypt(payload, key, state.params)
        frame = decode_relay_frame(payload)
    except (MalformedPayload, TruncatedFrame, UnknownSubcommand):
        return _fail(state, "malformed relay payload")
    if frame.subcommand == RelaySubcommand.EXTENDED:
        if state.phase != Phase.EXTENDING:
            return state, []
        try:
            v, digest = parse_created_payload(frame.data, state.params.residue_width)
        except TruncatedCell:
            return _fail(state, "malformed EXTENDED data")
        return _confirm_hop(state, v, digest)
    if frame.subcommand == RelaySubcommand.DATA:
        return state, [DeliverLocal(frame.stream_id, frame.data)]
    return state, []


def _confirm_hop(state: CircuitState, v: int, digest: bytes) -> tuple[CircuitState, list[Action]]:
    index = sum(1 for hop in state.hops if hop.confirmed)
    hop = state.hops[index]
    try:
        session = derive_session_key(state.params, v, hop.ephemeral.private.k)
    except (MalformedSessionKey, NonInvertible):
        return _fail(state, "malformed session key")
    if key_digest(session) != digest:
        return _fail(state, "key digest mismatch")
    hops = list(state.hops)
    hops[index] = replace(hop, session=session, confirmed=True)
    return replace(state, hops=tuple(hops), phase=Phase.READY), []


def _fail(state: CircuitState, reason: str) -> tuple[CircuitState, list[Action]]:
    tagged = f"{INTEGRITY_FAILURE}: {reason}"
    failed = replace(state, phase=Phase.FAILED, failure=tagged)
    return failed, [TearDown(state.circ_id, tagged)]


def _forward_keys(state: CircuitState) -> list[SessionKey]:
    """Wrap order for forward relays: innermost key first."""
    keys = [hop.session for hop in state.hops if hop.confirmed]
    if not state.config.peel_per_hop:
        keys = keys[-1:]
    return list(reversed(keys))


# -- relay (node) side -------------------------------------------------------

@dataclass(frozen=True)
class CircuitEntry:
    """One relayed circuit as seen by a node: exactly one session key."""

    circ_id: int
    prev_link: str
    session: SessionKey
    next_link: str | None = None
    next_circ_id: int | None = None
    next_pending: bool = False


@dataclass(frozen=True)
class NodeState:
    name: str
    params: SystemParams
    keypair: KeyPair
    config: ProtocolConfig = DEFAULT_CONFIG
    entries: tuple[CircuitEntry, ...] = ()
    circ_seq: int = 1


def node_handle_cell(state: NodeState, from_link: str,
                     cell: Cell) -> tuple[NodeState, list[Action]]:
    """Feed one inbound cell to the relay machine."""
    if cell.command == CellCommand.CREATE:
        return _node_handle_create(state, from_link, cell)
    entry = _find_forward(state, from_link, cell.circ_id)
    if entry is not None:
        if cell.command == CellCommand.RELAY:
            return _node_forward_relay(state, entry, cell)
        if cell.command == CellCommand.DESTROY:
            return _node_destroy(state, entry, toward_next=True)
        return state, []
    entry = _find_backward(state, from_link, cell.circ_id)
    if entry is not None:
        if cell.command == CellCommand.CREATED:
            return _node_handle_created(state, entry, cell)
        if cell.command == CellCommand.RELAY:
            return _node_backward_relay(state, entry, cell)
        if cell.command == CellCommand.DESTROY:
            return _node_destroy(state, entry, toward_next=False)
        return state, []
    if cell.command == CellCommand.DESTROY:
        return state, []
    return state, [TearDown(cell.circ_id, "unknown circuit"),
                   SendCell(from_link, Cell(cell.circ_id, CellCommand.DESTROY))]


def node_reply_data(state: NodeState, circ_id: int, prev_link: str,
                    stream_id: int, data: bytes) -> SendCell:
    """Exit-side response: one backward DATA frame under this node's key."""
    entry = _find_forward(state, prev_link, circ_id)
    if entry is None:
        raise NotReady(f"no circuit {circ_id} from {prev_link}")
    frame = encode_relay_frame(RelayFrame(RelaySubcommand.DATA, stream_id, data))
    payload = chunk_encrypt(frame, entry.session, state.params)
    return SendCell(entry.prev_link, Cell(entry.circ_id, CellCommand.RELAY, payload))


def _node_handle_create(state: NodeState, from_link: str,
                        cell: Cell) -> tuple[NodeState, list[Action]]:
    if _find_forward(state, from_link, cell.circ_id) is not None:
        return state, [TearDown(cell.circ_id, "duplicate CREATE"),
                       SendCell(from_link, Cell(cell.circ_id, CellCommand.DESTROY))]
    width = state.params.residue_width
    try:
        v, eph_p, eph_q = parse_create_payload(cell.payload, width)
        session = derive_session_key(state.params, v, state.keypair.private.k)
    except (TruncatedCell, MalformedSessionKey, NonInvertible):
        return state, [TearDown(cell.circ_id, "malformed CREATE handshake"),
                       SendCell(from_link, Cell(cell.circ_id, CellCommand.DESTROY))]
    reply = mix(state.params, PublicConstructor(P=eph_p, Q=eph_q), state.keypair.private)
    payload = build_created_payload(reply, key_digest(session), width)
    entry = CircuitEntry(circ_id=cell.circ_id, prev_link=from_link, session=session)
    new_state = replace(state, entries=state.entries + (entry,))
    return new_state, [SendCell(from_link, Cell(cell.circ_id, CellCommand.CREATED, payload))]


def _node_forward_relay(state: NodeState, entry: CircuitEntry,
                        cell: Cell) -> tuple[NodeState, list[Action]]:
    payload = cell.payload
    relaying = entry.next_link is not None and not entry.next_pending
    if state.config.peel_per_hop or not relaying:
        try:
            payload = chunk_decrypt(payload, entry.session, state.params)
        except MalformedPayload:
            return _node_destroy_both(state, entry, "malformed relay payload")
    if relaying:
        return state, [SendCell(entry.next_link,
                                Cell(entry.next_circ_id, CellCommand.RELAY, payload))]
    if entry.next_pending:
        return _node_destroy_both(state, entry, "relay before extension completed")
    try:
        frame = decode_relay_frame(payload)
    except (TruncatedFrame, UnknownSubcommand):
        return _node_destroy_both(state, entry, "unparseable relay frame")
    if frame.subcommand == RelaySubcommand.EXTEND:
        try:
            name, v, eph_p, eph_q = parse_extend_data(frame.data, state.params.residue_width)
        except (TruncatedFrame, TruncatedCell):
            return _node_destroy_both(state, entry, "malformed EXTEND data")
        next_circ = state.circ_seq
        updated = replace(entry, next_link=name, next_circ_id=next_circ, next_pending=True)
        new_state = replace(state, circ_seq=state.circ_seq + 1,
                            entries=_swap(state.entries, entry, updated))
        payload = build_create_payload(v, eph_p, eph_q, state.params.residue_width)
        return new_state, [SendCell(name, Cell(next_circ, CellCommand.CREATE, payload))]
    if frame.subcommand == RelaySubcommand.DATA:
        return state, [DeliverLocal(frame.stream_id, frame.data)]
    if frame.subcommand == RelaySubcommand.END:
        return _node_destroy_both(state, entry, "stream ended")
    return state, []


def _node_handle_created(state: NodeState, entry: CircuitEntry,
                         cell: Cell) -> tuple[NodeState, list[Action]]:
    if not entry.next_pending:
        return state, []
    width = state.params.residue_width
    try:
        v, digest = parse_created_payload(cell.payload, width)
    except TruncatedCell:
        return _node_destroy_both(state, entry, "malformed CREATED from next hop")
    frame = encode_relay_frame(RelayFrame(RelaySubcommand.EXTENDED, 0,
                                          build_created_payload(v, digest, width)))
    payload = chunk_encrypt(frame, entry.session, state.params)
    updated = replace(entry, next_pending=False)
    new_state = replace(state, entries=_swap(state.entries, entry, updated))
    return new_state, [SendCell(entry.prev_link,
                                Cell(entry.circ_id, CellCommand.RELAY, payload))]


def _node_backward_relay(state: NodeState, entry: CircuitEntry,
                         cell: Cell) -> tuple[NodeState, list[Action]]:
    payload = cell.payload
    if state.config.peel_per_hop:
        payload = chunk_encrypt(payload, entry.session, state.params)
    return state, [SendCell(entry.prev_link,
                            Cell(entry.circ_id, CellCommand.RELAY, payload))]


def _node_destroy(state: NodeState, entry: CircuitEntry,
                  toward_next: bool) -> tuple[NodeState, list[Action]]:
    actions: list[Action] = [TearDown(entry.circ_id, "destroyed by peer")]
    if toward_next and entry.next_link is not None:
        actions.append(SendCell(entry.next_link,
                                Cell(entry.next_circ_id, CellCommand.DESTROY)))
    if not toward_next:
        actions.append(SendCell(entry.prev_link,
                                Cell(entry.circ_id, CellCommand.DESTROY)))
    return replace(state, entries=_remove(state.entries, entry)), actions


def _node_destroy_both(state: NodeState, entry: CircuitEntry,
                       reason: str) -> tuple[NodeState, list[Action]]:
    actions: list[Action] = [TearDown(entry.circ_id, reason),
                             SendCell(entry.prev_link,
                                      Cell(entry.circ_id, CellCommand.DESTROY))]
    if entry.next_link is not None:
        actions.append(SendCell(entry.next_link,
                                Cell(entry.next_circ_id, CellCommand.DESTROY)))
    return replace(state, entries=_remove(state.entries, entry)), actions


def _find_forward(state: NodeState, link: str, circ_id: int) -> CircuitEntry | None:
    for entry in state.entries:
        if entry.prev_link == link and entry.circ_id == circ_id:
            return entry
    return None


def _find_backward(state: NodeState, link: str, circ_id: int) -> CircuitEntry | None:
    for entry in state.entries:
        if entry.next_link == link and entry.next_circ_id == circ_id:
            return entry
    return None


def _swap(entries: tuple[CircuitEntry, ...], old: CircuitEntry,
          new: CircuitEntry) -> tuple[CircuitEntry, ...]:
    return tuple(new if e is old else e for e in entries)


def _remove(entries: tuple[CircuitEntry, ...], victim: CircuitEntry) -> tuple[CircuitEntry, ...]:
    return tuple(e for e in entries if e is not victim)
