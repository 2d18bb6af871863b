"""Deterministic in-process network simulator with transcript capture.

Single-threaded event loop: one (src, dst, cell) event is popped at a time
in FIFO order, handed to the owning state machine, and the resulting
SendCell actions are enqueued. Time is a step counter; equal seeds and
scripts produce byte-identical transcripts.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .directory import Directory, NodeDescriptor
from .errors import StepBudgetExceeded
from . import protocol
from .nikep import SystemParams, gen_keypair, gen_params, params_digest
from .onioncrypt import Cell, encode_cell
from .protocol import (
    DEFAULT_CONFIG,
    CircuitState,
    DeliverLocal,
    Phase,
    ProtocolConfig,
    SendCell,
    TearDown,
)


@dataclass(frozen=True)
class TranscriptEntry:
    step: int
    link: str
    direction: str
    data: bytes


class Transcript:
    """Append-only capture of every cell crossing every link."""

    def __init__(self):
        self.entries: list[TranscriptEntry] = []

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def serialize(self) -> bytes:
        out = []
        for e in self.entries:
            out.append(f"{e.step} {e.direction} ".encode() + e.data.hex().encode() + b"\n")
        return b"".join(out)

    def on_link(self, a: str, b: str) -> list[TranscriptEntry]:
        link = "-".join(sorted((a, b)))
        return [e for e in self.entries if e.link == link]

    def commands(self) -> list[str]:
        from .onioncrypt import decode_cell
        return [decode_cell(e.data).command.name for e in self.entries]


class SimNode:
    """Relay host: owns one NodeState and records exit deliveries."""

    def __init__(self, name: str, params: SystemParams, keypair,
                 config: ProtocolConfig = DEFAULT_CONFIG, echo_data: bool = False):
        self.name = name
        self.state = protocol.NodeState(name=name, params=params, keypair=keypair,
                                        config=config)
        self.echo_data = echo_data
        self.delivered: list[tuple[int, bytes]] = []
        self.teardowns: list[TearDown] = []

    def handle(self, from_name: str, cell: Cell) -> list[tuple[str, Cell]]:
        self.state, actions = protocol.node_handle_cell(self.state, from_name, cell)
        out: list[tuple[str, Cell]] = []
        for action in actions:
            if isinstance(action, SendCell):
                out.append((action.link, action.cell))
            elif isinstance(action, DeliverLocal):
                self.delivered.append((action.stream_id, action.data))
                if self.echo_data:
                    reply = protocol.node_reply_data(self.state, cell.circ_id, from_name,
                                                     action.stream_id, action.data)
                    out.append((reply.link, reply.cell))
            elif isinstance(action, TearDown):
                self.teardowns.append(action)
        return out

    def session_keys(self) -> list[int]:
        return [entry.session.raw for entry in self.state.entries]


class SimClient:
    """Client host: drives the build plan and queues application sends."""

    def __init__(self, name: str, params: SystemParams, directory: Directory,
                 rng: random.Random, config: ProtocolConfig = DEFAULT_CONFIG):
        self.name = name
        self.params = params
        self.directory = directory
        self.rng = rng
        self.config = config
        self.state: CircuitState | None = None
        self.plan: list[str] = []
        self.outbox: list[tuple[int, bytes]] = []
        self.received: list[tuple[int, bytes]] = []

    def start_build(self, circ_id: int, path: list[str]) -> list[tuple[str, Cell]]:
        self.plan = list(path)
        entry = self.directory.lookup(path[0])
        self.state, send = protocol.client_create(self.params, circ_id, entry.name,
                                                  entry.public, self.rng, self.config)
        return [(send.link, send.cell)]

    def queue_send(self, stream_id: int, data: bytes) -> None:
        self.outbox.append((stream_id, data))

    def handle(self, from_name: str, cell: Cell) -> list[tuple[str, Cell]]:
        self.state, actions = protocol.client_handle_cell(self.state, cell)
        out: list[tuple[str, Cell]] = []
        for action in actions:
            if isinstance(action, DeliverLocal):
                self.received.append((action.stream_id, action.data))
            elif isinstance(action, SendCell):
                out.append((action.link, action.cell))
        out.extend(self._advance())
        return out

    def _advance(self) -> list[tuple[str, Cell]]:
        if self.state is None or self.state.phase != Phase.READY:
            return []
        if len(self.state.hops) < len(self.plan):
            desc = self.directory.lookup(self.plan[len(self.state.hops)])
            self.state, send = protocol.client_extend(self.state, desc.name,
                                                      desc.public, self.rng)
            return [(send.link, send.cell)]
        out = []
        while self.outbox:
            stream_id, data = self.outbox.pop(0)
            send = protocol.client_send_data(self.state, stream_id, data)
            out.append((send.link, send.cell))
        return out


TamperFn = Callable[[str, str, Cell], Cell | None]


class SimNet:
    """Owns the hosts, the FIFO event queue and the transcript."""

    def __init__(self, step_budget: int = 100_000):
        self.hosts: dict[str, object] = {}
        self.queue: deque[tuple[str, str, Cell]] = deque()
        self.transcript = Transcript()
        self.step = 0
        self.step_budget = step_budget
        self.tamper: TamperFn | None = None

    def add_host(self, name: str, host) -> None:
        self.hosts[name] = host

    def post(self, src: str, dst: str, cell: Cell) -> None:
        self.queue.append((src, dst, cell))

    def run(self) -> None:
        while self.queue:
            src, dst, cell = self.queue.popleft()
            self.step += 1
            if self.step > self.step_budget:
                raise StepBudgetExceeded(f"exceeded {self.step_budget} steps")
            if self.tamper is not None:
                tampered = self.tamper(src, dst, cell)
                if tampered is None:
                    continue  # scripted drop
                cell = tampered
            self.transcript.append(TranscriptEntry(
                step=self.step, link="-".join(sorted((src, dst))),
                direction=f"{src}->{dst}", data=encode_cell(cell)))
            host = self.hosts[dst]
            for link, out_cell in host.handle(src, cell):
                self.post(dst, link, out_cell)


def build_simulation(r_bits: int, seed: int, node_names=("B", "C", "D"),
                     config: ProtocolConfig = DEFAULT_CONFIG,
                     echo_data: bool = False) -> tuple[SimNet, SimClient, dict[str, SimNode]]:
    """Seeded world: parameters, registered relays and one client host 'A'."""
    rng = random.Random(seed)
    params = gen_params(r_bits, rng)
    digest = params_digest(params)
    directory = Directory(digest)
    sim = SimNet()
    nodes: dict[str, SimNode] = {}
    for name in node_names:
        keypair = gen_keypair(params, rng)
        node = SimNode(name, params, keypair, config=config, echo_data=echo_data)
        nodes[name] = node
        sim.add_host(name, node)
        directory.register(NodeDescriptor(name=name, address=f"sim://{name}",
                                          public=keypair.public, params_digest=digest))
    client = SimClient("A", params, directory, rng, config=config)
    sim.add_host("A", client)
    return sim, client, nodes


def run_build(sim: SimNet, client: SimClient, path: list[str], circ_id: int = 1) -> CircuitState:
    for link, cell in client.start_build(circ_id, path):
        sim.post(client.name, link, cell)
    sim.run()
    return client.state


def run_send(sim: SimNet, client: SimClient, stream_id: int, data: bytes) -> None:
    send = protocol.client_send_data(client.state, stream_id, data)
    sim.post(client.name, send.link, send.cell)
    sim.run()
