"""Stream transport: length-framed cells over TCP, plus socket-backed
directory service and relay servers.

Frame layout: 4-byte big-endian length || payload, capped at FRAME_MAX.
Per-connection ordering is the socket's; each relay processes cells of one
circuit in arrival order behind a single lock. The directory handles
requests sequentially per connection and concurrently across connections.
"""

from __future__ import annotations

import random
import socket
import threading
from dataclasses import replace

from . import protocol, tlv
from .directory import Directory, NodeDescriptor, decode_descriptors, encode_descriptor
from .errors import (
    DuplicateName,
    FrameTooLarge,
    NotFound,
    OnionKepError,
    ParamsMismatch,
)
from .nikep import KeyPair, SystemParams
from .onioncrypt import Cell, decode_cell, encode_cell
from .protocol import DEFAULT_CONFIG, CircuitState, Phase, ProtocolConfig

FRAME_MAX = 70_000

_STATUS_OK = 0
_STATUS_ERRORS = {1: NotFound, 2: DuplicateName, 3: ParamsMismatch}


def send_frame(sock: socket.socket, data: bytes) -> None:
    if len(data) > FRAME_MAX:
        raise FrameTooLarge(f"frame of {len(data)} bytes exceeds {FRAME_MAX}")
    sock.sendall(len(data).to_bytes(4, "big") + data)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; returns None on clean EOF."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    length = int.from_bytes(header, "big")
    if length > FRAME_MAX:
        raise FrameTooLarge(f"peer announced a {length}-byte frame")
    body = _recv_exact(sock, length)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return body


def _recv_exact(sock: socket.socket, count: int) -> bytes | None:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            if buf:
                raise ConnectionError("connection closed mid-read")
            return None
        buf += chunk
    return buf


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host, int(port)


# -- directory over TCP ------------------------------------------------------

class DirectoryServer:
    """Serves register/lookup/list requests over the TLV record grammar."""

    def __init__(self, directory: Directory, host: str = "127.0.0.1", port: int = 0):
        self.directory = directory
        self._listener = socket.create_server((host, port))
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self._lock = threading.Lock()
        self._running = True
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "DirectoryServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        self._listener.close()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    request = recv_frame(conn)
                except (ConnectionError, FrameTooLarge, OSError):
                    return
                if request is None:
                    return
                send_frame(conn, self._respond(request))

    def _respond(self, request: bytes) -> bytes:
        try:
            tag, value = next(iter(tlv.iter_records(request)))
            with self._lock:
                if tag == tlv.TAG_DIR_REGISTER:
                    self.directory.register(decode_descriptors(value)[0])
                    payload = b""
                elif tag == tlv.TAG_DIR_LOOKUP:
                    payload = encode_descriptor(self.directory.lookup(value.decode()))
                elif tag == tlv.TAG_DIR_LIST:
                    payload = b"".join(encode_descriptor(d) for d in self.directory.list())
                else:
                    raise NotFound(f"unknown request tag {tag:#04x}")
        except NotFound:
            return tlv.encode_record(tlv.TAG_STATUS, bytes([1]))
        except DuplicateName:
            return tlv.encode_record(tlv.TAG_STATUS, bytes([2]))
        except ParamsMismatch:
            return tlv.encode_record(tlv.TAG_STATUS, bytes([3]))
        except (OnionKepError, StopIteration, UnicodeDecodeError):
            return tlv.encode_record(tlv.TAG_STATUS, bytes([255]))
        return tlv.encode_record(tlv.TAG_STATUS, bytes([_STATUS_OK])) + payload


class DirectoryClient:
    def __init__(self, address: str):
        self.address = address

    def register(self, desc: NodeDescriptor) -> None:
        self._request(tlv.encode_record(tlv.TAG_DIR_REGISTER, encode_descriptor(desc)))

    def lookup(self, name: str) -> NodeDescriptor:
        payload = self._request(tlv.encode_record(tlv.TAG_DIR_LOOKUP, name.encode()))
        return decode_descriptors(payload)[0]

    def list(self) -> list[NodeDescriptor]:
        payload = self._request(tlv.encode_record(tlv.TAG_DIR_LIST, b""))
        return decode_descriptors(payload) if payload else []

    def _request(self, request: bytes) -> bytes:
        with socket.create_connection(parse_address(self.address), timeout=10) as sock:
            send_frame(sock, request)
            response = recv_frame(sock)
        if response is None:
            raise ConnectionError("directory closed the connection")
        tag, value = next(iter(tlv.iter_records(response)))
        if tag != tlv.TAG_STATUS:
            raise OnionKepError("malformed directory response")
        status = value[0]
        if status != _STATUS_OK:
            exc = _STATUS_ERRORS.get(status, OnionKepError)
            raise exc(f"directory returned status {status}")
        header_len = 5 + len(value)
        return response[header_len:]


# -- relay server ------------------------------------------------------------

class NodeServer:
    """One relay process: registers itself, then serves circuit traffic.

    Inbound connections become links named conn<N>; outbound links to other
    relays are named by node name and resolved through the directory. A
    lost connection tears down every circuit riding on that link.
    """

    def __init__(self, name: str, params: SystemParams, keypair: KeyPair,
                 dir_client: DirectoryClient, host: str = "127.0.0.1", port: int = 0,
                 config: ProtocolConfig = DEFAULT_CONFIG, echo_data: bool = True):
        self.name = name
        self.params = params
        self.dir_client = dir_client
        self.echo_data = echo_data
        self.state = protocol.NodeState(name=name, params=params, keypair=keypair,
                                        config=config)
        self.delivered: list[tuple[int, bytes]] = []
        self._listener = socket.create_server((host, port))
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self._links: dict[str, socket.socket] = {}
        self._lock = threading.Lock()
        self._conn_seq = 0
        self._running = True

    def start(self) -> "NodeServer":
        from .nikep import params_digest
        self.dir_client.register(NodeDescriptor(
            name=self.name, address=self.address,
            public=self.state.keypair.public,
            params_digest=params_digest(self.params)))
        threading.Thread(target=self._accept_loop, daemon=True).start()
        return self

    def stop(self) -> None:
        self._running = False
        self._listener.close()
        with self._lock:
            for sock in self._links.values():
                try:
                    sock.close()
                except OSError:
                    pass

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                self._conn_seq += 1
                link = f"conn{self._conn_seq}"
                self._links[link] = conn
            threading.Thread(target=self._reader, args=(link, conn), daemon=True).start()

    def _reader(self, link: str, sock: socket.socket) -> None:
        try:
            while True:
                frame = recv_frame(sock)
                if frame is None:
                    break
                self._dispatch(link, decode_cell(frame))
        except (ConnectionError, FrameTooLarge, OSError, OnionKepError):
            pass
        finally:
            self._drop_link(link)

    def _dispatch(self, link: str, cell: Cell) -> None:
        with self._lock:
            self.state, actions = protocol.node_handle_cell(self.state, link, cell)
            sends = [a for a in actions if isinstance(a, protocol.SendCell)]
            for action in actions:
                if isinstance(action, protocol.DeliverLocal):
                    self.delivered.append((action.stream_id, action.data))
                    if self.echo_data:
                        sends.append(protocol.node_reply_data(
                            self.state, cell.circ_id, link,
                            action.stream_id, action.data))
        for send in sends:
            self._send(send.link, send.cell)

    def _send(self, link: str, cell: Cell) -> None:
        with self._lock:
            sock = self._links.get(link)
        if sock is None:
            desc = self.dir_client.lookup(link)
            sock = socket.create_connection(parse_address(desc.address), timeout=10)
            with self._lock:
                self._links[link] = sock
            threading.Thread(target=self._reader, args=(link, sock), daemon=True).start()
        try:
            send_frame(sock, encode_cell(cell))
        except OSError:
            self._drop_link(link)

    def _drop_link(self, link: str) -> None:
        with self._lock:
            sock = self._links.pop(link, None)
            survivors = tuple(e for e in self.state.entries
                              if e.prev_link != link and e.next_link != link)
            self.state = replace(self.state, entries=survivors)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass


# -- circuit client over TCP -------------------------------------------------

class StreamCircuitClient:
    """Builds a circuit and sends data through the entry node's socket."""

    def __init__(self, params: SystemParams, dir_client: DirectoryClient,
                 rng: random.Random, config: ProtocolConfig = DEFAULT_CONFIG):
        self.params = params
        self.dir_client = dir_client
        self.rng = rng
        self.config = config
        self.state: CircuitState | None = None
        self._sock: socket.socket | None = None

    def build(self, path: list[str], circ_id: int = 1, timeout: float = 30.0,
              corrupt_created: bool = False) -> CircuitState:
        descriptors = [self.dir_client.lookup(name) for name in path]
        entry = descriptors[0]
        self._sock = socket.create_connection(parse_address(entry.address),
                                              timeout=timeout)
        self.state, send = protocol.client_create(self.params, circ_id, entry.name,
                                                  entry.public, self.rng, self.config)
        send_frame(self._sock, encode_cell(send.cell))
        first_response = True
        while self.state.phase != Phase.FAILED and (
                self.state.phase != Phase.READY or len(self.state.hops) < len(path)):
            frame = recv_frame(self._sock)
            if frame is None:
                raise ConnectionError("entry node closed the connection")
            cell = decode_cell(frame)
            if corrupt_created and first_response and cell.payload:
                payload = bytes([cell.payload[0] ^ 0x01]) + cell.payload[1:]
                cell = Cell(cell.circ_id, cell.command, payload)
            first_response = False
            self.state, _ = protocol.client_handle_cell(self.state, cell)
            if self.state.phase == Phase.READY and len(self.state.hops) < len(path):
                desc = descriptors[len(self.state.hops)]
                self.state, send = protocol.client_extend(self.state, desc.name,
                                                          desc.public, self.rng)
                send_frame(self._sock, encode_cell(send.cell))
        return self.state

    def send_data(self, stream_id: int, data: bytes) -> bytes:
        """Send one DATA frame and wait for the echoed backward response."""
        send = protocol.client_send_data(self.state, stream_id, data)
        send_frame(self._sock, encode_cell(send.cell))
        while True:
            frame = recv_frame(self._sock)
            if frame is None:
                raise ConnectionError("entry node closed the connection")
            self.state, actions = protocol.client_handle_cell(
                self.state, decode_cell(frame))
            for action in actions:
                if isinstance(action, protocol.DeliverLocal):
                    return action.data

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
