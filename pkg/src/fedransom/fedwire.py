"""TCP transport for the federation: one server, K clients, framed messages.

Frame layout, little-endian:

    length  u32   number of payload bytes after the type byte
    type    u8    0x01 HELLO, 0x02 GLOBAL, 0x03 UPDATE, 0x04 FIN, 0x7F ERROR
    payload bytes

HELLO carries "<I" n_samples then the client id, UTF-8. GLOBAL and UPDATE
carry a weight blob: "<II" (round, n_samples) then a checkpoint in the
"FRWM" format, byte for byte. ERROR carries a UTF-8 diagnostic; FIN is
empty. Rounds are synchronous: the server aggregates only after all K
updates for the round have arrived, so a loopback federation reproduces
the in-process engine exactly.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .checkpoint import params_from_bytes, params_to_bytes
from .data import Dataset
from .errors import (ClientCountTimeout, OversizeFrame, ProtocolViolation,
                     TruncatedFrame, UnknownFrameType)
from .fedavg import ClientShard, ClientUpdate, FedConfig, aggregate, local_train, round_report
from .metrics import EvalReport
from .nn import ModelParams, TrainConfig, init_params

MSG_HELLO = 0x01
MSG_GLOBAL = 0x02
MSG_UPDATE = 0x03
MSG_FIN = 0x04
MSG_ERROR = 0x7F

_KNOWN_TYPES = frozenset({MSG_HELLO, MSG_GLOBAL, MSG_UPDATE, MSG_FIN, MSG_ERROR})
_HEADER = struct.Struct("<IB")
_BLOB_HEAD = struct.Struct("<II")
_HELLO_HEAD = struct.Struct("<I")
MAX_PAYLOAD = 2 ** 31

DEFAULT_IDLE_TIMEOUT = 300.0


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    if msg_type not in _KNOWN_TYPES:
        raise UnknownFrameType(f"message type 0x{msg_type:02x} is not in the protocol")
    return _HEADER.pack(len(payload), msg_type) + payload


def decode_frame(data: bytes) -> Frame:
    """Parse exactly one frame; rejects short input and unknown types."""
    if len(data) < _HEADER.size:
        raise TruncatedFrame(f"{len(data)} bytes is shorter than a frame header")
    length, msg_type = _HEADER.unpack_from(data)
    if msg_type not in _KNOWN_TYPES:
        raise UnknownFrameType(f"message type 0x{msg_type:02x} is not in the protocol")
    if length > MAX_PAYLOAD:
        raise OversizeFrame(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    if len(data) < _HEADER.size + length:
        raise TruncatedFrame(f"payload cut short: {len(data) - _HEADER.size} of {length} bytes")
    if len(data) > _HEADER.size + length:
        raise ProtocolViolation(f"{len(data) - _HEADER.size - length} bytes after the frame")
    return Frame(msg_type, data[_HEADER.size :])


def encode_hello(client_id: str, n_samples: int) -> bytes:
    return _HELLO_HEAD.pack(n_samples) + client_id.encode("utf-8")


def decode_hello(payload: bytes) -> tuple[str, int]:
    if len(payload) < _HELLO_HEAD.size:
        raise TruncatedFrame("hello payload shorter than its header")
    (n_samples,) = _HELLO_HEAD.unpack_from(payload)
    return payload[_HELLO_HEAD.size :].decode("utf-8"), n_samples


def encode_weight_blob(round_index: int, n_samples: int, params: ModelParams) -> bytes:
    return _BLOB_HEAD.pack(round_index, n_samples) + params_to_bytes(params)


def decode_weight_blob(payload: bytes) -> tuple[int, int, ModelParams]:
    if len(payload) < _BLOB_HEAD.size:
        raise TruncatedFrame("weight blob shorter than its header")
    round_index, n_samples = _BLOB_HEAD.unpack_from(payload)
    return round_index, n_samples, params_from_bytes(payload[_BLOB_HEAD.size :])


def send_frame(sock: socket.socket, msg_type: int, payload: bytes = b"") -> None:
    sock.sendall(encode_frame(msg_type, payload))


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    """n bytes, or None on a clean close at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        piece = sock.recv(min(n - got, 1 << 20))
        if not piece:
            if got == 0:
                return None
            raise TruncatedFrame(f"connection closed {got} bytes into a {n}-byte read")
        chunks.append(piece)
        got += len(piece)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Optional[Frame]:
    """One whole frame from the socket, or None on a clean close."""
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    length, _ = _HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise OversizeFrame(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    payload = _recv_exact(sock, length) if length else b""
    if length and payload is None:
        raise TruncatedFrame("connection closed before the payload")
    return decode_frame(header + (payload or b""))


@dataclass
class _Peer:
    sock: socket.socket
    client_id: str
    n_samples: int


def serve(bind: tuple[str, int], fed_config: FedConfig, train_config: TrainConfig,
          val_set: Optional[Dataset] = None, train_set: Optional[Dataset] = None,
          accept_timeout: float = DEFAULT_IDLE_TIMEOUT,
          idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
          listener: Optional[socket.socket] = None,
          ready: Optional[threading.Event] = None,
          ) -> tuple[ModelParams, list[EvalReport]]:
    """Run the aggregation side over TCP and return the final global model.

    Waits for exactly n_clients HELLOs, then per round broadcasts the
    global weights, gathers one UPDATE per client, and aggregates. Reports
    mirror run_federation when train_set/val_set are provided. Callers may
    pass an already-listening *listener* (then bind is ignored); *ready* is
    set once the socket accepts connections, handy when clients start in
    parallel.
    """
    if listener is None:
        listener = socket.create_server(bind)
    try:
        listener.settimeout(0.1)
        if ready is not None:
            ready.set()
        peers = _await_clients(listener, fed_config.n_clients, accept_timeout, idle_timeout)
    except BaseException:
        listener.close()
        raise
    listener.close()

    try:
        peers.sort(key=lambda p: p.client_id)
        global_params = init_params(train_config.side, train_config.seed)
        reports: list[EvalReport] = []
        for round_index in range(fed_config.n_rounds):
            blob = encode_weight_blob(round_index, 0, global_params)
            for peer in peers:
                send_frame(peer.sock, MSG_GLOBAL, blob)
            updates = _gather_updates(peers, round_index)
            global_params = aggregate(updates)
            if train_set is not None:
                reports.append(round_report(global_params, round_index, train_set, val_set))
        for peer in peers:
            send_frame(peer.sock, MSG_FIN)
        return global_params, reports
    except BaseException:
        _abort(peers)
        raise
    finally:
        for peer in peers:
            peer.sock.close()


def _await_clients(listener: socket.socket, n_clients: int,
                   accept_timeout: float, idle_timeout: float) -> list[_Peer]:
    deadline = time.monotonic() + accept_timeout
    peers: list[_Peer] = []
    try:
        while len(peers) < n_clients:
            if time.monotonic() > deadline:
                raise ClientCountTimeout(
                    f"{len(peers)} of {n_clients} clients joined within {accept_timeout}s")
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            conn.settimeout(idle_timeout)
            frame = read_frame(conn)
            if frame is None or frame.msg_type != MSG_HELLO:
                conn.close()
                raise ProtocolViolation("expected HELLO as the first message")
            client_id, n_samples = decode_hello(frame.payload)
            if client_id in {p.client_id for p in peers}:
                conn.close()
                raise ProtocolViolation(f"duplicate client id {client_id!r}")
            peers.append(_Peer(conn, client_id, n_samples))
        return peers
    except BaseException:
        _abort(peers)
        for peer in peers:
            peer.sock.close()
        raise


def _gather_updates(peers: list[_Peer], round_index: int) -> list[ClientUpdate]:
    updates: dict[str, ClientUpdate] = {}
    problems: list[Exception] = []
    lock = threading.Lock()

    def collect(peer: _Peer) -> None:
        try:
            frame = read_frame(peer.sock)
            if frame is None:
                raise ProtocolViolation(
                    f"client {peer.client_id} disconnected during round {round_index}")
            if frame.msg_type != MSG_UPDATE:
                raise ProtocolViolation(
                    f"client {peer.client_id} sent type 0x{frame.msg_type:02x}, "
                    f"expected UPDATE")
            got_round, n_samples, params = decode_weight_blob(frame.payload)
            if got_round != round_index:
                raise ProtocolViolation(
                    f"client {peer.client_id} answered round {got_round} "
                    f"during round {round_index}")
            update = ClientUpdate(peer.client_id, got_round, params, n_samples)
            with lock:
                updates[peer.client_id] = update
        except Exception as exc:  # noqa: BLE001 - reported to the caller
            with lock:
                problems.append(exc)

    threads = [threading.Thread(target=collect, args=(peer,)) for peer in peers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if problems:
        raise problems[0] if isinstance(problems[0], ProtocolViolation) \
            else ProtocolViolation(f"round {round_index} failed: {problems[0]}")
    return [updates[p.client_id] for p in peers]


def _abort(peers: list[_Peer]) -> None:
    for peer in peers:
        try:
            send_frame(peer.sock, MSG_ERROR, b"federation aborted")
        except OSError:
            pass


def client_join(address: tuple[str, int], shard: ClientShard,
                config: TrainConfig, connect_timeout: float = 10.0,
                idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> int:
    """Join a federation: HELLO, then train on each GLOBAL until FIN.

    Returns 0 on a clean FIN. Connection refusal propagates; any protocol
    surprise raises ProtocolViolation.
    """
    sock = socket.create_connection(address, timeout=connect_timeout)
    sock.settimeout(idle_timeout)
    try:
        send_frame(sock, MSG_HELLO, encode_hello(shard.client_id, len(shard)))
        while True:
            frame = read_frame(sock)
            if frame is None:
                raise ProtocolViolation("server closed the connection without FIN")
            if frame.msg_type == MSG_FIN:
                return 0
            if frame.msg_type == MSG_ERROR:
                raise ProtocolViolation(
                    f"server error: {frame.payload.decode('utf-8', 'replace')}")
            if frame.msg_type != MSG_GLOBAL:
                raise ProtocolViolation(
                    f"unexpected message type 0x{frame.msg_type:02x} from server")
            round_index, _, global_params = decode_weight_blob(frame.payload)
            update = local_train(global_params, shard, config, round_index)
            send_frame(sock, MSG_UPDATE,
                       encode_weight_blob(round_index, update.n_samples, update.params))
    finally:
        sock.close()
