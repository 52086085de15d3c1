"""Threaded MQTT broker for the supported 3.1.1 subset.

One reader thread per connection; writes to a connection are serialized
behind a per-connection lock, so fan-out from many publishers interleaves
at packet granularity while each publisher's own stream stays in order.
QoS 1 publishes are acknowledged only after the attached ingestion sink
has durably recorded the message; without a sink they are acknowledged
after fan-out.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from typing import Optional

from . import codec
from .codec import (
    Connack,
    Connect,
    Disconnect,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
)

__all__ = ["Broker"]

log = logging.getLogger("ecgmon.mqtt.broker")

MAX_PACKET_BYTES = 256 * 1024
CONNACK_ACCEPTED = 0x00
CONNACK_BAD_CREDENTIALS = 0x04


class _Connection:
    def __init__(self, broker: "Broker", sock: socket.socket, addr):
        self.broker = broker
        self.sock = sock
        self.addr = addr
        self.client_id: Optional[str] = None
        self.keep_alive = 0
        self.closed = threading.Event()
        self._write_lock = threading.Lock()
        self._next_out_pid = 1
        self.thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self.thread.start()

    def send(self, packet) -> None:
        data = codec.encode_packet(packet)
        with self._write_lock:
            try:
                self.sock.sendall(data)
            except OSError:
                self.close()

    def next_packet_id(self) -> int:
        with self._write_lock:
            pid = self._next_out_pid
            self._next_out_pid = pid % 0xFFFF + 1
            return pid

    def close(self) -> None:
        if self.closed.is_set():
            return
        self.closed.set()
        try:
            self.sock.close()
        except OSError:
            pass
        self.broker._forget(self)

    # ------------------------------------------------------------ loop

    def _run(self) -> None:
        buf = bytearray()
        connected = False
        self.sock.settimeout(0.25)
        last_rx = time.monotonic()
        try:
            while not self.closed.is_set():
                try:
                    data = self.sock.recv(65536)
                except socket.timeout:
                    if connected and self.keep_alive:
                        if time.monotonic() - last_rx > 1.5 * self.keep_alive:
                            log.info("dropping idle client %s", self.client_id)
                            break
                    continue
                except OSError:
                    break
                if not data:
                    break
                last_rx = time.monotonic()
                buf.extend(data)
                while True:
                    try:
                        decoded = codec.decode_packet(buf, max_remaining=MAX_PACKET_BYTES)
                    except codec.ProtocolError as exc:
                        log.warning("protocol error from %s: %s", self.addr, exc)
                        return
                    if decoded is None:
                        break
                    packet, consumed = decoded
                    del buf[:consumed]
                    if not connected:
                        if not isinstance(packet, Connect):
                            log.warning("first packet from %s was %s, closing",
                                        self.addr, type(packet).__name__)
                            return
                        if not self._handle_connect(packet):
                            return
                        connected = True
                    elif not self._dispatch(packet):
                        return
        finally:
            self.close()

    def _handle_connect(self, packet: Connect) -> bool:
        if self.broker.username is not None:
            if packet.username != self.broker.username or \
                    packet.password != self.broker.password:
                self.send(Connack(False, CONNACK_BAD_CREDENTIALS))
                return False
        self.client_id = packet.client_id or f"anon-{id(self):x}"
        self.keep_alive = packet.keep_alive
        # Clean sessions only: a reconnect never resumes state, and a
        # duplicate client id evicts the older session.
        self.broker._register(self)
        self.send(Connack(session_present=False, return_code=CONNACK_ACCEPTED))
        return True

    def _dispatch(self, packet) -> bool:
        if isinstance(packet, Publish):
            self.broker._fan_out(packet)
            self.broker._ingest(self, packet)
            return True
        if isinstance(packet, Subscribe):
            return self._handle_subscribe(packet)
        if isinstance(packet, Pingreq):
            self.send(Pingresp())
            return True
        if isinstance(packet, Puback):
            return True  # subscriber-side ack of a QoS 1 delivery; no retransmit state
        if isinstance(packet, Disconnect):
            return False
        if isinstance(packet, Connect):
            log.warning("second CONNECT from %s", self.client_id)
            return False
        log.warning("unexpected %s from client %s", type(packet).__name__, self.client_id)
        return False

    def _handle_subscribe(self, packet: Subscribe) -> bool:
        codes = []
        for topic_filter, qos in packet.topics:
            if codec.valid_topic_filter(topic_filter):
                self.broker._subscribe(self, topic_filter, qos)
                codes.append(qos)
            else:
                codes.append(0x80)
        self.send(Suback(packet.packet_id, tuple(codes)))
        return True


class Broker:
    """TCP listener plus subscription table and sink hand-off."""

    def __init__(self, host: str = "127.0.0.1", port: int = 1883,
                 sink=None, username: Optional[str] = None,
                 password: Optional[bytes] = None):
        self.host = host
        self._requested_port = port
        self.sink = sink
        self.username = username
        self.password = password
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()
        self._lock = threading.Lock()
        self._connections: list[_Connection] = []
        self._clients: dict[str, _Connection] = {}
        self._subs: list[tuple[_Connection, str, int]] = []

    # --------------------------------------------------------- lifecycle

    def start(self) -> "Broker":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self._requested_port))
        listener.listen(64)
        listener.settimeout(0.25)
        self._listener = listener
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        log.info("broker listening on %s:%d", self.host, self.port)
        return self

    @property
    def port(self) -> int:
        if self._listener is None:
            return self._requested_port
        return self._listener.getsockname()[1]

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            self._listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        with self._lock:
            conns = list(self._connections)
        for conn in conns:
            conn.close()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(self, sock, addr)
            with self._lock:
                self._connections.append(conn)
            conn.start()

    # --------------------------------------------------------- registry

    def _register(self, conn: _Connection) -> None:
        with self._lock:
            older = self._clients.get(conn.client_id)
            self._clients[conn.client_id] = conn
        if older is not None and older is not conn:
            log.info("client id %s taken over, closing older session", conn.client_id)
            older.close()

    def _forget(self, conn: _Connection) -> None:
        with self._lock:
            if conn in self._connections:
                self._connections.remove(conn)
            if self._clients.get(conn.client_id) is conn:
                del self._clients[conn.client_id]
            self._subs = [s for s in self._subs if s[0] is not conn]

    def _subscribe(self, conn: _Connection, topic_filter: str, qos: int) -> None:
        with self._lock:
            # replace an existing subscription with the same filter
            self._subs = [s for s in self._subs
                          if not (s[0] is conn and s[1] == topic_filter)]
            self._subs.append((conn, topic_filter, qos))

    # --------------------------------------------------------- data path

    def _fan_out(self, packet: Publish) -> None:
        with self._lock:
            targets = [(conn, qos) for conn, topic_filter, qos in self._subs
                       if codec.topic_matches(topic_filter, packet.topic)]
        for conn, granted_qos in targets:
            out_qos = min(packet.qos, granted_qos)
            if out_qos == 0:
                conn.send(Publish(packet.topic, packet.payload, 0))
            else:
                conn.send(Publish(packet.topic, packet.payload, 1,
                                  conn.next_packet_id()))

    def _ingest(self, conn: _Connection, packet: Publish) -> None:
        pid = packet.packet_id

        def ack() -> None:
            # QoS 0 publishes are ingested but have nothing to acknowledge
            if pid is not None and not conn.closed.is_set():
                conn.send(Puback(pid))

        if self.sink is None:
            ack()
            return
        # Blocking hand-off to the sink's bounded queue: a full queue
        # stalls this reader thread, which is the back-pressure path
        # (the publisher's ack is delayed, never dropped).
        self.sink.submit(packet.topic, packet.payload, pid, packet.dup, ack,
                         abort=conn.closed)
