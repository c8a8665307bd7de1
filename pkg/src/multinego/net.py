"""Line transports between agents and a TCP front end for the broker.

Both transports move already-encoded message lines.  The TCP relay frames
each line as ``<recipient> <line>`` on the way in and forwards the bare line
to the recipient's connection, so what a recipient reads is byte-identical
to what the sender encoded.

The broker server speaks newline-delimited JSON.  A line that is a
negotiation message (SEND_IDENTITY or SEND_ADVERTISEMENT) is applied as
such; any other line is a request ``{"op": ..., "args": {...}}``.  Every
request gets one reply line ``{"ok": true, "result": ...}`` or
``{"ok": false, "error": "..."}``.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
from dataclasses import asdict

from . import protocol as P
from .broker import AdvertisementRecord, AgentRecord, Broker, BrokerError, ProductRecord
from .valuation import IssueNode

log = logging.getLogger(__name__)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {addr!r}")
    return host, int(port)


class InProcTransport:
    """Hands each line straight to the recipient."""

    def attach(self, agent_id: str) -> None:
        pass

    def carry(self, sender: str, recipient: str, line: bytes) -> bytes:
        return line

    def close(self) -> None:
        pass


class _RelayHandler(socketserver.StreamRequestHandler):
    def handle(self):
        hello = self.rfile.readline().decode("utf-8").strip()
        if not hello.startswith("HELLO "):
            return
        me = hello[6:]
        server: _RelayServer = self.server  # type: ignore[assignment]
        with server.lock:
            server.clients[me] = self.wfile
        for raw in self.rfile:
            recipient, _, line = raw.partition(b" ")
            with server.lock:
                out = server.clients.get(recipient.decode("utf-8"))
                if out is None:
                    log.error("relay: no connection for %r", recipient)
                    continue
                out.write(line)
                out.flush()


class _RelayServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr):
        super().__init__(addr, _RelayHandler)
        self.lock = threading.Lock()
        self.clients = {}


class TcpTransport:
    """Routes every line through a local TCP relay, one socket per agent."""

    def __init__(self, listen: str = "127.0.0.1:0", timeout: float = 10.0):
        self.server = _RelayServer(parse_addr(listen))
        self.address = "%s:%d" % self.server.server_address[:2]
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        self.timeout = timeout
        self._socks: dict[str, tuple[socket.socket, object]] = {}

    def attach(self, agent_id: str) -> None:
        if agent_id in self._socks:
            return
        sock = socket.create_connection(self.server.server_address[:2], timeout=self.timeout)
        sock.sendall(f"HELLO {agent_id}\n".encode("utf-8"))
        self._socks[agent_id] = (sock, sock.makefile("rb"))
        # wait until the relay knows this connection
        while True:
            with self.server.lock:
                if agent_id in self.server.clients:
                    break
            time.sleep(0.001)

    def carry(self, sender: str, recipient: str, line: bytes) -> bytes:
        self.attach(sender)
        self.attach(recipient)
        self._socks[sender][0].sendall(recipient.encode("utf-8") + b" " + line)
        got = self._socks[recipient][1].readline()
        if not got:
            raise ConnectionError(f"relay closed the connection of {recipient!r}")
        return got

    def close(self) -> None:
        for sock, fh in self._socks.values():
            fh.close()
            sock.close()
        self._socks.clear()
        self.server.shutdown()
        self.server.server_close()


# -- broker over TCP ----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, set):
        return sorted(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def handle_broker_line(broker: Broker, line: bytes | str) -> dict:
    """Apply one request line to ``broker`` and build the reply object."""
    try:
        obj = json.loads(line)
        if isinstance(obj, dict) and "kind" in obj:
            msg = P.decode(line if isinstance(line, bytes) else line.encode("utf-8"))
            return {"ok": True, "result": _apply_message(broker, msg)}
        if not isinstance(obj, dict) or "op" not in obj:
            raise BrokerError("expected a message or an {'op': ...} request")
        return {"ok": True, "result": _jsonable(_dispatch(broker, obj["op"], obj.get("args") or {}))}
    except (BrokerError, P.DecodeError, ValueError, KeyError, TypeError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _apply_message(broker: Broker, msg: P.NegotiationMessage):
    p = msg.payload
    if msg.kind is P.Kind.SEND_IDENTITY:
        return broker.register_agent(AgentRecord(msg.sender, p["name"], p["address"], p["kind"]))
    if msg.kind is P.Kind.SEND_ADVERTISEMENT:
        return broker.submit_advertisement(AdvertisementRecord(
            p["ad_id"], p["product_id"], msg.sender, p["validity"], p.get("nfa") or {}))
    raise BrokerError(f"the broker does not take {msg.kind.value} messages")


def _dispatch(broker: Broker, op: str, args: dict):
    if op == "register_agent":
        return broker.register_agent(AgentRecord(**args))
    if op == "lookup_agent":
        return broker.lookup_agent(args["agent_id"])
    if op == "register_product":
        tree = IssueNode.from_dict(args["tree"]) if args.get("tree") else None
        return broker.register_product(ProductRecord(args["product_id"], args.get("product_name", "")), tree)
    if op == "issue_tree":
        return broker.issue_tree(args["product_id"]).to_dict()
    if op == "submit_advertisement":
        return broker.submit_advertisement(AdvertisementRecord(**args))
    if op == "tick":
        return broker.tick()
    if op == "match_advertisements":
        return broker.match_advertisements()
    if op == "published_nfa":
        return broker.published_nfa(args["product_id"])
    if op == "open_negotiation":
        return broker.open_negotiation(args["product_id"], args["participants"])
    if op == "join_ongoing":
        return broker.join_ongoing(args["agent_id"], args["product_id"])
    if op == "record_offer":
        return broker.record_offer(args["episode_id"])
    if op == "close_negotiation":
        return broker.close_negotiation(args["episode_id"])
    raise BrokerError(f"unknown op {op!r}")


class _BrokerHandler(socketserver.StreamRequestHandler):
    def handle(self):
        broker = self.server.broker  # type: ignore[attr-defined]
        for raw in self.rfile:
            if not raw.strip():
                continue
            reply = handle_broker_line(broker, raw)
            self.wfile.write(json.dumps(reply, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
            self.wfile.flush()


class BrokerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, listen: str, broker: Broker | None = None):
        super().__init__(parse_addr(listen), _BrokerHandler)
        self.broker = broker or Broker()

    @property
    def address(self) -> str:
        return "%s:%d" % self.server_address[:2]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class BrokerClient:
    """Blocking client for :class:`BrokerServer`."""

    def __init__(self, addr: str, timeout: float = 10.0):
        self.sock = socket.create_connection(parse_addr(addr), timeout=timeout)
        self._rfile = self.sock.makefile("rb")

    def _roundtrip(self, line: bytes):
        self.sock.sendall(line if line.endswith(b"\n") else line + b"\n")
        reply = json.loads(self._rfile.readline())
        if not reply["ok"]:
            raise BrokerError(reply["error"])
        return reply["result"]

    def send(self, msg: P.NegotiationMessage):
        return self._roundtrip(P.encode(msg))

    def call(self, op: str, **args):
        return self._roundtrip(json.dumps({"op": op, "args": args}).encode("utf-8"))

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
