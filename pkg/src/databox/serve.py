"""Gateway wire protocol over a local TCP socket.

Framing: one JSON object per line (UTF-8, ``\\n`` terminated), version tag
``v: 1`` on every frame.

  request:  {"v": 1, "id": n, "method": ..., "path": ..., "auth": {...},
             "body": {...}}
  response: {"v": 1, "id": n, "status": ..., "body": {...}}
  push:     {"v": 1, "event": {...}}   (after {"v": 1, "subscribe": true})

Run standalone: ``python -m databox.serve --data-dir DIR [--port P] [--seed S]``.
The bound port is printed as ``LISTENING <port>`` so clients can handshake.
"""

from __future__ import annotations

import argparse
import json
import socket
import socketserver
import threading

from .gateway import Gateway
from .platform import Platform

PROTOCOL_VERSION = 1


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        gateway: Gateway = self.server.gateway  # type: ignore[attr-defined]
        unsubscribe = None
        lock = threading.Lock()

        def push(event):
            try:
                with lock:
                    self.wfile.write(
                        (json.dumps({"v": PROTOCOL_VERSION, "event": event}) + "\n").encode())
                    self.wfile.flush()
            except OSError:
                pass

        try:
            for raw in self.rfile:
                line = raw.strip()
                if not line:
                    continue
                try:
                    frame = json.loads(line)
                except json.JSONDecodeError:
                    self._send({"v": PROTOCOL_VERSION, "id": None, "status": 400,
                                "body": {"error": "BAD-FRAME"}}, lock)
                    continue
                if frame.get("v") != PROTOCOL_VERSION:
                    self._send({"v": PROTOCOL_VERSION, "id": frame.get("id"),
                                "status": 400, "body": {"error": "BAD-VERSION"}}, lock)
                    continue
                if frame.get("subscribe"):
                    if unsubscribe is None:
                        unsubscribe = gateway.platform.subscribe(push)
                    self._send({"v": PROTOCOL_VERSION, "id": frame.get("id"),
                                "status": 200, "body": {"subscribed": True}}, lock)
                    continue
                response = gateway.api_dispatch(frame)
                self._send({"v": PROTOCOL_VERSION, "id": frame.get("id"),
                            **response}, lock)
        finally:
            if unsubscribe is not None:
                unsubscribe()

    def _send(self, obj, lock):
        with lock:
            self.wfile.write((json.dumps(obj) + "\n").encode())
            self.wfile.flush()


class GatewayServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, gateway: Gateway, host="127.0.0.1", port=0):
        super().__init__((host, port), _Handler)
        self.gateway = gateway

    @property
    def port(self) -> int:
        return self.server_address[1]


class GatewayClient:
    """Blocking JSON-lines client for the gateway socket protocol."""

    def __init__(self, host="127.0.0.1", port=0):
        self.sock = socket.create_connection((host, port))
        self.rfile = self.sock.makefile("r", encoding="utf-8")
        self._id = 0

    def request(self, method: str, path: str, auth=None, body=None) -> dict:
        self._id += 1
        frame = {"v": PROTOCOL_VERSION, "id": self._id, "method": method,
                 "path": path, "auth": auth or {}, "body": body or {}}
        self.sock.sendall((json.dumps(frame) + "\n").encode())
        while True:
            line = self.rfile.readline()
            if not line:
                raise ConnectionError("gateway closed connection")
            obj = json.loads(line)
            if obj.get("id") == self._id:
                return {"status": obj["status"], "body": obj["body"]}
            # event frames on a non-subscribed client are ignored

    def close(self):
        self.sock.close()


def main(argv=None):
    ap = argparse.ArgumentParser(description="Run the gateway socket server")
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    ap.add_argument("--seed", type=int, default=None,
                    help="deterministic platform under a virtual clock")
    ap.add_argument("--bootstrap-owner", default=None, metavar="NAME",
                    help="create the first owner account if none exists")
    args = ap.parse_args(argv)
    platform = Platform(args.data_dir, seed=args.seed)
    platform.load_state()
    if args.bootstrap_owner and not platform.accounts:
        platform.create_account(args.bootstrap_owner, "owner")
    server = GatewayServer(Gateway(platform), host=args.host, port=args.port)
    print(f"LISTENING {server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


if __name__ == "__main__":
    main()
