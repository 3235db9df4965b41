"""Scripted OpenAI-compatible stub for exercising the remote oracle.

Each request's last user message is looked up in ``schedule``; the list of
actions for that key is consumed one per request. Actions:

Prompts without a schedule get ``default``.

    "ok"             200 with content "echo:<prompt>"
    "429" / "503"    that status with an empty JSON body
    "400"            permanent client error
    "timeout"        sleep past the client timeout, then 200
    "malformed"      200 with a non-JSON body
    "empty_choices"  200 with {"choices": []}
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    def __init__(self, schedule: dict[str, list[str]] | None = None, hang: float = 0.5, jitter_ms: int = 0,
                 default: str = "ok"):
        self.schedule = {k: list(v) for k, v in (schedule or {}).items()}
        self.hang = hang
        self.jitter_ms = jitter_ms
        self.default = default
        self.hits: dict[str, int] = defaultdict(int)
        self.bodies: list[dict] = []
        self.lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(n))
                prompt = body["messages"][-1]["content"]
                with stub.lock:
                    stub.bodies.append(body)
                    stub.hits[prompt] += 1
                    queue = stub.schedule.get(prompt, [])
                    action = queue.pop(0) if queue else stub.default
                if stub.jitter_ms:
                    # deterministic per-prompt delay to scramble completion order
                    time.sleep((sum(map(ord, prompt)) % stub.jitter_ms) / 1000)
                if action == "timeout":
                    time.sleep(stub.hang)
                    action = "ok"
                if action == "ok":
                    self._send(200, {"choices": [{"message": {"role": "assistant", "content": f"echo:{prompt}"}}]})
                elif action == "malformed":
                    self._send_raw(200, b"<html>oops")
                elif action == "empty_choices":
                    self._send(200, {"choices": []})
                else:
                    self._send(int(action), {"error": action})

            def _send(self, code, obj):
                self._send_raw(code, json.dumps(obj).encode())

            def _send_raw(self, code, data):
                try:
                    self.send_response(code)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
