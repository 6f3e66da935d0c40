"""Local mock of the remote detector endpoint, for tests and offline demos.

Speaks the same wire protocol as the real client and runs one of a few
scriptable scenarios: always-clean, always-poisoned, their structured-JSON
twins, flaky (first N requests fail with 503), and stalling (sleeps before
answering). Run standalone with `python -m backdoorlab.mockvlm`.
"""

import argparse
import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

SCENARIOS = (
    "always-clean",
    "always-poisoned",
    "structured-clean",
    "structured-poisoned",
    "flaky",
    "stalling",
)

CLEAN_TEXT = (
    "I examined the image carefully for patches, stickers, overlays, and "
    "pixel-level noise. No suspicious triggers are present; none were found."
)

POISONED_TEXT = (
    "Suspicious artifacts detected:\n"
    "Type: Sticker\n"
    "Appearance: small high-contrast checkered square\n"
    "Location: upper-left corner"
)


@dataclass
class MockScenario:
    mode: str = "always-clean"
    fail_first: int = 0  # flaky: number of leading requests answered 503
    stall_seconds: float = 0.0  # stalling: delay before the reply

    def __post_init__(self):
        if self.mode not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.mode!r}; pick from {SCENARIOS}")


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        server = self.server
        with server.lock:
            server.request_count += 1
            count = server.request_count
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b""
        try:
            doc = json.loads(raw.decode("utf-8")) if raw else {}
        except json.JSONDecodeError:
            doc = {}
        with server.lock:
            server.requests.append(
                {
                    "number": count,
                    "has_image": bool(doc.get("image_b64")),
                    "prompt": doc.get("prompt", ""),
                    "authorization": self.headers.get("Authorization"),
                }
            )
        scenario = server.scenario
        if scenario.mode == "flaky" and count <= scenario.fail_first:
            self._reply(503, "service unavailable")
            return
        if scenario.mode == "stalling":
            time.sleep(scenario.stall_seconds)
        if scenario.mode == "always-poisoned":
            self._reply(200, POISONED_TEXT)
        elif scenario.mode == "structured-clean":
            self._reply(200, json.dumps({"verdict": "clean", "rationale": "scripted"}))
        elif scenario.mode == "structured-poisoned":
            self._reply(200, json.dumps({"verdict": "poisoned", "rationale": "scripted"}))
        else:  # always-clean, flaky after its failures, stalling
            self._reply(200, CLEAN_TEXT)

    def _reply(self, status: int, body: str):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):  # keep test output quiet
        pass


class MockVlmServer:
    """Threaded mock endpoint; use as a context manager in tests."""

    def __init__(self, scenario: MockScenario | None = None, port: int = 0):
        self.scenario = scenario or MockScenario()
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._server.daemon_threads = True
        self._server.scenario = self.scenario
        self._server.lock = threading.Lock()
        self._server.request_count = 0
        self._server.requests = []
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        with self._server.lock:
            return self._server.request_count

    @property
    def requests(self) -> list:
        with self._server.lock:
            return list(self._server.requests)

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="mock detector endpoint")
    parser.add_argument("--port", type=int, default=8377)
    parser.add_argument("--scenario", choices=SCENARIOS, default="always-clean")
    parser.add_argument("--fail-first", type=int, default=0)
    parser.add_argument("--stall-seconds", type=float, default=0.0)
    args = parser.parse_args(argv)
    scenario = MockScenario(args.scenario, args.fail_first, args.stall_seconds)
    server = MockVlmServer(scenario, port=args.port)
    print(f"mock detector ({scenario.mode}) listening on {server.url}")
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
