"""Exercise the HTTP detector against the bundled mock endpoint: happy path,
flaky retries, a stalling server, and free-text reply parsing.

No external services involved; the mock binds an ephemeral local port.
"""

import time

import numpy as np

from backdoorlab import parse_verdict
from backdoorlab.images import Image
from backdoorlab.mockvlm import MockScenario, MockVlmServer
from backdoorlab.remote import RemoteDetectorConfig, detect_remote

query = Image(np.full((16, 16, 3), 0.5, dtype=np.float32))

print("reply parsing on its own:")
for body in (
    '{"verdict": "poisoned", "rationale": "sticker top-left"}',
    "Examined closely. Type: noise  Appearance: grainy  Location: everywhere",
    "I looked for stickers and overlays; none were found.",
    "Considered Type: accessory at first, but no suspicious artifacts exist.",
):
    v = parse_verdict(body)
    print(f"  {v.value.value:8s} <- {body[:60]!r}")

print("\nscenarios against the live mock:")
with MockVlmServer(MockScenario("always-poisoned")) as server:
    cfg = RemoteDetectorConfig(server.url, timeout_ms=2000)
    v = detect_remote(cfg, query)
    print(f"  always-poisoned: {v.value.value} ({v.rationale})")

with MockVlmServer(MockScenario("flaky", fail_first=2)) as server:
    cfg = RemoteDetectorConfig(server.url, timeout_ms=2000, max_retries=3)
    v = detect_remote(cfg, query)
    print(f"  flaky x2:        {v.value.value} ({v.rationale}); mock saw {server.request_count} requests")

with MockVlmServer(MockScenario("stalling", stall_seconds=3.0)) as server:
    cfg = RemoteDetectorConfig(server.url, timeout_ms=250, max_retries=0)
    t0 = time.perf_counter()
    v = detect_remote(cfg, query)
    print(
        f"  stalling server: {v.value.value} ({v.rationale}) "
        f"after {time.perf_counter() - t0:.2f}s, not the 3s stall"
    )
