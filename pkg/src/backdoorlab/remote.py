"""HTTP detector client: ship an image plus the anomaly prompt to an external
endpoint and turn the reply into a Verdict.

Wire format: POST JSON {"image_b64": <base64 PNG>, "prompt": <text>}. Replies
may be structured JSON {"verdict": "clean"|"poisoned", "rationale": ...} or
free text, which is parsed with the marker rules in parse_verdict. Network
failures never escape the detector boundary; an exhausted client abstains
with a clean verdict and the failure in the rationale.
"""

import hashlib
import json
import os
import threading
from dataclasses import dataclass

import requests

from .detection import Verdict
from .images import Image
from .io import png_base64

AUTH_TOKEN_ENV = "BF_AUTH_TOKEN"

DEFAULT_PROMPT = """\
You are given a facial image. Carefully examine the image to identify any \
unusual or suspicious visual artifacts that may serve as a backdoor trigger \
in a poisoned dataset.

The examples of anomalies are:
- Out-of-place objects such as patches, stickers, or patterns
- Unnatural cosmetic overlays (e.g., lipstick, blush, eyeshadow)
- Accessories like hats or glasses that appear digitally inserted or inconsistent
- Grainy textures, pixel-level noise, or hidden watermarks
- Any digital modification that seems unnatural or deliberately added

If such artifacts are detected, describe each with the following:
- Type: Sticker, noise, accessory, etc.
- Appearance: Color, shape, size, texture
- Location: Forehead, eyes, corner, etc.

If no suspicious triggers are present, clearly state that none were found.
"""

ARTIFACT_MARKERS = ("Type:", "Appearance:", "Location:")
NEGATION_MARKERS = ("none were found", "no suspicious")


@dataclass(frozen=True)
class RemoteDetectorConfig:
    endpoint_url: str
    timeout_ms: int = 10_000
    max_retries: int = 2
    prompt: str = DEFAULT_PROMPT
    auth_token: str | None = None
    cache: bool = False  # opt-in reuse of verdicts for identical image content
    max_concurrent: int = 4  # in-flight request bound when called from a pool

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")

    def resolved_token(self) -> str | None:
        return self.auth_token or os.environ.get(AUTH_TOKEN_ENV)


def parse_verdict(body: str) -> Verdict:
    """Total, deterministic reply parser.

    Structured JSON with a valid "verdict" key wins outright. Otherwise free
    text is poisoned iff it carries an artifact-report heading (Type:,
    Appearance:, or Location:) and no negation phrase; a negation phrase
    ("none were found", "no suspicious", case-insensitive) always reads as
    clean. Anything else, including an empty body, is clean.
    """
    if body is None or not body.strip():
        return Verdict.clean("abstain: empty reply body")
    try:
        doc = json.loads(body)
    except (json.JSONDecodeError, ValueError):
        doc = None
    if isinstance(doc, dict):
        verdict = str(doc.get("verdict", "")).strip().lower()
        if verdict in ("clean", "poisoned"):
            rationale = doc.get("rationale")
            if verdict == "poisoned":
                return Verdict.poisoned(rationale)
            return Verdict.clean(rationale)
    lowered = body.lower()
    if any(marker in lowered for marker in NEGATION_MARKERS):
        return Verdict.clean("reply states no triggers were found")
    if any(marker in body for marker in ARTIFACT_MARKERS):
        return Verdict.poisoned("reply reports visual artifacts")
    return Verdict.clean("no artifact report in reply")


def detect_remote(cfg: RemoteDetectorConfig, x: Image) -> Verdict:
    """POST the image and prompt, retrying up to max_retries extra attempts.

    Timeouts, non-200 statuses, and transport errors are recorded and retried;
    when every attempt fails the detector abstains as clean.
    """
    payload = {"image_b64": png_base64(x), "prompt": cfg.prompt}
    headers = {}
    token = cfg.resolved_token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    timeout_s = cfg.timeout_ms / 1000.0
    attempts = cfg.max_retries + 1
    last_error = "no attempt made"
    for attempt in range(attempts):
        try:
            resp = requests.post(cfg.endpoint_url, json=payload, headers=headers, timeout=timeout_s)
        except requests.RequestException as exc:
            last_error = f"{type(exc).__name__}"
            continue
        if resp.status_code != 200:
            last_error = f"status {resp.status_code}"
            continue
        verdict = parse_verdict(resp.text)
        if attempt > 0:
            note = f"{verdict.rationale or ''} (after {attempt} retries)".strip()
            return Verdict(verdict.value, note)
        return verdict
    return Verdict.clean(f"abstain: {last_error} (attempts={attempts})")


class RemoteDetector:
    """Ensemble adapter around detect_remote.

    Shareable across threads: a semaphore bounds in-flight requests at
    cfg.max_concurrent, and when cfg.cache is on, verdicts are reused for
    bit-identical image content.
    """

    def __init__(self, cfg: RemoteDetectorConfig, name: str = "remote"):
        self.cfg = cfg
        self.name = name
        self._gate = threading.Semaphore(cfg.max_concurrent)
        self._cache = {}
        self._cache_lock = threading.Lock()

    def __call__(self, sample) -> Verdict:
        key = None
        if self.cfg.cache:
            key = hashlib.sha256(sample.image.data.tobytes()).hexdigest()
            with self._cache_lock:
                if key in self._cache:
                    return self._cache[key]
        with self._gate:
            verdict = detect_remote(self.cfg, sample.image)
        if key is not None:
            with self._cache_lock:
                self._cache[key] = verdict
        return verdict
