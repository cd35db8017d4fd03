"""Chat-completions HTTP client with bounded retry on transient failures."""
from __future__ import annotations

import base64
import logging
import os
import time

import httpx

from ..errors import TransportError
from .base import BackendReply, BackendRequest

logger = logging.getLogger(__name__)

TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def encode_message(m) -> dict:
    if not m.images:
        return {"role": m.role, "content": m.text}
    parts = [{"type": "text", "text": m.text}]
    for img in m.images:
        b64 = base64.b64encode(img.to_png_bytes()).decode("ascii")
        parts.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
    return {"role": m.role, "content": parts}


class HttpBackend:
    """POSTs chat-completions-compatible JSON to ``endpoint``.

    The API key is read from the environment variable named by ``api_key_env``
    at call time, so configs never carry the secret.  Timeouts, 429 and 5xx
    responses are retried ``max_retries`` times with exponential backoff.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def payload(self, req: BackendRequest) -> dict:
        return {
            "model": self.model,
            "messages": [encode_message(m) for m in req.messages],
            "temperature": req.temperature,
            "seed": req.seed,
        }

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise TransportError(f"credential environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def chat(self, req: BackendRequest) -> BackendReply:
        headers = self._headers()
        body = self.payload(req)
        delay = self.backoff
        last = None
        for attempt in range(self.max_retries + 1):
            t0 = time.perf_counter()
            try:
                resp = self._client.post(self.endpoint, json=body, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    data = resp.json()
                    try:
                        text = data["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"unexpected response shape: {exc!r}") from exc
                    if not text:
                        raise TransportError("empty completion")
                    return BackendReply(
                        text=text,
                        usage=data.get("usage") or {},
                        latency_ms=(time.perf_counter() - t0) * 1000,
                    )
                if resp.status_code not in TRANSIENT_STATUS:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            if attempt < self.max_retries:
                logger.warning("%s: transient failure (%s), retrying in %.1fs", req.channel, last, delay)
                self._sleep(delay)
                delay *= 2
        raise TransportError(f"gave up after {self.max_retries + 1} attempts: {last}")
