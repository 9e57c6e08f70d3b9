"""JSON wire client for an external narrating/selecting model.

Every message is one POST of a JSON object to the endpoint; the reply is one
JSON object. Transient failures (connection errors, timeouts, 429 and 5xx)
are retried with exponential backoff. Anything that does not match the
protocol raises :class:`VerifierError` carrying the raw response text.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np

from ..exceptions import ConfigurationError, VerifierError
from ..narration import GRAMMAR, Narration
from ..worldmodel.model import decode_many
from .oracle import CandidateScore, MonitorResult, Verdict, check_candidates, score_features

logger = logging.getLogger(__name__)

RETRY_STATUS = {429, 500, 502, 503, 504}


class VerifierClient:
    def __init__(self, endpoint=None, token=None, timeout=10.0, retries=2, backoff=0.25, max_workers=6):
        self.endpoint = endpoint or os.environ.get("VERIFIER_ENDPOINT")
        if not self.endpoint:
            raise ConfigurationError("no verifier endpoint configured (set VERIFIER_ENDPOINT)")
        self.token = token if token is not None else os.environ.get("VERIFIER_TOKEN")
        if timeout <= 0 or retries < 0 or backoff < 0:
            raise ConfigurationError("timeout must be positive; retries and backoff nonnegative")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_workers = max_workers
        headers = {"Content-Type": "application/json; charset=utf-8"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        self._http = httpx.Client(timeout=timeout, headers=headers)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, payload):
        """POST one message and return the decoded JSON reply."""
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = VerifierError(f"{payload['type']} request failed: {exc}")
                logger.warning("verifier transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRY_STATUS:
                last = VerifierError(f"verifier returned HTTP {resp.status_code}", raw=resp.text)
                continue
            if resp.status_code != 200:
                raise VerifierError(f"verifier returned HTTP {resp.status_code}", raw=resp.text)
            try:
                body = resp.json()
            except ValueError:
                raise VerifierError("verifier reply is not JSON", raw=resp.text) from None
            if not isinstance(body, dict):
                raise VerifierError("verifier reply is not a JSON object", raw=resp.text)
            body["_raw"] = resp.text
            return body
        raise last

    def narrate(self, rollout_id, frames, grammar=GRAMMAR):
        frames = np.asarray(frames, dtype=np.float64)
        payload = {
            "type": "narrate",
            "rollout_id": str(rollout_id),
            "frames": [[float(v) for v in row] for row in frames],
            "grammar": list(grammar),
        }
        body = self.request(payload)
        raw = body.pop("_raw")
        if body.get("type") != "narration" or body.get("rollout_id") != payload["rollout_id"]:
            raise VerifierError("narration reply has the wrong type or rollout id", raw=raw)
        text = body.get("text")
        if not isinstance(text, str) or "\n" in text:
            raise VerifierError("narration text must be a single-line string", raw=raw)
        return text

    def select(self, task_text, narrations):
        body = self.request({"type": "select", "task": task_text, "narrations": list(narrations)})
        raw = body.pop("_raw")
        choice = body.get("choice")
        if body.get("type") != "verdict" or isinstance(choice, bool) or not isinstance(choice, int):
            raise VerifierError("select reply must be a verdict with an integer choice", raw=raw)
        if not 0 <= choice < len(narrations):
            raise VerifierError(f"choice {choice} is out of range for {len(narrations)} candidates", raw=raw)
        return choice, str(body.get("rationale", ""))

    def monitor(self, task_text, narration):
        body = self.request({"type": "monitor", "task": task_text, "narration": narration})
        raw = body.pop("_raw")
        if body.get("type") != "verdict" or not isinstance(body.get("ok"), bool):
            raise VerifierError("monitor reply must be a verdict with a boolean ok", raw=raw)
        return body["ok"], str(body.get("rationale", ""))


class ClientVerifier:
    """Verifier backend that delegates narration and selection to a :class:`VerifierClient`.

    The remote side is rank-only: the chosen candidate gets score 1 and the
    rest 0. ``ok`` flags are recomputed locally from the parsed narrations.
    """

    name = "client"

    def __init__(self, client, max_k=None):
        self.client = client
        self.max_k = max_k

    def _parse(self, text, raw=None):
        try:
            return Narration.from_text(text)
        except ValueError:
            raise VerifierError(f"narration is outside the grammar: {text!r}", raw=raw or text) from None

    def narrate_frames(self, frames, rollout_id="0"):
        return self._parse(self.client.narrate(rollout_id, frames))

    def narrate(self, rollout, params):
        return self.narrate_frames(decode_many(params, rollout.downsampled), str(rollout.plan_index))

    def narrate_many(self, rollouts, params):
        frames = {str(r.plan_index): decode_many(params, r.downsampled) for r in rollouts}
        if len(frames) != len(rollouts):
            raise ConfigurationError("rollouts must have distinct plan indices")
        with ThreadPoolExecutor(max_workers=self.client.max_workers) as pool:
            futures = {rid: pool.submit(self.client.narrate, rid, f) for rid, f in frames.items()}
            texts = {rid: fut.result() for rid, fut in futures.items()}
        return [self._parse(texts[str(r.plan_index)]) for r in rollouts]

    def select(self, narrations, task):
        check_candidates(narrations, self.max_k)
        choice, rationale = self.client.select(task.text, [n.text for n in narrations])
        per = []
        for i, n in enumerate(narrations):
            local = score_features(n.features, task)
            per.append(CandidateScore(1.0 if i == choice else 0.0, local.ok, rationale if i == choice else ""))
        return Verdict(choice, tuple(per))

    def monitor(self, narration, task):
        ok, rationale = self.client.monitor(task.text, narration.text)
        return MonitorResult(ok, rationale)
