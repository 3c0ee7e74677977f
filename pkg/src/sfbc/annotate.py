"""Success-probability annotation of sub-trajectories.

Two interchangeable backends score each sub-trajectory with the probability
of a "no" answer to a Markov prompt (is the pendulum hanging right now?) and
a non-Markov prompt (did the stick move between sides of the screen?):

* ScriptedOracle -- deterministic scoring straight from ground-truth states,
  so the whole pipeline runs reproducibly with no endpoint.
* RemoteScorer -- renders frames and queries any chat-completions-style
  vision endpoint that exposes token log-probabilities.

The two per-prompt "no" probabilities combine into the final success
probability: p_markov = 1 - p_no_markov, p_nonmarkov = 1 - p_no_nonmarkov,
p_vlm = min(1, p_markov + p_nonmarkov).
"""

from __future__ import annotations

import base64
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .datagen import Dataset
from .pendulum import State, wrap_angles
from .render import Frame, png_bytes, render
from .subtraj import segment_bounds

MARKOV_PROMPT = (
    "You are watching a video of a red stick. If the black dot is at the "
    "bottom of the stick, answer 'Y'. Otherwise, answer 'N'."
)
NONMARKOV_PROMPT = (
    "You are watching a video of a red stick. If the stick has moved between "
    "sides of the screen (left to right or right to left), answer 'Y'. "
    "Otherwise, answer 'N'."
)

MARKOV = "markov"
NONMARKOV = "nonmarkov"

DEFAULT_SUBSAMPLE = 20

# Oracle geometry: a state counts as hanging when within this angle of the
# bottom, and side crossings only count away from the bottom sliver.
HANGING_ANGLE = 0.5
CROSSING_MAX_ABS_THETA = 2.8

# Soft-probability clamp emulating a VLM that is never fully certain.
P_NO_FLOOR = 0.02
P_NO_CEIL = 0.98

NO_TOKENS = frozenset({"n", "no"})
YES_TOKENS = frozenset({"y", "yes"})

MAX_REMOTE_FRAMES = 16


class AnnotationError(RuntimeError):
    pass


class RemoteEndpointError(AnnotationError):
    pass


@dataclass(frozen=True)
class PromptPair:
    markov_text: str = MARKOV_PROMPT
    nonmarkov_text: str = NONMARKOV_PROMPT

    def __post_init__(self) -> None:
        if not self.markov_text or not self.nonmarkov_text:
            raise ValueError("prompts must be non-empty")

    def text(self, kind: str) -> str:
        if kind == MARKOV:
            return self.markov_text
        if kind == NONMARKOV:
            return self.nonmarkov_text
        raise ValueError(f"unknown prompt kind {kind!r}")


@dataclass(frozen=True)
class Annotation:
    traj_id: int
    segment_index: int
    p_markov: float
    p_nonmarkov: float
    p_vlm: float
    backend: str


def combine(p_no_markov: float, p_no_nonmarkov: float) -> tuple[float, float, float]:
    """Turn the two per-prompt "no" probabilities into success probabilities."""
    for name, p in (("p_no_markov", p_no_markov), ("p_no_nonmarkov", p_no_nonmarkov)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {p}")
    p_markov = 1.0 - p_no_markov
    p_nonmarkov = 1.0 - p_no_nonmarkov
    p_vlm = min(1.0, p_markov + p_nonmarkov)
    return p_markov, p_nonmarkov, p_vlm


def _clamp_soft(p: float) -> float:
    return min(P_NO_CEIL, max(P_NO_FLOOR, p))


def scripted_oracle_score(thetas: Sequence[float], kind: str) -> float:
    """Probability of "no" for one prompt, computed from ground-truth angles."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.size < 2:
        raise AnnotationError(f"need at least 2 states to score, got {thetas.size}")
    if kind == MARKOV:
        hanging = np.abs(wrap_angles(thetas - math.pi)) < HANGING_ANGLE
        return _clamp_soft(float(np.mean(hanging)))
    if kind == NONMARKOV:
        sides = np.sin(thetas) >= 0.0
        near = np.abs(thetas) < CROSSING_MAX_ABS_THETA
        crossed = (sides[:-1] != sides[1:]) & near[:-1] & near[1:]
        return _clamp_soft(0.0 if bool(crossed.any()) else 1.0)
    raise ValueError(f"unknown prompt kind {kind!r}")


class AnnotatorBackend(Protocol):
    """Scores one subsampled sub-trajectory with the probability of "no"."""

    backend_id: str

    def score(self, thetas: np.ndarray, kind: str, prompts: PromptPair) -> float: ...


class ScriptedOracle:
    """Deterministic annotator reading ground-truth states (prompts unused)."""

    backend_id = "oracle"

    def score(self, thetas: np.ndarray, kind: str, prompts: PromptPair) -> float:
        return scripted_oracle_score(thetas, kind)


class RateLimiter:
    """Serializes request starts to a requests-per-minute budget."""

    def __init__(self, rpm: float | None):
        self._interval = 60.0 / rpm if rpm else 0.0
        self._lock = threading.Lock()
        self._next_at = 0.0

    def wait(self) -> None:
        if self._interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if delay > 0:
            time.sleep(delay)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    api_key: str
    timeout: float = 120.0
    max_attempts: int = 5
    backoff: float = 1.0
    top_logprobs: int = 20
    frame_size: int = 256

    def __post_init__(self) -> None:
        if not self.url or not self.model or not self.api_key:
            raise ValueError("endpoint URL, model name, and API key are all required")


def extract_p_no(payload: dict) -> float:
    """Sum the probabilities of "n"/"no" over the first token's candidates.

    Only the first generated token's distribution is inspected; candidate
    token text is stripped and lowercased before matching.
    """
    try:
        content = payload["choices"][0]["logprobs"]["content"]
        top = content[0]["top_logprobs"]
    except (KeyError, IndexError, TypeError) as exc:
        raise RemoteEndpointError(
            "response carries no token log-probabilities; endpoint unsuitable"
        ) from exc
    p_no = 0.0
    for cand in top:
        if str(cand["token"]).strip().lower() in NO_TOKENS:
            p_no += math.exp(float(cand["logprob"]))
    return min(1.0, p_no)


class RemoteScorer:
    """Client for an OpenAI-compatible chat-completions vision endpoint."""

    def __init__(self, config: EndpointConfig, limiter: RateLimiter | None = None,
                 session: requests.Session | None = None):
        self.config = config
        self.backend_id = f"remote:{config.model}"
        self._limiter = limiter or RateLimiter(None)
        self._session = session or requests.Session()

    def score(self, thetas: np.ndarray, kind: str, prompts: PromptPair) -> float:
        frames = [render(State(float(th), 0.0), self.config.frame_size, self.config.frame_size)
                  for th in thetas]
        return self.score_frames(frames, prompts.text(kind))

    def score_frames(self, frames: Sequence[Frame], prompt: str) -> float:
        if not 1 <= len(frames) <= MAX_REMOTE_FRAMES:
            raise ValueError(
                f"remote scoring takes 1..{MAX_REMOTE_FRAMES} frames, got {len(frames)}; "
                "raise the subsample stride"
            )
        payload = self._request({
            "model": self.config.model,
            "messages": [{"role": "user", "content": self._content(frames, prompt)}],
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": True,
            "top_logprobs": self.config.top_logprobs,
        })
        return extract_p_no(payload)

    @staticmethod
    def _content(frames: Sequence[Frame], prompt: str) -> list[dict]:
        parts: list[dict] = [{"type": "text", "text": prompt}]
        for frame in frames:
            b64 = base64.b64encode(png_bytes(frame)).decode("ascii")
            parts.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{b64}"},
            })
        return parts

    def _request(self, body: dict) -> dict:
        headers = {
            "Authorization": f"Bearer {self.config.api_key}",
            "Content-Type": "application/json",
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            self._limiter.wait()
            try:
                resp = self._session.post(
                    self.config.url, headers=headers, data=json.dumps(body),
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RemoteEndpointError(f"endpoint returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise RemoteEndpointError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise RemoteEndpointError(
            f"endpoint failed after {self.config.max_attempts} attempts: {last_error}"
        )


class AnnotationCache:
    """Append-only JSONL cache of per-(segment, prompt) "no" probabilities.

    Keyed by dataset checksum, trajectory, segment index, segment length,
    prompt kind, backend id, and subsample stride; the segment length is part
    of the key because segment indices are only meaningful relative to it.
    """

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path else None
        self._values: dict[str, float] = {}
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            with open(self._path, "r", encoding="ascii") as fh:
                for line in fh:
                    rec = json.loads(line)
                    self._values[rec["key"]] = rec["p_no"]

    @staticmethod
    def key(dataset_checksum: str, traj_id: int, segment_index: int,
            segment_length: int, kind: str, backend_id: str, subsample: int) -> str:
        return "|".join([
            dataset_checksum, str(traj_id), str(segment_index),
            str(segment_length), kind, backend_id, str(subsample),
        ])

    def get(self, key: str) -> float | None:
        with self._lock:
            return self._values.get(key)

    def put(self, key: str, p_no: float) -> None:
        with self._lock:
            if key in self._values:
                return
            self._values[key] = p_no
            if self._path:
                with open(self._path, "a", encoding="ascii") as fh:
                    fh.write(json.dumps({"key": key, "p_no": p_no}) + "\n")
                    fh.flush()

    def __len__(self) -> int:
        return len(self._values)


def subsample_indices(segment_length: int, stride: int) -> list[int]:
    """Within-segment offsets scored per segment: 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError(f"subsample stride must be >= 1, got {stride}")
    return list(range(0, segment_length, stride))


def annotate_dataset(
    dataset: Dataset,
    backend: AnnotatorBackend,
    segment_length: int,
    subsample: int = DEFAULT_SUBSAMPLE,
    prompts: PromptPair | None = None,
    cache: AnnotationCache | None = None,
    concurrency: int = 1,
    skip_failures: bool = False,
) -> tuple[list[Annotation], int]:
    """Score every sub-trajectory; returns (annotations, failure count).

    Idempotent under re-runs through the cache. Failed segments are skipped
    (and counted) when `skip_failures` is set, otherwise the first failure
    aborts the run.
    """
    prompts = prompts or PromptPair()
    cache = cache or AnnotationCache(None)

    tasks = []
    for traj in dataset.trajectories:
        for i, (start, length) in enumerate(segment_bounds(len(traj), segment_length)):
            offsets = subsample_indices(length, subsample)
            thetas = traj.thetas[start:start + length][offsets]
            tasks.append((traj.traj_id, i, thetas))

    def score_segment(task: tuple[int, int, np.ndarray]) -> Annotation:
        traj_id, i, thetas = task
        p_no = {}
        for kind in (MARKOV, NONMARKOV):
            key = AnnotationCache.key(
                dataset.checksum, traj_id, i, segment_length, kind,
                backend.backend_id, subsample,
            )
            value = cache.get(key)
            if value is None:
                value = backend.score(thetas, kind, prompts)
                cache.put(key, value)
            p_no[kind] = value
        p_markov, p_nonmarkov, p_vlm = combine(p_no[MARKOV], p_no[NONMARKOV])
        return Annotation(traj_id, i, p_markov, p_nonmarkov, p_vlm, backend.backend_id)

    annotations: list[Annotation] = []
    failures = 0
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(_guarded(score_segment, skip_failures), tasks))
        for res in results:
            if res is None:
                failures += 1
            else:
                annotations.append(res)
    else:
        for task in tasks:
            try:
                annotations.append(score_segment(task))
            except AnnotationError:
                if not skip_failures:
                    raise
                failures += 1

    annotations.sort(key=lambda a: (a.traj_id, a.segment_index))
    return annotations, failures


def _guarded(fn, skip_failures: bool):
    def wrapped(task):
        try:
            return fn(task)
        except AnnotationError:
            if skip_failures:
                return None
            raise

    return wrapped


def annotation_index(annotations: Iterable[Annotation]) -> dict[tuple[int, int], Annotation]:
    return {(a.traj_id, a.segment_index): a for a in annotations}


def save_annotations(annotations: Iterable[Annotation], path: str | Path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for a in annotations:
            fh.write(
                f'{{"traj_id":{a.traj_id},"i":{a.segment_index},"p_markov":{a.p_markov!r},'
                f'"p_nonmarkov":{a.p_nonmarkov!r},"p_vlm":{a.p_vlm!r},'
                f'"backend":{json.dumps(a.backend)}}}\n'
            )


def load_annotations(path: str | Path) -> list[Annotation]:
    annotations = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            rec = json.loads(line)
            annotations.append(Annotation(
                traj_id=rec["traj_id"],
                segment_index=rec["i"],
                p_markov=rec["p_markov"],
                p_nonmarkov=rec["p_nonmarkov"],
                p_vlm=rec["p_vlm"],
                backend=rec["backend"],
            ))
    return annotations
