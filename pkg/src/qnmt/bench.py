"""Throughput measurement and phase profiling for the decode paths.

Speed is reported as words per second (WPS) and words per core-second
(WPCS = WPS / worker count) over the target side of the corpus, with the
wall time taken as the median of an odd number of repeated runs after one
untimed warm-up pass.  Worker threads each translate one sentence at a time
against the shared immutable model.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .decoder import DecodeConfig, translate
from .errors import ConfigError
from .model import ModelParams, QuantizedModel, quantize_model

PHASES = ("quantize-activations", "matmul", "transcendental", "embedding",
          "search-overhead", "other")


class PhaseTimer:
    """Wall-clock accumulator per named phase.

    Phases may nest; time is attributed to the innermost open phase (an
    enclosing phase is paused while a nested one runs).  Not thread-safe:
    each worker owns its own timer and the results are merged afterwards.
    """

    def __init__(self):
        self.seconds: dict = {}
        self._stack: list = []

    def push(self, name: str):
        now = time.perf_counter()
        if self._stack:
            top = self._stack[-1]
            self.seconds[top[0]] = self.seconds.get(top[0], 0.0) + (now - top[1])
        self._stack.append([name, now])

    def pop(self):
        now = time.perf_counter()
        name, resume = self._stack.pop()
        self.seconds[name] = self.seconds.get(name, 0.0) + (now - resume)
        if self._stack:
            self._stack[-1][1] = now

    def merge(self, other: "PhaseTimer"):
        for name, sec in other.seconds.items():
            self.seconds[name] = self.seconds.get(name, 0.0) + sec

    def tracked_total(self) -> float:
        return sum(self.seconds.values())


@dataclass
class BenchReport:
    """Result of one benchmark run in one precision mode."""

    precision: str
    sentences: int
    total_words: int
    workers: int
    repeats: int
    run_seconds: list
    median_seconds: float
    wps: float
    wpcs: float
    phase_seconds: dict = field(default_factory=dict)
    phase_fractions: dict = field(default_factory=dict)  # percent of busy time

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "sentences": self.sentences,
            "total_words": self.total_words,
            "workers": self.workers,
            "repeats": self.repeats,
            "run_seconds": list(self.run_seconds),
            "median_seconds": self.median_seconds,
            "wps": self.wps,
            "wpcs": self.wpcs,
            "phase_seconds": dict(self.phase_seconds),
            "phase_fractions": dict(self.phase_fractions),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _normalize_corpus(sentences) -> list:
    return [s.split() if isinstance(s, str) else list(s) for s in sentences]


def _prepare_model(model, precision: str):
    if precision == "int8" and isinstance(model, ModelParams):
        return quantize_model(model)
    if precision == "fp32" and isinstance(model, QuantizedModel):
        raise ConfigError("fp32 benchmark requires float parameters")
    return model


def _decode_corpus(model, corpus, cfg, workers, timers) -> list:
    """Translate the corpus, one sentence per worker, preserving order.

    ``timers`` is a mutable list collecting one PhaseTimer per worker thread
    (None disables instrumentation).
    """
    local = threading.local()

    def timer_for_thread():
        if timers is None:
            return None
        t = getattr(local, "timer", None)
        if t is None:
            t = PhaseTimer()
            local.timer = t
            timers.append(t)
        return t

    def job(sent):
        tokens, _ = translate(model, sent, cfg, timer=timer_for_thread())
        return tokens

    if workers == 1:
        return [job(s) for s in corpus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, corpus))


def run_benchmark(model, sentences, cfg: DecodeConfig, workers: int = 1,
                  repeats: int = 9, instrument: bool = True) -> BenchReport:
    """Translate the corpus ``repeats`` times and report median-run speed.

    Model preparation (quantization, kernel warm-up) happens before timing
    starts.  ``instrument=False`` selects the zero-overhead path with no
    phase accounting.
    """
    if repeats < 1 or repeats % 2 == 0:
        raise ConfigError(f"repeats must be odd and >= 1, got {repeats}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    corpus = _normalize_corpus(sentences)
    prepared = _prepare_model(model, cfg.precision)

    # untimed warm-up: JIT compilation, weight shadows, page faults
    _decode_corpus(prepared, corpus, cfg, workers, None)

    timers: list | None = [] if instrument else None
    run_seconds = []
    outputs: list = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        outputs = _decode_corpus(prepared, corpus, cfg, workers, timers)
        run_seconds.append(time.perf_counter() - t0)

    total_words = sum(len(toks) for toks in outputs)
    median = sorted(run_seconds)[len(run_seconds) // 2]
    wps = total_words / median if median > 0 else 0.0
    wpcs = wps / workers

    phase_seconds: dict = {}
    phase_fractions: dict = {}
    if timers is not None:
        merged = PhaseTimer()
        for t in timers:
            merged.merge(t)
        busy = sum(run_seconds) * workers
        untracked = max(0.0, busy - merged.tracked_total())
        phase_seconds = dict(merged.seconds)
        phase_seconds["other"] = phase_seconds.get("other", 0.0) + untracked
        if busy > 0:
            phase_fractions = {k: 100.0 * v / busy for k, v in phase_seconds.items()}

    return BenchReport(
        precision=cfg.precision,
        sentences=len(corpus),
        total_words=total_words,
        workers=workers,
        repeats=repeats,
        run_seconds=run_seconds,
        median_seconds=median,
        wps=wps,
        wpcs=wpcs,
        phase_seconds=phase_seconds,
        phase_fractions=phase_fractions,
    )


def profile_phases(model, sentences, cfg: DecodeConfig) -> list:
    """One instrumented pass over the corpus; returns ``[(phase, percent)]``
    sorted by descending share of wall time.  Empty input yields an empty
    table."""
    corpus = _normalize_corpus(sentences)
    if not corpus:
        return []
    prepared = _prepare_model(model, cfg.precision)
    _decode_corpus(prepared, corpus, cfg, 1, None)  # warm-up

    timer = PhaseTimer()
    t0 = time.perf_counter()
    for sent in corpus:
        translate(prepared, sent, cfg, timer=timer)
    wall = time.perf_counter() - t0
    if wall <= 0:
        return []
    seconds = dict(timer.seconds)
    seconds["other"] = seconds.get("other", 0.0) + max(0.0, wall - timer.tracked_total())
    table = [(name, 100.0 * sec / wall) for name, sec in seconds.items()]
    table.sort(key=lambda kv: -kv[1])
    return table
