"""Per-user generation runs and their on-disk result documents.

A result document records everything evaluation needs about one (user,
method) run: the final member vectors with their validity flags, the
objective trace, and the query count. Documents are one JSON object per
line; a run directory also gets a manifest with the full flag set and
content hashes of every input file, enough to reproduce the run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost import CostSampleSet, sample_cost_batch
from .model import Classifier
from .schema import DatasetSchema, PercentileTable, UserState
from .search import (
    SearchConfig,
    SearchResult,
    cols,
    local_search,
    pcols,
    random_search,
    search_rng,
)

METHODS = ("cols", "pcols", "random", "ls")

WORKERS_ENV = "RECOURSE_WORKERS"


@dataclass
class GenerationSettings:
    method: str = "cols"
    objective: str = "emc"
    budget: int = 5000
    set_size: int = 10
    num_samples: int = 1000
    distribution: str = "mix"
    alpha: Optional[float] = None
    restarts: int = 5
    seed: int = 0
    editable: Optional[tuple[int, ...]] = None
    preferences: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(
                f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}"
            )

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            budget=self.budget,
            set_size=self.set_size,
            num_samples=self.num_samples,
            restarts=self.restarts,
            seed=self.seed,
        )


@dataclass
class ResultDoc:
    user_id: int
    method: str
    state: list[int]
    members: list[list[int]]
    validity: list[bool]
    final_emc: float
    trace: list[float]
    queries_used: int
    seed: int
    settings: dict = field(default_factory=dict)


def run_user(
    user_id: int,
    state: UserState,
    classifier: Classifier,
    schema: DatasetSchema,
    table: PercentileTable,
    settings: GenerationSettings,
    keep_samples: bool = False,
) -> tuple[ResultDoc, Optional[CostSampleSet]]:
    """Sample this user's cost batch and run the configured method."""
    samples = sample_cost_batch(
        state,
        schema,
        table,
        settings.num_samples,
        distribution=settings.distribution,
        seed=settings.seed,
        alpha=settings.alpha,
        editable=frozenset(settings.editable) if settings.editable else None,
        pref=np.asarray(settings.preferences) if settings.preferences else None,
        subkey=user_id,
    )
    config = settings.search_config()
    result = _dispatch(settings, state, classifier, samples, schema, config, user_id)
    doc = ResultDoc(
        user_id=user_id,
        method=settings.method,
        state=list(state.values),
        members=[list(m.values) for m in result.recourse_set.members],
        validity=list(result.recourse_set.validity),
        final_emc=result.emc,
        trace=result.trace,
        queries_used=result.queries_used,
        seed=settings.seed,
        settings={
            "objective": settings.objective,
            "budget": settings.budget,
            "set_size": settings.set_size,
            "num_samples": settings.num_samples,
            "distribution": settings.distribution,
            "alpha": settings.alpha,
            "restarts": settings.restarts,
        },
    )
    return doc, (samples if keep_samples else None)


def _dispatch(
    settings: GenerationSettings,
    state: UserState,
    classifier: Classifier,
    samples: CostSampleSet,
    schema: DatasetSchema,
    config: SearchConfig,
    user_id: int,
) -> SearchResult:
    if settings.method == "cols":
        return cols(
            state, classifier, samples, schema, config,
            rng=search_rng(config.seed, user_id),
        )
    if settings.method == "pcols":
        return pcols(state, classifier, samples, schema, config, user_key=user_id)
    if settings.method == "random":
        return random_search(
            state, classifier, samples, schema, config, user_key=user_id
        )
    return local_search(
        state,
        classifier,
        schema,
        settings.objective,
        config,
        samples=samples if settings.objective == "emc" else None,
        user_key=user_id,
    )


def _worker(args) -> ResultDoc:
    user_id, state, classifier, schema, table, settings = args
    doc, _ = run_user(user_id, state, classifier, schema, table, settings)
    return doc


def run_population(
    states: Sequence[UserState],
    classifier: Classifier,
    schema: DatasetSchema,
    table: PercentileTable,
    settings: GenerationSettings,
    user_ids: Optional[Sequence[int]] = None,
) -> list[ResultDoc]:
    """Run the method for every user; honors the RECOURSE_WORKERS pool size.

    Each user owns an independent RNG stream and budget meter, so the pooled
    run is byte-identical to the sequential one.
    """
    ids = list(user_ids) if user_ids is not None else list(range(len(states)))
    tasks = [
        (uid, state, classifier, schema, table, settings)
        for uid, state in zip(ids, states)
    ]
    workers = int(os.environ.get(WORKERS_ENV, "1") or "1")
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_worker, tasks))
    return [_worker(t) for t in tasks]


def _enc_float(v: float):
    if math.isinf(v):
        return "inf"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return v


def _dec_float(v) -> float:
    if v == "inf":
        return math.inf
    if v == "nan":
        return math.nan
    return float(v)


def write_results(docs: Sequence[ResultDoc], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            raw = asdict(doc)
            raw["final_emc"] = _enc_float(raw["final_emc"])
            raw["trace"] = [_enc_float(v) for v in raw["trace"]]
            fh.write(json.dumps(raw) + "\n")


def read_results(path) -> list[ResultDoc]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            raw["final_emc"] = _dec_float(raw["final_emc"])
            raw["trace"] = [_dec_float(v) for v in raw["trace"]]
            docs.append(ResultDoc(**raw))
    if not docs:
        raise ValueError(f"no result documents in {path}")
    return docs


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, args: dict, input_files: Sequence[str]) -> None:
    manifest = {
        "args": {k: v for k, v in sorted(args.items())},
        "inputs": {
            str(f): file_sha256(f) for f in input_files if f and os.path.exists(f)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
