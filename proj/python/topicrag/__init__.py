"""Topic-routed retrieval, data curation and evaluation."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, Union

from ._topicrag import (
    ConfigError,
    DimensionError,
    Error,
    GenerationError,
    IoError,
    NumericError,
    OfflineEmbedder,
    ProtocolError,
    TopicGraph,
    TransportError,
    ValidationError,
    bleu,
    cosine,
    distinct,
    gleu,
    predict_topic,
    rouge,
    ssm_discretize,
    ssm_scan,
    tokenize,
)
from . import _topicrag as _core

__all__ = [
    "ConfigError", "DimensionError", "Error", "GenerationError", "IoError", "NumericError",
    "OfflineEmbedder", "ProtocolError", "TopicGraph", "TransportError", "ValidationError",
    "Index", "bleu", "cli_path", "cosine", "curate", "dedup", "distinct", "gleu", "minitest",
    "predict_topic", "rouge", "run_mcq", "ssm_discretize", "ssm_scan", "tokenize", "train",
]

PathLike = Union[str, os.PathLike]
Model = Union[str, Callable[[str], str]]


def _embedder(embedder: Optional[dict]) -> str:
    return json.dumps(embedder or {})


class Index:
    """Topic-partitioned document index."""

    def __init__(self, core: "_core.Index") -> None:
        self._core = core

    @classmethod
    def build(cls, docs: Iterable[dict], graph: TopicGraph, embedder: Optional[dict] = None) -> "Index":
        return cls(_core.Index.build(json.dumps(list(docs)), graph, _embedder(embedder)))

    @classmethod
    def load(cls, path: PathLike) -> "Index":
        return cls(_core.Index.load(Path(path)))

    def save(self, path: PathLike, config_hash: str = "") -> None:
        self._core.save(Path(path), config_hash)

    def __len__(self) -> int:
        return len(self._core)

    @property
    def dim(self) -> int:
        return self._core.dim

    @property
    def embedder_id(self) -> str:
        return self._core.embedder_id

    def retrieve(self, graph: TopicGraph, query: Union[str, Sequence[float]], topic: str = "", k: int = 5,
                 radius: int = 1, embedder: Optional[dict] = None) -> dict:
        if isinstance(query, str):
            raw = self._core.retrieve(graph, query, topic, k, radius, _embedder(embedder))
        else:
            raw = self._core.retrieve_vector(graph, list(query), topic, k, radius)
        return json.loads(raw)


def dedup(samples: Iterable[dict], tau: float = 0.9, embedder: Optional[dict] = None) -> dict:
    """Greedy threshold dedup; returns {"kept": [...], "removed": [...]}."""
    return json.loads(_core.dedup(json.dumps(list(samples)), tau, _embedder(embedder)))


def minitest(pairs: Iterable[tuple], tau: float = 0.9, embedder: Optional[dict] = None) -> dict:
    return json.loads(_core.minitest([tuple(p) for p in pairs], tau, _embedder(embedder)))


def curate(config: PathLike, resume: bool = False, from_stage: Optional[str] = None) -> dict:
    return json.loads(_core.curate(Path(config), resume, from_stage))


def train(samples: Iterable[dict], out: PathLike, config: Optional[dict] = None) -> dict:
    return json.loads(_core.train(json.dumps(list(samples)), json.dumps(config or {}), Path(out)))


def run_mcq(items: PathLike, model: Model, shots: int = 0, seed: int = 42,
            exemplars: Optional[PathLike] = None) -> dict:
    """Score an MCQ file. `model` is a client spec string or a callable prompt -> reply."""
    return json.loads(_core.run_mcq(Path(items), model, shots, seed,
                                    None if exemplars is None else Path(exemplars)))


def parse_judge_reply(reply: str) -> dict:
    return json.loads(_core.parse_judge_reply(reply))


def cli_path() -> Optional[Path]:
    """Location of the bundled command-line tool, if installed alongside the package."""
    candidate = Path(__file__).parent / "bin" / "topicrag"
    return candidate if candidate.exists() else None
