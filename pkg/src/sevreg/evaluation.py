"""Correlation metrics, speaker aggregation, reports, and embedding dumps."""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import Corpus
from .errors import (
    DegenerateCorrelationError,
    DimensionError,
    FeatureFormatError,
    MappingError,
    ParameterError,
)

DSQE_MAGIC = b"DSQE"
DSQE_VERSION = 1
PROVENANCE_BYTE = {"labeled": 0, "pseudo": 1, "typical": 2}

RESULTS_COLUMNS = ("run_id", "strategy", "dataset", "level", "seed", "srcc", "pcc", "n")


# ---------------------------------------------------------------------------
# Ranks and correlations
# ---------------------------------------------------------------------------


def rank(values) -> np.ndarray:
    """Ascending 1-based ranks; ties share the average of their positions."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ParameterError("rank needs a nonempty 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ParameterError("rank requires finite values")
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pcc(a, b) -> float:
    """Pearson product-moment correlation."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError("pcc needs two equal-length 1-D sequences")
    if x.size < 2:
        raise ParameterError("pcc needs n >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateCorrelationError("correlation undefined for constant input")
    return float(np.sum(xc * yc) / (sx * sy))


def srcc(a, b) -> float:
    """Spearman rank correlation: Pearson over tie-averaged ranks."""
    return pcc(rank(a), rank(b))


def speaker_aggregate(
    utt_scores: dict[str, float], speaker_map: dict[str, str]
) -> dict[str, float]:
    """Arithmetic mean of utterance scores per speaker."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for utt_id, score in utt_scores.items():
        if utt_id not in speaker_map:
            raise MappingError(f"utterance '{utt_id}' has no speaker mapping")
        spk = speaker_map[utt_id]
        sums[spk] = sums.get(spk, 0.0) + score
        counts[spk] = counts.get(spk, 0) + 1
    return {spk: sums[spk] / counts[spk] for spk in sums}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    dataset: str
    level: str
    srcc: float | None
    pcc: float | None
    n: int
    flagged: bool = False
    flag_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def correlate_scores(
    preds: np.ndarray, refs: np.ndarray, dataset: str, level: str
) -> EvalReport:
    """Build a report; degenerate correlations come back flagged, not raised."""
    try:
        return EvalReport(
            dataset=dataset,
            level=level,
            srcc=srcc(preds, refs),
            pcc=pcc(preds, refs),
            n=int(preds.size),
        )
    except DegenerateCorrelationError as exc:
        return EvalReport(
            dataset=dataset,
            level=level,
            srcc=None,
            pcc=None,
            n=int(preds.size),
            flagged=True,
            flag_reason=str(exc),
        )


def evaluate_scores(
    corpus: Corpus, scores: np.ndarray, level: str = "utterance"
) -> EvalReport:
    """Correlate per-utterance scores against corpus labels at the given level."""
    refs = corpus.labels()
    if level == "utterance":
        return correlate_scores(scores, refs, corpus.name, level)
    if level != "speaker":
        raise ParameterError(f"unknown evaluation level '{level}'")
    ids = [u.id for u in corpus]
    speaker_map = {u.id: u.speaker_id for u in corpus}
    pred_by_speaker = speaker_aggregate(dict(zip(ids, scores)), speaker_map)
    ref_by_speaker = speaker_aggregate(dict(zip(ids, refs)), speaker_map)
    speakers = sorted(pred_by_speaker)
    return correlate_scores(
        np.array([pred_by_speaker[s] for s in speakers]),
        np.array([ref_by_speaker[s] for s in speakers]),
        corpus.name,
        level,
    )


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_report_json(path: str | Path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def format_float(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_results_csv(path: str | Path, rows: list[dict]) -> None:
    """Flat one-row-per-(dataset, level, seed) table, written atomically."""
    lines = [",".join(RESULTS_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                format_float(row[c]) if c in ("srcc", "pcc") else str(row[c])
                for c in RESULTS_COLUMNS
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_results_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Embedding dumps (post-pooling vectors for external 2-D projection)
# ---------------------------------------------------------------------------


def write_embeddings(
    path: str | Path,
    vectors: np.ndarray,
    labels: list[float | None],
    provenances: list[str],
) -> None:
    """Binary dump: header, then per row dim float32s + label + provenance byte."""
    n, dim = vectors.shape
    if len(labels) != n or len(provenances) != n:
        raise DimensionError("labels/provenances must match vector count")
    blob = bytearray()
    blob += DSQE_MAGIC
    blob += struct.pack("<III", DSQE_VERSION, n, dim)
    for i in range(n):
        blob += vectors[i].astype("<f4").tobytes()
        label = labels[i] if labels[i] is not None else float("nan")
        blob += struct.pack("<fB", label, PROVENANCE_BYTE[provenances[i]])
    Path(path).write_bytes(bytes(blob))


def read_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Inverse of write_embeddings; labels come back as float (NaN if absent)."""
    raw = Path(path).read_bytes()
    if raw[:4] != DSQE_MAGIC:
        raise FeatureFormatError("bad magic, not a DSQE file", offset=0)
    version, n, dim = struct.unpack("<III", raw[4:16])
    if version != DSQE_VERSION:
        raise FeatureFormatError(f"unsupported version {version}", offset=4)
    row_bytes = 4 * dim + 5
    if len(raw) != 16 + n * row_bytes:
        raise FeatureFormatError("truncated payload", offset=len(raw))
    by_byte = {v: k for k, v in PROVENANCE_BYTE.items()}
    vectors = np.empty((n, dim))
    labels = np.empty(n)
    provenances = []
    pos = 16
    for i in range(n):
        vectors[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=pos)
        label, prov = struct.unpack_from("<fB", raw, pos + 4 * dim)
        labels[i] = label
        provenances.append(by_byte[prov])
        pos += row_bytes
    return vectors, labels, provenances
