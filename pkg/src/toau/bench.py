"""Payload, latency and rate-accuracy measurements with plot-ready reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .backend import loo_verdicts
from .codec import (
    bits_per_index,
    decode,
    dequantize,
    distortion,
    encode,
    payload_bits,
    quantize,
    train_codebook,
    window_count,
)
from .errors import InvalidInputError
from .motion import KinematicFeatureSequence, canonicalize, extract_features, mpjpe, recover_joints
from .motion_io import read_j3d
from .skeleton import Skeleton, default_skeleton
from .wire import CRC_SIZE, HEADER_SIZE, payload_size

RAW_BITS_PER_FRAME = 22 * 3 * 32
DEFAULT_BANDWIDTHS_KBPS = (50, 200, 1000)
KB = 1024


@dataclass(frozen=True)
class LatencyReport:
    t_edge_ms: float
    t_tx_ms: float
    t_cloud_ms: float
    t_total_ms: float
    payload_bytes: int
    bandwidth_bytes_per_s: float


def latency_model(payload_bytes: int, bandwidth_bytes_per_s: float,
                  t_edge_ms: float = 0.0, t_cloud_ms: float = 0.0) -> LatencyReport:
    """t_tx = 1000 * bytes / bandwidth; the total is the plain sum of the three parts."""
    if not bandwidth_bytes_per_s > 0:
        raise InvalidInputError("bandwidth must be positive")
    if payload_bytes < 0 or t_edge_ms < 0 or t_cloud_ms < 0:
        raise InvalidInputError("sizes and times must be nonnegative")
    t_tx = 1000.0 * payload_bytes / bandwidth_bytes_per_s
    total = t_edge_ms + t_tx + t_cloud_ms
    assert total == t_edge_ms + t_tx + t_cloud_ms
    return LatencyReport(t_edge_ms, t_tx, t_cloud_ms, total, payload_bytes, bandwidth_bytes_per_s)


def packet_bytes(index_count: int, K: int) -> int:
    return HEADER_SIZE + payload_size(index_count, K) + CRC_SIZE


def bits_per_frame(F: int, K: int, l: int) -> float:
    return payload_bits(window_count(F, l), K) / F


def raw_ratio(K: int, l: int) -> float:
    """Index-stream bits per frame over a float32 22-joint stream (asymptotic in F)."""
    return (bits_per_index(K) / l) / RAW_BITS_PER_FRAME


@dataclass(frozen=True)
class BenchmarkRecord:
    clip: str
    F: int
    K: int
    l: int
    payload_bytes: int
    bits_per_frame: float
    distortion: float
    mpjpe: float
    correct: bool
    packet_bytes: int


COLUMNS = tuple(f.name for f in fields(BenchmarkRecord))


@dataclass(frozen=True)
class ClipData:
    clip: str
    label: str
    split: str
    features: KinematicFeatureSequence


def load_manifest(path: str | Path, skeleton: Skeleton | None = None) -> list[ClipData]:
    """Read manifest.json and featurize every clip (paths relative to the manifest)."""
    path = Path(path)
    sk = skeleton or default_skeleton()
    out = []
    for i, m in enumerate(json.loads(path.read_text())):
        seq = canonicalize(read_j3d(path.parent / m["path"]), sk)
        clip = m.get("id") or Path(m["path"]).stem or str(i)
        out.append(ClipData(clip, m["label"], m.get("split", "train"), extract_features(seq, sk)))
    return out


def reconstruct(feat: KinematicFeatureSequence, cb) -> tuple[KinematicFeatureSequence, int]:
    """Quantize and decode one clip; returns X-hat and the index count."""
    tokens = quantize(encode(feat, cb.downsample_factor), cb, feat.frames)
    return decode(dequantize(tokens, cb), feat.frames, feat.fps), len(tokens.indices)


def _check_split(clips: list[ClipData]) -> tuple[list[ClipData], list[ClipData]]:
    train = [c for c in clips if c.split == "train"]
    test = [c for c in clips if c.split == "test"]
    if not train or len(test) < 2:
        raise InvalidInputError("need a training split and at least two held-out clips")
    labels = {c.label for c in clips}
    for lab in labels:
        if sum(c.label == lab for c in clips) < 2:
            raise InvalidInputError(f"class {lab!r} has fewer than two clips")
    return train, test


def sweep_rate_accuracy(manifest: str | Path | list[ClipData], K_list, l: int = 4, seed: int = 1,
                        iterations: int = 50, k: int = 1) -> list[BenchmarkRecord]:
    """Per K: train on the train split, then score every held-out clip.

    ``correct`` is the kNN verdict for a held-out clip against every other
    clip of the corpus, all reconstructed through the same codebook
    (leave-one-out over the corpus, reported for the held-out split).
    """
    clips = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    train, test = _check_split(clips)
    latents = [encode(c.features, l) for c in train]
    labels = [c.label for c in clips]
    records = []
    for K in K_list:
        cb = train_codebook(latents, int(K), iterations=iterations, seed=seed)
        recon = [reconstruct(c.features, cb) for c in clips]
        verdicts = loo_verdicts([r[0].values for r in recon], labels, k)
        for c, (x_hat, n_idx), ok in zip(clips, recon, verdicts):
            if c.split != "test":
                continue
            F = c.features.frames
            records.append(BenchmarkRecord(
                c.clip, F, int(K), l, payload_size(n_idx, K), bits_per_frame(F, K, l),
                distortion(c.features, x_hat)["total"],
                mpjpe(recover_joints(x_hat), recover_joints(c.features)),
                bool(ok), packet_bytes(n_idx, K)))
    return sorted(records, key=lambda r: (r.clip, r.K))


def accuracy(records: list[BenchmarkRecord], K: int) -> float:
    sel = [r.correct for r in records if r.K == K]
    if not sel:
        raise InvalidInputError(f"no records for K={K}")
    return sum(sel) / len(sel)


def _row(r: BenchmarkRecord) -> list:
    d = asdict(r)
    return [int(d[c]) if c == "correct" else d[c] for c in COLUMNS]


def records_to_csv(records: list[BenchmarkRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in _row(r)])
    return buf.getvalue()


def records_to_json(records: list[BenchmarkRecord]) -> str:
    return json.dumps([dict(zip(COLUMNS, _row(r))) for r in records], indent=1) + "\n"


def emit_report(records: list[BenchmarkRecord], fmt: str, path: str | Path) -> Path:
    if not records:
        raise InvalidInputError("no records to report")
    if fmt == "csv":
        text = records_to_csv(records)
    elif fmt == "json":
        text = records_to_json(records)
    else:
        raise InvalidInputError(f"unknown report format {fmt!r}")
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise InvalidInputError(f"cannot write report {path}: {exc}") from exc
    return path


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def latency_table(rows: list[dict], bandwidths_kbps, t_edge_ms: float, t_cloud_ms: float) -> list[dict]:
    """One latency row per (report row, bandwidth); bandwidths are in KB/s of 1024 bytes."""
    out = []
    for row in rows:
        for kbps in bandwidths_kbps:
            rep = latency_model(int(row["payload_bytes"]), float(kbps) * KB, t_edge_ms, t_cloud_ms)
            out.append({"clip": row.get("clip", ""), "K": row.get("K", ""),
                        "payload_bytes": rep.payload_bytes, "bandwidth_kbps": kbps,
                        "t_edge_ms": rep.t_edge_ms, "t_tx_ms": rep.t_tx_ms,
                        "t_cloud_ms": rep.t_cloud_ms, "t_total_ms": rep.t_total_ms})
    return out


def baseline_table(rows: list[dict], baseline_csv: str | Path) -> list[dict]:
    """Join report rows with a user-supplied CSV of ``clip,codec,bytes`` video sizes."""
    base = read_report(baseline_csv)
    for b in base:
        if not {"clip", "codec", "bytes"} <= b.keys():
            raise InvalidInputError("baseline CSV needs clip, codec and bytes columns")
    out = []
    for row in rows:
        for b in base:
            if b["clip"] == row["clip"]:
                vb = int(b["bytes"])
                pb = int(row["payload_bytes"])
                out.append({"clip": row["clip"], "K": row["K"], "payload_bytes": pb,
                            "codec": b["codec"], "codec_bytes": vb,
                            "ratio": pb / vb if vb else float("inf")})
    return out


def write_rows(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise InvalidInputError("nothing to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\r\n")
        w.writeheader()
        w.writerows(rows)
