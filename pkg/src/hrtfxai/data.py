"""Portable on-disk format for HRIR sets plus subject-level splitting.

HRD1 container layout (everything little-endian):

    bytes 0..7    magic "HRDATA01"
    bytes 8..11   uint32 length of the JSON metadata block
    metadata      UTF-8 JSON: subject_id, dataset_id, sample_rate_hz and
                  the direction table [[azimuth_deg, elevation_deg,
                  distance_m], ...]
    payload       float32 IRs, row-major [direction][ear L,R][sample]

A dataset directory is indexed by a manifest CSV with columns
``subject_id,path,dataset_id`` (paths relative to the manifest).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coords import N_CLASSES

__all__ = [
    "HRD1_MAGIC",
    "HrdFormatError",
    "MagicMismatchError",
    "TruncatedPayloadError",
    "NonFiniteDataError",
    "SubjectRecord",
    "SplitSpec",
    "CombinedSpec",
    "read_subject",
    "write_subject",
    "read_manifest",
    "write_manifest",
    "split_subjects",
    "combined_sample_indices",
    "build_combined",
    "class_balance",
    "round_half_up",
]

HRD1_MAGIC = b"HRDATA01"


class HrdFormatError(Exception):
    """Base error for malformed HRD1 files."""


class MagicMismatchError(HrdFormatError):
    pass


class TruncatedPayloadError(HrdFormatError):
    pass


class NonFiniteDataError(HrdFormatError):
    pass


@dataclass
class SubjectRecord:
    """All measurements of one subject."""

    subject_id: str
    dataset_id: str
    sample_rate_hz: float
    directions: np.ndarray  # [n, 3] columns azimuth_deg, elevation_deg, distance_m
    irs: np.ndarray  # float32 [n, 2, n_samples]

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        self.irs = np.asarray(self.irs, dtype=np.float32)
        if self.irs.ndim != 3 or self.irs.shape[1] != 2:
            raise ValueError("irs must have shape [n_directions, 2, n_samples]")
        if self.irs.shape[0] != self.directions.shape[0]:
            raise ValueError("direction table and IR block disagree on count")
        if self.irs.shape[0] < 1:
            raise ValueError("record needs at least one direction")
        if not np.isfinite(self.irs).all():
            raise NonFiniteDataError("IRs contain non-finite values")

    @property
    def n_directions(self) -> int:
        return int(self.irs.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.irs.shape[2])


def write_subject(record: SubjectRecord, path):
    meta = {
        "subject_id": record.subject_id,
        "dataset_id": record.dataset_id,
        "sample_rate_hz": record.sample_rate_hz,
        "n_directions": record.n_directions,
        "n_samples": record.n_samples,
        "directions": record.directions.tolist(),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(HRD1_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(record.irs, dtype="<f4").tobytes())


def read_subject(path) -> SubjectRecord:
    raw = Path(path).read_bytes()
    if raw[:8] != HRD1_MAGIC:
        raise MagicMismatchError(f"{path}: not an HRD1 file")
    if len(raw) < 12:
        raise TruncatedPayloadError(f"{path}: missing metadata length")
    (meta_len,) = struct.unpack("<I", raw[8:12])
    meta_end = 12 + meta_len
    if len(raw) < meta_end:
        raise TruncatedPayloadError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(raw[12:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HrdFormatError(f"{path}: bad metadata: {exc}") from exc
    n_dir = int(meta["n_directions"])
    n_samp = int(meta["n_samples"])
    expected = n_dir * 2 * n_samp * 4
    payload = raw[meta_end:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise HrdFormatError(f"{path}: {len(payload) - expected} trailing bytes")
    irs = np.frombuffer(payload, dtype="<f4").reshape(n_dir, 2, n_samp)
    if not np.isfinite(irs).all():
        raise NonFiniteDataError(f"{path}: IRs contain non-finite values")
    return SubjectRecord(
        subject_id=str(meta["subject_id"]),
        dataset_id=str(meta["dataset_id"]),
        sample_rate_hz=float(meta["sample_rate_hz"]),
        directions=np.array(meta["directions"], dtype=float),
        irs=irs.copy(),
    )


def write_manifest(rows, path):
    """rows: iterable of (subject_id, path, dataset_id)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "path", "dataset_id"])
        for row in rows:
            writer.writerow(list(row))


def read_manifest(path):
    base = Path(path).parent
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(
                (row["subject_id"], str(base / row["path"]), row["dataset_id"])
            )
    return rows


# ---------------------------------------------------------------------------
# splitting and sampling


def round_half_up(x) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class CombinedSpec:
    per_dataset_fraction: float = 0.10
    seed: int = 0


def split_subjects(subject_ids, spec: SplitSpec):
    """Partition subject ids into train/val/test, deterministically by seed.

    Sizes are round-half-up of the fractions with the leftover going to
    train; val and test are topped up to at least one subject each.
    """
    ids = sorted(set(subject_ids))
    if len(ids) < 3:
        raise ValueError(f"need at least 3 subjects, got {len(ids)}")
    n = len(ids)
    n_train = round_half_up(spec.train_frac * n)
    n_val = round_half_up(spec.val_frac * n)
    n_test = n - n_train - n_val
    while n_val < 1:
        n_train -= 1
        n_val += 1
    while n_test < 1:
        n_train -= 1
        n_test += 1
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }


def combined_sample_indices(n_samples: int, fraction: float, rng) -> np.ndarray:
    """Uniform draw without replacement of round(fraction * n) indices."""
    k = round_half_up(fraction * n_samples)
    return np.sort(rng.choice(n_samples, size=k, replace=False))


def build_combined(train_partitions: dict, spec: CombinedSpec) -> list:
    """Sample a fixed fraction of each dataset's training samples.

    ``train_partitions`` maps dataset_id to a sequence of samples; the
    draw is per sample, not per subject.  Returns the concatenated picks
    in sorted dataset order.
    """
    rng = np.random.default_rng(spec.seed)
    combined = []
    for dataset_id in sorted(train_partitions):
        samples = train_partitions[dataset_id]
        if len(samples) == 0:
            raise ValueError(f"dataset {dataset_id!r} has an empty train partition")
        idx = combined_sample_indices(len(samples), spec.per_dataset_fraction, rng)
        combined.extend(samples[i] for i in idx)
    return combined


def class_balance(labels) -> np.ndarray:
    """Counts per elevation class; accepts int labels."""
    labels = np.asarray(labels, dtype=int)
    return np.bincount(labels, minlength=N_CLASSES)[:N_CLASSES]
