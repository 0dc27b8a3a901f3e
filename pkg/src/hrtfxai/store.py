"""On-disk form of preprocessed datasets (deterministic .npz).

numpy's savez stamps current time into the zip members, which breaks
byte-identical reruns; this writer pins the member timestamps instead.
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["PreprocessedSet", "save_npz_deterministic", "save_set", "load_set"]

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz_deterministic(path, **arrays):
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as z:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            z.writestr(info, buf.getvalue())


@dataclass
class PreprocessedSet:
    """Flat arrays for one preprocessed dataset."""

    dataset_id: str
    fingerprint: str
    axis_kind: str
    axis_hz: np.ndarray  # [B]
    mags: np.ndarray  # [N, 2, B]
    labels: np.ndarray  # [N] int
    subject_ids: np.ndarray  # [N] str
    direction_index: np.ndarray  # [N] int, index within the subject's record
    lateral_deg: np.ndarray
    polar_deg: np.ndarray
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.mags.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.mags.shape[2])

    def subject_mask(self, subjects) -> np.ndarray:
        wanted = set(subjects)
        return np.array([s in wanted for s in self.subject_ids])

    def label_space(self) -> np.ndarray:
        return np.unique(self.labels)


def save_set(pset: PreprocessedSet, path):
    save_npz_deterministic(
        path,
        dataset_id=np.array(pset.dataset_id),
        fingerprint=np.array(pset.fingerprint),
        axis_kind=np.array(pset.axis_kind),
        axis_hz=pset.axis_hz,
        mags=pset.mags,
        labels=pset.labels.astype(np.int64),
        subject_ids=np.array(list(pset.subject_ids)),
        direction_index=pset.direction_index.astype(np.int64),
        lateral_deg=pset.lateral_deg,
        polar_deg=pset.polar_deg,
        azimuth_deg=pset.azimuth_deg,
        elevation_deg=pset.elevation_deg,
    )


def load_set(path) -> PreprocessedSet:
    with np.load(path) as z:
        return PreprocessedSet(
            dataset_id=str(z["dataset_id"]),
            fingerprint=str(z["fingerprint"]),
            axis_kind=str(z["axis_kind"]),
            axis_hz=z["axis_hz"],
            mags=z["mags"],
            labels=z["labels"],
            subject_ids=z["subject_ids"].astype(str),
            direction_index=z["direction_index"],
            lateral_deg=z["lateral_deg"],
            polar_deg=z["polar_deg"],
            azimuth_deg=z["azimuth_deg"],
            elevation_deg=z["elevation_deg"],
        )
