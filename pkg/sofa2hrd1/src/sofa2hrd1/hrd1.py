"""Writer for the HRD1 container (the toolkit's public file interface).

Layout, all little-endian: 8-byte magic ``HRDATA01``, uint32 length of a
UTF-8 JSON metadata block, the block itself, then the IR payload as
float32 row-major [direction][ear L,R][sample].  Directions are stored
as [azimuth_deg, elevation_deg, distance_m] with azimuth in [-180, 180)
counterclockwise-positive and elevation in [-90, 90].
"""

from __future__ import annotations

import json
import struct

import numpy as np

HRD1_MAGIC = b"HRDATA01"


def write_hrd1(path, subject_id, dataset_id, sample_rate_hz, directions, irs):
    """directions: [n, 3] float; irs: [n, 2, samples], stored as float32."""
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    irs = np.ascontiguousarray(irs, dtype="<f4")
    if irs.ndim != 3 or irs.shape[1] != 2:
        raise ValueError("irs must have shape [n_directions, 2, n_samples]")
    if irs.shape[0] != directions.shape[0]:
        raise ValueError("direction table and IR block disagree on count")
    if not np.isfinite(irs).all():
        raise ValueError("IRs contain non-finite values")
    meta = {
        "subject_id": str(subject_id),
        "dataset_id": str(dataset_id),
        "sample_rate_hz": float(sample_rate_hz),
        "n_directions": int(irs.shape[0]),
        "n_samples": int(irs.shape[2]),
        "directions": directions.tolist(),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(HRD1_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(irs.tobytes())
