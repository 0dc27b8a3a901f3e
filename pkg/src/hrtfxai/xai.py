"""CAM saliency and its aggregation into contours and prototypes.

The class activation map for class c is the channel-weighted sum of the
last conv layer's activations, M_c(x) = sum_k w_kc A_k(x).  Because the
head is a mean pool plus bias, mean_x M_c(x) + b_c equals the class
logit exactly, which every map is checked against.

Saliency maps are the CAM linearly upsampled to the input axis, clipped
at zero (negative evidence reads as absence of evidence) and divided by
their maximum so stacks from different subjects are comparable.  Both
conventions are visualization choices, not model semantics.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coords import N_CLASSES
from .model import CnnModel, ForwardTrace

__all__ = [
    "SaliencyMap",
    "SaliencyStack",
    "MeanSaliencyContour",
    "PrototypeHrtf",
    "cam",
    "cam_completeness_error",
    "upsample_normalize",
    "saliency_for",
    "occlusion_render",
    "aggregate",
    "equalize_stacks",
    "mean_saliency_contour",
    "equalize_and_msc",
    "prototype",
    "nearest_sample",
    "sagittal_map",
    "rank_subjects_by_confidence",
    "write_stack_csv",
    "read_stack_csv",
    "write_stack_binary",
    "read_stack_binary",
    "write_msc_csv",
    "read_msc_csv",
    "STACK_MAGIC",
]

STACK_MAGIC = b"HRSTACK1"


@dataclass
class SaliencyMap:
    values: np.ndarray  # [B], >= 0, max 1 unless all-zero
    class_id: int
    raw_cam: np.ndarray  # [L] pre-upsampling
    confidence: float
    subject_id: str = ""
    dataset_id: str = ""
    lateral_deg: float = np.nan
    polar_deg: float = np.nan
    no_positive_evidence: bool = False


@dataclass
class SaliencyStack:
    """Saliencies of one (class, dataset) cell, rows by confidence descending."""

    values: np.ndarray  # [n, B]
    confidences: np.ndarray  # [n]
    subject_ids: list
    polar_deg: np.ndarray
    lateral_deg: np.ndarray
    class_id: int
    dataset_id: str
    axis_hz: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])


@dataclass
class MeanSaliencyContour:
    dataset_ids: list
    per_dataset_mean: np.ndarray  # [n_datasets, B]
    msc: np.ndarray  # [B]
    rows_kept_per_dataset: int
    class_id: int
    axis_hz: np.ndarray


@dataclass
class PrototypeHrtf:
    class_id: int  # class the model assigns to the prototype
    source_class_id: int  # class the samples were drawn from
    hrtf: np.ndarray  # [2, B]
    saliency: np.ndarray  # [B]
    confidence: float
    pca_components_used: int
    pca_variance_kept: float


def cam(trace: ForwardTrace, model: CnnModel, class_id: int) -> np.ndarray:
    """Raw class activation map over the last conv layer's positions."""
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"class_id {class_id} outside 0..{N_CLASSES - 1}")
    return model.dense_w[:, class_id] @ trace.last_conv


def cam_completeness_error(trace: ForwardTrace, model: CnnModel, class_id: int):
    """|mean_x M_c(x) + b_c - logit_c|; exact up to float rounding."""
    m = cam(trace, model, class_id)
    return abs(float(m.mean() + model.dense_b[class_id] - trace.logits[class_id]))


def upsample_normalize(raw, n_bins: int):
    """Linear upsample to the input axis, clip negatives, scale max to 1.

    Returns (values, no_positive_evidence).  An all-nonpositive map stays
    all-zero and is flagged.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size < 2:
        raise ValueError("raw CAM needs at least 2 positions")
    positions = np.arange(raw.size)
    grid = np.linspace(0.0, raw.size - 1.0, n_bins)
    values = np.interp(grid, positions, raw)
    values = np.maximum(values, 0.0)
    peak = values.max()
    if peak <= 0.0:
        return np.zeros(n_bins), True
    return values / peak, False


def saliency_for(model, mags, class_id, subject_id="", dataset_id="",
                 lateral_deg=np.nan, polar_deg=np.nan) -> SaliencyMap:
    """Saliency of one [2, B] magnitude pair for one class."""
    mags = np.asarray(mags, dtype=float)
    trace = model.forward(mags)
    raw = cam(trace, model, class_id)
    values, flat = upsample_normalize(raw, mags.shape[1])
    return SaliencyMap(
        values=values,
        class_id=int(class_id),
        raw_cam=raw,
        confidence=float(trace.probs[class_id]),
        subject_id=subject_id,
        dataset_id=dataset_id,
        lateral_deg=float(lateral_deg),
        polar_deg=float(polar_deg),
        no_positive_evidence=flat,
    )


def occlusion_render(mags, saliency_values):
    """Magnitudes faded by saliency (inverse-opacity mask); export only."""
    mags = np.asarray(mags, dtype=float)
    sal = np.asarray(saliency_values, dtype=float)
    if mags.shape[-1] != sal.shape[-1]:
        raise ValueError("saliency and magnitudes have different lengths")
    return mags * sal


def aggregate(model, mags, labels, subject_ids, lateral_deg, polar_deg,
              axis_hz, dataset_id, class_id, only_correct=True,
              order_by="confidence") -> SaliencyStack:
    """Stack the saliencies of one class within one dataset.

    Keeps samples of ``class_id``; with ``only_correct`` only those the
    model classifies correctly.  Rows are ordered by confidence
    descending (or by polar angle ascending with order_by="polar").
    """
    mags = np.asarray(mags, dtype=float)
    labels = np.asarray(labels, dtype=int)
    rows, confs, subs, pols, lats = [], [], [], [], []
    for i in np.flatnonzero(labels == class_id):
        trace = model.forward(mags[i])
        pred = int(np.argmax(trace.probs))
        if only_correct and pred != class_id:
            continue
        raw = cam(trace, model, class_id)
        values, _ = upsample_normalize(raw, mags.shape[2])
        rows.append(values)
        confs.append(float(trace.probs[class_id]))
        subs.append(subject_ids[i])
        pols.append(float(polar_deg[i]))
        lats.append(float(lateral_deg[i]))
    if rows:
        values = np.stack(rows)
        confs = np.asarray(confs)
        if order_by == "confidence":
            order = np.argsort(-confs, kind="stable")
        elif order_by == "polar":
            order = np.argsort(pols, kind="stable")
        else:
            raise ValueError(f"unknown ordering {order_by!r}")
    else:
        values = np.zeros((0, mags.shape[2]))
        confs = np.zeros(0)
        order = np.arange(0)
    return SaliencyStack(
        values=values[order] if len(rows) else values,
        confidences=confs[order] if len(rows) else confs,
        subject_ids=[subs[i] for i in order],
        polar_deg=np.asarray([pols[i] for i in order]),
        lateral_deg=np.asarray([lats[i] for i in order]),
        class_id=int(class_id),
        dataset_id=dataset_id,
        axis_hz=np.asarray(axis_hz, dtype=float),
    )


def equalize_stacks(stacks):
    """Trim every stack to the smallest one, dropping lowest-confidence rows."""
    nonempty = [s for s in stacks if s.n_rows > 0]
    if not nonempty:
        raise ValueError("all stacks are empty")
    m = min(s.n_rows for s in nonempty)
    trimmed = []
    for s in nonempty:
        keep = np.argsort(-s.confidences, kind="stable")[:m]
        keep = np.sort(keep)
        trimmed.append(
            SaliencyStack(
                values=s.values[keep],
                confidences=s.confidences[keep],
                subject_ids=[s.subject_ids[i] for i in keep],
                polar_deg=s.polar_deg[keep],
                lateral_deg=s.lateral_deg[keep],
                class_id=s.class_id,
                dataset_id=s.dataset_id,
                axis_hz=s.axis_hz,
            )
        )
    return trimmed


def mean_saliency_contour(stacks) -> MeanSaliencyContour:
    """Per-dataset means plus their unweighted grand mean."""
    if not stacks:
        raise ValueError("no stacks given")
    per_dataset = np.stack([s.values.mean(axis=0) for s in stacks])
    return MeanSaliencyContour(
        dataset_ids=[s.dataset_id for s in stacks],
        per_dataset_mean=per_dataset,
        msc=per_dataset.mean(axis=0),
        rows_kept_per_dataset=stacks[0].n_rows,
        class_id=stacks[0].class_id,
        axis_hz=stacks[0].axis_hz,
    )


def equalize_and_msc(stacks):
    trimmed = equalize_stacks(stacks)
    return mean_saliency_contour(trimmed), trimmed


# ---------------------------------------------------------------------------
# prototypes


def prototype(model, mags, variance_kept=0.90, source_class_id=-1) -> PrototypeHrtf:
    """PCA-smoothed class centroid, re-fed through the model.

    Samples are flattened to 2B vectors; the class centroid is projected
    onto the smallest leading set of covariance eigenvectors reaching the
    requested explained variance and reconstructed.  Identical samples
    give zero variance, d = 0 and the common sample back.
    """
    mags = np.asarray(mags, dtype=float)
    if mags.ndim != 3 or mags.shape[0] < 1:
        raise ValueError("expected samples of shape [n, 2, B]")
    n, _, b = mags.shape
    flat = mags.reshape(n, 2 * b)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    # Sign convention: largest-magnitude entry of each component positive.
    flips = np.sign(eigvecs[np.argmax(np.abs(eigvecs), axis=0), np.arange(eigvecs.shape[1])])
    flips[flips == 0] = 1.0
    eigvecs = eigvecs * flips

    total = eigvals.sum()
    if total <= 0.0:
        d = 0
        recon = mean
    else:
        cum = np.cumsum(eigvals) / total
        d = int(np.searchsorted(cum, variance_kept - 1e-15) + 1)
        basis = eigvecs[:, :d]
        centroid = centered.mean(axis=0)  # zero by construction
        recon = mean + basis @ (basis.T @ centroid)

    hrtf = recon.reshape(2, b)
    trace = model.forward(hrtf)
    pred = int(np.argmax(trace.probs))
    raw = cam(trace, model, pred)
    values, _ = upsample_normalize(raw, b)
    return PrototypeHrtf(
        class_id=pred,
        source_class_id=int(source_class_id),
        hrtf=hrtf,
        saliency=values,
        confidence=float(trace.probs[pred]),
        pca_components_used=d,
        pca_variance_kept=float(variance_kept),
    )


def nearest_sample(mags, proto_hrtf) -> int:
    """Index of the sample closest to the prototype in 2B magnitude space."""
    mags = np.asarray(mags, dtype=float)
    if mags.shape[0] == 0:
        raise ValueError("no samples")
    flat = mags.reshape(mags.shape[0], -1)
    target = np.asarray(proto_hrtf, dtype=float).reshape(-1)
    dist = np.linalg.norm(flat - target, axis=1)
    return int(np.argmin(dist))  # ties resolve to the lowest index


def sagittal_map(model, mags, lateral_deg, polar_deg, lateral_tol_deg=10.0):
    """Sagittal-plane rows ordered by polar angle.

    Each row carries the saliency of the model's *predicted* class.
    Returns a list of dicts with polar, lateral, prediction, confidence,
    hrtf and saliency.
    """
    mags = np.asarray(mags, dtype=float)
    lateral_deg = np.asarray(lateral_deg, dtype=float)
    polar_deg = np.asarray(polar_deg, dtype=float)
    keep = np.flatnonzero(np.abs(lateral_deg) <= lateral_tol_deg)
    if keep.size == 0:
        raise ValueError(
            f"no samples within {lateral_tol_deg} deg of the sagittal plane"
        )
    keep = keep[np.argsort(polar_deg[keep], kind="stable")]
    rows = []
    for i in keep:
        trace = model.forward(mags[i])
        pred = int(np.argmax(trace.probs))
        raw = cam(trace, model, pred)
        values, _ = upsample_normalize(raw, mags.shape[2])
        rows.append({
            "polar_deg": float(polar_deg[i]),
            "lateral_deg": float(lateral_deg[i]),
            "predicted_class": pred,
            "confidence": float(trace.probs[pred]),
            "hrtf": mags[i],
            "saliency": values,
        })
    return rows


def rank_subjects_by_confidence(model, mags, subject_ids):
    """Subjects sorted by mean predicted-class confidence, best first."""
    mags = np.asarray(mags, dtype=float)
    best = {}
    for i in range(mags.shape[0]):
        trace = model.forward(mags[i])
        conf = float(trace.probs.max())
        best.setdefault(subject_ids[i], []).append(conf)
    ranking = sorted(
        ((float(np.mean(v)), k) for k, v in best.items()), reverse=True
    )
    return [(subject, conf) for conf, subject in ranking]


# ---------------------------------------------------------------------------
# exports


def _fmt(x):
    return format(float(x), ".17g")


def write_stack_csv(stack: SaliencyStack, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = ["subject_id", "dataset_id", "class_id", "lateral_deg",
                  "polar_deg", "confidence"]
        header += [_fmt(hz) for hz in stack.axis_hz]
        writer.writerow(header)
        for i in range(stack.n_rows):
            row = [stack.subject_ids[i], stack.dataset_id, stack.class_id,
                   _fmt(stack.lateral_deg[i]), _fmt(stack.polar_deg[i]),
                   _fmt(stack.confidences[i])]
            row += [_fmt(v) for v in stack.values[i]]
            writer.writerow(row)


def read_stack_csv(path):
    """Returns (axis_hz, rows) where rows are dicts with a 'values' array."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        axis = np.array([float(x) for x in header[6:]])
        rows = []
        for rec in reader:
            rows.append({
                "subject_id": rec[0],
                "dataset_id": rec[1],
                "class_id": int(rec[2]),
                "lateral_deg": float(rec[3]),
                "polar_deg": float(rec[4]),
                "confidence": float(rec[5]),
                "values": np.array([float(x) for x in rec[6:]]),
            })
    return axis, rows


def write_stack_binary(stack: SaliencyStack, path):
    """HRD1-style framing: magic, length-prefixed JSON, float64 payload."""
    meta = {
        "class_id": stack.class_id,
        "dataset_id": stack.dataset_id,
        "n_rows": stack.n_rows,
        "n_bins": int(stack.axis_hz.size),
        "axis_hz": stack.axis_hz.tolist(),
        "subject_ids": list(stack.subject_ids),
        "confidences": stack.confidences.tolist(),
        "lateral_deg": stack.lateral_deg.tolist(),
        "polar_deg": stack.polar_deg.tolist(),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(STACK_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(stack.values, dtype="<f8").tobytes())


def read_stack_binary(path) -> SaliencyStack:
    raw = Path(path).read_bytes()
    if raw[:8] != STACK_MAGIC:
        raise ValueError(f"{path}: not a saliency stack file")
    (meta_len,) = struct.unpack("<I", raw[8:12])
    meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
    n, b = meta["n_rows"], meta["n_bins"]
    payload = raw[12 + meta_len:]
    if len(payload) != n * b * 8:
        raise ValueError(f"{path}: truncated stack payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, b).copy()
    return SaliencyStack(
        values=values,
        confidences=np.array(meta["confidences"]),
        subject_ids=list(meta["subject_ids"]),
        polar_deg=np.array(meta["polar_deg"]),
        lateral_deg=np.array(meta["lateral_deg"]),
        class_id=int(meta["class_id"]),
        dataset_id=meta["dataset_id"],
        axis_hz=np.array(meta["axis_hz"]),
    )


def write_msc_csv(contour: MeanSaliencyContour, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["curve"] + [_fmt(hz) for hz in contour.axis_hz])
        for name, curve in zip(contour.dataset_ids, contour.per_dataset_mean):
            writer.writerow([name] + [_fmt(v) for v in curve])
        writer.writerow(["msc"] + [_fmt(v) for v in contour.msc])


def read_msc_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        axis = np.array([float(x) for x in header[1:]])
        curves = {}
        for rec in reader:
            curves[rec[0]] = np.array([float(x) for x in rec[1:]])
    return axis, curves
