#!/usr/bin/env python3
"""End-to-end synthetic experiment: generate, preprocess, train, score.

Runs the full planted-cue loop at the default spec and prints held-out
macro-F1, the mean saliency localization score with its uniform
baseline, and (optionally) the zero-depth negative control.
"""

import argparse
import time

import numpy as np

from hrtfxai.coords import CLASS_SHORT_NAMES
from hrtfxai.data import SplitSpec, split_subjects
from hrtfxai.dsp import preset, preprocess_subject
from hrtfxai.metrics import class_metrics
from hrtfxai.model import TrainConfig, train
from hrtfxai.synth import (
    SynthSpec,
    generate,
    saliency_localization_score,
    uniform_baseline_score,
)
from hrtfxai.xai import cam, upsample_normalize


def preprocess_all(records, cfg):
    mags, labels, subjects, dir_idx = [], [], [], []
    for rec in records:
        samples, _ = preprocess_subject(rec, cfg)
        for i, s in enumerate(samples):
            mags.append(s.stacked())
            labels.append(int(s.direction.class_label))
            subjects.append(rec.subject_id)
            dir_idx.append(i)
    return (np.stack(mags), np.array(labels), np.array(subjects),
            np.array(dir_idx))


def run(spec, seed, max_epochs, preset_name="optimized", verbose=False):
    t0 = time.time()
    records, truth = generate(spec, seed=seed)
    truth_by = {(e.subject_id, e.direction_index): e for e in truth}
    cfg = preset(preset_name)
    mags, labels, subjects, dir_idx = preprocess_all(records, cfg)
    axis = np.fft.rfftfreq(cfg.fft_size, 1.0 / cfg.target_rate_hz)

    parts = split_subjects(sorted(set(subjects)), SplitSpec(seed=seed))
    tr = np.isin(subjects, parts["train"])
    va = np.isin(subjects, parts["val"])
    te = np.isin(subjects, parts["test"])
    print(f"samples {mags.shape}, split "
          f"{len(parts['train'])}/{len(parts['val'])}/{len(parts['test'])}, "
          f"prep {time.time() - t0:.0f}s", flush=True)

    t1 = time.time()
    log = print if verbose else None
    model, hist = train(mags[tr], labels[tr], mags[va], labels[va],
                        TrainConfig(seed=seed, max_epochs=max_epochs), log=log)
    train_s = time.time() - t1
    logits, _ = model.forward_batch(mags[te])
    preds = logits.argmax(axis=1)
    f1 = class_metrics(preds, labels[te]).macro_f1
    print(f"train {train_s:.0f}s, stop epoch {hist.stop_epoch} "
          f"(best {hist.best_epoch}), held-out macro-F1 {f1:.4f}", flush=True)

    per_class = {}
    for i in np.flatnonzero(te):
        trace = model.forward(mags[i])
        if int(trace.probs.argmax()) != labels[i]:
            continue
        raw = cam(trace, model, labels[i])
        sal, _ = upsample_normalize(raw, mags.shape[2])
        entry = truth_by[(subjects[i], dir_idx[i])]
        score = saliency_localization_score(sal, axis, [entry.cue_center_hz])
        base = uniform_baseline_score(axis, [entry.cue_center_hz])
        per_class.setdefault(labels[i], []).append((score.score, base))
    rows = np.array([v for vs in per_class.values() for v in vs])
    print(f"saliency: mean score {rows[:, 0].mean():.3f}  "
          f"uniform baseline {rows[:, 1].mean():.3f}  "
          f"(n={len(rows)} correct of {int(te.sum())})", flush=True)
    for c in sorted(per_class):
        arr = np.array(per_class[c])
        print(f"  {CLASS_SHORT_NAMES[c]}: n={len(arr):3d} "
              f"score={arr[:, 0].mean():.3f} base={arr[:, 1].mean():.3f}")
    return f1, rows[:, 0].mean(), rows[:, 1].mean(), time.time() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--subjects", type=int, default=40)
    ap.add_argument("--negative-control", action="store_true")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()

    spec = SynthSpec(n_subjects=args.subjects)
    f1, score, base, wall = run(spec, args.seed, args.epochs,
                                verbose=args.verbose)
    print(f"TOTAL wall {wall:.0f}s  F1 {f1:.4f}  score {score:.3f} "
          f"base {base:.3f}")

    if args.negative_control:
        control = SynthSpec(n_subjects=args.subjects, notch_depth_db=0.0)
        f1c, *_ = run(control, args.seed, args.epochs)
        print(f"NEGATIVE CONTROL F1 {f1c:.4f}")


if __name__ == "__main__":
    main()
