"""Operator-facing command surface.

Subcommands: ingest, preprocess, train, eval, explain, prototype, synth.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every artifact-producing command drops a run manifest (JSON) recording
the command, seeds, config fingerprints, inputs, outputs and wall clock;
timestamps live only there so reruns are byte-identical elsewhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coords import CLASS_SHORT_NAMES, N_CLASSES, ElevationClass
from .data import (
    HrdFormatError,
    SplitSpec,
    combined_sample_indices,
    read_manifest,
    read_subject,
    split_subjects,
    write_manifest,
    write_subject,
)
from .dsp import PRESETS, preprocess_subject, preset
from .metrics import (
    class_metrics,
    confusion_matrix,
    cross_f1_matrix,
    cross_summary,
    write_matrix_csv,
)
from .model import NumericalError, TrainConfig, load, save, softmax, train
from .store import PreprocessedSet, load_set, save_set
from .synth import SynthSpec, generate, write_ground_truth
from .xai import (
    aggregate,
    equalize_and_msc,
    nearest_sample,
    prototype,
    rank_subjects_by_confidence,
    sagittal_map,
    write_msc_csv,
    write_stack_binary,
    write_stack_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_thread_limiter = None  # keeps the BLAS pool cap alive for the process


class CliDataError(Exception):
    pass


def _resolve_seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("HRTFXAI_SEED")
    return int(env) if env else 0


def _write_run_manifest(out_path, command, args_dict, inputs, outputs,
                        seeds=None, fingerprints=None, started=None):
    manifest = {
        "command": command,
        "arguments": args_dict,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seeds": seeds or {},
        "config_fingerprints": fingerprints or {},
        "toolkit_version": __version__,
        "started_unix": started,
        "wall_clock_s": time.time() - started if started else None,
    }
    Path(out_path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _parse_class(name):
    if name == "all":
        return list(range(N_CLASSES))
    name = name.upper().replace("-", "_")
    if name in CLASS_SHORT_NAMES:
        return [CLASS_SHORT_NAMES.index(name)]
    try:
        return [int(ElevationClass[name])]
    except KeyError:
        raise CliDataError(
            f"unknown class {name!r}; use one of {CLASS_SHORT_NAMES} or 'all'"
        ) from None


def _load_dataset_dir(path):
    """A dataset dir holds preprocessed.npz and preproc.cfg."""
    npz = Path(path) / "preprocessed.npz"
    if not npz.exists():
        raise CliDataError(f"{path}: no preprocessed.npz (run preprocess first)")
    return load_set(npz)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args):
    started = time.time()
    rows = read_manifest(args.manifest)
    if not rows:
        raise CliDataError(f"{args.manifest}: empty manifest")
    per_dataset = {}
    for subject_id, path, dataset_id in rows:
        try:
            rec = read_subject(path)
        except HrdFormatError as exc:
            raise CliDataError(f"invalid HRD1 file {path}: {exc}") from exc
        if rec.subject_id != subject_id:
            raise CliDataError(
                f"{path}: manifest says subject {subject_id!r}, "
                f"file says {rec.subject_id!r}"
            )
        info = per_dataset.setdefault(
            dataset_id, {"subjects": set(), "directions": 0,
                         "rates": set(), "durations": set()}
        )
        info["subjects"].add(subject_id)
        info["directions"] += rec.n_directions
        info["rates"].add(rec.sample_rate_hz)
        info["durations"].add(rec.n_samples)

    print(f"{'dataset':<12} {'subjects':>8} {'directions':>10} "
          f"{'SR (kHz)':>10} {'duration':>9}")
    for dataset_id in sorted(per_dataset):
        info = per_dataset[dataset_id]
        rates = "/".join(f"{r / 1000:g}" for r in sorted(info["rates"]))
        durs = "/".join(str(d) for d in sorted(info["durations"]))
        print(f"{dataset_id:<12} {len(info['subjects']):>8} "
              f"{info['directions']:>10} {rates:>10} {durs:>9}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            d: {
                "subjects": sorted(i["subjects"]),
                "n_subjects": len(i["subjects"]),
                "n_directions": i["directions"],
                "sample_rates_hz": sorted(i["rates"]),
                "durations_samples": sorted(i["durations"]),
            }
            for d, i in per_dataset.items()
        }
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
        _write_run_manifest(out / "run_manifest.json", "ingest",
                            vars(args) | {"func": None},
                            [args.manifest], [out / "summary.json"],
                            started=started)
    return EXIT_OK


def cmd_preprocess(args):
    started = time.time()
    cfg = preset(args.preset)
    in_dir = Path(args.in_dir)
    manifest_path = in_dir / "manifest.csv"
    if not manifest_path.exists():
        raise CliDataError(f"{in_dir}: no manifest.csv")
    rows = read_manifest(manifest_path)

    mags, labels, subjects, dir_idx = [], [], [], []
    laterals, polars, azimuths, elevations = [], [], [], []
    dataset_ids = set()
    axis = None
    for subject_id, path, dataset_id in rows:
        try:
            rec = read_subject(path)
        except HrdFormatError as exc:
            raise CliDataError(f"invalid HRD1 file {path}: {exc}") from exc
        dataset_ids.add(dataset_id)
        samples, warnings = preprocess_subject(rec, cfg)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        for i, s in enumerate(samples):
            mags.append(s.stacked())
            labels.append(int(s.direction.class_label))
            subjects.append(subject_id)
            dir_idx.append(i)
            laterals.append(s.direction.interaural.lateral_deg)
            polars.append(s.direction.interaural.polar_deg)
            azimuths.append(s.direction.vertical.azimuth_deg)
            elevations.append(s.direction.vertical.elevation_deg)
            axis = s.freq_axis
    if not mags:
        raise CliDataError("no samples produced")
    if len(dataset_ids) != 1:
        raise CliDataError(f"manifest mixes datasets: {sorted(dataset_ids)}")

    pset = PreprocessedSet(
        dataset_id=dataset_ids.pop(),
        fingerprint=cfg.fingerprint(),
        axis_kind=axis.kind,
        axis_hz=axis.bin_center_hz,
        mags=np.stack(mags),
        labels=np.array(labels),
        subject_ids=np.array(subjects),
        direction_index=np.array(dir_idx),
        lateral_deg=np.array(laterals),
        polar_deg=np.array(polars),
        azimuth_deg=np.array(azimuths),
        elevation_deg=np.array(elevations),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_set(pset, out / "preprocessed.npz")
    (out / "preproc.cfg").write_text(cfg.to_text(), encoding="utf-8")
    print(f"{pset.n_samples} samples x {pset.n_bins} bins "
          f"({args.preset}, fingerprint {cfg.fingerprint()[:12]})")
    _write_run_manifest(out / "run_manifest.json", "preprocess",
                        {"preset": args.preset, "in": str(in_dir)},
                        [in_dir], [out / "preprocessed.npz"],
                        fingerprints={pset.dataset_id: cfg.fingerprint()},
                        started=started)
    return EXIT_OK


def _split_sets(psets, seed):
    """Per-dataset subject split of already-loaded PreprocessedSets."""
    splits = {}
    for pset in psets:
        splits[pset.dataset_id] = split_partitions = {}
        parts = split_subjects_for(pset, seed)
        for name, subjects in parts.items():
            split_partitions[name] = pset.subject_mask(subjects)
    return splits


def split_subjects_for(pset: PreprocessedSet, seed):
    return split_subjects(list(np.unique(pset.subject_ids)), SplitSpec(seed=seed))


def cmd_train(args):
    started = time.time()
    seed = _resolve_seed(args.seed)
    psets = [_load_dataset_dir(d) for d in args.data]
    fingerprints = {p.dataset_id: p.fingerprint for p in psets}
    if len({p.fingerprint for p in psets}) != 1:
        raise CliDataError("datasets were preprocessed with different configs")
    if len({p.n_bins for p in psets}) != 1:
        raise CliDataError("datasets disagree on input width")

    splits = _split_sets(psets, seed)
    train_x, train_y, val_x, val_y = [], [], [], []
    rng = np.random.default_rng(seed)
    for pset in psets:
        masks = splits[pset.dataset_id]
        if not masks["val"].any():
            raise CliDataError(f"{pset.dataset_id}: empty validation partition")
        tr_idx = np.flatnonzero(masks["train"])
        if len(psets) > 1:
            pick = combined_sample_indices(tr_idx.size, args.combined_frac, rng)
            tr_idx = tr_idx[pick]
        train_x.append(pset.mags[tr_idx])
        train_y.append(pset.labels[tr_idx])
        val_x.append(pset.mags[masks["val"]])
        val_y.append(pset.labels[masks["val"]])

    cfg = TrainConfig(seed=seed, max_epochs=args.epochs)
    log = print if args.verbose else None
    model, history = train(
        np.concatenate(train_x), np.concatenate(train_y),
        np.concatenate(val_x), np.concatenate(val_y), cfg, log=log,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(model, out)
    meta = {
        "history": history.to_dict(),
        "seed": seed,
        "combined": len(psets) > 1,
        "combined_frac": args.combined_frac,
        "datasets": sorted(fingerprints),
        "preproc_fingerprints": fingerprints,
        "splits": {
            p.dataset_id: split_subjects_for(p, seed) for p in psets
        },
    }
    out.with_suffix(out.suffix + ".history.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n"
    )
    print(f"trained {len(np.concatenate(train_y))} samples, "
          f"stopped at epoch {history.stop_epoch} "
          f"(best {history.best_epoch}), model -> {out}")
    _write_run_manifest(str(out) + ".manifest.json", "train",
                        {"data": list(args.data), "combined_frac": args.combined_frac,
                         "epochs": args.epochs},
                        args.data, [out], seeds={"train": seed},
                        fingerprints=fingerprints, started=started)
    return EXIT_OK


def cmd_eval(args):
    started = time.time()
    seed = _resolve_seed(args.seed)
    models = [(Path(m).stem, load(m)) for m in args.model]
    psets = [_load_dataset_dir(d) for d in args.test]

    test_sets, spaces = [], []
    for pset in psets:
        if args.split == "all":
            mask = np.ones(pset.n_samples, dtype=bool)
        else:
            mask = pset.subject_mask(split_subjects_for(pset, seed)[args.split])
        if not mask.any():
            raise CliDataError(f"{pset.dataset_id}: empty {args.split} partition")
        test_sets.append((pset.dataset_id, pset.mags[mask], pset.labels[mask]))
        spaces.append(np.unique(pset.labels))

    cross = cross_f1_matrix(models, test_sets, spaces)
    report = {
        "seed": seed,
        "split": args.split,
        "preproc_fingerprints": {p.dataset_id: p.fingerprint for p in psets},
        "label_space_rule": "classes present in each dataset's own labels",
        "models": cross.model_names,
        "datasets": cross.dataset_names,
        "f1_matrix": cross.f1.tolist(),
        "pairs": {},
    }
    for i, (mname, model) in enumerate(models):
        report["pairs"][mname] = {}
        for j, (dname, mags, labels) in enumerate(test_sets):
            logits, _ = model.forward_batch(mags)
            preds = np.argmax(softmax(logits), axis=1)
            m = class_metrics(preds, labels, spaces[j])
            c = confusion_matrix(preds, labels)
            report["pairs"][mname][dname] = {
                "macro_f1": m.macro_f1,
                "metrics": m.to_dict(),
                "confusion": c.to_dict(),
            }
    if len(models) >= 2 and len(test_sets) >= 2:
        report["summary"] = cross_summary(cross.f1)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    matrix_csv = out.with_suffix(".matrix.csv")
    write_matrix_csv(cross, matrix_csv)
    for i, mname in enumerate(cross.model_names):
        for j, dname in enumerate(cross.dataset_names):
            print(f"{mname} on {dname}: macro-F1 {cross.f1[i, j]:.4f}")
    if "summary" in report:
        s = report["summary"]
        print(f"in-domain {s['in_domain_mean']:.4f}  cross best {s['best']:.4f} "
              f"median {s['median']:.4f} average {s['average']:.4f} "
              f"worst {s['worst']:.4f}")
    _write_run_manifest(str(out) + ".manifest.json", "eval",
                        {"model": list(args.model), "test": list(args.test),
                         "split": args.split},
                        list(args.model) + list(args.test), [out, matrix_csv],
                        seeds={"split": seed},
                        fingerprints=report["preproc_fingerprints"],
                        started=started)
    return EXIT_OK


def cmd_explain(args):
    started = time.time()
    model = load(args.model)
    psets = [_load_dataset_dir(d) for d in args.data]
    class_ids = _parse_class(args.class_name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    for class_id in class_ids:
        short = CLASS_SHORT_NAMES[class_id]
        stacks = []
        for pset in psets:
            stack = aggregate(
                model, pset.mags, pset.labels, list(pset.subject_ids),
                pset.lateral_deg, pset.polar_deg, pset.axis_hz,
                pset.dataset_id, class_id, order_by=args.order,
            )
            if stack.n_rows == 0:
                print(f"warning: no correctly classified {short} samples "
                      f"in {pset.dataset_id}", file=sys.stderr)
            base = out / f"stack_{short}_{pset.dataset_id}"
            write_stack_csv(stack, base.with_suffix(".csv"))
            write_stack_binary(stack, base.with_suffix(".bin"))
            outputs += [base.with_suffix(".csv"), base.with_suffix(".bin")]
            stacks.append(stack)
            if stack.n_rows and args.occlusion:
                # Occlusion render of the highest-confidence row.
                label_mask = pset.labels == class_id
                idx = np.flatnonzero(label_mask)
                from .xai import occlusion_render, saliency_for

                i = idx[0]
                sal = saliency_for(model, pset.mags[i], class_id)
                masked = occlusion_render(pset.mags[i], sal.values)
                np.savetxt(out / f"occlusion_{short}_{pset.dataset_id}.csv",
                           masked, delimiter=",")
        nonempty = [s for s in stacks if s.n_rows > 0]
        if nonempty:
            contour, _ = equalize_and_msc(nonempty)
            msc_path = out / f"msc_{short}.csv"
            write_msc_csv(contour, msc_path)
            outputs.append(msc_path)
    _write_run_manifest(out / "run_manifest.json", "explain",
                        {"model": args.model, "data": list(args.data),
                         "class": args.class_name, "order": args.order},
                        [args.model] + list(args.data), outputs,
                        started=started)
    return EXIT_OK


def cmd_prototype(args):
    started = time.time()
    model = load(args.model)
    psets = [_load_dataset_dir(d) for d in args.data]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    proto_meta = {}

    for class_id in range(N_CLASSES):
        short = CLASS_SHORT_NAMES[class_id]
        stacks, sample_pools = [], {}
        for pset in psets:
            stack = aggregate(
                model, pset.mags, pset.labels, list(pset.subject_ids),
                pset.lateral_deg, pset.polar_deg, pset.axis_hz,
                pset.dataset_id, class_id,
            )
            if stack.n_rows:
                stacks.append(stack)
                sample_pools[pset.dataset_id] = pset
        if not stacks:
            print(f"warning: class {short} has no correctly classified "
                  f"samples anywhere", file=sys.stderr)
            continue
        contour, trimmed = equalize_and_msc(stacks)

        # Collect the magnitudes whose saliencies survived equalization.
        kept_mags, kept_meta = [], []
        for stack in trimmed:
            pset = sample_pools[stack.dataset_id]
            pool_idx = _rows_to_sample_indices(stack, pset, class_id)
            kept_mags.append(pset.mags[pool_idx])
            kept_meta.extend(
                (stack.dataset_id, int(i)) for i in pool_idx
            )
        mags = np.concatenate(kept_mags)
        proto = prototype(model, mags, args.variance, source_class_id=class_id)
        nearest = {}
        offset = 0
        for stack, block in zip(trimmed, kept_mags):
            local = nearest_sample(block, proto.hrtf)
            nearest[stack.dataset_id] = kept_meta[offset + local][1]
            offset += block.shape[0]

        np.savetxt(out / f"prototype_{short}.csv", proto.hrtf, delimiter=",")
        np.savetxt(out / f"prototype_{short}_saliency.csv",
                   proto.saliency[None], delimiter=",")
        outputs += [out / f"prototype_{short}.csv",
                    out / f"prototype_{short}_saliency.csv"]
        proto_meta[short] = {
            "predicted_class": CLASS_SHORT_NAMES[proto.class_id],
            "confidence": proto.confidence,
            "pca_components_used": proto.pca_components_used,
            "variance_kept": proto.pca_variance_kept,
            "nearest_sample_index": nearest,
            "rows_per_dataset": contour.rows_kept_per_dataset,
        }

    # Sagittal maps of the most confidently classified subjects.
    all_mags = np.concatenate([p.mags for p in psets])
    all_subjects = np.concatenate([
        np.char.add(p.dataset_id + "/", p.subject_ids.astype(str)) for p in psets
    ])
    ranking = rank_subjects_by_confidence(model, all_mags, list(all_subjects))
    top = [s for s, _ in ranking[: args.subjects]]
    for tagged in top:
        dataset_id, subject = tagged.split("/", 1)
        pset = next(p for p in psets if p.dataset_id == dataset_id)
        mask = pset.subject_ids == subject
        try:
            rows = sagittal_map(model, pset.mags[mask],
                                pset.lateral_deg[mask], pset.polar_deg[mask])
        except ValueError:
            continue
        path = out / f"sagittal_{dataset_id}_{subject}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            import csv as _csv

            writer = _csv.writer(f)
            writer.writerow(["polar_deg", "lateral_deg", "predicted_class",
                             "confidence", "kind"]
                            + [format(h, ".17g") for h in pset.axis_hz])
            for row in rows:
                head = [row["polar_deg"], row["lateral_deg"],
                        CLASS_SHORT_NAMES[row["predicted_class"]],
                        format(row["confidence"], ".17g")]
                writer.writerow(head + ["ipsi"] +
                                [format(v, ".17g") for v in row["hrtf"][0]])
                writer.writerow(head + ["saliency"] +
                                [format(v, ".17g") for v in row["saliency"]])
        outputs.append(path)

    (out / "prototypes.json").write_text(
        json.dumps(proto_meta, indent=2, sort_keys=True) + "\n"
    )
    _write_run_manifest(out / "run_manifest.json", "prototype",
                        {"model": args.model, "data": list(args.data),
                         "variance": args.variance},
                        [args.model] + list(args.data),
                        outputs + [out / "prototypes.json"], started=started)
    return EXIT_OK


def _rows_to_sample_indices(stack, pset, class_id):
    """Map kept stack rows back to sample indices in the preprocessed set."""
    indices = []
    used = set()
    for i in range(stack.n_rows):
        match = np.flatnonzero(
            (pset.subject_ids == stack.subject_ids[i])
            & (pset.labels == class_id)
            & np.isclose(pset.polar_deg, stack.polar_deg[i])
            & np.isclose(pset.lateral_deg, stack.lateral_deg[i])
        )
        pick = next(int(m) for m in match if int(m) not in used)
        used.add(pick)
        indices.append(pick)
    return np.array(indices, dtype=int)


def cmd_synth(args):
    started = time.time()
    seed = _resolve_seed(args.seed)
    if args.spec:
        spec = SynthSpec.from_text(Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = SynthSpec()
    records, truth = generate(spec, seed, dataset_id=args.dataset_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        path = out / f"{rec.subject_id}.hrd1"
        write_subject(rec, path)
        rows.append((rec.subject_id, path.name, rec.dataset_id))
    write_manifest(rows, out / "manifest.csv")
    write_ground_truth(truth, out / "ground_truth.csv")
    (out / "spec.kv").write_text(spec.to_text(), encoding="utf-8")
    print(f"{len(records)} subjects x {records[0].n_directions} directions "
          f"-> {out}")
    if spec.notch_depth_db == 0.0:
        print("note: zero notch depth; this is a negative control with no "
              "class-separating cues")
    _write_run_manifest(out / "run_manifest.json", "synth",
                        {"spec": args.spec, "dataset_id": args.dataset_id},
                        [args.spec] if args.spec else [],
                        [out / "manifest.csv", out / "ground_truth.csv"],
                        seeds={"synth": seed}, started=started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hrtfxai",
        description="Elevation-cue analysis pipeline: ingest, preprocess, "
                    "train, evaluate, explain.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate HRD1 files and summarize")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="apply a preprocessing preset")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on one dataset or a combined draw")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--combined-frac", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics, confusions and the cross matrix")
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--split", default="test",
                   choices=["train", "val", "test", "all"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="CAM stacks, contours, occlusions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--class", dest="class_name", default="all")
    p.add_argument("--order", default="confidence",
                   choices=["confidence", "polar"])
    p.add_argument("--occlusion", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("prototype", help="class prototypes and sagittal maps")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--variance", type=float, default=0.90)
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prototype)

    p = sub.add_parser("synth", help="generate planted-cue synthetic data")
    p.add_argument("--spec", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset-id", default="synth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        global _thread_limiter
        try:
            from threadpoolctl import threadpool_limits

            _thread_limiter = threadpool_limits(limits=args.threads)
        except ImportError:
            print("warning: threadpoolctl unavailable, --threads ignored",
                  file=sys.stderr)
    try:
        return args.func(args)
    except (CliDataError, HrdFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
