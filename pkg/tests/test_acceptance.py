"""Acceptance gate: one test per shipped criterion, stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line
per criterion.  The synthetic end-to-end run (training included) is
shared by the criteria that need it and dominates the runtime.
"""

import os
import time

import numpy as np
import pytest

from hrtfxai.coords import classify_arrays, interaural_to_vertical_arrays, \
    vertical_to_interaural_arrays
from hrtfxai.data import SplitSpec, split_subjects
from hrtfxai.dsp import (
    apply_filterbank,
    build_erb_filterbank,
    hz_to_erb_rate,
    linear_axis,
    preset,
    preprocess_subject,
)
from hrtfxai.metrics import class_metrics, cross_summary, read_matrix_csv, \
    write_matrix_csv, CrossMatrix
from hrtfxai.model import TrainConfig, build_model, cross_entropy, softmax, train
from hrtfxai.synth import (
    SynthSpec,
    generate,
    saliency_localization_score,
    uniform_baseline_score,
)
from hrtfxai.xai import cam, upsample_normalize
from tests.test_coords import brute_force_classify

SEED = 2024


def report(line):
    print(f"\n[acceptance] {line}")


# ---------------------------------------------------------------------------
# shared synthetic end-to-end run


@pytest.fixture(scope="module")
def synth_run():
    """Generate -> preprocess -> split 32/4/4 -> train on the default spec."""
    t0 = time.time()
    spec = SynthSpec()  # 40 subjects
    records, truth = generate(spec, seed=SEED)
    cfg = preset("optimized")
    mags, labels, subjects, dir_idx = [], [], [], []
    for rec in records:
        samples, _ = preprocess_subject(rec, cfg)
        for i, s in enumerate(samples):
            mags.append(s.stacked())
            labels.append(int(s.direction.class_label))
            subjects.append(rec.subject_id)
            dir_idx.append(i)
    mags = np.stack(mags)
    labels = np.array(labels)
    subjects = np.array(subjects)
    dir_idx = np.array(dir_idx)

    parts = split_subjects(sorted(set(subjects)), SplitSpec(seed=SEED))
    assert (len(parts["train"]), len(parts["val"]), len(parts["test"])) == (32, 4, 4)
    tr = np.isin(subjects, parts["train"])
    va = np.isin(subjects, parts["val"])
    te = np.isin(subjects, parts["test"])

    model, history = train(mags[tr], labels[tr], mags[va], labels[va],
                           TrainConfig(seed=SEED, max_epochs=200))
    wall = time.time() - t0
    return {
        "spec": spec,
        "truth": {(e.subject_id, e.direction_index): e for e in truth},
        "axis": np.fft.rfftfreq(cfg.fft_size, 1.0 / cfg.target_rate_hz),
        "mags": mags,
        "labels": labels,
        "subjects": subjects,
        "dir_idx": dir_idx,
        "test_mask": te,
        "model": model,
        "history": history,
        "wall_s": wall,
    }


class TestModelCriteria:
    def test_parameter_count_reproduction(self):
        t0 = time.time()
        model = build_model(0)
        counts = model.layer_param_counts()
        assert counts == [2112, 32800, 8224, 4112, 153]
        assert model.n_params() == 47401
        assert time.time() - t0 < 1.0
        report(f"PASS parameter counts {counts} (total 47401), exact")

    def test_gradient_correctness(self):
        # Central differences only estimate the derivative where the loss
        # is differentiable on the probe interval; coordinates whose
        # perturbation flips a ReLU sign or max-pool winner are skipped
        # (the analytic value there is a valid subgradient).
        from tests.test_model import structure_signature

        t0 = time.time()
        step = 1e-4
        worst = 0.0
        checked = skipped = 0

        def loss_of(model, x, y):
            logits, _ = model.forward_batch(x)
            return cross_entropy(softmax(logits), y)

        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = build_model(seed + 100)
            for width in (32, 257):
                x = rng.normal(size=(1, 2, width))
                y = rng.integers(0, 9, size=1)
                _, grads = model.loss_and_grads(x, y)
                for name, arr in model.parameters():
                    flat = arr.reshape(-1)
                    gflat = grads[name].reshape(-1)
                    for i in rng.choice(flat.size, size=min(3, flat.size),
                                        replace=False):
                        orig = flat[i]
                        flat[i] = orig + step
                        up = loss_of(model, x, y)
                        sig_up = structure_signature(model, x)
                        flat[i] = orig - step
                        down = loss_of(model, x, y)
                        sig_down = structure_signature(model, x)
                        flat[i] = orig
                        if sig_up != sig_down:
                            skipped += 1
                            continue
                        checked += 1
                        fd = (up - down) / (2 * step)
                        denom = max(abs(fd), abs(gflat[i]), 1e-8)
                        worst = max(worst, abs(fd - gflat[i]) / denom)
        elapsed = time.time() - t0
        assert worst < 1e-4
        assert checked > 20 * skipped  # kinks must stay rare
        assert elapsed < 120
        report(f"PASS gradient check, 20 seeds x (2x32, 2x257): "
               f"max rel err {worst:.2e} < 1e-4 over {checked} coords "
               f"({skipped} kink coords excluded) in {elapsed:.0f}s")

    def test_cam_completeness(self):
        t0 = time.time()
        model = build_model(11)
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            trace = model.forward(rng.normal(size=(2, 257)))
            for c in range(9):
                m = cam(trace, model, c)
                err = abs(m.mean() + model.dense_b[c] - trace.logits[c])
                worst = max(worst, err)
        elapsed = time.time() - t0
        assert worst < 1e-9
        assert elapsed < 10
        report(f"PASS CAM completeness: max |mean CAM + bias - logit| "
               f"= {worst:.2e} < 1e-9 over 100 inputs x 9 classes")


class TestCoordinateCriterion:
    def test_grid_oracle_and_round_trip(self):
        t0 = time.time()
        lats = np.arange(-90.0, 91.0, 1.0)
        pols = np.arange(-90.0, 270.0, 1.0)
        latg, polg = np.meshgrid(lats, pols)
        got = classify_arrays(latg.ravel(), polg.ravel())
        expected = np.array([
            int(brute_force_classify(la, po))
            for la, po in zip(latg.ravel(), polg.ravel())
        ])
        agreement = float(np.mean(got == expected))
        assert agreement == 1.0

        # Round trip on the same grid, poles of both systems excluded.
        mask = np.abs(latg.ravel()) <= 89.0
        lat_in, pol_in = latg.ravel()[mask], polg.ravel()[mask]
        az, el = interaural_to_vertical_arrays(lat_in, pol_in)
        off_pole = np.abs(el) <= 89.0
        lat2, pol2 = vertical_to_interaural_arrays(az[off_pole], el[off_pole])
        dlat = np.max(np.abs(lat2 - lat_in[off_pole]))
        dpol = np.abs(pol2 - pol_in[off_pole])
        dpol = np.minimum(dpol, 360.0 - dpol).max()
        elapsed = time.time() - t0
        assert dlat < 1e-9 and dpol < 1e-9
        assert elapsed < 30
        report(f"PASS coordinate oracle: 1-degree grid agreement 100% "
               f"({got.size} points), round-trip err "
               f"lat {dlat:.1e} / polar {dpol:.1e} < 1e-9 deg in {elapsed:.0f}s")


class TestSynthCriteria:
    def test_end_to_end_f1(self, synth_run):
        model = synth_run["model"]
        te = synth_run["test_mask"]
        logits, _ = model.forward_batch(synth_run["mags"][te])
        preds = logits.argmax(axis=1)
        f1 = class_metrics(preds, synth_run["labels"][te]).macro_f1
        wall = synth_run["wall_s"]
        assert synth_run["history"].stop_epoch <= 200
        assert f1 >= 0.90
        assert wall <= 900
        report(f"PASS synthetic end-to-end: held-out macro-F1 {f1:.4f} >= 0.90, "
               f"stop epoch {synth_run['history'].stop_epoch}, "
               f"wall {wall:.0f}s <= 900s")

    def test_saliency_faithfulness(self, synth_run):
        model = synth_run["model"]
        mags = synth_run["mags"]
        labels = synth_run["labels"]
        axis = synth_run["axis"]
        scores, baselines = [], []
        for i in np.flatnonzero(synth_run["test_mask"]):
            trace = model.forward(mags[i])
            if int(trace.probs.argmax()) != labels[i]:
                continue
            raw = cam(trace, model, labels[i])
            sal, _ = upsample_normalize(raw, mags.shape[2])
            entry = synth_run["truth"][
                (synth_run["subjects"][i], synth_run["dir_idx"][i])]
            scores.append(saliency_localization_score(
                sal, axis, [entry.cue_center_hz]).score)
            baselines.append(uniform_baseline_score(axis, [entry.cue_center_hz]))
        mean_score = float(np.mean(scores))
        mean_base = float(np.mean(baselines))
        assert mean_score >= 0.5
        assert mean_base < 0.15
        report(f"PASS saliency faithfulness: mean score {mean_score:.3f} >= 0.5 "
               f"vs uniform baseline {mean_base:.3f} < 0.15 "
               f"({len(scores)} correct test samples)")

    def test_negative_control(self):
        t0 = time.time()
        spec = SynthSpec(notch_depth_db=0.0)
        records, _ = generate(spec, seed=SEED)
        cfg = preset("optimized")
        mags, labels, subjects = [], [], []
        for rec in records:
            samples, _ = preprocess_subject(rec, cfg)
            for s in samples:
                mags.append(s.stacked())
                labels.append(int(s.direction.class_label))
                subjects.append(rec.subject_id)
        mags = np.stack(mags)
        labels = np.array(labels)
        subjects = np.array(subjects)
        parts = split_subjects(sorted(set(subjects)), SplitSpec(seed=SEED))
        tr = np.isin(subjects, parts["train"])
        va = np.isin(subjects, parts["val"])
        te = np.isin(subjects, parts["test"])
        model, _ = train(mags[tr], labels[tr], mags[va], labels[va],
                         TrainConfig(seed=SEED, max_epochs=200))
        logits, _ = model.forward_batch(mags[te])
        f1 = class_metrics(logits.argmax(axis=1), labels[te]).macro_f1
        assert f1 < 0.25
        report(f"PASS negative control: zero-depth macro-F1 {f1:.4f} < 0.25 "
               f"in {time.time() - t0:.0f}s")


class TestDspCriteria:
    def test_aee_postcondition_50_subjects(self):
        from hrtfxai.coords import Direction, VerticalPolar
        from hrtfxai.dsp import HrtfSample, aee_normalize

        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(4, 20))
            axis = linear_axis(16, 44100.0)
            samples = []
            elevations = rng.uniform(-80, 80, n)
            elevations[rng.integers(0, n)] = rng.uniform(-5, 5)  # one equator
            for el in elevations:
                d = Direction.from_vertical(VerticalPolar.wrapped(
                    float(rng.uniform(-180, 179)), float(el)))
                samples.append(HrtfSample(
                    rng.uniform(0.05, 4.0, 9), rng.uniform(0.05, 4.0, 9),
                    axis, d, "s", "d"))
            out, _ = aee_normalize(samples)
            equator = [s for s in out
                       if abs(s.direction.vertical.elevation_deg) <= 5.0]
            energy = np.mean(np.concatenate(
                [np.concatenate([s.ipsi, s.contra]) ** 2 for s in equator]))
            worst = max(worst, abs(energy - 1.0))
        assert worst < 1e-9
        report(f"PASS AEE post-condition: max |equator energy - 1| "
               f"= {worst:.1e} < 1e-9 over 50 random subjects")

    def test_erb_filterbank_criterion(self):
        axis = linear_axis(512, 44100.0)
        fb = build_erb_filterbank(255, 50.0, 22050.0, axis.bin_center_hz)
        assert fb.n_filters == 255
        assert abs(fb.center_hz[0] - 50.0) < 1e-9
        assert abs(fb.center_hz[-1] - 22050.0) < 1e-6
        spacing = np.diff(hz_to_erb_rate(fb.center_hz))
        spread = float(np.max(np.abs(spacing - spacing[0])))
        assert spread < 1e-9
        out = apply_filterbank(np.ones(257), fb)
        ratio = float(out.max() / out.min())
        assert out.min() > 0
        assert ratio < 10.0
        report(f"PASS ERB filterbank: 255 centers span 50-22050 Hz, ERB "
               f"spacing spread {spread:.1e} < 1e-9, coverage ratio "
               f"{ratio:.2f} < 10")


class TestDeterminismCriterion:
    def test_train_cli_bit_identical(self, tmp_path):
        from hrtfxai.cli import main

        synth_dir = tmp_path / "synth"
        spec = SynthSpec(n_subjects=6)
        (tmp_path / "spec.kv").write_text(spec.to_text())
        assert main(["synth", "--spec", str(tmp_path / "spec.kv"),
                     "--seed", "4", "--out", str(synth_dir)]) == 0
        prep = tmp_path / "prep"
        assert main(["preprocess", "--preset", "optimized",
                     "--in", str(synth_dir), "--out", str(prep)]) == 0
        blobs = []
        for run in ("a", "b"):
            out = tmp_path / f"{run}.bin"
            assert main(["train", "--data", str(prep), "--seed", "21",
                         "--epochs", "3", "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]
        report("PASS determinism: two `train` runs with the same seed give "
               "bit-identical model files")

    def test_eval_summary_reproduces_from_csv(self, tmp_path):
        rng = np.random.default_rng(8)
        cross = CrossMatrix(
            ["m0", "m1", "m2"], ["d0", "d1", "d2"], rng.uniform(0, 1, (3, 3)))
        path = tmp_path / "matrix.csv"
        write_matrix_csv(cross, path)
        again = read_matrix_csv(path)
        assert np.array_equal(again.f1, cross.f1)
        assert cross_summary(again.f1) == cross_summary(cross.f1)
        report("PASS determinism: cross-matrix summary recomputed from the "
               "exported CSV is bit-exact")


@pytest.mark.skipif(
    "HRTFXAI_CIPIC_DIR" not in os.environ,
    reason="optional real-data check; set HRTFXAI_CIPIC_DIR to converted "
           "CIPIC data preprocessed with the optimized preset",
)
def test_optional_cipic_in_domain():
    """Non-gating check on user-supplied CIPIC data (>= 0.60 macro-F1)."""
    from hrtfxai.store import load_set

    pset = load_set(os.environ["HRTFXAI_CIPIC_DIR"] + "/preprocessed.npz")
    parts = split_subjects(sorted(set(pset.subject_ids)), SplitSpec(seed=SEED))
    tr = pset.subject_mask(parts["train"])
    va = pset.subject_mask(parts["val"])
    te = pset.subject_mask(parts["test"])
    model, _ = train(pset.mags[tr], pset.labels[tr], pset.mags[va],
                     pset.labels[va], TrainConfig(seed=SEED, max_epochs=200))
    logits, _ = model.forward_batch(pset.mags[te])
    f1 = class_metrics(logits.argmax(axis=1), pset.labels[te],
                       np.unique(pset.labels)).macro_f1
    report(f"CIPIC in-domain macro-F1 {f1:.3f} (target 0.60, non-gating)")
    assert f1 >= 0.60
