#!/usr/bin/env python3
"""Smoke test for the scenecast_py extension module.

Expects the extension to be built already:

    cargo build -p scenecast-py

Copies the compiled library next to a temp directory under the
importable name, then exercises every exposed type and operation on a
tiny synthetic dataset. Exits non-zero on the first failure.
"""

import math
import os
import random
import shutil
import sys
import tempfile

import numpy as np


def locate_library(repo_root):
    names = ("libscenecast_py.so", "scenecast_py.so", "libscenecast_py.dylib")
    candidates = [
        os.path.join(repo_root, "target", profile, name)
        for profile in ("release", "debug")
        for name in names
    ]
    hits = [c for c in candidates if os.path.exists(c)]
    if not hits:
        sys.exit(
            "scenecast_py library not found; run `cargo build -p scenecast-py` first"
        )
    return max(hits, key=os.path.getmtime)


REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
LIB_DIR = tempfile.mkdtemp(prefix="scenecast_py_")
shutil.copy(locate_library(REPO_ROOT), os.path.join(LIB_DIR, "scenecast_py.so"))
sys.path.insert(0, LIB_DIR)

import scenecast_py as sp  # noqa: E402


def test_skeleton():
    sk = sp.default_humanoid()
    assert sk.joint_count == 21
    assert len(sk.edges) == 20
    assert len(sk.feet_indices) > 0 and len(sk.wrist_indices) > 0
    assert sk.root_index < sk.joint_count
    assert len(sk.joint_names) == 21
    custom = sp.Skeleton(["a", "b", "c"], [(0, 1), (1, 2)], 0, [2], [1])
    assert custom.joint_count == 3
    try:
        sp.Skeleton(["a", "b"], [(0, 0)], 0, [], [])
    except ValueError:
        pass
    else:
        raise AssertionError("cyclic edge list must be rejected")
    return sk


def test_config():
    cfg = sp.ForecastConfig()
    assert cfg.observed_frames == 30 and cfg.future_frames == 60
    assert cfg.total_frames() == 90
    small = sp.ForecastConfig(
        observed_frames=4,
        future_frames=5,
        joint_count=21,
        dct_coeffs=3,
        sample_count=24,
        hidden_dim=3,
        seed=1,
    )
    assert small.total_frames() == 9
    try:
        sp.ForecastConfig(observed_frames=2, future_frames=2, dct_coeffs=50)
    except ValueError:
        pass
    else:
        raise AssertionError("dct_coeffs beyond the window must be rejected")
    return small


def test_dct():
    rng = random.Random(7)
    frames, channels = 12, 3
    signal = [[rng.uniform(-2, 2) for _ in range(channels)] for _ in range(frames)]
    full = sp.DctBasis(frames, frames)
    basis = np.array(full.matrix())
    # orthonormal rows and exact linear behaviour of encode/decode
    assert np.allclose(basis @ basis.T, np.eye(frames), atol=1e-9)
    coeffs = np.array(full.encode(signal))
    assert np.allclose(coeffs, basis @ np.array(signal), atol=1e-12)
    recon = np.array(full.decode(coeffs.tolist()))
    assert np.allclose(recon, np.array(signal), atol=1e-9)
    # truncation keeps the leading coefficients
    trunc = sp.DctBasis(4, frames)
    assert trunc.coeff_count == 4 and trunc.frame_count == frames
    short = np.array(trunc.encode(signal))
    assert np.allclose(short, coeffs[:4], atol=1e-12)


def random_motion(skeleton, frames, seed):
    rng = random.Random(seed)
    data = [
        [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(skeleton.joint_count)]
        for _ in range(frames)
    ]
    return sp.MotionSequence(data, skeleton), np.array(data)


def test_geometry(sk):
    motion, m = random_motion(sk, 5, 11)
    rng = random.Random(12)
    pts = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(40)]
    scene = sp.SceneCloud(pts)
    assert len(scene) == 40
    d = np.array(sp.distance_tensor(motion, scene))
    oracle = np.linalg.norm(m[:, :, None, :] - np.array(pts)[None, None, :, :], axis=3)
    assert d.shape == oracle.shape
    assert np.allclose(d, oracle, atol=1e-12)
    threshold = float(np.median(d))
    contacts = sp.contacts_for_motion(motion, scene, threshold)
    assert contacts.frame_count == 5 and contacts.joint_count == sk.joint_count
    for t in range(5):
        for j in range(sk.joint_count):
            nearest = oracle[t, j].min()
            assert contacts.flag(t, j) == bool(nearest < threshold)
            if contacts.flag(t, j):
                best = pts[int(oracle[t, j].argmin())]
                got = contacts.coordinate(t, j)
                assert max(abs(a - b) for a, b in zip(got, best)) < 1e-12
    assert sp.contact_l2_error(contacts, contacts) in (0.0, None)
    entries = contacts.entries()
    rebuilt = sp.ContactMap(entries)
    assert rebuilt.frame_count == contacts.frame_count


def test_metrics(sk):
    motion, m = random_motion(sk, 9, 21)
    shifted = sp.MotionSequence((m + np.array([1.0, 0.0, 0.0])).tolist(), sk)
    assert abs(sp.path_error(shifted, motion, 9) - 1.0) < 1e-12
    assert abs(sp.pose_error(shifted, motion, 9)) < 1e-12
    mae = sp.per_frame_mae(shifted, motion)
    assert len(mae) == 9 and all(abs(v - 1.0) < 1e-12 for v in mae)
    report = sp.evaluate_forecast(shifted, motion, 30.0)
    assert set(report) == {"path", "pose", "frame_mae"}
    assert abs(report["path"]["full"] - 1.0) < 1e-12
    assert abs(report["pose"]["half_second"]) < 1e-12
    assert sp.horizon_frames(30.0, 0.5) == 15


def test_synth_and_files(tmp):
    data_dir = os.path.join(tmp, "data")
    sp.generate_dataset(
        data_dir,
        2,
        1,
        frames=60,
        extent=6.0,
        floor_spacing=0.2,
        obstacles_min=1,
        obstacles_max=1,
        seed=3,
    )
    train_split = sp.load_dataset(data_dir, "train")
    test_split = sp.load_dataset(data_dir, "test")
    assert len(train_split) == 2 and len(test_split) == 1
    name, scene, motion = train_split[0]
    assert motion.frame_count == 60 and motion.joint_count == 21
    assert len(scene) > 100
    scene2, motion2 = sp.generate_sequence(
        index=0,
        frames=60,
        extent=6.0,
        floor_spacing=0.2,
        obstacles_min=1,
        obstacles_max=1,
        seed=3,
    )
    assert motion2.frame_count == 60
    assert motion2.data() == motion.data(), "generation must be deterministic"
    ground = sp.planar_ground_scene(motion, 4.0, 0.5)
    heights = {round(p[2], 9) for p in ground.points()}
    assert len(heights) == 1
    return data_dir, scene, motion


def test_forecaster(tmp, cfg, sk, data_dir, scene, motion):
    fc = sp.Forecaster(cfg, sk, contact_subset="feet")
    assert fc.parameter_count() > 0
    log = fc.fit(
        data_dir,
        split="train",
        mode="three_stage",
        epochs=2,
        batch_size=4,
        contact_source="ground_truth",
        window_stride=30,
    )
    # stage 2 and stage 3 phases, two epochs each
    assert len(log) == 4
    assert [phase for _, phase, _ in log] == ["stage2", "stage2", "stage3", "stage3"]
    assert all(math.isfinite(loss) for _, _, loss in log)

    window = motion.window(0, cfg.observed_frames)
    out = fc.predict(window, scene, mode="predicted")
    assert out["poses"].frame_count == cfg.future_frames
    assert out["poses"].joint_count == cfg.joint_count
    assert len(out["root"]) == cfg.future_frames
    assert all(len(p) == 3 for p in out["root"])
    assert out["contacts"].frame_count == cfg.total_frames()
    assert out["distances"] is not None
    assert len(out["scene_sampled"]) <= cfg.sample_count

    silent = fc.predict(window, scene, mode="none")
    assert silent["distances"] is None
    reference = motion.window(0, cfg.total_frames())
    oracle = fc.predict(window, scene, mode="ground_truth", reference=reference)
    assert oracle["distances"] is None
    assert oracle["contacts"].frame_count == cfg.total_frames()

    future = motion.window(cfg.observed_frames, cfg.future_frames)
    report = sp.evaluate_forecast(out["poses"], future, cfg.fps)
    assert len(report["frame_mae"]) == cfg.future_frames
    assert all(math.isfinite(v) for v in report["frame_mae"])

    starts = sp.window_split(motion, cfg.observed_frames, cfg.future_frames, 10)
    assert [s for s, _ in starts] == list(range(0, 52, 10))
    assert all(w.frame_count == cfg.total_frames() for _, w in starts)

    ckpt = os.path.join(tmp, "model.ckpt")
    fc.save(ckpt)
    loaded = sp.Forecaster.load(ckpt, cfg, contact_subset="feet")
    again = loaded.predict(window, scene, mode="predicted")
    assert again["poses"].data() == out["poses"].data(), "reload must be exact"
    try:
        sp.Forecaster.load(ckpt, cfg, contact_subset="all")
    except ValueError as e:
        assert "hash" in str(e)
    else:
        raise AssertionError("architecture mismatch must be rejected")


def main():
    sk = test_skeleton()
    cfg = test_config()
    test_dct()
    test_geometry(sk)
    test_metrics(sk)
    with tempfile.TemporaryDirectory(prefix="scenecast_smoke_") as tmp:
        data_dir, scene, motion = test_synth_and_files(tmp)
        test_forecaster(tmp, cfg, sk, data_dir, scene, motion)
    print("scenecast_py %s smoke test passed" % sp.__version__)


if __name__ == "__main__":
    main()
