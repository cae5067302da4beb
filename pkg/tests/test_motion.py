"""Motion features: layout, invariances, round trips, synthesis, file format."""

import numpy as np
import pytest

from signlm.motion import (DEFAULT_FPS, FEATURE_DIM, JOINT_COUNT, LOCAL_POS,
                           LOCAL_ROT, LOCAL_VEL, ROOT_ANG_VEL, ROOT_HEIGHT,
                           ROOT_LIN_VEL, FeatureStats, JointClip, MotionSequence,
                           compute_stats, default_skeleton, denormalize,
                           extract_features, features_to_joints, gesture_vocabulary,
                           load_motion, load_stats, normalize, save_motion,
                           save_stats, synth_corpus)


def _random_clip(rng, frames=10):
    base = default_skeleton().rest_pose()
    wob = 0.03 * rng.standard_normal((frames, JOINT_COUNT, 3))
    return JointClip(frames=base[None] + wob, fps=DEFAULT_FPS)


def test_channel_budget_is_623():
    # 1 + 2 + 1 + 51*3 + 51*6 + 52*3 + 4 = 623
    assert 1 + 2 + 1 + 51 * 3 + 51 * 6 + 52 * 3 + 4 == FEATURE_DIM
    rng = np.random.default_rng(0)
    seq = extract_features(_random_clip(rng))
    assert seq.features.shape == (9, FEATURE_DIM)


def test_static_clip_has_zero_velocities():
    base = default_skeleton().rest_pose()
    clip = JointClip(frames=np.repeat(base[None], 6, axis=0))
    seq = extract_features(clip)
    assert np.allclose(seq.features[:, ROOT_ANG_VEL], 0.0, atol=1e-9)
    assert np.allclose(seq.features[:, ROOT_LIN_VEL], 0.0, atol=1e-9)
    assert np.allclose(seq.features[:, LOCAL_VEL], 0.0, atol=1e-9)


def test_translation_invariance():
    rng = np.random.default_rng(1)
    clip = _random_clip(rng)
    shifted = JointClip(frames=clip.frames + np.array([2.5, 0.0, -1.75]))
    a = extract_features(clip).features
    b = extract_features(shifted).features
    keep = np.ones(FEATURE_DIM, dtype=bool)
    keep[ROOT_LIN_VEL] = False
    np.testing.assert_allclose(a[:, keep], b[:, keep], atol=1e-5)


def test_vertical_rotation_invariance():
    rng = np.random.default_rng(2)
    clip = _random_clip(rng)
    ang = 1.234
    rot = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0],
                    [-np.sin(ang), 0, np.cos(ang)]])
    rotated = JointClip(frames=clip.frames @ rot.T)
    a = extract_features(clip).features
    b = extract_features(rotated).features
    keep = np.ones(FEATURE_DIM, dtype=bool)
    keep[ROOT_ANG_VEL] = False
    np.testing.assert_allclose(a[:, keep], b[:, keep], atol=1e-5)


def test_round_trip_error_below_1e4_m():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        clip = _random_clip(rng, frames=14)
        seq = extract_features(clip)
        rec = features_to_joints(seq)
        err = np.linalg.norm(rec.frames - clip.frames[:-1], axis=-1).max()
        assert err < 1e-4


def test_zero_features_identity_stats_rest_configuration():
    seq = MotionSequence(features=np.zeros((4, FEATURE_DIM), dtype=np.float32))
    clip = features_to_joints(seq)
    rest = default_skeleton().rest_pose()
    rest_rel = rest - rest[0]
    # every joint at its root-relative rest configuration (root at origin, height 0)
    np.testing.assert_allclose(clip.frames[:, 1:] - clip.frames[:, :1],
                               np.broadcast_to(rest_rel[1:], (4, 51, 3)), atol=1e-9)


def test_normalize_denormalize_round_trip():
    rng = np.random.default_rng(3)
    seqs = [extract_features(_random_clip(rng)) for _ in range(3)]
    stats = compute_stats(seqs)
    norm = normalize(seqs[0], stats)
    assert norm.normalized and norm.stats_id == stats.stats_id
    back = denormalize(norm, stats)
    np.testing.assert_allclose(back.features, seqs[0].features, atol=1e-6)


def test_normalized_corpus_mean_is_zero():
    rng = np.random.default_rng(4)
    seqs = [extract_features(_random_clip(rng)) for _ in range(4)]
    stats = compute_stats(seqs)
    rows = np.concatenate([normalize(s, stats).features for s in seqs], axis=0)
    assert np.abs(rows.mean(axis=0)).max() < 1e-5


def test_constant_channel_std_floored():
    feats = np.zeros((5, FEATURE_DIM), dtype=np.float32)
    stats = compute_stats([MotionSequence(features=feats)])
    assert stats.std.min() >= 1e-6
    norm = normalize(MotionSequence(features=feats), stats)
    np.testing.assert_allclose(norm.features, 0.0, atol=1e-9)


def test_compute_stats_empty_corpus():
    with pytest.raises(ValueError):
        compute_stats([])


def test_denormalize_wrong_stats_id():
    rng = np.random.default_rng(5)
    seq = extract_features(_random_clip(rng))
    stats = compute_stats([seq])
    other = FeatureStats(mean=stats.mean + 1.0, std=stats.std)
    norm = normalize(seq, stats)
    with pytest.raises(ValueError):
        denormalize(norm, other)


def test_synth_corpus_deterministic():
    a = synth_corpus(seed=3, vocab_size=4, samples=5)
    b = synth_corpus(seed=3, vocab_size=4, samples=5)
    assert len(a) == len(b) == 5
    for (ca, ta), (cb, tb) in zip(a, b):
        assert ta == tb
        assert ca.frames.tobytes() == cb.frames.tobytes()


def test_synth_corpus_counts_and_vocabulary():
    words = set(gesture_vocabulary(4))
    corpus = synth_corpus(seed=1, vocab_size=4, samples=20)
    assert len(corpus) == 20
    for _, text in corpus:
        assert set(text.split()) <= words


def test_synth_corpus_vocab_guard():
    with pytest.raises(ValueError):
        synth_corpus(seed=0, vocab_size=1, samples=3)


def test_motifs_are_distinct():
    from signlm.motion import (_motif_distance, _motif_frames, _motif_params,
                               default_skeleton)
    rng = np.random.default_rng(9)
    rest = default_skeleton().rest_pose()
    # mirror the corpus generator's regeneration rule at the distance bound
    corpus = synth_corpus(seed=9, vocab_size=6, samples=1,
                          min_motif_distance=0.05)
    assert corpus  # generation succeeded under the constraint
    a = _motif_frames(rest, _motif_params(rng))
    b = _motif_frames(rest, _motif_params(rng))
    assert _motif_distance(a, a) == 0.0
    assert _motif_distance(a, b) >= 0.0


def test_generated_joint_speeds_bounded():
    corpus = synth_corpus(seed=2, vocab_size=6, samples=6)
    for clip, _ in corpus:
        speed = np.linalg.norm(np.diff(clip.frames, axis=0), axis=-1) * clip.fps
        assert speed.max() < 5.0


def test_motion_file_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    seq = extract_features(_random_clip(rng))
    save_motion(tmp_path / "c0", seq, "c0")
    back = load_motion(tmp_path / "c0")
    assert back.features.tobytes() == seq.features.tobytes()
    assert back.fps == seq.fps
    assert back.init_heading == pytest.approx(seq.init_heading)
    assert tuple(back.init_root_xz) == pytest.approx(tuple(seq.init_root_xz))


def test_stats_file_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    stats = compute_stats([extract_features(_random_clip(rng))])
    save_stats(tmp_path / "stats.json", stats)
    back = load_stats(tmp_path / "stats.json")
    assert back.stats_id == stats.stats_id
    np.testing.assert_allclose(back.mean, stats.mean)
    np.testing.assert_allclose(back.std, stats.std)


def test_clip_validation():
    with pytest.raises(ValueError):
        JointClip(frames=np.zeros((1, JOINT_COUNT, 3)))
    bad = np.zeros((3, JOINT_COUNT, 3))
    bad[1, 5, 0] = np.nan
    with pytest.raises(ValueError):
        JointClip(frames=bad)


def test_rot6d_channels_unit_norm():
    rng = np.random.default_rng(8)
    seq = extract_features(_random_clip(rng))
    r = seq.features[:, LOCAL_ROT].reshape(-1, 51, 6)
    np.testing.assert_allclose(np.linalg.norm(r[..., :3], axis=-1), 1.0, atol=1e-4)
    np.testing.assert_allclose(np.linalg.norm(r[..., 3:], axis=-1), 1.0, atol=1e-4)
